//! Recall, percentile tables and object counting.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoxCandidate};
use crate::nms::{confidence_filter, CandidateSet};
use crate::{Error, Result};

/// Fraction of `clean` boxes matched one-to-one by same-class `adv` boxes
/// with IoU strictly above `iou_thresh`.
///
/// Clean boxes are visited in descending confidence and each takes the
/// best-overlapping unmatched adversarial box. An empty `clean` gives 1.
pub fn recall(clean: &[BoxCandidate], adv: &[BoxCandidate], iou_thresh: f64) -> f64 {
    if clean.is_empty() {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..clean.len()).collect();
    order.sort_by(|&a, &b| clean[b].confidence().total_cmp(&clean[a].confidence()));
    let mut used = alloc::vec![false; adv.len()];
    let mut matched = 0usize;
    for i in order {
        let c = &clean[i];
        let best = adv
            .iter()
            .enumerate()
            .filter(|(j, a)| !used[*j] && a.class_id == c.class_id)
            .map(|(j, a)| (j, iou(&c.bbox, &a.bbox)))
            .filter(|&(_, o)| o > iou_thresh)
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
        if let Some((j, _)) = best {
            used[j] = true;
            matched += 1;
        }
    }
    matched as f64 / clean.len() as f64
}

/// Table rows at min, 10, 25, 50, 75, 90 and max percent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PercentileReport {
    pub min: f64,
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub max: f64,
}

impl PercentileReport {
    pub const LABELS: [&'static str; 7] = ["min", "10%", "25%", "50%", "75%", "90%", "max"];

    pub fn values(&self) -> [f64; 7] {
        [self.min, self.p10, self.p25, self.p50, self.p75, self.p90, self.max]
    }
}

/// Nearest-rank value: the `ceil(q * n)`-th smallest (1-based).
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = libm::ceil(q * n as f64 - 1e-9) as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn percentile_report(samples: &[f64]) -> Result<PercentileReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(PercentileReport {
        min: sorted[0],
        p10: nearest_rank(&sorted, 0.10),
        p25: nearest_rank(&sorted, 0.25),
        p50: nearest_rank(&sorted, 0.50),
        p75: nearest_rank(&sorted, 0.75),
        p90: nearest_rank(&sorted, 0.90),
        max: sorted[sorted.len() - 1],
    })
}

/// Middle element by nearest rank; convenience for acceptance-style summaries.
pub fn median(samples: &[f64]) -> Result<f64> {
    percentile_report(samples).map(|r| r.p50)
}

/// Candidates that survive the confidence filter.
pub fn count_objects(set: &CandidateSet, t_conf: f64) -> usize {
    confidence_filter(set, t_conf).len()
}

/// One image's before/after numbers for the attack comparison table.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AttackObservation {
    pub objects: f64,
    pub boxes: f64,
    pub time_ms: f64,
}

/// Percentile columns for objects, kept boxes and NMS time, adversarial next
/// to original.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ComparisonTable {
    pub adversarial: [PercentileReport; 3],
    pub original: [PercentileReport; 3],
}

impl ComparisonTable {
    pub fn build(adversarial: &[AttackObservation], original: &[AttackObservation]) -> Result<Self> {
        let cols = |obs: &[AttackObservation]| -> Result<[PercentileReport; 3]> {
            let pick = |f: fn(&AttackObservation) -> f64| obs.iter().map(f).collect::<Vec<_>>();
            Ok([
                percentile_report(&pick(|o| o.objects))?,
                percentile_report(&pick(|o| o.boxes))?,
                percentile_report(&pick(|o| o.time_ms))?,
            ])
        };
        Ok(Self { adversarial: cols(adversarial)?, original: cols(original)? })
    }

    /// Rows of `[label, adv objects, adv boxes, adv time, orig objects, orig boxes, orig time]`.
    pub fn rows(&self) -> Vec<(&'static str, [f64; 6])> {
        let a = self.adversarial.map(|r| r.values());
        let o = self.original.map(|r| r.values());
        PercentileReport::LABELS
            .iter()
            .enumerate()
            .map(|(i, &label)| (label, [a[0][i], a[1][i], a[2][i], o[0][i], o[1][i], o[2][i]]))
            .collect()
    }
}

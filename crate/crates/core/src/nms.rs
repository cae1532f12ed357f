//! Non-maximum suppression kernels.
//!
//! [`nms_matrix`] mirrors the GPU formulation: after filtering and sorting it
//! evaluates the overlap metric for every pair unconditionally and stores the
//! suppression decisions in a bit matrix, so its work depends only on the
//! number of candidates. [`nms_greedy`] is the sequential early-exit loop and
//! serves as a cross-check.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::geometry::{BoxCandidate, OverlapMetric};

/// Monotonic time source. `now` is measured from an arbitrary fixed origin.
pub trait Clock {
    fn now(&self) -> Duration;
}

/// A clock that never advances. Timeouts never fire and elapsed times are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> Duration {
        (**self).now()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CandidateSet {
    pub candidates: Vec<BoxCandidate>,
    pub image_id: String,
}

impl CandidateSet {
    pub fn new(image_id: impl Into<String>, candidates: Vec<BoxCandidate>) -> Self {
        Self { candidates, image_id: image_id.into() }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct NmsConfig {
    pub t_conf: f64,
    pub t_iou: f64,
    pub metric: OverlapMetric,
    /// Only suppress across boxes with the same argmax class.
    pub class_aware: bool,
    pub max_detections: usize,
    /// Defense: keep at most this many highest-confidence candidates.
    pub max_candidates: Option<usize>,
    pub timeout: Option<Duration>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            t_conf: 0.25,
            t_iou: 0.45,
            metric: OverlapMetric::Iou,
            class_aware: true,
            max_detections: 300,
            max_candidates: None,
            timeout: Some(Duration::from_millis(500)),
        }
    }
}

impl NmsConfig {
    /// Cap recommended for real-world images.
    pub const RECOMMENDED_MAX_CANDIDATES: usize = 1000;

    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error::InvalidConfig;
        if !(0.0..=1.0).contains(&self.t_conf) {
            return Err(InvalidConfig("t_conf must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.t_iou) {
            return Err(InvalidConfig("t_iou must lie in [0, 1]".into()));
        }
        if self.max_detections == 0 {
            return Err(InvalidConfig("max_detections must be at least 1".into()));
        }
        if self.max_candidates == Some(0) {
            return Err(InvalidConfig("max_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NmsReport {
    /// Survivors in descending confidence order.
    pub kept: Vec<BoxCandidate>,
    /// Candidates left after the confidence filter, before any cap.
    pub n_input: usize,
    /// Number of overlap-metric evaluations performed.
    pub n_pairwise: u64,
    pub elapsed: Duration,
    pub timed_out: bool,
    pub capped: bool,
}

/// Keep exactly the candidates whose confidence is strictly above `t_conf`.
pub fn confidence_filter(set: &CandidateSet, t_conf: f64) -> CandidateSet {
    CandidateSet {
        candidates: set.candidates.iter().filter(|c| c.confidence() > t_conf).cloned().collect(),
        image_id: set.image_id.clone(),
    }
}

/// Filter, cap and sort: returns indices into `set` in descending confidence,
/// ties by original index, plus the post-filter count and whether the cap applied.
fn ranked(set: &CandidateSet, cfg: &NmsConfig) -> (Vec<usize>, usize, bool) {
    let mut order: Vec<usize> =
        (0..set.len()).filter(|&i| set.candidates[i].confidence() > cfg.t_conf).collect();
    let n_input = order.len();
    // Stable sort keeps original order among equal confidences.
    order.sort_by(|&a, &b| {
        set.candidates[b].confidence().total_cmp(&set.candidates[a].confidence())
    });
    let mut capped = false;
    if let Some(cap) = cfg.max_candidates {
        if order.len() > cap {
            order.truncate(cap);
            capped = true;
        }
    }
    (order, n_input, capped)
}

#[inline]
fn comparable(a: &BoxCandidate, b: &BoxCandidate, class_aware: bool) -> bool {
    !class_aware || a.class_id == b.class_id
}

fn timed_out<C: Clock>(clock: &C, start: Duration, timeout: Option<Duration>) -> bool {
    match timeout {
        Some(limit) => clock.now().saturating_sub(start) > limit,
        None => false,
    }
}

/// Upper-triangular suppression bits: bit `j` of row `i` (`j > i`) is set when
/// candidate `i` would suppress candidate `j`.
struct SuppressionMatrix {
    words_per_row: usize,
    bits: Vec<u64>,
}

impl SuppressionMatrix {
    fn build(boxes: &[&BoxCandidate], cfg: &NmsConfig) -> (Self, u64) {
        let n = boxes.len();
        let words_per_row = n.div_ceil(64);
        let mut bits = vec![0u64; n * words_per_row];
        let mut evaluated = 0u64;
        for i in 0..n {
            let row = &mut bits[i * words_per_row..(i + 1) * words_per_row];
            let bi = boxes[i];
            for (j, bj) in boxes.iter().enumerate().skip(i + 1) {
                let score = cfg.metric.eval(&bi.bbox, &bj.bbox);
                evaluated += 1;
                if score > cfg.t_iou && comparable(bi, bj, cfg.class_aware) {
                    row[j / 64] |= 1 << (j % 64);
                }
            }
        }
        (Self { words_per_row, bits }, evaluated)
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }
}

/// Matrix NMS: every pairwise metric is computed before pruning starts.
///
/// The timeout is checked once per pruning step; when it fires the survivors
/// found so far are returned and `timed_out` is set.
pub fn nms_matrix<C: Clock>(set: &CandidateSet, cfg: &NmsConfig, clock: &C) -> NmsReport {
    let start = clock.now();
    let (order, n_input, capped) = ranked(set, cfg);
    let boxes: Vec<&BoxCandidate> = order.iter().map(|&i| &set.candidates[i]).collect();
    let (matrix, n_pairwise) = SuppressionMatrix::build(&boxes, cfg);

    let mut removed = vec![0u64; matrix.words_per_row];
    let mut kept = Vec::new();
    let mut timed_out_flag = false;
    for i in 0..boxes.len() {
        if kept.len() >= cfg.max_detections {
            break;
        }
        if removed[i / 64] & (1 << (i % 64)) == 0 {
            kept.push(boxes[i].clone());
            // Bits below i are zero in row i, so OR-ing from word i/64 is enough.
            for (acc, &w) in removed.iter_mut().zip(matrix.row(i)).skip(i / 64) {
                *acc |= w;
            }
        }
        if timed_out(clock, start, cfg.timeout) {
            timed_out_flag = true;
            break;
        }
    }

    NmsReport {
        kept,
        n_input,
        n_pairwise,
        elapsed: clock.now().saturating_sub(start),
        timed_out: timed_out_flag,
        capped,
    }
}

/// Sequential greedy NMS: only pairs against a surviving pivot are evaluated.
pub fn nms_greedy<C: Clock>(set: &CandidateSet, cfg: &NmsConfig, clock: &C) -> NmsReport {
    let start = clock.now();
    let (order, n_input, capped) = ranked(set, cfg);
    let boxes: Vec<&BoxCandidate> = order.iter().map(|&i| &set.candidates[i]).collect();

    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    let mut n_pairwise = 0u64;
    let mut timed_out_flag = false;
    for i in 0..boxes.len() {
        if kept.len() >= cfg.max_detections {
            break;
        }
        if suppressed[i] {
            continue;
        }
        let pivot = boxes[i];
        kept.push(pivot.clone());
        for j in i + 1..boxes.len() {
            if suppressed[j] || !comparable(pivot, boxes[j], cfg.class_aware) {
                continue;
            }
            n_pairwise += 1;
            if cfg.metric.eval(&pivot.bbox, &boxes[j].bbox) > cfg.t_iou {
                suppressed[j] = true;
            }
        }
        if timed_out(clock, start, cfg.timeout) {
            timed_out_flag = true;
            break;
        }
    }

    NmsReport {
        kept,
        n_input,
        n_pairwise,
        elapsed: clock.now().saturating_sub(start),
        timed_out: timed_out_flag,
        capped,
    }
}

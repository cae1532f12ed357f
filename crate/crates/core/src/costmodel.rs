//! Synthetic NMS workloads, a timing harness and the piecewise-quadratic
//! latency model
//!
//! ```text
//! T(n) = alpha * n^2   if n > n_break
//!        t_base        otherwise
//! ```

use alloc::vec::Vec;
use core::time::Duration;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, BoxCandidate};
use crate::nms::{nms_matrix, CandidateSet, Clock, NmsConfig};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Side length of the square canvas synthetic boxes are drawn on.
pub const SYNTHETIC_IMAGE_SIZE: f64 = 640.0;
/// Objectness and top class score of every synthetic candidate.
pub const SYNTHETIC_SCORE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum Scenario {
    /// Distinct boxes, evaluated with `t_iou = 1.0` so nothing is suppressed.
    Worst,
    /// Every box identical; the first pivot suppresses the rest.
    Best,
    /// Boxes sampled uniformly over the canvas.
    Random,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Worst, Scenario::Best, Scenario::Random];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Worst => "worst",
            Scenario::Best => "best",
            Scenario::Random => "random",
        }
    }
}

impl core::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst" => Ok(Scenario::Worst),
            "best" => Ok(Scenario::Best),
            "random" => Ok(Scenario::Random),
            other => Err(Error::InvalidConfig(alloc::format!("unknown scenario {other:?}"))),
        }
    }
}

fn class_scores(k: usize, class: usize) -> Vec<f64> {
    (0..k).map(|i| if i == class { SYNTHETIC_SCORE } else { 0.01 }).collect()
}

/// Generate `n` candidates for `scenario`. All of them pass any confidence
/// threshold below `0.99^2`. `k_classes = 0` is treated as one class.
pub fn gen_synthetic(scenario: Scenario, n: usize, k_classes: usize, seed: u64) -> CandidateSet {
    let k = k_classes.max(1);
    let mut rng = SplitMix64::new(seed);
    let size = SYNTHETIC_IMAGE_SIZE;
    let candidates = match scenario {
        Scenario::Best => {
            let bbox = BBox::new(200.0, 200.0, 328.0, 328.0);
            (0..n).map(|_| BoxCandidate::new(bbox, SYNTHETIC_SCORE, class_scores(k, 0))).collect()
        }
        Scenario::Random => (0..n)
            .map(|_| {
                let cx = rng.uniform(0.0, size);
                let cy = rng.uniform(0.0, size);
                let w = rng.uniform(8.0, 160.0);
                let h = rng.uniform(8.0, 160.0);
                let class = rng.below(k as u64) as usize;
                let bbox = BBox::from_center(cx, cy, w, h).clamp_to(size, size);
                BoxCandidate::new(bbox, SYNTHETIC_SCORE, class_scores(k, class))
            })
            .collect(),
        Scenario::Worst => {
            let cols = (1..).find(|c| c * c >= n).unwrap_or(1);
            let cell = size / cols as f64;
            (0..n)
                .map(|i| {
                    let cx = ((i % cols) as f64 + 0.5 + rng.uniform(-0.1, 0.1)) * cell;
                    let cy = ((i / cols) as f64 + 0.5 + rng.uniform(-0.1, 0.1)) * cell;
                    let side = cell * rng.uniform(0.5, 0.7);
                    let class = rng.below(k as u64) as usize;
                    let bbox = BBox::from_center(cx, cy, side, side);
                    BoxCandidate::new(bbox, SYNTHETIC_SCORE, class_scores(k, class))
                })
                .collect()
        }
    };
    CandidateSet::new(alloc::format!("{}-{n}-{seed}", scenario.name()), candidates)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSample {
    pub n: usize,
    pub scenario: Scenario,
    /// Median over `repeats` timed runs.
    pub elapsed: Duration,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub sizes: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub repeats: usize,
    pub k_classes: usize,
    pub seed: u64,
    /// Any single run longer than this aborts the benchmark.
    pub safety_limit: Duration,
}

impl BenchmarkPlan {
    pub fn new(sizes: Vec<usize>, scenarios: Vec<Scenario>) -> Self {
        Self { sizes, scenarios, repeats: 3, k_classes: 80, seed: 0, safety_limit: Duration::from_secs(30) }
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
fn median_duration(values: &mut [Duration]) -> Duration {
    values.sort_unstable();
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2
    }
}

/// Time `nms_matrix` for every `(size, scenario)` pair: one warm-up run, then
/// the median of `repeats` runs. The worst scenario is always run with
/// `t_iou = 1.0`.
pub fn benchmark<C: Clock>(plan: &BenchmarkPlan, cfg: &NmsConfig, clock: &C) -> Result<Vec<TimingSample>> {
    if plan.sizes.is_empty() || plan.scenarios.is_empty() {
        return Err(Error::EmptyInput);
    }
    if plan.repeats < 3 {
        return Err(Error::InvalidConfig("benchmark needs at least 3 repeats".into()));
    }
    let mut out = Vec::with_capacity(plan.sizes.len() * plan.scenarios.len());
    for &n in &plan.sizes {
        for &scenario in &plan.scenarios {
            let set = gen_synthetic(scenario, n, plan.k_classes, plan.seed);
            let mut run_cfg = cfg.clone();
            if scenario == Scenario::Worst {
                run_cfg.t_iou = 1.0;
            }
            let mut times = Vec::with_capacity(plan.repeats);
            for run in 0..=plan.repeats {
                let start = clock.now();
                let report = nms_matrix(&set, &run_cfg, clock);
                let elapsed = clock.now().saturating_sub(start);
                core::hint::black_box(&report);
                if elapsed > plan.safety_limit {
                    return Err(Error::SafetyLimitExceeded { n, elapsed_us: elapsed.as_micros() });
                }
                if run > 0 {
                    times.push(elapsed);
                }
            }
            out.push(TimingSample { n, scenario, elapsed: median_duration(&mut times), repeats: plan.repeats });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CostModelParams {
    /// Seconds per squared candidate.
    pub alpha: f64,
    /// Plateau latency in seconds.
    pub t_base: f64,
    pub n_break: usize,
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.t_base >= 0.0) || self.n_break == 0 {
            return Err(Error::InvalidConfig("cost model needs alpha > 0, t_base >= 0, n_break >= 1".into()));
        }
        Ok(())
    }

    /// Predicted latency in seconds.
    pub fn predict_secs(&self, n: usize) -> f64 {
        if n > self.n_break {
            let n = n as f64;
            self.alpha * n * n
        } else {
            self.t_base
        }
    }
}

pub fn predict_time(params: &CostModelParams, n: usize) -> Duration {
    Duration::from_secs_f64(params.predict_secs(n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// A sample leaves the plateau once it exceeds this multiple of `t_base`.
    pub exceed_factor: f64,
    /// Samples within this multiple of the smallest-`n` timing form the plateau.
    pub plateau_tolerance: f64,
    pub min_samples: usize,
    /// Required ratio between the largest and smallest `n`.
    pub min_span: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { exceed_factor: 2.0, plateau_tolerance: 1.25, min_samples: 3, min_span: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFit {
    pub params: CostModelParams,
    /// Coefficient of determination of `alpha * n^2` on the quadratic segment.
    pub r2: f64,
    /// Sizes the quadratic coefficient was fitted on.
    pub segment: Vec<usize>,
}

/// Fit the piecewise model to samples from a single scenario.
///
/// The plateau is the run of smallest-`n` samples within `plateau_tolerance`
/// of the smallest-`n` timing; `t_base` is its median. `n_break` is the smallest `n`
/// whose time exceeds `exceed_factor * t_base`, and `alpha` is the
/// through-origin least-squares slope of time against `n^2` over `n > n_break`.
pub fn fit(samples: &[TimingSample], opts: &FitOptions) -> Result<CostFit> {
    let mut pts: Vec<(usize, f64)> = samples.iter().map(|s| (s.n, s.elapsed.as_secs_f64())).collect();
    pts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let needed = opts.min_samples;
    let spans = match (pts.first(), pts.last()) {
        (Some(lo), Some(hi)) => hi.0 as f64 >= opts.min_span * (lo.0.max(1) as f64),
        _ => false,
    };
    if pts.len() < needed || !spans {
        return Err(Error::InsufficientSamples { got: pts.len(), needed });
    }

    let reference = pts[0].1;
    let mut plateau: Vec<f64> =
        pts.iter().take_while(|p| p.1 <= opts.plateau_tolerance * reference).map(|p| p.1).collect();
    if plateau.is_empty() {
        plateau.push(reference);
    }
    plateau.sort_by(f64::total_cmp);
    let mid = plateau.len() / 2;
    let t_base = if plateau.len() % 2 == 1 { plateau[mid] } else { (plateau[mid - 1] + plateau[mid]) / 2.0 };

    let first = pts.iter().position(|p| p.1 > opts.exceed_factor * t_base).ok_or(Error::FitDegenerate)?;
    let n_break = pts[first].0;
    let segment: Vec<(usize, f64)> = pts[first..].iter().copied().filter(|p| p.0 > n_break).collect();
    if segment.is_empty() {
        return Err(Error::FitDegenerate);
    }

    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(n, t) in &segment {
        let x = (n as f64) * (n as f64);
        sxy += x * t;
        sxx += x * x;
    }
    let alpha = sxy / sxx;

    let mean = segment.iter().map(|p| p.1).sum::<f64>() / segment.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(n, t) in &segment {
        let pred = alpha * (n as f64) * (n as f64);
        ss_res += (t - pred) * (t - pred);
        ss_tot += (t - mean) * (t - mean);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 };

    Ok(CostFit {
        params: CostModelParams { alpha, t_base, n_break },
        r2,
        segment: segment.iter().map(|p| p.0).collect(),
    })
}

/// Least-squares slope of `ln(elapsed)` against `ln(n)`.
pub fn loglog_slope(samples: &[TimingSample]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.n > 0 && !s.elapsed.is_zero())
        .map(|s| (libm::log(s.n as f64), libm::log(s.elapsed.as_secs_f64())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

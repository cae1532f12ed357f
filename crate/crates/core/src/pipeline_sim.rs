//! Single-server FIFO simulation of an edge detection pipeline.
//!
//! Each request costs `t_trans + t_wait + t_infer + nms`, where the NMS time
//! comes from a [`NmsTimeSource`] and is capped by the optional timeout.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::costmodel::CostModelParams;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Request {
    pub id: usize,
    /// Send time in seconds. `None` sends the request the moment the
    /// previous one completes, which keeps the pipeline saturated.
    pub arrival_time: Option<f64>,
    pub t_trans: f64,
    pub candidate_count: usize,
    pub is_adversarial: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct SimConfig {
    pub t_infer: f64,
    pub t_trans: f64,
    pub cost_model: CostModelParams,
    /// NMS time cap in seconds.
    pub timeout: Option<f64>,
    pub adversarial_ratio: f64,
    pub adv_candidates: usize,
    pub clean_candidates: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_infer: 0.020,
            t_trans: 0.0,
            cost_model: CostModelParams { alpha: 4e-9, t_base: 0.001, n_break: 500 },
            timeout: Some(0.5),
            adversarial_ratio: 0.0,
            adv_candidates: 10_000,
            clean_candidates: 50,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_infer > 0.0) {
            return Err(Error::InvalidConfig("t_infer must be positive".into()));
        }
        if !(self.t_trans >= 0.0) {
            return Err(Error::InvalidConfig("t_trans must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.adversarial_ratio) {
            return Err(Error::InvalidConfig("adversarial_ratio must lie in [0, 1]".into()));
        }
        if let Some(t) = self.timeout {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("timeout must be positive".into()));
            }
        }
        self.cost_model.validate()
    }
}

/// Number of adversarial requests for a ratio: `ceil(ratio * n)`.
pub fn adversarial_count(n: usize, ratio: f64) -> usize {
    (libm::ceil(ratio * n as f64 - 1e-9).max(0.0) as usize).min(n)
}

/// Completion-driven workload with `ceil(ratio * n)` adversarial requests at
/// seeded positions.
pub fn synthesize_workload(n: usize, cfg: &SimConfig, seed: u64) -> Vec<Request> {
    let n_adv = adversarial_count(n, cfg.adversarial_ratio);
    let mut positions: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        positions.swap(i, j);
    }
    let mut adversarial = alloc::vec![false; n];
    for &p in &positions[..n_adv] {
        adversarial[p] = true;
    }
    adversarial
        .into_iter()
        .enumerate()
        .map(|(id, adv)| Request {
            id,
            arrival_time: None,
            t_trans: cfg.t_trans,
            candidate_count: if adv { cfg.adv_candidates } else { cfg.clean_candidates },
            is_adversarial: adv,
        })
        .collect()
}

/// Supplies the uncapped NMS time of a request in seconds.
pub trait NmsTimeSource {
    fn nms_secs(&mut self, request: &Request) -> f64;
}

impl NmsTimeSource for CostModelParams {
    fn nms_secs(&mut self, request: &Request) -> f64 {
        self.predict_secs(request.candidate_count)
    }
}

impl<F: FnMut(&Request) -> f64> NmsTimeSource for F {
    fn nms_secs(&mut self, request: &Request) -> f64 {
        self(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RequestTiming {
    pub id: usize,
    /// Send time.
    pub arrival: f64,
    pub t_trans: f64,
    pub t_wait: f64,
    pub t_infer: f64,
    /// NMS time after the timeout cap.
    pub t_nms: f64,
    /// `t_infer + t_nms`.
    pub t_comp: f64,
    pub t_total: f64,
    pub timed_out: bool,
    pub is_adversarial: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimTrace {
    pub requests: Vec<RequestTiming>,
    pub mean_total: f64,
    /// Time from the first send to the last completion.
    pub makespan: f64,
    pub fps: f64,
}

impl SimTrace {
    pub fn timed_out_count(&self) -> usize {
        self.requests.iter().filter(|r| r.timed_out).count()
    }
}

/// Simulate with NMS times predicted by `cfg.cost_model`.
pub fn simulate(workload: &[Request], cfg: &SimConfig) -> Result<SimTrace> {
    let mut model = cfg.cost_model;
    simulate_with(workload, cfg, &mut model)
}

/// Simulate with NMS times from an arbitrary source, called once per request
/// in FIFO order.
pub fn simulate_with<S: NmsTimeSource + ?Sized>(workload: &[Request], cfg: &SimConfig, source: &mut S) -> Result<SimTrace> {
    cfg.validate()?;
    if workload.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut requests = Vec::with_capacity(workload.len());
    let mut server_free = 0.0f64;
    let mut last_completion = 0.0f64;
    let mut first_send = f64::INFINITY;
    for req in workload {
        let arrival = req.arrival_time.unwrap_or(last_completion);
        first_send = first_send.min(arrival);
        let ready = arrival + req.t_trans;
        let start = ready.max(server_free);
        let raw = source.nms_secs(req);
        let (t_nms, timed_out) = match cfg.timeout {
            Some(limit) if raw > limit => (limit, true),
            _ => (raw, false),
        };
        let t_comp = cfg.t_infer + t_nms;
        let done = start + t_comp;
        let t_wait = start - ready;
        requests.push(RequestTiming {
            id: req.id,
            arrival,
            t_trans: req.t_trans,
            t_wait,
            t_infer: cfg.t_infer,
            t_nms,
            t_comp,
            t_total: req.t_trans + t_wait + cfg.t_infer + t_nms,
            timed_out,
            is_adversarial: req.is_adversarial,
        });
        server_free = done;
        last_completion = done;
    }
    let n = requests.len() as f64;
    let mean_total = requests.iter().map(|r| r.t_total).sum::<f64>() / n;
    let makespan = last_completion - first_send;
    Ok(SimTrace { requests, mean_total, makespan, fps: n / makespan })
}

/// One row of an adversarial-ratio sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SweepRow {
    pub ratio: f64,
    pub mean_total: f64,
    pub fps: f64,
    pub timed_out: usize,
}

/// Re-synthesize and simulate a workload for every ratio, same seed each time.
pub fn ratio_sweep(ratios: &[f64], n: usize, cfg: &SimConfig, seed: u64) -> Result<Vec<SweepRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            let cfg = SimConfig { adversarial_ratio: ratio, ..cfg.clone() };
            let trace = simulate(&synthesize_workload(n, &cfg, seed), &cfg)?;
            Ok(SweepRow { ratio, mean_total: trace.mean_total, fps: trace.fps, timed_out: trace.timed_out_count() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plateau_cfg() -> SimConfig {
        SimConfig {
            t_infer: 0.020,
            t_trans: 0.0,
            cost_model: CostModelParams { alpha: 6e-9, t_base: 0.001, n_break: 1000 },
            ..SimConfig::default()
        }
    }

    #[test]
    fn single_request_arithmetic() {
        let cfg = plateau_cfg();
        let wl = synthesize_workload(1, &cfg, 0);
        let t = simulate(&wl, &cfg).unwrap();
        assert!((t.requests[0].t_total - 0.021).abs() < 1e-12);
        assert!((t.fps - 1.0 / 0.021).abs() < 1e-9);
        assert!(!t.requests[0].timed_out);
    }

    #[test]
    fn ratio_counts() {
        let mut cfg = plateau_cfg();
        cfg.adversarial_ratio = 0.0;
        assert!(synthesize_workload(100, &cfg, 1).iter().all(|r| !r.is_adversarial));
        cfg.adversarial_ratio = 1.0;
        assert!(synthesize_workload(4, &cfg, 1).iter().all(|r| r.is_adversarial));
        cfg.adversarial_ratio = 0.25;
        let a = synthesize_workload(1000, &cfg, 9);
        assert_eq!(a.iter().filter(|r| r.is_adversarial).count(), 250);
        assert_eq!(a, synthesize_workload(1000, &cfg, 9));
        assert_ne!(a, synthesize_workload(1000, &cfg, 10));
        assert_eq!(adversarial_count(10, 0.33), 4);
        assert_eq!(adversarial_count(100, 0.29), 29);
    }

    #[test]
    fn timeout_caps_service() {
        // 600 ms predicted NMS
        let cfg = SimConfig {
            cost_model: CostModelParams { alpha: 6e-9, t_base: 0.001, n_break: 1000 },
            adv_candidates: 10_000,
            adversarial_ratio: 1.0,
            ..plateau_cfg()
        };
        let wl = synthesize_workload(3, &cfg, 0);
        let t = simulate(&wl, &cfg).unwrap();
        for r in &t.requests {
            assert!(r.timed_out);
            assert!((r.t_comp - 0.520).abs() < 1e-12);
        }
        let open = SimConfig { timeout: None, ..cfg };
        assert!(simulate(&wl, &open).unwrap().mean_total > t.mean_total);
    }

    #[test]
    fn sweep_increases() {
        let cfg = SimConfig { adv_candidates: 8000, ..plateau_cfg() };
        let rows = ratio_sweep(&[0.0, 0.25, 0.5, 0.75, 1.0], 200, &cfg, 3).unwrap();
        assert!(rows.windows(2).all(|w| w[1].mean_total > w[0].mean_total));
        assert!(rows.windows(2).all(|w| w[1].fps < w[0].fps));
    }

    #[test]
    fn open_arrivals_queue_up() {
        let cfg = plateau_cfg();
        let wl: Vec<Request> = (0..3)
            .map(|id| Request { id, arrival_time: Some(0.0), t_trans: 0.0, candidate_count: 10, is_adversarial: false })
            .collect();
        let t = simulate(&wl, &cfg).unwrap();
        let waits: Vec<f64> = t.requests.iter().map(|r| r.t_wait).collect();
        assert!((waits[1] - 0.021).abs() < 1e-12 && (waits[2] - 0.042).abs() < 1e-12);
        assert!((t.makespan - 0.063).abs() < 1e-12);
    }

    #[test]
    fn custom_source_is_used() {
        let cfg = plateau_cfg();
        let wl = synthesize_workload(2, &cfg, 0);
        let mut src = |_: &Request| 0.004;
        let t = simulate_with(&wl, &cfg, &mut src).unwrap();
        assert!((t.requests[1].t_comp - 0.024).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = plateau_cfg();
        assert_eq!(simulate(&[], &cfg), Err(Error::EmptyInput));
        let bad = SimConfig { t_infer: 0.0, ..cfg.clone() };
        assert!(simulate(&synthesize_workload(1, &cfg, 0), &bad).is_err());
    }

    fn arb_workload() -> impl Strategy<Value = Vec<Request>> {
        prop::collection::vec((0.0f64..0.05, 0usize..5000, prop::bool::ANY), 1..40).prop_map(|v| {
            let mut t = 0.0;
            v.into_iter()
                .enumerate()
                .map(|(id, (gap, n, fixed))| {
                    t += gap;
                    Request { id, arrival_time: fixed.then_some(t), t_trans: 0.003, candidate_count: n, is_adversarial: false }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn conservation_and_fifo(wl in arb_workload()) {
            let cfg = plateau_cfg();
            let t = simulate(&wl, &cfg).unwrap();
            let mut prev_done = f64::NEG_INFINITY;
            for r in &t.requests {
                prop_assert!(r.t_wait >= 0.0);
                prop_assert_eq!(r.t_total, r.t_trans + r.t_wait + r.t_infer + r.t_nms);
                let start = r.arrival + r.t_trans + r.t_wait;
                let done = start + r.t_comp;
                // the server starts as soon as both the request and the server are ready
                prop_assert!(r.t_wait == 0.0 || (start - prev_done).abs() < 1e-9);
                prop_assert!(done >= prev_done);
                prev_done = done;
            }
        }

        #[test]
        fn more_candidates_never_shorten_later_waits(wl in arb_workload(), pick in 0usize..40, extra in 1usize..20_000) {
            let cfg = plateau_cfg();
            let base = simulate(&wl, &cfg).unwrap();
            let mut bumped = wl.clone();
            let i = pick % bumped.len();
            bumped[i].candidate_count += extra;
            let after = simulate(&bumped, &cfg).unwrap();
            for j in i + 1..wl.len() {
                if wl[j].arrival_time.is_some() {
                    prop_assert!(after.requests[j].t_wait >= base.requests[j].t_wait - 1e-12);
                }
                prop_assert!(after.requests[j].t_total >= base.requests[j].t_total - 1e-12 || wl[j].arrival_time.is_none());
            }
        }

        #[test]
        fn ratio_monotone(seed in 0u64..1000, n in 1usize..200) {
            let cfg = plateau_cfg();
            let rows = ratio_sweep(&[0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0], n, &cfg, seed).unwrap();
            prop_assert!(rows.windows(2).all(|w| w[1].mean_total >= w[0].mean_total));
        }
    }

    #[test]
    fn zero_ratio_fps_matches_plateau() {
        let cfg = SimConfig { t_trans: 0.005, ..plateau_cfg() };
        let t = simulate(&synthesize_workload(100, &cfg, 0), &cfg).unwrap();
        assert!((t.fps - 1.0 / 0.026).abs() / (1.0 / 0.026) < 1e-9);
    }
}

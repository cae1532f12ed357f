use std::collections::HashMap;

use overload_core::costmodel::{gen_synthetic, Scenario};
use overload_core::nms::{nms_matrix, NmsConfig};
use overload_core::pipeline_sim::{NmsTimeSource, Request};

use crate::clock::StdClock;

/// Times `nms_matrix` live on a random synthetic set of the requested size.
///
/// Each distinct size is measured once (median of `repeats` runs) and cached,
/// so a long workload costs a handful of NMS runs.
#[derive(Debug)]
pub struct MeasuredNms {
    pub cfg: NmsConfig,
    pub k_classes: usize,
    pub seed: u64,
    pub repeats: usize,
    clock: StdClock,
    cache: HashMap<usize, f64>,
}

impl MeasuredNms {
    pub fn new(k_classes: usize, seed: u64) -> Self {
        let cfg = NmsConfig { timeout: None, ..NmsConfig::default() };
        Self { cfg, k_classes, seed, repeats: 3, clock: StdClock::new(), cache: HashMap::new() }
    }

    pub fn measure(&mut self, n: usize) -> f64 {
        if let Some(&t) = self.cache.get(&n) {
            return t;
        }
        let set = gen_synthetic(Scenario::Random, n, self.k_classes, self.seed);
        let mut times: Vec<f64> = (0..self.repeats.max(1))
            .map(|_| std::hint::black_box(nms_matrix(&set, &self.cfg, &self.clock)).elapsed.as_secs_f64())
            .collect();
        times.sort_by(f64::total_cmp);
        let t = times[times.len() / 2];
        self.cache.insert(n, t);
        t
    }
}

impl NmsTimeSource for MeasuredNms {
    fn nms_secs(&mut self, request: &Request) -> f64 {
        self.measure(request.candidate_count)
    }
}

//! Confidence-maximizing PGD with spatial attention.
//!
//! The objective sums `F_l(F_conf(c, p_i))` over every slot and class of the
//! raw detector output, where
//!
//! ```text
//! F_conf(c, p) = c      if c * p > t_conf
//!                c * p  otherwise
//! ```
//!
//! and `F_l` is one of the [`LossKind`] shapes. Each step ascends the input
//! gradient, scaled per attention cell by the [`SpatialGrid`] weights, and
//! projects back into the L-infinity ball around the original image.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::detector::{backward_with_trace, forward, forward_traced, DetectorTensor, ImageTensor, ModelWeights};
use crate::geometry::sigmoid;
use crate::{Error, Result};

/// Argument floor for `log` and ceiling for `-log(1 - x)`.
pub const LOSS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// `log x`
    #[default]
    Log,
    /// `tanh x`
    Tanh,
    /// `x^2 / 2`
    HalfSquare,
    /// `-log(1 - x)`
    NegLogOneMinus,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Log, LossKind::Tanh, LossKind::HalfSquare, LossKind::NegLogOneMinus];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Log => "log",
            LossKind::Tanh => "tanh",
            LossKind::HalfSquare => "half_square",
            LossKind::NegLogOneMinus => "neg_log_one_minus",
        }
    }

    /// `(F(x), F'(x))`. Clamped arguments have zero derivative.
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            LossKind::Log => {
                if x < LOSS_CLAMP {
                    (libm::log(LOSS_CLAMP), 0.0)
                } else {
                    (libm::log(x), 1.0 / x)
                }
            }
            LossKind::Tanh => {
                let t = libm::tanh(x);
                (t, 1.0 - t * t)
            }
            LossKind::HalfSquare => (0.5 * x * x, x),
            LossKind::NegLogOneMinus => {
                if x > 1.0 - LOSS_CLAMP {
                    (-libm::log(LOSS_CLAMP), 0.0)
                } else {
                    (-libm::log(1.0 - x), 1.0 / (1.0 - x))
                }
            }
        }
    }
}

impl core::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown loss {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum StepMode {
    /// Step along `sign(grad)`.
    #[default]
    Sign,
    /// Step along the raw gradient.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct AttackConfig {
    /// L-infinity budget in `[0, 1]` pixel units.
    pub epsilon: f64,
    pub eta: f64,
    pub steps: usize,
    pub grid_m: usize,
    pub loss: LossKind,
    pub step_mode: StepMode,
    pub t_conf: f64,
    pub spatial_attention: bool,
    /// Steps without growth before a cell's weight decays once more.
    pub stagnation_window: usize,
    pub stagnation_decay: f64,
    pub w_min: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            eta: 2.0 / 255.0,
            steps: 100,
            grid_m: 8,
            loss: LossKind::Log,
            step_mode: StepMode::Sign,
            t_conf: 0.25,
            spatial_attention: true,
            stagnation_window: 5,
            stagnation_decay: 0.5,
            w_min: 0.05,
        }
    }
}

impl AttackConfig {
    /// `eta = 0` is accepted: it turns every step into a no-op.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.eta >= 0.0) {
            return bad("eta must be non-negative");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.grid_m == 0 {
            return bad("grid_m must be at least 1");
        }
        if self.stagnation_window == 0 {
            return bad("stagnation_window must be at least 1");
        }
        if !(self.stagnation_decay > 0.0 && self.stagnation_decay <= 1.0) {
            return bad("stagnation_decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.w_min) {
            return bad("w_min must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.t_conf) {
            return bad("t_conf must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Per-class confidence term of the objective.
#[inline]
pub fn f_conf(c: f64, p: f64, t_conf: f64) -> f64 {
    if c * p > t_conf {
        c
    } else {
        c * p
    }
}

/// Objective value and its gradient with respect to the raw detector output.
///
/// At the switch point `c * p == t_conf` the product branch is active.
pub fn loss(output: &DetectorTensor, cfg: &AttackConfig) -> (f64, Vec<f64>) {
    let cols = output.cols();
    let mut total = 0.0;
    let mut grad = vec![0.0; output.data.len()];
    for r in 0..output.rows() {
        let row = output.row(r);
        let g = &mut grad[r * cols..(r + 1) * cols];
        let c = sigmoid(row[4]);
        let dc = c * (1.0 - c);
        for k in 5..cols {
            let p = sigmoid(row[k]);
            if c * p > cfg.t_conf {
                let (f, df) = cfg.loss.eval(c);
                g[4] += df * dc;
                total += f;
            } else {
                let (f, df) = cfg.loss.eval(c * p);
                g[4] += df * p * dc;
                g[k] += df * c * p * (1.0 - p);
                total += f;
            }
        }
    }
    (total, grad)
}

/// Index of the attention cell containing pixel position `(x, y)`.
#[inline]
pub fn attention_cell(x: f64, y: f64, width: f64, height: f64, m: usize) -> usize {
    let cx = ((x / width * m as f64) as usize).min(m - 1);
    let cy = ((y / height * m as f64) as usize).min(m - 1);
    cy * m + cx
}

/// Above-threshold candidates per attention cell, assigned by decoded box center.
pub fn cell_counts(output: &DetectorTensor, t_conf: f64, m: usize) -> Vec<usize> {
    let (h, w) = output.image_size();
    let mut counts = vec![0; m * m];
    for r in 0..output.rows() {
        let cand = output.decode_row(r);
        if cand.confidence() > t_conf {
            let (x, y) = cand.bbox.center();
            counts[attention_cell(x, y, w as f64, h as f64, m)] += 1;
        }
    }
    counts
}

/// Candidate slots whose grid-cell centers fall in each attention cell.
pub fn cell_capacity(output: &DetectorTensor, m: usize) -> Vec<usize> {
    let (h, w) = output.image_size();
    let mut caps = vec![0; m * m];
    for r in 0..output.rows() {
        let (x, y) = output.slot_center(r);
        caps[attention_cell(x, y, w as f64, h as f64, m)] += 1;
    }
    caps
}

/// `m x m` step-size weights with the bookkeeping that drives them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub m: usize,
    pub weights: Vec<f64>,
    pub last_counts: Vec<usize>,
    pub stagnation: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(m: usize) -> Self {
        Self { m, weights: vec![1.0; m * m], last_counts: vec![0; m * m], stagnation: vec![0; m * m] }
    }

    /// Refresh the weights from the latest per-cell counts.
    ///
    /// `W = clamp((1 - counts / capacity) * decay^(stagnation / window), w_min, 1)`,
    /// where `stagnation` counts consecutive updates without growth.
    pub fn update_weights(&mut self, counts: &[usize], capacity: &[usize], cfg: &AttackConfig) {
        for i in 0..self.m * self.m {
            if counts[i] > self.last_counts[i] {
                self.stagnation[i] = 0;
            } else {
                self.stagnation[i] += 1;
            }
            self.last_counts[i] = counts[i];
            let density = if capacity[i] == 0 { 1.0 } else { (counts[i] as f64 / capacity[i] as f64).min(1.0) };
            let decays = (self.stagnation[i] / cfg.stagnation_window) as i32;
            let w = (1.0 - density) * libm::pow(cfg.stagnation_decay, decays as f64);
            self.weights[i] = w.clamp(cfg.w_min, 1.0);
        }
    }

    pub fn weight_at_pixel(&self, y: usize, x: usize, height: usize, width: usize) -> f64 {
        let cy = (y * self.m / height).min(self.m - 1);
        let cx = (x * self.m / width).min(self.m - 1);
        self.weights[cy * self.m + cx]
    }
}

/// One projected ascent step. `grid = None` means unit weights everywhere.
pub fn pgd_step(
    x: &ImageTensor,
    x_org: &ImageTensor,
    grad: &[f64],
    grid: Option<&SpatialGrid>,
    cfg: &AttackConfig,
) -> ImageTensor {
    let mut next = x.clone();
    let (h, w, ch) = (x.height, x.width, x.channels);
    for y in 0..h {
        for px in 0..w {
            let weight = grid.map_or(1.0, |g| g.weight_at_pixel(y, px, h, w));
            for c in 0..ch {
                let i = (y * w + px) * ch + c;
                let delta = match cfg.step_mode {
                    StepMode::Sign => sign(grad[i]),
                    StepMode::Raw => grad[i],
                };
                let moved = x.data[i] + cfg.eta * weight * delta;
                next.data[i] = project(moved, x_org.data[i], cfg.epsilon);
            }
        }
    }
    next
}

/// Clamp into `[0, 1]` and the `epsilon` ball around `org`, such that
/// `(v - org).abs() <= epsilon` holds as computed in `f64`.
fn project(v: f64, org: f64, epsilon: f64) -> f64 {
    // Both bounds contain `org`, so clamping to the pixel range first cannot
    // leave the ball clamp outside it. Non-negative values step by one ulp
    // through their bit patterns.
    let mut v = v.clamp(0.0, 1.0).clamp(org - epsilon, org + epsilon);
    while v - org > epsilon {
        v = f64::from_bits(v.to_bits() - 1);
    }
    while org - v > epsilon {
        v = f64::from_bits(v.to_bits() + 1);
    }
    v
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// How an ensemble combines per-model gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum EnsembleMode {
    /// Mean gradient over all models every step.
    #[default]
    Average,
    /// Model `step % len` supplies the gradient.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Objective before the update (mean over models for ensembles).
    pub loss: f64,
    /// Above-threshold candidates per model before the update.
    pub counts: Vec<usize>,
    /// Counts per attention cell that drove the weight update.
    pub cell_counts: Vec<usize>,
    /// Smallest attention weight used by the update.
    pub min_weight: f64,
    /// `||x_adv - x_org||_inf` after the update.
    pub linf: f64,
    /// Every pixel of the updated image lies in `[0, 1]`.
    pub in_range: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    pub steps: Vec<StepRecord>,
    pub clean_counts: Vec<usize>,
    pub final_counts: Vec<usize>,
}

impl AttackTrace {
    pub fn clean_count(&self) -> usize {
        self.clean_counts[0]
    }

    pub fn final_count(&self) -> usize {
        self.final_counts[0]
    }

    /// Every recorded step stayed inside the budget and the pixel range.
    pub fn budget_respected(&self, epsilon: f64) -> bool {
        self.steps.iter().all(|s| s.linf <= epsilon && s.in_range)
    }
}

/// Above-threshold candidate count for one forward output.
pub fn above_threshold(output: &DetectorTensor, t_conf: f64) -> usize {
    (0..output.rows()).filter(|&r| output.decode_row(r).confidence() > t_conf).count()
}

/// Single-model attack.
pub fn overload_attack(w: &ModelWeights, x_org: &ImageTensor, cfg: &AttackConfig) -> Result<(ImageTensor, AttackTrace)> {
    run(core::slice::from_ref(w), x_org, cfg, EnsembleMode::Average)
}

/// Multi-model attack; with one model and [`EnsembleMode::Average`] it follows
/// exactly the same trajectory as [`overload_attack`].
pub fn ensemble_attack(
    ws: &[ModelWeights],
    x_org: &ImageTensor,
    cfg: &AttackConfig,
    mode: EnsembleMode,
) -> Result<(ImageTensor, AttackTrace)> {
    if ws.is_empty() {
        return Err(Error::InvalidConfig("ensemble needs at least one model".into()));
    }
    let first = (ws[0].num_classes, ws[0].anchors.len(), ws[0].layers[0].in_channels);
    if ws.iter().any(|w| (w.num_classes, w.anchors.len(), w.layers[0].in_channels) != first) {
        return Err(Error::GeometryMismatch);
    }
    run(ws, x_org, cfg, mode)
}

fn run(ws: &[ModelWeights], x_org: &ImageTensor, cfg: &AttackConfig, mode: EnsembleMode) -> Result<(ImageTensor, AttackTrace)> {
    cfg.validate()?;
    let m = cfg.grid_m;
    let mut grid = SpatialGrid::new(m);
    let mut x = x_org.clone();
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut clean_counts = Vec::new();

    for step in 0..cfg.steps {
        let active = match mode {
            EnsembleMode::Average => None,
            EnsembleMode::RoundRobin => Some(step % ws.len()),
        };
        let mut grad_sum: Option<Vec<f64>> = None;
        let mut loss_sum = 0.0;
        let mut counts = Vec::with_capacity(ws.len());
        let mut cells = vec![0usize; m * m];
        let mut caps = vec![0usize; m * m];
        let mut contributors = 0usize;

        for (i, w) in ws.iter().enumerate() {
            let (out, trace) = forward_traced(w, &x)?;
            counts.push(above_threshold(&out, cfg.t_conf));
            if active.is_some_and(|a| a != i) {
                continue;
            }
            let (value, upstream) = loss(&out, cfg);
            loss_sum += value;
            contributors += 1;
            let g = backward_with_trace(w, &trace, &upstream)?;
            match grad_sum.as_mut() {
                None => grad_sum = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            }
            if cfg.spatial_attention {
                for (c, v) in cells.iter_mut().zip(cell_counts(&out, cfg.t_conf, m)) {
                    *c += v;
                }
                for (c, v) in caps.iter_mut().zip(cell_capacity(&out, m)) {
                    *c += v;
                }
            }
        }
        if step == 0 {
            clean_counts = counts.clone();
        }

        let mut grad = grad_sum.expect("at least one contributing model");
        if contributors > 1 {
            let scale = contributors as f64;
            grad.iter_mut().for_each(|g| *g /= scale);
        }
        if cfg.spatial_attention {
            grid.update_weights(&cells, &caps, cfg);
        }
        let weights = cfg.spatial_attention.then_some(&grid);
        x = pgd_step(&x, x_org, &grad, weights, cfg);

        steps.push(StepRecord {
            step,
            loss: loss_sum / contributors as f64,
            counts,
            cell_counts: cells,
            min_weight: weights.map_or(1.0, |g| g.weights.iter().copied().fold(1.0, f64::min)),
            linf: x.linf_distance(x_org),
            in_range: x.data.iter().all(|v| (0.0..=1.0).contains(v)),
        });
    }

    let final_counts = ws
        .iter()
        .map(|w| forward(w, &x).map(|out| above_threshold(&out, cfg.t_conf)))
        .collect::<Result<Vec<_>>>()?;
    Ok((x, AttackTrace { steps, clean_counts, final_counts }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::init_weights;

    #[test]
    fn f_conf_branches() {
        assert_eq!(f_conf(0.9, 0.6, 0.25), 0.9);
        assert!((f_conf(0.2, 0.1, 0.25) - 0.02).abs() < 1e-15);
        assert_eq!(f_conf(1.0, 1.0, 0.99), 1.0);
        // switch point belongs to the product branch
        assert_eq!(f_conf(0.5, 0.5, 0.25), 0.25);
    }

    fn tensor(rows: &[[f64; 6]]) -> DetectorTensor {
        DetectorTensor {
            grid_h: 1,
            grid_w: rows.len(),
            anchors: vec![crate::geometry::Anchor { w: 8.0, h: 8.0 }],
            num_classes: 1,
            stride: 8,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[test]
    fn saturated_log_loss_is_zero() {
        // sigmoid(40) rounds to exactly 1.0
        let out = tensor(&[[0.0, 0.0, 0.0, 0.0, 40.0, 40.0], [0.0, 0.0, 0.0, 0.0, 40.0, 40.0]]);
        let cfg = AttackConfig { loss: LossKind::Log, ..AttackConfig::default() };
        assert_eq!(loss(&out, &cfg).0, 0.0);
    }

    #[test]
    fn half_square_single_slot() {
        // c = 1, p = 0.5, product branch because t_conf sits above 0.5
        let out = tensor(&[[0.0, 0.0, 0.0, 0.0, 40.0, 0.0]]);
        let cfg = AttackConfig { loss: LossKind::HalfSquare, t_conf: 0.9, ..AttackConfig::default() };
        assert!((loss(&out, &cfg).0 - 0.125).abs() < 1e-15);
    }

    #[test]
    fn loss_shapes_values() {
        assert_eq!(LossKind::Log.eval(1.0), (0.0, 1.0));
        assert_eq!(LossKind::HalfSquare.eval(0.5), (0.125, 0.5));
        assert_eq!(LossKind::Log.eval(0.0), (libm::log(LOSS_CLAMP), 0.0));
        assert_eq!(LossKind::NegLogOneMinus.eval(1.0), (-libm::log(LOSS_CLAMP), 0.0));
        let (t, dt) = LossKind::Tanh.eval(0.0);
        assert_eq!((t, dt), (0.0, 1.0));
    }

    #[test]
    fn loss_kinds_monotone_with_expected_derivative_shape() {
        for kind in LossKind::ALL {
            let mut prev = f64::NEG_INFINITY;
            let mut prev_d = None;
            for i in 1..1000 {
                let x = i as f64 / 1000.0;
                let (v, d) = kind.eval(x);
                assert!(v >= prev, "{} not monotone at {x}", kind.name());
                prev = v;
                if let Some(pd) = prev_d {
                    match kind {
                        LossKind::Log | LossKind::Tanh => assert!(d <= pd),
                        LossKind::HalfSquare | LossKind::NegLogOneMinus => assert!(d >= pd),
                    }
                }
                prev_d = Some(d);
            }
        }
    }

    #[test]
    fn weight_update_rules() {
        let cfg = AttackConfig { stagnation_window: 5, stagnation_decay: 0.5, w_min: 0.05, ..AttackConfig::default() };
        let mut grid = SpatialGrid::new(1);
        grid.update_weights(&[0], &[12], &cfg);
        assert_eq!(grid.weights[0], 1.0);

        let mut grid = SpatialGrid::new(1);
        grid.update_weights(&[12], &[12], &cfg);
        assert_eq!(grid.weights[0], 0.05);

        let mut grid = SpatialGrid::new(1);
        for _ in 0..10 {
            grid.update_weights(&[0], &[12], &cfg);
        }
        assert_eq!(grid.stagnation[0], 10);
        assert_eq!(grid.weights[0], 0.25);

        // growth resets the counter
        grid.update_weights(&[3], &[12], &cfg);
        assert_eq!(grid.stagnation[0], 0);
        assert!((grid.weights[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn weights_stay_in_bounds() {
        let cfg = AttackConfig { w_min: 0.1, stagnation_window: 1, stagnation_decay: 0.3, ..AttackConfig::default() };
        let mut grid = SpatialGrid::new(2);
        let caps = [5, 5, 5, 0];
        for t in 0..50usize {
            let counts = [t % 6, (t * 7) % 6, 5, 0];
            grid.update_weights(&counts, &caps, &cfg);
            assert!(grid.weights.iter().all(|&w| (0.1..=1.0).contains(&w)));
        }
    }

    #[test]
    fn pgd_step_arithmetic() {
        let x_org = ImageTensor::filled(1, 1, 1, 0.5);
        let cfg = AttackConfig { eta: 0.01, epsilon: 0.03, ..AttackConfig::default() };
        let x1 = pgd_step(&x_org, &x_org, &[0.7], None, &cfg);
        assert!((x1.data[0] - 0.51).abs() < 1e-12);
        let mut x = x_org.clone();
        for _ in 0..5 {
            x = pgd_step(&x, &x_org, &[1.0], None, &cfg);
        }
        assert!((x.data[0] - 0.53).abs() < 1e-12);
        assert!(x.linf_distance(&x_org) <= 0.03);
        let still = pgd_step(&x_org, &x_org, &[0.0], None, &cfg);
        assert_eq!(still, x_org);
    }

    #[test]
    fn pgd_step_respects_pixel_range() {
        let x_org = ImageTensor::filled(1, 2, 1, 1.0);
        let cfg = AttackConfig { eta: 0.5, epsilon: 0.5, step_mode: StepMode::Raw, ..AttackConfig::default() };
        let x = pgd_step(&x_org, &x_org, &[3.0, -3.0], None, &cfg);
        assert_eq!(x.data, vec![1.0, 0.5]);
    }

    #[test]
    fn attention_scales_step() {
        let x_org = ImageTensor::filled(2, 2, 1, 0.5);
        let mut grid = SpatialGrid::new(2);
        grid.weights = vec![1.0, 0.5, 0.25, 0.0];
        let cfg = AttackConfig { eta: 0.01, epsilon: 0.1, ..AttackConfig::default() };
        let x = pgd_step(&x_org, &x_org, &[1.0; 4], Some(&grid), &cfg);
        let moved: Vec<f64> = x.data.iter().map(|v| v - 0.5).collect();
        for (got, want) in moved.iter().zip([0.01, 0.005, 0.0025, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_covers_every_slot() {
        let w = init_weights(1);
        let out = forward(&w, &ImageTensor::noise(64, 64, 3, 1)).unwrap();
        let caps = cell_capacity(&out, 8);
        assert_eq!(caps.iter().sum::<usize>(), 192);
        assert!(caps.iter().all(|&c| c == 3));
        let caps3 = cell_capacity(&out, 3);
        assert_eq!(caps3.iter().sum::<usize>(), 192);
    }

    #[test]
    fn null_step_leaves_image() {
        let w = init_weights(1);
        let x = ImageTensor::noise(64, 64, 3, 2);
        let cfg = AttackConfig { steps: 1, eta: 0.0, ..AttackConfig::default() };
        let (adv, trace) = overload_attack(&w, &x, &cfg).unwrap();
        assert_eq!(adv, x);
        assert_eq!(trace.clean_count(), trace.final_count());
        assert_eq!(trace.steps.len(), 1);
    }

    #[test]
    fn degenerate_ensemble_matches_single() {
        let w = init_weights(1);
        let x = ImageTensor::noise(64, 64, 3, 3);
        let cfg = AttackConfig { steps: 5, ..AttackConfig::default() };
        let single = overload_attack(&w, &x, &cfg).unwrap();
        let ens = ensemble_attack(core::slice::from_ref(&w), &x, &cfg, EnsembleMode::Average).unwrap();
        assert_eq!(single, ens);
    }

    #[test]
    fn ensemble_rejects_mismatch_and_empty() {
        let a = init_weights(1);
        let b = crate::detector::init_weights_with_classes(2, 6);
        let x = ImageTensor::noise(64, 64, 3, 3);
        let cfg = AttackConfig { steps: 1, ..AttackConfig::default() };
        assert_eq!(ensemble_attack(&[a, b], &x, &cfg, EnsembleMode::Average), Err(Error::GeometryMismatch));
        assert!(ensemble_attack(&[], &x, &cfg, EnsembleMode::Average).is_err());
    }

    proptest::proptest! {
        #[test]
        fn projection_is_exact(v in -1.0f64..2.0, org in 0.0f64..=1.0, eps in 1e-6f64..0.5) {
            let p = project(v, org, eps);
            proptest::prop_assert!((p - org).abs() <= eps);
            proptest::prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        assert!(AttackConfig { epsilon: 0.0, ..AttackConfig::default() }.validate().is_err());
        assert!(AttackConfig { stagnation_decay: 0.0, ..AttackConfig::default() }.validate().is_err());
        assert!(AttackConfig { grid_m: 0, ..AttackConfig::default() }.validate().is_err());
    }
}

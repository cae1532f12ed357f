//! A fixed anchor-grid micro-detector with exact input gradients.
//!
//! Architecture (tag [`ARCH_VERSION`]):
//!
//! ```text
//! conv3x3/2 (3->8)  -> ReLU
//! conv3x3/2 (8->16) -> ReLU
//! conv3x3/2 (16->32) -> ReLU
//! conv1x1   (32 -> A*(5+K))
//! ```
//!
//! All 3x3 convolutions use zero padding of one pixel, so the head sees an
//! `(H/8) x (W/8)` grid. Tensors are stored height-major with channels
//! innermost (HWC). With that layout the head's output buffer already is the
//! row-major `n x (5+K)` detector tensor, one row per (cell, anchor).

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{decode, Anchor, BoxCandidate, GridSlot};
use crate::nms::CandidateSet;
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const ARCH_VERSION: &str = "ovl-micro-v1";
pub const DEFAULT_CLASSES: usize = 4;
pub const INPUT_CHANNELS: usize = 3;
/// Product of the three stride-2 convolutions.
pub const STRIDE: usize = 8;
pub const ANCHORS: [Anchor; 3] = [
    Anchor { w: 16.0, h: 16.0 },
    Anchor { w: 32.0, h: 32.0 },
    Anchor { w: 64.0, h: 32.0 },
];
pub const OBJECTNESS_BIAS: f64 = -2.0;

/// Image with values in `[0, 1]`, HWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch { expected, actual: data.len() });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("image values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value.clamp(0.0, 1.0); height * width * channels] }
    }

    /// Uniform noise from the seeded generator. Values are drawn at `f32`
    /// precision so the image survives a round trip through the OVL1 format.
    pub fn noise(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let data = (0..height * width * channels).map(|_| rng.next_f32() as f64).collect();
        Self { height, width, channels, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    /// Largest absolute per-element difference.
    pub fn linf_distance(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][ky][kx][in]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel * self.kernel
    }

    /// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn init_bound(&self) -> f64 {
        libm::sqrt(6.0 / (self.fan_in() + self.fan_out()) as f64)
    }

    fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Visit every `(output pixel, kernel tap, input pixel)` triple that lies inside the input.
    #[inline]
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = self.output_dims(h, w);
        let k = self.kernel;
        for oy in 0..oh {
            for ox in 0..ow {
                let out_pix = oy * ow + ox;
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        f(out_pix, ky * k + kx, iy as usize * w + ix as usize);
                    }
                }
            }
        }
    }

    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.output_dims(h, w);
        let (cin, cout, taps) = (self.in_channels, self.out_channels, self.kernel * self.kernel);
        let mut out = Vec::with_capacity(oh * ow * cout);
        for _ in 0..oh * ow {
            out.extend_from_slice(&self.bias);
        }
        self.for_each_tap(h, w, |out_pix, tap, in_pix| {
            let x = &input[in_pix * cin..(in_pix + 1) * cin];
            let o = &mut out[out_pix * cout..(out_pix + 1) * cout];
            for (oc, acc) in o.iter_mut().enumerate() {
                let wt = &self.weights[(oc * taps + tap) * cin..(oc * taps + tap + 1) * cin];
                *acc += wt.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        });
        out
    }

    /// Gradient with respect to the layer input, given the gradient of its output.
    fn backward_input(&self, grad_out: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (cin, cout, taps) = (self.in_channels, self.out_channels, self.kernel * self.kernel);
        let mut grad_in = vec![0.0; h * w * cin];
        self.for_each_tap(h, w, |out_pix, tap, in_pix| {
            let g = &grad_out[out_pix * cout..(out_pix + 1) * cout];
            let gi = &mut grad_in[in_pix * cin..(in_pix + 1) * cin];
            for (oc, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let wt = &self.weights[(oc * taps + tap) * cin..(oc * taps + tap + 1) * cin];
                for (acc, &wv) in gi.iter_mut().zip(wt) {
                    *acc += go * wv;
                }
            }
        });
        grad_in
    }
}

/// Weights of the fixed architecture, reproducible from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub seed: u64,
    pub num_classes: usize,
    pub anchors: Vec<Anchor>,
    pub layers: Vec<ConvLayer>,
}

impl ModelWeights {
    /// Values per output row: box (4), objectness, classes.
    pub fn row_len(&self) -> usize {
        5 + self.num_classes
    }

    /// Candidate slots for an `h x w` input.
    pub fn slots_for(&self, h: usize, w: usize) -> usize {
        (h / STRIDE) * (w / STRIDE) * self.anchors.len()
    }
}

pub fn init_weights(seed: u64) -> ModelWeights {
    init_weights_with_classes(seed, DEFAULT_CLASSES)
}

/// Glorot-uniform weights drawn layer by layer in storage order from one
/// SplitMix64 stream. Biases are zero except the objectness bias of every anchor.
pub fn init_weights_with_classes(seed: u64, num_classes: usize) -> ModelWeights {
    let anchors = ANCHORS.to_vec();
    let head_out = anchors.len() * (5 + num_classes);
    let shapes = [(3, INPUT_CHANNELS, 8, 2, 1), (3, 8, 16, 2, 1), (3, 16, 32, 2, 1), (1, 32, head_out, 1, 0)];
    let mut rng = SplitMix64::new(seed);
    let layers = shapes
        .iter()
        .map(|&(kernel, in_channels, out_channels, stride, padding)| {
            let mut layer = ConvLayer {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights: Vec::new(),
                bias: vec![0.0; out_channels],
            };
            let bound = layer.init_bound();
            let count = out_channels * kernel * kernel * in_channels;
            layer.weights = (0..count).map(|_| (2.0 * rng.next_f64() - 1.0) * bound).collect();
            layer
        })
        .collect::<Vec<_>>();
    let mut weights = ModelWeights { seed, num_classes, anchors, layers };
    let row = weights.row_len();
    let head = weights.layers.last_mut().expect("four layers");
    for a in 0..ANCHORS.len() {
        head.bias[a * row + 4] = OBJECTNESS_BIAS;
    }
    weights
}

/// Raw head output: `rows = grid_h * grid_w * anchors`, `cols = 5 + K`,
/// row index `(gy * grid_w + gx) * anchors + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTensor {
    pub grid_h: usize,
    pub grid_w: usize,
    pub anchors: Vec<Anchor>,
    pub num_classes: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl DetectorTensor {
    pub fn rows(&self) -> usize {
        self.grid_h * self.grid_w * self.anchors.len()
    }

    pub fn cols(&self) -> usize {
        5 + self.num_classes
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.grid_h * self.stride, self.grid_w * self.stride)
    }

    pub fn slot(&self, r: usize) -> GridSlot {
        let a = r % self.anchors.len();
        let cell = r / self.anchors.len();
        GridSlot {
            cell_x: cell % self.grid_w,
            cell_y: cell / self.grid_w,
            anchor: self.anchors[a],
            stride: self.stride as f64,
        }
    }

    /// Pixel center of the grid cell that owns row `r`.
    pub fn slot_center(&self, r: usize) -> (f64, f64) {
        let s = self.slot(r);
        ((s.cell_x as f64 + 0.5) * s.stride, (s.cell_y as f64 + 0.5) * s.stride)
    }

    pub fn decode_row(&self, r: usize) -> BoxCandidate {
        let (h, w) = self.image_size();
        decode(self.row(r), self.slot(r), w as f64, h as f64)
    }

    /// Decode every slot; no confidence filtering.
    pub fn decode(&self, image_id: &str) -> CandidateSet {
        CandidateSet::new(image_id, (0..self.rows()).map(|r| self.decode_row(r)).collect())
    }
}

/// State a backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `(height, width)` of each layer's input.
    dims: Vec<(usize, usize)>,
    /// ReLU activity of each hidden layer, `pre-activation > 0`.
    masks: Vec<Vec<bool>>,
}

fn check_input(w: &ModelWeights, x: &ImageTensor) -> Result<()> {
    let channels = w.layers[0].in_channels;
    let reject = |reason| Err(Error::DimensionMismatch { height: x.height, width: x.width, channels: x.channels, reason });
    if x.channels != channels {
        return reject("channel count differs from the first layer");
    }
    if x.height == 0 || x.width == 0 || x.height % STRIDE != 0 || x.width % STRIDE != 0 {
        return reject("height and width must be positive multiples of 8");
    }
    if x.data.len() != x.height * x.width * x.channels {
        return Err(Error::ShapeMismatch { expected: x.height * x.width * x.channels, actual: x.data.len() });
    }
    Ok(())
}

pub fn forward(w: &ModelWeights, x: &ImageTensor) -> Result<DetectorTensor> {
    forward_traced(w, x).map(|(out, _)| out)
}

/// Forward pass that also returns the ReLU masks for [`backward_with_trace`].
pub fn forward_traced(w: &ModelWeights, x: &ImageTensor) -> Result<(DetectorTensor, ForwardTrace)> {
    check_input(w, x)?;
    let (mut h, mut wd) = (x.height, x.width);
    let mut act = x.data.clone();
    let mut dims = Vec::with_capacity(w.layers.len());
    let mut masks = Vec::with_capacity(w.layers.len() - 1);
    let last = w.layers.len() - 1;
    for (i, layer) in w.layers.iter().enumerate() {
        dims.push((h, wd));
        act = layer.forward(&act, h, wd);
        (h, wd) = layer.output_dims(h, wd);
        if i < last {
            masks.push(act.iter().map(|&v| v > 0.0).collect());
            for v in act.iter_mut() {
                *v = v.max(0.0);
            }
        }
    }
    let out = DetectorTensor {
        grid_h: h,
        grid_w: wd,
        anchors: w.anchors.clone(),
        num_classes: w.num_classes,
        stride: STRIDE,
        data: act,
    };
    Ok((out, ForwardTrace { dims, masks }))
}

/// Reverse-mode gradient of `<upstream, forward(x)>` with respect to `x`,
/// using the activation masks recorded by the paired forward pass.
/// The result has the image's HWC layout.
pub fn backward_with_trace(w: &ModelWeights, trace: &ForwardTrace, upstream: &[f64]) -> Result<Vec<f64>> {
    let head = w.layers.last().expect("four layers");
    let &(h, wd) = trace.dims.last().expect("dims per layer");
    let (oh, ow) = head.output_dims(h, wd);
    let expected = oh * ow * head.out_channels;
    if upstream.len() != expected {
        return Err(Error::ShapeMismatch { expected, actual: upstream.len() });
    }
    let mut grad = upstream.to_vec();
    for (i, layer) in w.layers.iter().enumerate().rev() {
        if i < w.layers.len() - 1 {
            for (g, &on) in grad.iter_mut().zip(&trace.masks[i]) {
                if !on {
                    *g = 0.0;
                }
            }
        }
        let (h, wd) = trace.dims[i];
        grad = layer.backward_input(&grad, h, wd);
    }
    Ok(grad)
}

/// Input gradient at `x`; runs its own forward pass for the activation masks.
pub fn backward_input(w: &ModelWeights, x: &ImageTensor, upstream: &[f64]) -> Result<Vec<f64>> {
    let (_, trace) = forward_traced(w, x)?;
    backward_with_trace(w, &trace, upstream)
}

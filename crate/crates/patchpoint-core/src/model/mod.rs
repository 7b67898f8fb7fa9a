//! The keypoint network: a SuperPoint-style shared encoder with a 65-channel
//! location head and a 5-channel ID head, each followed by a 1x1 adaptation
//! layer, plus decoding from cell grids back to pixel keypoints.

mod checkpoint;
pub(crate) mod tensor;

pub use checkpoint::{export_reference_weights, load_checkpoint, load_pretrained, save_checkpoint};
pub use tensor::{ConvGrads, ConvParams};

use image::RgbImage;
use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{child_rng, stream};
use crate::synth::{CellTargets, BACKGROUND_CLASS, CELL};
use crate::{Error, Result};

use tensor::{
    conv1x1, conv1x1_backward, conv3x3, conv3x3_backward, maxpool2, maxpool2_backward,
    relu_backward_inplace, relu_inplace,
};

/// Stable layer ordering used by the optimizer, the gradient set, and the
/// checkpoint container.
pub(crate) mod layer {
    pub const CONV1A: usize = 0;
    pub const CONV1B: usize = 1;
    pub const CONV2A: usize = 2;
    pub const CONV2B: usize = 3;
    pub const CONV3A: usize = 4;
    pub const CONV3B: usize = 5;
    pub const CONV4A: usize = 6;
    pub const CONV4B: usize = 7;
    pub const CONV_PA: usize = 8;
    pub const CONV_PB: usize = 9;
    pub const CONV_DA: usize = 10;
    pub const CONV_DB: usize = 11;
    pub const ADAPT_DET: usize = 12;
    pub const ADAPT_ID: usize = 13;
    pub const COUNT: usize = 14;

    /// Blob-name stems; the backbone uses the publicly distributed naming so
    /// reference weights map one-to-one.
    pub const NAMES: [&str; COUNT] = [
        "conv1a", "conv1b", "conv2a", "conv2b", "conv3a", "conv3b", "conv4a", "conv4b", "convPa",
        "convPb", "convDa", "convDb", "adapt_det", "adapt_id",
    ];

    /// Layers that stay trainable while the pretrained backbone is frozen.
    pub const ADAPTATION: [usize; 2] = [ADAPT_DET, ADAPT_ID];
}

/// Architecture and decoding defaults.
///
/// The adaptation layers are 1x1 convolutions whose widths equal their head's
/// output channels (`detector_channels` and `id_channels`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_channels: [usize; 8],
    pub head_width: usize,
    pub detector_channels: usize,
    pub id_channels: usize,
    pub detect_threshold: f64,
    pub nms_radius: f64,
    /// Discard detections whose cell ID argmax is the background channel.
    pub background_veto: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_channels: [64, 64, 64, 64, 128, 128, 128, 128],
            head_width: 256,
            detector_channels: (CELL * CELL) as usize + 1,
            id_channels: BACKGROUND_CLASS as usize + 1,
            detect_threshold: 0.015,
            nms_radius: 4.0,
            background_veto: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.iter().any(|&c| c == 0) || self.head_width == 0 {
            return Err(Error::InvalidArgument(
                "model: all channel widths must be positive".into(),
            ));
        }
        if !(self.detect_threshold > 0.0 && self.detect_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "model: detect_threshold must lie in (0,1), got {}",
                self.detect_threshold
            )));
        }
        if !(self.nms_radius >= 0.0 && self.nms_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "model: nms_radius must be finite and non-negative, got {}",
                self.nms_radius
            )));
        }
        // The cell protocol fixes the class counts: 8x8 positions + dustbin,
        // 4 patch types + background.
        if self.detector_channels != (CELL * CELL) as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "model: detector_channels must be {}, got {}",
                (CELL * CELL) + 1,
                self.detector_channels
            )));
        }
        if self.id_channels != BACKGROUND_CLASS as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "model: id_channels must be {}, got {}",
                BACKGROUND_CLASS + 1,
                self.id_channels
            )));
        }
        Ok(())
    }

    /// (c_in, c_out, kernel) for every layer in `layer` order.
    pub(crate) fn layer_shapes(&self) -> [(usize, usize, usize); layer::COUNT] {
        let ec = &self.encoder_channels;
        [
            (1, ec[0], 3),
            (ec[0], ec[1], 3),
            (ec[1], ec[2], 3),
            (ec[2], ec[3], 3),
            (ec[3], ec[4], 3),
            (ec[4], ec[5], 3),
            (ec[5], ec[6], 3),
            (ec[6], ec[7], 3),
            (ec[7], self.head_width, 3),
            (self.head_width, self.detector_channels, 1),
            (ec[7], self.head_width, 3),
            (self.head_width, self.head_width, 1),
            (self.detector_channels, self.detector_channels, 1),
            (self.head_width, self.id_channels, 1),
        ]
    }
}

/// Dense head outputs on the H/8 x W/8 cell grid, stored channel-major.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// (65, H/8, W/8): 64 within-cell positions + dustbin.
    pub detector_logits: Array3<f32>,
    /// (5, H/8, W/8): 4 patch types + background.
    pub id_logits: Array3<f32>,
}

/// A decoded keypoint before ID assignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// A fully decoded detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub type_id: u8,
    pub type_confidence: f64,
}

/// All trainable parameters in `layer` order.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperPointWeights {
    params: Vec<ConvParams>,
}

impl SuperPointWeights {
    /// He-style seeded initialization. The detector adaptation layer starts
    /// near identity so pretrained detector logits pass through unchanged;
    /// the ID adaptation layer has no pretrained counterpart and starts
    /// random.
    pub fn seeded(cfg: &ModelConfig, master_seed: u64) -> Self {
        let mut params = Vec::with_capacity(layer::COUNT);
        for (i, &(c_in, c_out, kernel)) in cfg.layer_shapes().iter().enumerate() {
            let mut rng = child_rng(master_seed, stream::INIT, i as u64, 0);
            let mut p = ConvParams::zeros(c_in, c_out, kernel);
            if i == layer::ADAPT_DET {
                let jitter = Normal::new(0.0, 0.01).unwrap();
                for (j, v) in p.w.iter_mut().enumerate() {
                    let (row, col) = (j / c_in, j % c_in);
                    *v = if row == col { 1.0 } else { 0.0 };
                    *v += jitter.sample(&mut rng) as f32;
                }
            } else {
                let fan_in = c_in * kernel * kernel;
                let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                for v in p.w.iter_mut() {
                    *v = he.sample(&mut rng) as f32;
                }
            }
            params.push(p);
        }
        SuperPointWeights { params }
    }

    pub(crate) fn from_params(cfg: &ModelConfig, params: Vec<ConvParams>) -> Result<Self> {
        let shapes = cfg.layer_shapes();
        if params.len() != layer::COUNT {
            return Err(Error::WeightMismatch(format!(
                "expected {} layers, got {}",
                layer::COUNT,
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let (c_in, c_out, kernel) = shapes[i];
            if (p.c_in, p.c_out, p.kernel) != (c_in, c_out, kernel) {
                return Err(Error::WeightMismatch(format!(
                    "layer {}: shape ({}, {}, {}x{}) does not match config ({}, {}, {}x{})",
                    layer::NAMES[i],
                    p.c_in,
                    p.c_out,
                    p.kernel,
                    p.kernel,
                    c_in,
                    c_out,
                    kernel,
                    kernel
                )));
            }
        }
        Ok(SuperPointWeights { params })
    }

    pub(crate) fn params(&self) -> &[ConvParams] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [ConvParams] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.parameter_count()).sum()
    }
}

/// Per-layer gradients aligned with `SuperPointWeights`.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub(crate) grads: Vec<ConvGrads>,
}

impl GradientSet {
    pub fn zeros(weights: &SuperPointWeights) -> Self {
        GradientSet {
            grads: weights.params().iter().map(ConvGrads::zeros_like).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for g in &mut self.grads {
            g.w *= factor;
            g.b *= factor;
        }
    }

    /// Euclidean norm over every layer except the two adaptation layers.
    pub fn backbone_norm(&self) -> f64 {
        let mut sq = 0.0;
        for (i, g) in self.grads.iter().enumerate() {
            if layer::ADAPTATION.contains(&i) {
                continue;
            }
            let n = g.norm();
            sq += n * n;
        }
        sq.sqrt()
    }

    pub fn adaptation_norm(&self) -> f64 {
        let mut sq = 0.0;
        for i in layer::ADAPTATION {
            let n = self.grads[i].norm();
            sq += n * n;
        }
        sq.sqrt()
    }
}

/// Saved activations from one forward pass, enough to run backward.
pub(crate) struct ForwardTrace {
    x: Array3<f32>,
    a1: Array3<f32>,
    a2: Array3<f32>,
    i1: Array3<u8>,
    p1: Array3<f32>,
    b1: Array3<f32>,
    b2: Array3<f32>,
    i2: Array3<u8>,
    p2: Array3<f32>,
    c1: Array3<f32>,
    c2: Array3<f32>,
    i3: Array3<u8>,
    p3: Array3<f32>,
    f1: Array3<f32>,
    f2: Array3<f32>,
    pa: Array3<f32>,
    det_base: Array3<f32>,
    da: Array3<f32>,
    desc: Array3<f32>,
}

pub struct SuperPointNet {
    cfg: ModelConfig,
    weights: SuperPointWeights,
}

/// Cell-grid dimensions for an input, or a shape error if not divisible by 8.
pub fn output_grid(height: usize, width: usize) -> Result<(usize, usize)> {
    let cell = CELL as usize;
    if height == 0 || width == 0 || height % cell != 0 || width % cell != 0 {
        return Err(Error::ShapeError(format!(
            "input dims {width}x{height} must be positive and divisible by {cell}"
        )));
    }
    Ok((height / cell, width / cell))
}

impl SuperPointNet {
    pub fn new(cfg: ModelConfig, master_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let weights = SuperPointWeights::seeded(&cfg, master_seed);
        Ok(SuperPointNet { cfg, weights })
    }

    pub fn from_parts(cfg: ModelConfig, weights: SuperPointWeights) -> Result<Self> {
        cfg.validate()?;
        SuperPointWeights::from_params(&cfg, weights.params.clone())?;
        Ok(SuperPointNet { cfg, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Overrides the decode parameters, keeping the rest of the
    /// configuration. `None` leaves a value unchanged.
    pub fn set_detection_params(
        &mut self,
        threshold: Option<f64>,
        nms_radius: Option<f64>,
    ) -> Result<()> {
        let mut cfg = self.cfg.clone();
        if let Some(t) = threshold {
            cfg.detect_threshold = t;
        }
        if let Some(r) = nms_radius {
            cfg.nms_radius = r;
        }
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn weights(&self) -> &SuperPointWeights {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut SuperPointWeights {
        &mut self.weights
    }

    /// Runs the network on a single-channel image with values in [0,1].
    pub fn forward(&self, image: &ArrayView2<f32>) -> Result<NetworkOutput> {
        Ok(self.forward_trace(image)?.0)
    }

    pub(crate) fn forward_trace(
        &self,
        image: &ArrayView2<f32>,
    ) -> Result<(NetworkOutput, ForwardTrace)> {
        let (h, w) = image.dim();
        output_grid(h, w)?;
        let p = self.weights.params();
        let x = image
            .to_owned()
            .into_shape_with_order((1, h, w))
            .expect("reshape to CHW");

        let mut a1 = conv3x3(&x.view(), &p[layer::CONV1A]);
        relu_inplace(&mut a1);
        let mut a2 = conv3x3(&a1.view(), &p[layer::CONV1B]);
        relu_inplace(&mut a2);
        let (p1, i1) = maxpool2(&a2.view());

        let mut b1 = conv3x3(&p1.view(), &p[layer::CONV2A]);
        relu_inplace(&mut b1);
        let mut b2 = conv3x3(&b1.view(), &p[layer::CONV2B]);
        relu_inplace(&mut b2);
        let (p2, i2) = maxpool2(&b2.view());

        let mut c1 = conv3x3(&p2.view(), &p[layer::CONV3A]);
        relu_inplace(&mut c1);
        let mut c2 = conv3x3(&c1.view(), &p[layer::CONV3B]);
        relu_inplace(&mut c2);
        let (p3, i3) = maxpool2(&c2.view());

        let mut f1 = conv3x3(&p3.view(), &p[layer::CONV4A]);
        relu_inplace(&mut f1);
        let mut f2 = conv3x3(&f1.view(), &p[layer::CONV4B]);
        relu_inplace(&mut f2);

        let mut pa = conv3x3(&f2.view(), &p[layer::CONV_PA]);
        relu_inplace(&mut pa);
        let det_base = conv1x1(&pa.view(), &p[layer::CONV_PB]);
        let detector_logits = conv1x1(&det_base.view(), &p[layer::ADAPT_DET]);

        let mut da = conv3x3(&f2.view(), &p[layer::CONV_DA]);
        relu_inplace(&mut da);
        let desc = conv1x1(&da.view(), &p[layer::CONV_DB]);
        let id_logits = conv1x1(&desc.view(), &p[layer::ADAPT_ID]);

        let out = NetworkOutput {
            detector_logits,
            id_logits,
        };
        let trace = ForwardTrace {
            x,
            a1,
            a2,
            i1,
            p1,
            b1,
            b2,
            i2,
            p2,
            c1,
            c2,
            i3,
            p3,
            f1,
            f2,
            pa,
            det_base,
            da,
            desc,
        };
        Ok((out, trace))
    }

    /// Backpropagates head gradients. With `full_backward` false (frozen
    /// backbone) only the two adaptation layers receive gradients; the rest
    /// stay exactly zero.
    pub(crate) fn backward(
        &self,
        trace: &ForwardTrace,
        d_det: &Array3<f32>,
        d_id: &Array3<f32>,
        full_backward: bool,
    ) -> GradientSet {
        let p = self.weights.params();
        let mut set = GradientSet::zeros(&self.weights);

        let (d_desc, g_adapt_id) =
            conv1x1_backward(&trace.desc.view(), &p[layer::ADAPT_ID], &d_id.view());
        let (d_det_base, g_adapt_det) =
            conv1x1_backward(&trace.det_base.view(), &p[layer::ADAPT_DET], &d_det.view());
        set.grads[layer::ADAPT_ID] = g_adapt_id;
        set.grads[layer::ADAPT_DET] = g_adapt_det;
        if !full_backward {
            return set;
        }

        let (mut d_da, g_db) = conv1x1_backward(&trace.da.view(), &p[layer::CONV_DB], &d_desc.view());
        set.grads[layer::CONV_DB] = g_db;
        relu_backward_inplace(&mut d_da, &trace.da.view());
        let (d_f_desc, g_da) = conv3x3_backward(&trace.f2.view(), &p[layer::CONV_DA], &d_da.view());
        set.grads[layer::CONV_DA] = g_da;

        let (mut d_pa, g_pb) =
            conv1x1_backward(&trace.pa.view(), &p[layer::CONV_PB], &d_det_base.view());
        set.grads[layer::CONV_PB] = g_pb;
        relu_backward_inplace(&mut d_pa, &trace.pa.view());
        let (d_f_det, g_pa) = conv3x3_backward(&trace.f2.view(), &p[layer::CONV_PA], &d_pa.view());
        set.grads[layer::CONV_PA] = g_pa;

        let mut d_f2 = d_f_det + d_f_desc;
        relu_backward_inplace(&mut d_f2, &trace.f2.view());
        let (mut d_f1, g_4b) = conv3x3_backward(&trace.f1.view(), &p[layer::CONV4B], &d_f2.view());
        set.grads[layer::CONV4B] = g_4b;
        relu_backward_inplace(&mut d_f1, &trace.f1.view());
        let (d_p3, g_4a) = conv3x3_backward(&trace.p3.view(), &p[layer::CONV4A], &d_f1.view());
        set.grads[layer::CONV4A] = g_4a;

        let mut d_c2 = maxpool2_backward(&d_p3.view(), &trace.i3, trace.c2.dim());
        relu_backward_inplace(&mut d_c2, &trace.c2.view());
        let (mut d_c1, g_3b) = conv3x3_backward(&trace.c1.view(), &p[layer::CONV3B], &d_c2.view());
        set.grads[layer::CONV3B] = g_3b;
        relu_backward_inplace(&mut d_c1, &trace.c1.view());
        let (d_p2, g_3a) = conv3x3_backward(&trace.p2.view(), &p[layer::CONV3A], &d_c1.view());
        set.grads[layer::CONV3A] = g_3a;

        let mut d_b2 = maxpool2_backward(&d_p2.view(), &trace.i2, trace.b2.dim());
        relu_backward_inplace(&mut d_b2, &trace.b2.view());
        let (mut d_b1, g_2b) = conv3x3_backward(&trace.b1.view(), &p[layer::CONV2B], &d_b2.view());
        set.grads[layer::CONV2B] = g_2b;
        relu_backward_inplace(&mut d_b1, &trace.b1.view());
        let (d_p1, g_2a) = conv3x3_backward(&trace.p1.view(), &p[layer::CONV2A], &d_b1.view());
        set.grads[layer::CONV2A] = g_2a;

        let mut d_a2 = maxpool2_backward(&d_p1.view(), &trace.i1, trace.a2.dim());
        relu_backward_inplace(&mut d_a2, &trace.a2.view());
        let (mut d_a1, g_1b) = conv3x3_backward(&trace.a1.view(), &p[layer::CONV1B], &d_a2.view());
        set.grads[layer::CONV1B] = g_1b;
        relu_backward_inplace(&mut d_a1, &trace.a1.view());
        let (_, g_1a) = conv3x3_backward(&trace.x.view(), &p[layer::CONV1A], &d_a1.view());
        set.grads[layer::CONV1A] = g_1a;

        set
    }

    /// Full pipeline on an RGB image: luma, forward, decode with the
    /// configured threshold, NMS radius, and background veto.
    pub fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        let luma = rgb_to_luma_f32(image);
        let out = self.forward(&luma.view())?;
        let kps = decode_keypoints(&out, self.cfg.detect_threshold, self.cfg.nms_radius);
        Ok(decode_ids(&out, &kps, self.cfg.background_veto))
    }
}

/// BT.601 luma scaled to [0,1].
pub fn rgb_to_luma_f32(image: &RgbImage) -> Array2<f32> {
    let (w, h) = image.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for (x, y, px) in image.enumerate_pixels() {
        let [r, g, b] = px.0;
        let luma = 0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32;
        out[(y as usize, x as usize)] = luma / 255.0;
    }
    out
}

fn softmax_f64(logits: &[f32], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = ((l as f64) - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-cell softmax over the 65 detector channels, dustbin dropped, surviving
/// probabilities scattered to pixels, thresholded, then greedy NMS by
/// descending confidence (ties broken by y then x).
pub fn decode_keypoints(out: &NetworkOutput, threshold: f64, nms_radius: f64) -> Vec<Keypoint> {
    let (channels, hc, wc) = out.detector_logits.dim();
    debug_assert_eq!(channels, (CELL * CELL) as usize + 1);
    let cell = CELL as usize;
    let mut candidates: Vec<Keypoint> = Vec::new();
    let mut logits = vec![0.0f32; channels];
    let mut probs = vec![0.0f64; channels];
    for r in 0..hc {
        for c in 0..wc {
            for (k, l) in logits.iter_mut().enumerate() {
                *l = out.detector_logits[(k, r, c)];
            }
            softmax_f64(&logits, &mut probs);
            for (k, &p) in probs.iter().take(channels - 1).enumerate() {
                if p >= threshold {
                    candidates.push(Keypoint {
                        x: (c * cell + k % cell) as f64,
                        y: (r * cell + k / cell) as f64,
                        confidence: p,
                    });
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.y.partial_cmp(&b.y).unwrap())
            .then_with(|| a.x.partial_cmp(&b.x).unwrap())
    });

    // Greedy suppression with a bucket grid so dense candidate maps stay fast.
    let bucket = nms_radius.max(1.0);
    let r2 = nms_radius * nms_radius;
    let mut kept: Vec<Keypoint> = Vec::new();
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    'cand: for kp in candidates {
        let bx = (kp.x / bucket).floor() as i64;
        let by = (kp.y / bucket).floor() as i64;
        for nx in bx - 1..=bx + 1 {
            for ny in by - 1..=by + 1 {
                if let Some(ids) = grid.get(&(nx, ny)) {
                    for &i in ids {
                        let dx = kept[i].x - kp.x;
                        let dy = kept[i].y - kp.y;
                        if dx * dx + dy * dy <= r2 {
                            continue 'cand;
                        }
                    }
                }
            }
        }
        grid.entry((bx, by)).or_default().push(kept.len());
        kept.push(kp);
    }
    kept
}

/// Assigns patch types from the 5-channel head. Argmax ties go to the lowest
/// channel; with `background_veto` set, background-argmax detections drop.
pub fn decode_ids(out: &NetworkOutput, keypoints: &[Keypoint], background_veto: bool) -> Vec<Detection> {
    let (channels, hc, wc) = out.id_logits.dim();
    debug_assert_eq!(channels, BACKGROUND_CLASS as usize + 1);
    let cell = CELL as usize;
    let mut logits = vec![0.0f32; channels];
    let mut probs = vec![0.0f64; channels];
    let mut detections = Vec::with_capacity(keypoints.len());
    for kp in keypoints {
        let r = (kp.y as usize) / cell;
        let c = (kp.x as usize) / cell;
        if r >= hc || c >= wc {
            continue;
        }
        for (k, l) in logits.iter_mut().enumerate() {
            *l = out.id_logits[(k, r, c)];
        }
        softmax_f64(&logits, &mut probs);
        let mut argmax = 0usize;
        for k in 1..channels {
            if probs[k] > probs[argmax] {
                argmax = k;
            }
        }
        if background_veto && argmax == BACKGROUND_CLASS as usize {
            continue;
        }
        detections.push(Detection {
            x: kp.x,
            y: kp.y,
            confidence: kp.confidence,
            type_id: argmax as u8,
            type_confidence: probs[argmax],
        });
    }
    detections
}

/// Turns supervision grids into saturated logits (+hot at the target class,
/// -hot elsewhere), the inverse direction of decoding.
pub fn ideal_logits(targets: &CellTargets, hot: f32) -> NetworkOutput {
    let (hc, wc) = targets.detector.dim();
    let det_ch = (CELL * CELL) as usize + 1;
    let id_ch = BACKGROUND_CLASS as usize + 1;
    let mut detector_logits = Array3::from_elem((det_ch, hc, wc), -hot);
    let mut id_logits = Array3::from_elem((id_ch, hc, wc), -hot);
    for r in 0..hc {
        for c in 0..wc {
            detector_logits[(targets.detector[(r, c)] as usize, r, c)] = hot;
            id_logits[(targets.id[(r, c)] as usize, r, c)] = hot;
        }
    }
    NetworkOutput {
        detector_logits,
        id_logits,
    }
}

/// Deterministic noise field in [0,1] for tests and smoke inputs.
pub fn noise_image(rng: &mut impl Rng, height: usize, width: usize) -> Array2<f32> {
    let mut img = Array2::zeros((height, width));
    for v in img.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    img
}

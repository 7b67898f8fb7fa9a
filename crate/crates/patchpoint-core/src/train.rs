//! Losses and the staged training loop: adaptation-only epochs on a frozen
//! pretrained backbone, full fine-tuning, then degradation-augmented epochs,
//! with Adam, step learning-rate decay, per-epoch checkpoints, and an
//! append-only JSON-lines metrics log.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::degrade::{apply_stack, training_augmentation_stack, AugmentRanges};
use crate::eval::run_validation;
use crate::model::{layer, rgb_to_luma_f32, save_checkpoint, GradientSet, SuperPointNet};
use crate::rng::{child_rng, stream};
use crate::synth::{make_cell_targets, BACKGROUND_CLASS, CELL};
use crate::{Error, Result};

/// The only supported optimizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Training hyperparameters. Defaults are the published values; epoch indices
/// are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lambda_descriptor: f64,
    /// Positive-hinge weight: 640*480/5.
    pub lambda_d: f64,
    pub mp: f64,
    pub mn: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_epochs: Vec<u32>,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    /// With a pretrained backbone, epochs 1..=freeze_until_epoch train only
    /// the adaptation layers.
    pub freeze_until_epoch: u32,
    /// Epochs training every parameter, before augmentation starts.
    pub unfreeze_range: [u32; 2],
    pub augment_from_epoch: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            lambda_descriptor: 0.2,
            lambda_d: 61_440.0,
            mp: 0.9,
            mn: 0.2,
            lr: 5e-4,
            lr_decay: 0.2,
            lr_decay_epochs: vec![15, 45],
            optimizer: Optimizer::Adam,
            weight_decay: 1e-6,
            freeze_until_epoch: 15,
            unfreeze_range: [16, 30],
            augment_from_epoch: 31,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("train: {msg}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        for (name, v) in [
            ("lambda_descriptor", self.lambda_descriptor),
            ("lambda_d", self.lambda_d),
            ("mp", self.mp),
            ("mn", self.mn),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.mn >= self.mp {
            return bad(format!("margins must satisfy mn < mp, got {} >= {}", self.mn, self.mp));
        }
        if self.freeze_until_epoch >= self.unfreeze_range[0]
            || self.unfreeze_range[0] > self.unfreeze_range[1]
            || self.unfreeze_range[1] >= self.augment_from_epoch
        {
            return bad(format!(
                "stage boundaries must be ordered: freeze {} < unfreeze {:?} < augment {}",
                self.freeze_until_epoch, self.unfreeze_range, self.augment_from_epoch
            ));
        }
        Ok(())
    }

    /// Learning rate in effect for a 1-based epoch: the base rate decayed
    /// once per listed boundary already passed.
    pub fn lr_for_epoch(&self, epoch: u32) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch > e).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

/// Mean 65-way cross-entropy over cells.
pub fn detector_loss(logits: &Array3<f32>, target: &Array2<u8>) -> Result<f64> {
    Ok(detector_loss_grad(logits, target)?.0)
}

/// Loss plus d(loss)/d(logits).
pub fn detector_loss_grad(
    logits: &Array3<f32>,
    target: &Array2<u8>,
) -> Result<(f64, Array3<f32>)> {
    let (channels, hc, wc) = logits.dim();
    if channels != (CELL * CELL) as usize + 1 || target.dim() != (hc, wc) {
        return Err(Error::ShapeError(format!(
            "detector loss: logits {:?} vs target {:?}",
            logits.dim(),
            target.dim()
        )));
    }
    let n_cells = (hc * wc) as f64;
    let mut grad = Array3::zeros(logits.dim());
    let mut total = 0.0f64;
    for r in 0..hc {
        for c in 0..wc {
            let t = target[(r, c)] as usize;
            if t >= channels {
                return Err(Error::ShapeError(format!(
                    "detector loss: target class {t} out of range at cell ({r},{c})"
                )));
            }
            let mut maxv = f64::NEG_INFINITY;
            for k in 0..channels {
                maxv = maxv.max(logits[(k, r, c)] as f64);
            }
            let mut sum = 0.0f64;
            for k in 0..channels {
                sum += ((logits[(k, r, c)] as f64) - maxv).exp();
            }
            let log_sum = maxv + sum.ln();
            total += log_sum - logits[(t, r, c)] as f64;
            for k in 0..channels {
                let p = ((logits[(k, r, c)] as f64) - log_sum).exp();
                let indicator = if k == t { 1.0 } else { 0.0 };
                grad[(k, r, c)] = ((p - indicator) / n_cells) as f32;
            }
        }
    }
    Ok((total / n_cells, grad))
}

/// Hinge guidance toward one-hot ID targets: per cell, the normalized 5-dim
/// vector d must reach margin `mp` against its own target (weight `lambda_d`
/// on patch cells, 1 on background cells) and stay below `mn` against the
/// four wrong targets; mean over cells.
pub fn descriptor_loss(
    id_logits: &Array3<f32>,
    target: &Array2<u8>,
    mp: f64,
    mn: f64,
    lambda_d: f64,
) -> Result<f64> {
    Ok(descriptor_loss_grad(id_logits, target, mp, mn, lambda_d)?.0)
}

pub fn descriptor_loss_grad(
    id_logits: &Array3<f32>,
    target: &Array2<u8>,
    mp: f64,
    mn: f64,
    lambda_d: f64,
) -> Result<(f64, Array3<f32>)> {
    let (channels, hc, wc) = id_logits.dim();
    if channels != BACKGROUND_CLASS as usize + 1 || target.dim() != (hc, wc) {
        return Err(Error::ShapeError(format!(
            "descriptor loss: logits {:?} vs target {:?}",
            id_logits.dim(),
            target.dim()
        )));
    }
    let n_cells = (hc * wc) as f64;
    let mut grad = Array3::zeros(id_logits.dim());
    let mut total = 0.0f64;
    let mut r_vec = [0.0f64; 5];
    let mut d = [0.0f64; 5];
    let mut g_d = [0.0f64; 5];
    for row in 0..hc {
        for col in 0..wc {
            let t = target[(row, col)] as usize;
            if t >= channels {
                return Err(Error::ShapeError(format!(
                    "descriptor loss: target class {t} out of range at cell ({row},{col})"
                )));
            }
            for k in 0..channels {
                r_vec[k] = id_logits[(k, row, col)] as f64;
            }
            let norm = r_vec.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for k in 0..channels {
                d[k] = r_vec[k] / norm;
            }
            let w_pos = if t == BACKGROUND_CLASS as usize { 1.0 } else { lambda_d };
            g_d.fill(0.0);
            let pos = (mp - d[t]).max(0.0);
            total += w_pos * pos * pos;
            g_d[t] -= 2.0 * w_pos * pos;
            for k in 0..channels {
                if k == t {
                    continue;
                }
                let neg = (d[k] - mn).max(0.0);
                total += neg * neg;
                g_d[k] += 2.0 * neg;
            }
            // Through the normalization: dL/dr = (g - (g . d) d) / ||r||.
            let g_dot_d: f64 = g_d.iter().zip(&d).map(|(a, b)| a * b).sum();
            for k in 0..channels {
                grad[(k, row, col)] = (((g_d[k] - g_dot_d * d[k]) / norm) / n_cells) as f32;
            }
        }
    }
    Ok((total / n_cells, grad))
}

/// Detector term plus the weighted descriptor term.
pub fn total_loss(detector: f64, descriptor: f64, lambda_descriptor: f64) -> Result<f64> {
    if !detector.is_finite() || !descriptor.is_finite() {
        return Err(Error::NumericError(format!(
            "non-finite loss components: detector {detector}, descriptor {descriptor}"
        )));
    }
    Ok(detector + lambda_descriptor * descriptor)
}

/// Adam moment buffers for one tensor pair (weights + biases).
struct AdamLayer {
    mw: ndarray::Array2<f32>,
    vw: ndarray::Array2<f32>,
    mb: ndarray::Array1<f32>,
    vb: ndarray::Array1<f32>,
    t: u64,
}

struct AdamState {
    layers: Vec<AdamLayer>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    fn new(net: &SuperPointNet) -> Self {
        let layers = net
            .weights()
            .params()
            .iter()
            .map(|p| AdamLayer {
                mw: ndarray::Array2::zeros(p.w.dim()),
                vw: ndarray::Array2::zeros(p.w.dim()),
                mb: ndarray::Array1::zeros(p.b.dim()),
                vb: ndarray::Array1::zeros(p.b.dim()),
                t: 0,
            })
            .collect();
        AdamState {
            layers,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam step on the listed layers. Gradients carry L2 weight decay
    /// added before the moment update.
    fn step(
        &mut self,
        net: &mut SuperPointNet,
        grads: &GradientSet,
        trainable: &[usize],
        lr: f64,
        weight_decay: f64,
    ) {
        for &i in trainable {
            let p = &mut net.weights_mut().params_mut()[i];
            let g = &grads.grads[i];
            let s = &mut self.layers[i];
            s.t += 1;
            let bc1 = 1.0 - self.beta1.powi(s.t as i32);
            let bc2 = 1.0 - self.beta2.powi(s.t as i32);
            let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
            let wd = weight_decay as f32;
            for ((th, m), (v, gr)) in p
                .w
                .iter_mut()
                .zip(s.mw.iter_mut())
                .zip(s.vw.iter_mut().zip(g.w.iter()))
            {
                let grad = gr + wd * *th;
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                let m_hat = (*m as f64) / bc1;
                let v_hat = (*v as f64) / bc2;
                *th -= (lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
            for ((th, m), (v, gr)) in p
                .b
                .iter_mut()
                .zip(s.mb.iter_mut())
                .zip(s.vb.iter_mut().zip(g.b.iter()))
            {
                let grad = gr + wd * *th;
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                let m_hat = (*m as f64) / bc1;
                let v_hat = (*v as f64) / bc2;
                *th -= (lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

/// One metrics-log record; validation fields appear on validation epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub loss_detector: f64,
    pub loss_descriptor: f64,
    pub loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_detection: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_id: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_false_alarm: Option<f64>,
}

/// Per-epoch diagnostics beyond the serialized record.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub record: EpochRecord,
    pub backbone_grad_norm: f64,
    pub adaptation_grad_norm: f64,
    pub augmented: bool,
    pub frozen: bool,
}

/// How often validation metrics are computed.
const VALIDATION_EVERY: u32 = 5;

pub struct Trainer {
    net: SuperPointNet,
    cfg: TrainConfig,
    dataset: Dataset,
    validation: Option<(Dataset, Option<usize>)>,
    augment: AugmentRanges,
    opt: AdamState,
    pretrained: bool,
    out_dir: Option<PathBuf>,
    step: u64,
}

impl Trainer {
    /// `pretrained` records whether the backbone came from a pretrained
    /// source; without one the freeze stage is skipped entirely.
    pub fn new(net: SuperPointNet, cfg: TrainConfig, dataset: Dataset, pretrained: bool) -> Result<Self> {
        cfg.validate()?;
        if dataset.manifest().count == 0 {
            return Err(Error::InvalidArgument("train: dataset is empty".into()));
        }
        let opt = AdamState::new(&net);
        Ok(Trainer {
            net,
            cfg,
            dataset,
            validation: None,
            augment: AugmentRanges::default(),
            opt,
            pretrained,
            out_dir: None,
            step: 0,
        })
    }

    /// Validation split scored every few epochs; `limit` caps the image count
    /// for scaled runs.
    pub fn with_validation(mut self, dataset: Dataset, limit: Option<usize>) -> Self {
        self.validation = Some((dataset, limit));
        self
    }

    /// Directory for per-epoch checkpoints and the metrics log.
    pub fn with_output_dir(mut self, dir: &Path) -> Self {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    pub fn net(&self) -> &SuperPointNet {
        &self.net
    }

    pub fn into_net(self) -> SuperPointNet {
        self.net
    }

    pub fn is_frozen_at(&self, epoch: u32) -> bool {
        self.pretrained && epoch <= self.cfg.freeze_until_epoch
    }

    fn trainable_layers(&self, epoch: u32) -> Vec<usize> {
        if self.is_frozen_at(epoch) {
            layer::ADAPTATION.to_vec()
        } else {
            (0..layer::COUNT).collect()
        }
    }

    /// Forward, loss, and backward for one image; returns per-image losses
    /// and gradients.
    fn image_pass(
        &self,
        index: u64,
        epoch: u32,
        full_backward: bool,
    ) -> Result<(f64, f64, GradientSet)> {
        let ann = self.dataset.load_annotation(index)?;
        let mut img = self.dataset.load_image(index)?;
        if epoch >= self.cfg.augment_from_epoch {
            let mut rng = child_rng(self.cfg.seed, stream::TRAIN_AUGMENT, epoch as u64, index);
            let stack = training_augmentation_stack(
                &mut rng,
                epoch,
                self.cfg.augment_from_epoch,
                &self.augment,
            );
            img = apply_stack(&stack, &img)?;
        }
        let targets = make_cell_targets(&ann)?;
        let luma = rgb_to_luma_f32(&img);
        let (out, trace) = self.net.forward_trace(&luma.view())?;
        let (det_loss, det_grad) = detector_loss_grad(&out.detector_logits, &targets.detector)?;
        let (desc_loss, desc_grad) = descriptor_loss_grad(
            &out.id_logits,
            &targets.id,
            self.cfg.mp,
            self.cfg.mn,
            self.cfg.lambda_d,
        )?;
        // d(total)/d(desc head) carries the mix weight.
        let mut desc_grad = desc_grad;
        desc_grad.mapv_inplace(|v| v * self.cfg.lambda_descriptor as f32);
        let grads = self.net.backward(&trace, &det_grad, &desc_grad, full_backward);
        Ok((det_loss, desc_loss, grads))
    }

    /// Runs one 1-based epoch: shuffled batches, accumulated gradients, one
    /// optimizer step per batch.
    pub fn train_epoch(&mut self, epoch: u32) -> Result<EpochStats> {
        let count = self.dataset.manifest().count;
        let mut order: Vec<u64> = (0..count).collect();
        let mut shuffle_rng = child_rng(self.cfg.seed, stream::TRAIN_SHUFFLE, epoch as u64, 0);
        // Fisher-Yates.
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }

        let frozen = self.is_frozen_at(epoch);
        let trainable = self.trainable_layers(epoch);
        let lr = self.cfg.lr_for_epoch(epoch);
        let mut sum_det = 0.0;
        let mut sum_desc = 0.0;
        let mut backbone_grad_sq = 0.0;
        let mut adaptation_grad_sq = 0.0;
        let mut n_images = 0usize;

        for batch in order.chunks(self.cfg.batch_size) {
            let mut acc: Option<GradientSet> = None;
            for &index in batch {
                let (det, desc, grads) = self.image_pass(index, epoch, !frozen)?;
                let total = total_loss(det, desc, self.cfg.lambda_descriptor).map_err(|_| {
                    Error::TrainingDiverged {
                        epoch,
                        step: self.step,
                        loss: det + desc,
                    }
                })?;
                if !total.is_finite() {
                    return Err(Error::TrainingDiverged {
                        epoch,
                        step: self.step,
                        loss: total,
                    });
                }
                sum_det += det;
                sum_desc += desc;
                n_images += 1;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.accumulate(&grads),
                }
            }
            let mut grads = acc.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f32);
            let bn = grads.backbone_norm();
            let an = grads.adaptation_norm();
            backbone_grad_sq += bn * bn;
            adaptation_grad_sq += an * an;
            self.opt
                .step(&mut self.net, &grads, &trainable, lr, self.cfg.weight_decay);
            self.step += 1;
        }

        let loss_detector = sum_det / n_images as f64;
        let loss_descriptor = sum_desc / n_images as f64;
        let loss_total = total_loss(loss_detector, loss_descriptor, self.cfg.lambda_descriptor)?;

        let mut record = EpochRecord {
            epoch,
            lr,
            loss_detector,
            loss_descriptor,
            loss_total,
            val_detection: None,
            val_id: None,
            val_false_alarm: None,
        };
        if let Some((val, limit)) = &self.validation {
            if epoch % VALIDATION_EVERY == 0 || epoch == self.cfg.epochs {
                let (clean, _) = run_validation(&self.net, val, self.cfg.seed, *limit)?;
                record.val_detection = Some(clean.detection_score);
                record.val_id = Some(clean.id_matching_score);
                record.val_false_alarm = Some(clean.average_false_alarm);
            }
        }

        Ok(EpochStats {
            record,
            backbone_grad_norm: backbone_grad_sq.sqrt(),
            adaptation_grad_norm: adaptation_grad_sq.sqrt(),
            augmented: epoch >= self.cfg.augment_from_epoch,
            frozen,
        })
    }

    /// Full run over all configured epochs. Writes a checkpoint per epoch and
    /// appends to `metrics.jsonl` when an output directory is set. The
    /// progress callback sees every epoch's stats.
    pub fn run(&mut self, mut progress: impl FnMut(&EpochStats)) -> Result<Vec<EpochRecord>> {
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut records = Vec::with_capacity(self.cfg.epochs as usize);
        for epoch in 1..=self.cfg.epochs {
            let stats = self.train_epoch(epoch)?;
            if let Some(dir) = &self.out_dir {
                let ckpt = dir.join(format!("checkpoint-{epoch:03}.ckpt"));
                save_checkpoint(&ckpt, &self.net, epoch, self.cfg.seed)?;
                let mut log = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("metrics.jsonl"))?;
                writeln!(log, "{}", serde_json::to_string(&stats.record)?)?;
            }
            progress(&stats);
            records.push(stats.record.clone());
        }
        Ok(records)
    }
}

/// Builds a trainer and runs the configured schedule end to end: the
/// straight-line entry point used by the command-line tool.
pub fn train(
    cfg: TrainConfig,
    dataset: Dataset,
    mut net: SuperPointNet,
    pretrained: Option<&Path>,
    out_dir: &Path,
    validation: Option<(Dataset, Option<usize>)>,
    progress: impl FnMut(&EpochStats),
) -> Result<(SuperPointNet, Vec<EpochRecord>)> {
    let has_pretrained = pretrained.is_some();
    if let Some(path) = pretrained {
        crate::model::load_pretrained(&mut net, path, true, cfg.seed)?;
    }
    let mut trainer =
        Trainer::new(net, cfg, dataset, has_pretrained)?.with_output_dir(out_dir);
    if let Some((val, limit)) = validation {
        trainer = trainer.with_validation(val, limit);
    }
    let records = trainer.run(progress)?;
    Ok((trainer.into_net(), records))
}

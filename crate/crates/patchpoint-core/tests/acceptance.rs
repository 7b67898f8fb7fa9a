//! Acceptance gate. One test per criterion; each prints a single PASS/FAIL
//! line (visible with `--nocapture` and on failure) and then asserts. All
//! tolerances are pinned here, independent of library internals.
//!
//! The scaled-training criteria (8-10) live in one `#[ignore]` test: the full
//! protocol takes days on a single CPU core. Run it explicitly with
//! `cargo test --test acceptance -- --ignored --nocapture`.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchpoint_core::backgrounds::{BackgroundSource, ProceduralCorpus};
use patchpoint_core::dataset::generate_dataset;
use patchpoint_core::degrade::{apply, DegradationSpec};
use patchpoint_core::eval::keypoint_epsilon;
use patchpoint_core::geometry::{sample_patch_homography_with, SamplerParams, WarpConstraints};
use patchpoint_core::model::{decode_ids, decode_keypoints, NetworkOutput};
use patchpoint_core::patch::{canonical_designs, render_patch};
use patchpoint_core::synth::{
    make_detector_target, make_id_target, synthesize_sample, BACKGROUND_CLASS, CELL,
    DUSTBIN_CLASS,
};
use patchpoint_core::train::{
    descriptor_loss, descriptor_loss_grad, detector_loss, detector_loss_grad, Trainer,
};
use patchpoint_core::{
    average_false_alarm, detection_score, id_matching_score, match_detections, run_sweep,
    run_validation, Detection, Homography, KeypointInstance, ModelConfig, SuperPointNet,
    SweepAxis, SweepSpec, SynthConfig, TrainConfig,
};

fn report(criterion: &str, pass: bool, details: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} ({details})");
    assert!(pass, "{criterion}: {details}");
}

/// Projective transform written out longhand, independent of the library's
/// matrix code paths.
fn project(m: &[[f64; 3]; 3], p: (f64, f64)) -> (f64, f64) {
    let x = m[0][0] * p.0 + m[0][1] * p.1 + m[0][2];
    let y = m[1][0] * p.0 + m[1][1] * p.1 + m[1][2];
    let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
    (x / w, y / w)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn small_synth_config() -> SynthConfig {
    SynthConfig {
        width: 96,
        height: 72,
        max_patches: 4,
        radius_range: [8.0, 16.0],
        source_radius_px: 24,
        ..SynthConfig::default()
    }
}

#[test]
fn criterion_01_homography_label_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let constraints = WarpConstraints {
        min_short_axis_px: 10.0,
        min_axis_ratio: 0.2,
        max_patches_per_image: 10,
        image_size: (640, 480),
    };
    let params = SamplerParams {
        radius_range: [8.0, 64.0],
        max_tilt: 0.7,
    };
    let raster = render_patch(&canonical_designs()[0], 64, 0, 255, 0.0).unwrap();
    let src = raster.center;
    let mut canvas = image::RgbImage::new(640, 480);

    let mut max_err = 0.0f64;
    for _ in 0..10_000 {
        let h = sample_patch_homography_with(&mut rng, &constraints, &params, 64.0).unwrap();
        let (stored, _radius) =
            patchpoint_core::geometry::warp_raster_onto(&h, &raster, &mut canvas).unwrap();
        let oracle = project(h.matrix(), src);
        max_err = max_err.max(dist(stored, oracle));
    }

    // The same invariant through the full synthesis path: every annotated
    // keypoint is the projective image of the source patch center.
    let cfg = small_synth_config();
    let corpus = ProceduralCorpus::new(8, 11);
    let mut labels = 0usize;
    for _ in 0..200 {
        let sample = synthesize_sample(&mut rng, &corpus, &cfg).unwrap();
        for inst in &sample.annotation.instances {
            let src_c = inst.source_radius_px as f64;
            let oracle = project(inst.homography.matrix(), (src_c, src_c));
            max_err = max_err.max(dist((inst.x, inst.y), oracle));
            labels += 1;
        }
    }

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "criterion 01 homography label oracle",
        max_err <= 1e-6 && elapsed < 30.0,
        &format!("10000 sampled warps + {labels} synthesized labels, max error {max_err:.2e} px, {elapsed:.1}s"),
    );
}

/// The per-cell winner under the published tie rule, recomputed from scratch:
/// largest radius, then lowest instance index.
fn expected_survivors(instances: &[KeypointInstance]) -> HashMap<(u32, u32), usize> {
    let mut cells: HashMap<(u32, u32), usize> = HashMap::new();
    for (idx, inst) in instances.iter().enumerate() {
        let cell = (
            (inst.y.round() as u32) / CELL,
            (inst.x.round() as u32) / CELL,
        );
        match cells.get(&cell) {
            Some(&cur) if instances[cur].radius_px >= inst.radius_px => {}
            _ => {
                cells.insert(cell, idx);
            }
        }
    }
    cells
}

#[test]
fn criterion_02_target_encode_decode_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cfg = small_synth_config();
    let corpus = ProceduralCorpus::new(8, 12);

    let mut keypoints_checked = 0usize;
    let mut worst_axis_err = 0.0f64;
    for _ in 0..1_000 {
        let ann = synthesize_sample(&mut rng, &corpus, &cfg).unwrap().annotation;
        let det_t = make_detector_target(&ann).unwrap();
        let id_t = make_id_target(&ann).unwrap();

        // Dustbin and background must mark exactly the same cells.
        for ((r, c), &det) in det_t.indexed_iter() {
            assert_eq!(
                det == DUSTBIN_CLASS,
                id_t[(r, c)] == BACKGROUND_CLASS,
                "cell ({r},{c}) disagrees on emptiness"
            );
        }

        // Ideal logits: +8 on the target class, -8 elsewhere.
        let (hc, wc) = det_t.dim();
        let mut det_logits = Array3::from_elem((65, hc, wc), -8.0f32);
        let mut id_logits = Array3::from_elem((5, hc, wc), -8.0f32);
        for ((r, c), &det) in det_t.indexed_iter() {
            det_logits[(det as usize, r, c)] = 8.0;
            id_logits[(id_t[(r, c)] as usize, r, c)] = 8.0;
        }
        let out = NetworkOutput {
            detector_logits: det_logits,
            id_logits,
        };
        let kps = decode_keypoints(&out, 0.5, 0.0);
        let dets = decode_ids(&out, &kps, true);

        let survivors = expected_survivors(&ann.instances);
        assert_eq!(dets.len(), survivors.len(), "spurious or missing decodes");
        for det in &dets {
            let cell = ((det.y as u32) / CELL, (det.x as u32) / CELL);
            let inst = &ann.instances[*survivors
                .get(&cell)
                .unwrap_or_else(|| panic!("decode in empty cell {cell:?}"))];
            let axis_err = (det.x - inst.x).abs().max((det.y - inst.y).abs());
            assert!(
                axis_err <= 0.5 + 1e-12,
                "recovered ({}, {}) vs keypoint ({}, {})",
                det.x,
                det.y,
                inst.x,
                inst.y
            );
            assert_eq!(det.type_id, inst.type_id, "type mismatch at {cell:?}");
            worst_axis_err = worst_axis_err.max(axis_err);
            keypoints_checked += 1;
        }
    }
    report(
        "criterion 02 target encode/decode round trip",
        true,
        &format!("1000 annotations, {keypoints_checked} keypoints, worst axis error {worst_axis_err:.3} px"),
    );
}

/// Maximum matching size by exhaustive search: preds in order, each either
/// skipped or paired with any unused candidate ground truth.
fn optimal_pair_count(adjacency: &[Vec<usize>]) -> usize {
    fn rec(adjacency: &[Vec<usize>], i: usize, used: u32) -> usize {
        if i == adjacency.len() {
            return 0;
        }
        let mut best = rec(adjacency, i + 1, used);
        for &j in &adjacency[i] {
            if used & (1 << j) == 0 {
                best = best.max(1 + rec(adjacency, i + 1, used | (1 << j)));
            }
        }
        best
    }
    rec(adjacency, 0, 0)
}

fn gt_at(x: f64, y: f64, radius_px: f64, type_id: u8) -> KeypointInstance {
    KeypointInstance {
        x,
        y,
        type_id,
        radius_px,
        homography: Homography::identity(),
        black_level: 0,
        white_level: 255,
        source_radius_px: 64,
    }
}

fn pred_at(x: f64, y: f64, type_id: u8) -> Detection {
    Detection {
        x,
        y,
        confidence: 0.9,
        type_id,
        type_confidence: 0.8,
    }
}

/// A random scene whose acceptance disks are pairwise disjoint, as physical
/// non-overlap of patch material guarantees.
fn random_scene(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<KeypointInstance>) {
    let n_gt = rng.random_range(0..=4usize);
    let mut gts: Vec<KeypointInstance> = Vec::new();
    while gts.len() < n_gt {
        let x = rng.random_range(0.0..200.0);
        let y = rng.random_range(0.0..200.0);
        let radius = rng.random_range(10.0..60.0);
        let eps = keypoint_epsilon(radius);
        let clear = gts.iter().all(|g| {
            dist((x, y), (g.x, g.y)) > eps + keypoint_epsilon(g.radius_px) + 2.0
        });
        if clear {
            gts.push(gt_at(x, y, radius, rng.random_range(0..4)));
        }
    }
    let mut preds: Vec<Detection> = Vec::new();
    for g in &gts {
        let eps = keypoint_epsilon(g.radius_px);
        for _ in 0..rng.random_range(0..=2usize) {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(0.0..1.4 * eps);
            preds.push(pred_at(
                g.x + r * angle.cos(),
                g.y + r * angle.sin(),
                rng.random_range(0..4),
            ));
        }
    }
    for _ in 0..rng.random_range(0..=2usize) {
        let x = rng.random_range(0.0..200.0);
        let y = rng.random_range(0.0..200.0);
        let far = gts
            .iter()
            .all(|g| dist((x, y), (g.x, g.y)) > keypoint_epsilon(g.radius_px) + 1.0);
        if far {
            preds.push(pred_at(x, y, rng.random_range(0..4)));
        }
    }
    preds.truncate(6);
    (preds, gts)
}

#[test]
fn criterion_03_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut batch = Vec::new();
    let mut scenes = 0usize;
    for _ in 0..5_000 {
        let (preds, gts) = random_scene(&mut rng);
        let m = match_detections(&preds, &gts);

        // Greedy one-to-one matching must reach the exhaustive optimum.
        let adjacency: Vec<Vec<usize>> = preds
            .iter()
            .map(|p| {
                gts.iter()
                    .enumerate()
                    .filter(|(_, g)| {
                        dist((p.x, p.y), (g.x, g.y)) <= keypoint_epsilon(g.radius_px)
                    })
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        assert_eq!(
            m.pairs.len(),
            optimal_pair_count(&adjacency),
            "greedy matching below optimum"
        );

        // Score formulas recomputed from first principles, compared exactly.
        let brute_detection = if gts.is_empty() {
            if preds.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            m.pairs.len() as f64 / gts.len() as f64
        };
        assert_eq!(detection_score(&m, gts.len()), brute_detection);

        let brute_id = if m.pairs.is_empty() {
            1.0
        } else {
            let agree = m
                .pairs
                .iter()
                .filter(|&&(p, g, _)| preds[p].type_id == gts[g].type_id)
                .count();
            agree as f64 / m.pairs.len() as f64
        };
        assert_eq!(id_matching_score(&m, &preds, &gts), brute_id);

        batch.push((m, preds.len()));
        scenes += 1;
        if batch.len() == 50 {
            let results: Vec<_> = batch.iter().map(|(m, _)| m.clone()).collect();
            let brute_fa = batch
                .iter()
                .map(|(m, _)| m.unmatched_predictions.len())
                .sum::<usize>() as f64
                / results.len() as f64;
            assert_eq!(average_false_alarm(&results).unwrap(), brute_fa);
            batch.clear();
        }
    }
    assert!(average_false_alarm(&[]).is_err(), "empty batch must refuse");
    report(
        "criterion 03 metric oracle equivalence",
        true,
        &format!("{scenes} scenes: greedy == exhaustive, formulas == brute force"),
    );
}

#[test]
fn criterion_04_loss_gradient_checks() {
    // Central finite differences, dividing by the realized f32 step.
    let mut det_logits = Array3::zeros((65, 3, 3));
    for (i, v) in det_logits.iter_mut().enumerate() {
        *v = (((i * 13 + 5) % 37) as f32 - 18.0) / 10.0;
    }
    let det_target = Array2::from_shape_fn((3, 3), |(r, c)| ((r * 29 + c * 11) % 65) as u8);
    let (_, det_grad) = detector_loss_grad(&det_logits, &det_target).unwrap();
    let mut max_det_diff = 0.0f64;
    for i in (0..det_logits.len()).step_by(13) {
        let mut lp = det_logits.clone();
        let mut lm = det_logits.clone();
        lp.as_slice_mut().unwrap()[i] += 1e-3;
        lm.as_slice_mut().unwrap()[i] -= 1e-3;
        let h = lp.as_slice().unwrap()[i] as f64 - lm.as_slice().unwrap()[i] as f64;
        let fd = (detector_loss(&lp, &det_target).unwrap()
            - detector_loss(&lm, &det_target).unwrap())
            / h;
        max_det_diff = max_det_diff.max((fd - det_grad.as_slice().unwrap()[i] as f64).abs());
    }

    let mut id_logits = Array3::zeros((5, 2, 3));
    for (i, v) in id_logits.iter_mut().enumerate() {
        *v = (((i * 7 + 3) % 11) as f32 - 5.0) / 3.0;
    }
    let id_target = Array2::from_shape_fn((2, 3), |(r, c)| ((r * 3 + c + 1) % 5) as u8);
    let (_, id_grad) = descriptor_loss_grad(&id_logits, &id_target, 0.9, 0.2, 8.0).unwrap();
    let mut max_id_diff = 0.0f64;
    for i in 0..id_logits.len() {
        let mut lp = id_logits.clone();
        let mut lm = id_logits.clone();
        lp.as_slice_mut().unwrap()[i] += 1e-4;
        lm.as_slice_mut().unwrap()[i] -= 1e-4;
        let h = lp.as_slice().unwrap()[i] as f64 - lm.as_slice().unwrap()[i] as f64;
        let fd = (descriptor_loss(&lp, &id_target, 0.9, 0.2, 8.0).unwrap()
            - descriptor_loss(&lm, &id_target, 0.9, 0.2, 8.0).unwrap())
            / h;
        max_id_diff = max_id_diff.max((fd - id_grad.as_slice().unwrap()[i] as f64).abs());
    }

    // Perfect predictions: detector near zero, descriptor exactly zero.
    let perfect_target = Array2::from_shape_fn((2, 2), |(r, c)| ((r * 17 + c * 5) % 65) as u8);
    let mut perfect_det = Array3::from_elem((65, 2, 2), -10.0f32);
    for ((r, c), &t) in perfect_target.indexed_iter() {
        perfect_det[(t as usize, r, c)] = 10.0;
    }
    let perfect_det_loss = detector_loss(&perfect_det, &perfect_target).unwrap();

    let id_perfect_target = Array2::from_shape_fn((2, 2), |(r, c)| ((r * 2 + c) % 5) as u8);
    let mut perfect_id = Array3::from_elem((5, 2, 2), 0.0f32);
    for ((r, c), &t) in id_perfect_target.indexed_iter() {
        perfect_id[(t as usize, r, c)] = 3.0;
    }
    let perfect_id_loss =
        descriptor_loss(&perfect_id, &id_perfect_target, 0.9, 0.2, 61_440.0).unwrap();

    let pass = max_det_diff < 1e-4
        && max_id_diff < 1e-4
        && perfect_det_loss < 1e-3
        && perfect_id_loss == 0.0;
    report(
        "criterion 04 loss gradient checks",
        pass,
        &format!(
            "FD diffs {max_det_diff:.2e}/{max_id_diff:.2e}, perfect losses {perfect_det_loss:.2e}/{perfect_id_loss}"
        ),
    );
}

#[test]
fn criterion_05_stage_freezing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        width: 64,
        height: 48,
        max_patches: 2,
        radius_range: [8.0, 12.0],
        source_radius_px: 32,
        ..SynthConfig::default()
    };
    let corpus = ProceduralCorpus::new(2, 9);
    let dataset = generate_dataset(dir.path(), &cfg, 5, 2, &corpus, |_| {}).unwrap();

    let train_cfg = TrainConfig {
        epochs: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let net = SuperPointNet::new(ModelConfig::default(), 3).unwrap();
    let mut trainer = Trainer::new(net, train_cfg, dataset, true).unwrap();

    let frozen_stats = trainer.train_epoch(10).unwrap();
    let unfrozen_stats = trainer.train_epoch(16).unwrap();

    let pass = frozen_stats.frozen
        && frozen_stats.backbone_grad_norm == 0.0
        && frozen_stats.adaptation_grad_norm > 0.0
        && !unfrozen_stats.frozen
        && unfrozen_stats.backbone_grad_norm > 0.0;
    report(
        "criterion 05 stage freezing",
        pass,
        &format!(
            "epoch 10 backbone grad {:.1e} (adaptation {:.2e}), epoch 16 backbone grad {:.2e}",
            frozen_stats.backbone_grad_norm,
            frozen_stats.adaptation_grad_norm,
            unfrozen_stats.backbone_grad_norm
        ),
    );
}

#[test]
fn criterion_06_degradation_identities() {
    let corpus = ProceduralCorpus::new(1, 77);
    let base = corpus.load(0, 64, 64).unwrap();

    let noise0 = apply(&DegradationSpec::GaussianNoise { sigma: 0.0, seed: 123 }, &base).unwrap();
    let dim0 = apply(&DegradationSpec::Dimming { k: 0.0 }, &base).unwrap();
    let flat = image::RgbImage::from_pixel(64, 64, image::Rgb([137, 137, 137]));
    let flat_box = apply(&DegradationSpec::BoxBlur { kernel_px: 5 }, &flat).unwrap();
    let flat_motion =
        apply(&DegradationSpec::MotionBlur { kernel_px: 7, angle: 0.7 }, &flat).unwrap();

    let identities = noise0 == base && dim0 == base && flat_box == flat && flat_motion == flat;

    let mut monotone = true;
    let mut prev = base.clone();
    for k in 1..=3 {
        let cur = apply(&DegradationSpec::Dimming { k: k as f64 }, &base).unwrap();
        monotone &= cur
            .pixels()
            .zip(prev.pixels())
            .all(|(c, p)| c.0.iter().zip(p.0.iter()).all(|(a, b)| a <= b));
        prev = cur;
    }

    report(
        "criterion 06 degradation identities",
        identities && monotone,
        &format!("identities {identities}, dimming monotone over k 0..=3 {monotone}"),
    );
}

#[test]
fn criterion_07_overfit_smoke() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        width: 64,
        height: 48,
        max_patches: 2,
        radius_range: [8.0, 12.0],
        source_radius_px: 32,
        ..SynthConfig::default()
    };
    let corpus = ProceduralCorpus::new(4, 17);
    let dataset = generate_dataset(dir.path(), &cfg, 7, 8, &corpus, |_| {}).unwrap();

    // 8 images and batch 16 make one optimizer step per epoch: 500 steps.
    let train_cfg = TrainConfig {
        epochs: 500,
        lr: 1e-3,
        lr_decay_epochs: vec![],
        augment_from_epoch: 1_000,
        batch_size: 16,
        seed: 7,
        ..TrainConfig::default()
    };
    let net = SuperPointNet::new(ModelConfig::default(), 7).unwrap();
    let mut trainer = Trainer::new(net, train_cfg, dataset, false).unwrap();
    let records = trainer.run(|stats| {
        if stats.record.epoch % 100 == 0 {
            eprintln!(
                "overfit step {}: loss {:.4}",
                stats.record.epoch, stats.record.loss_total
            );
        }
    })
    .unwrap();
    let final_loss = records.last().unwrap().loss_total;

    let net = trainer.into_net();
    let dataset = patchpoint_core::Dataset::open(dir.path()).unwrap();
    let (mut recovered, mut total) = (0usize, 0usize);
    for i in 0..dataset.len() {
        let ann = dataset.load_annotation(i).unwrap();
        let img = dataset.load_image(i).unwrap();
        let dets = net.detect(&img).unwrap();
        let m = match_detections(&dets, &ann.instances);
        recovered += m.pairs.len();
        total += ann.instances.len();
    }
    let recall = if total == 0 {
        1.0
    } else {
        recovered as f64 / total as f64
    };
    let elapsed = t0.elapsed().as_secs_f64();

    let pass = final_loss < 0.05 && recall >= 0.95 && elapsed < 600.0;
    report(
        "criterion 07 overfit smoke",
        pass,
        &format!(
            "500 steps: loss {final_loss:.4}, recovered {recovered}/{total} keypoints ({recall:.3}), {elapsed:.0}s"
        ),
    );
}

/// Criteria 8-10: scaled training run plus trend sweeps. Faithful to the
/// protocol but far beyond a desk budget on one CPU core, hence ignored by
/// default; see the printed per-criterion lines when run explicitly.
#[test]
#[ignore = "scaled training protocol: roughly two days on one CPU core"]
fn criterion_08_to_10_scaled_training_and_trends() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        width: 320,
        height: 240,
        max_patches: 6,
        radius_range: [8.0, 40.0],
        source_radius_px: 64,
        ..SynthConfig::default()
    };
    let train_bg = ProceduralCorpus::new(200, 31);
    let val_bg = ProceduralCorpus::new(50, 33);
    eprintln!("synthesizing 2000 training + 200 validation images");
    let train_ds = generate_dataset(dir.path().join("train"), &cfg, 21, 2_000, &train_bg, |i| {
        if (i + 1) % 200 == 0 {
            eprintln!("  train {}/2000", i + 1);
        }
    })
    .unwrap();
    let val_ds =
        generate_dataset(dir.path().join("val"), &cfg, 22, 200, &val_bg, |_| {}).unwrap();

    // 30 epochs with every schedule boundary scaled by the same 5x factor.
    let train_cfg = TrainConfig {
        epochs: 30,
        lr_decay_epochs: vec![3, 9],
        freeze_until_epoch: 3,
        unfreeze_range: [4, 6],
        augment_from_epoch: 7,
        seed: 43,
        ..TrainConfig::default()
    };
    let net = SuperPointNet::new(ModelConfig::default(), 43).unwrap();
    let mut trainer = Trainer::new(net, train_cfg, train_ds, false).unwrap();
    trainer
        .run(|stats| {
            eprintln!(
                "epoch {:>2} loss {:.4} ({:.0?} elapsed)",
                stats.record.epoch,
                stats.record.loss_total,
                t0.elapsed()
            );
        })
        .unwrap();
    let net = trainer.into_net();

    let (clean, _) = run_validation(&net, &val_ds, 43, None).unwrap();
    let c8 = clean.detection_score >= 0.90 && clean.id_matching_score >= 0.95;
    report(
        "criterion 08 scaled training",
        c8,
        &format!(
            "clean validation detection {:.3} id {:.3} over {} images, {:.0?} total",
            clean.detection_score,
            clean.id_matching_score,
            clean.n_images,
            t0.elapsed()
        ),
    );

    let sweep = |axis: SweepAxis| {
        let mut spec = SweepSpec::for_axis(axis);
        spec.images_per_level = 100;
        let reports = run_sweep(&net, &spec, 51).unwrap();
        for r in &reports {
            eprintln!(
                "  {}: detection {:.3} id {:.3} fa {:.3}",
                r.condition, r.detection_score, r.id_matching_score, r.average_false_alarm
            );
        }
        reports
    };

    let blur = sweep(SweepAxis::Blur);
    let non_increasing = blur
        .windows(2)
        .all(|w| w[1].detection_score <= w[0].detection_score + 1e-9);
    let blur_gap = blur.first().unwrap().detection_score - blur.last().unwrap().detection_score;
    let c9a = non_increasing && blur_gap >= 0.15;
    report(
        "criterion 09a blur trend",
        c9a,
        &format!("non-increasing {non_increasing}, gap first-to-last {blur_gap:.3}"),
    );

    let scale = sweep(SweepAxis::Scale);
    let scale_min = scale
        .iter()
        .map(|r| r.detection_score)
        .fold(f64::INFINITY, f64::min);
    let c9b = scale_min >= 0.9;
    report(
        "criterion 09b scale floor",
        c9b,
        &format!("minimum detection across levels {scale_min:.3}"),
    );

    let noise = sweep(SweepAxis::GaussianNoise);
    let noise_gap =
        noise.first().unwrap().detection_score - noise.last().unwrap().detection_score;
    let c9c = noise_gap >= 0.3;
    report(
        "criterion 09c noise gap",
        c9c,
        &format!("sigma 15 vs 60 detection gap {noise_gap:.3}"),
    );

    let dimming = sweep(SweepAxis::Dimming);
    let mut id_floor_ok = true;
    let mut checked = 0usize;
    for r in blur.iter().chain(dimming.iter()) {
        if r.detection_score >= 0.5 {
            id_floor_ok &= r.id_matching_score >= 0.99;
            checked += 1;
        }
    }
    report(
        "criterion 10 id floor under degradation",
        id_floor_ok,
        &format!("{checked} blur/dimming levels with detection >= 0.5, all id >= 0.99: {id_floor_ok}"),
    );
}

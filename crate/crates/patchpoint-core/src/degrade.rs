//! Photometric image degradations used for training augmentation and for the
//! robustness sweeps: blur, brightness and dimming, shadows, rain streaks,
//! Gaussian noise.
//!
//! Stochastic kinds carry their own seed so a serialized spec replays
//! bit-exactly; sampling the specs (with fresh seeds) is the job of
//! [`training_augmentation_stack`].

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One degradation with its parameters. Deterministic given the spec alone:
/// the stochastic kinds embed the seed they replay from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradationSpec {
    /// Line kernel of the given odd size at a fixed angle.
    MotionBlur { kernel_px: u32, angle: f64 },
    /// Uniform box kernel of the given odd size.
    BoxBlur { kernel_px: u32 },
    /// Multiplicative intensity change, factor in (0, 2].
    Brightness { factor: f64 },
    /// Dimming by `0.6^k` per the lighting model.
    Dimming { k: f64 },
    /// Darkens a random convex quadrilateral with feathered edges.
    Shadow { seed: u64 },
    /// Overlays short bright streaks plus a slight blur.
    Rain { seed: u64 },
    /// Additive zero-mean Gaussian noise with the given std-dev in levels.
    GaussianNoise { sigma: f64, seed: u64 },
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationSpec::MotionBlur { kernel_px, angle } => {
                check_kernel(kernel_px)?;
                if !angle.is_finite() {
                    return Err(Error::InvalidArgument("blur angle must be finite".into()));
                }
            }
            DegradationSpec::BoxBlur { kernel_px } => check_kernel(kernel_px)?,
            DegradationSpec::Brightness { factor } => {
                if !(factor > 0.0 && factor <= 2.0) {
                    return Err(Error::InvalidArgument(format!(
                        "brightness factor {factor} outside (0, 2]"
                    )));
                }
            }
            DegradationSpec::Dimming { k } => {
                if !(k >= 0.0 && k.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "dimming exponent {k} must be >= 0"
                    )));
                }
            }
            DegradationSpec::Shadow { .. } | DegradationSpec::Rain { .. } => {}
            DegradationSpec::GaussianNoise { sigma, .. } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "noise sigma {sigma} must be >= 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_kernel(kernel_px: u32) -> Result<()> {
    if kernel_px < 3 || kernel_px % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size {kernel_px} must be odd and >= 3"
        )));
    }
    Ok(())
}

/// Intensity multiplier for dimming level `k`.
pub fn dimming_factor(k: f64) -> f64 {
    debug_assert!(k >= 0.0, "dimming exponent must be non-negative");
    0.6f64.powf(k)
}

/// Applies one degradation. Output has the image's dimensions; values are
/// clamped to [0, 255].
pub fn apply(spec: &DegradationSpec, img: &RgbImage) -> Result<RgbImage> {
    spec.validate()?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidArgument("image is empty".into()));
    }
    Ok(match *spec {
        DegradationSpec::MotionBlur { kernel_px, angle } => {
            convolve(img, &line_kernel(kernel_px, angle))
        }
        DegradationSpec::BoxBlur { kernel_px } => box_blur(img, kernel_px),
        DegradationSpec::Brightness { factor } => scale_intensity(img, factor),
        DegradationSpec::Dimming { k } => scale_intensity(img, dimming_factor(k)),
        DegradationSpec::Shadow { seed } => shadow(img, seed),
        DegradationSpec::Rain { seed } => rain(img, seed),
        DegradationSpec::GaussianNoise { sigma, seed } => gaussian_noise(img, sigma, seed),
    })
}

/// Applies a whole stack in order.
pub fn apply_stack(specs: &[DegradationSpec], img: &RgbImage) -> Result<RgbImage> {
    let mut out = img.clone();
    for spec in specs {
        out = apply(spec, &out)?;
    }
    Ok(out)
}

/// Parameter ranges the training stack draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    /// Odd kernel sizes the motion blur picks from.
    pub blur_kernels: Vec<u32>,
    /// Gaussian noise sigma range, levels.
    pub noise_sigma: [f64; 2],
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            blur_kernels: vec![3, 5, 7],
            noise_sigma: [5.0, 25.0],
        }
    }
}

/// Draws a degradation stack where each of motion blur, Gaussian noise,
/// shadow and rain is included independently with the given probability.
pub fn sample_stack(
    rng: &mut impl Rng,
    probability: f64,
    ranges: &AugmentRanges,
) -> Vec<DegradationSpec> {
    let mut stack = Vec::new();
    if rng.random::<f64>() < probability {
        let kernel_px = ranges.blur_kernels[rng.random_range(0..ranges.blur_kernels.len())];
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        stack.push(DegradationSpec::MotionBlur { kernel_px, angle });
    }
    if rng.random::<f64>() < probability {
        let sigma = rng.random_range(ranges.noise_sigma[0]..=ranges.noise_sigma[1]);
        stack.push(DegradationSpec::GaussianNoise {
            sigma,
            seed: rng.next_u64(),
        });
    }
    if rng.random::<f64>() < probability {
        stack.push(DegradationSpec::Shadow {
            seed: rng.next_u64(),
        });
    }
    if rng.random::<f64>() < probability {
        stack.push(DegradationSpec::Rain {
            seed: rng.next_u64(),
        });
    }
    stack
}

/// Draws the per-image augmentation stack for the given (1-based) epoch.
/// Empty before `augment_from_epoch`; afterwards each of the four kinds is
/// included independently with probability 0.5.
pub fn training_augmentation_stack(
    rng: &mut impl Rng,
    epoch: u32,
    augment_from_epoch: u32,
    ranges: &AugmentRanges,
) -> Vec<DegradationSpec> {
    if epoch < augment_from_epoch {
        return Vec::new();
    }
    sample_stack(rng, 0.5, ranges)
}

fn scale_intensity(img: &RgbImage, factor: f64) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p.0[c] = (p.0[c] as f64 * factor).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Separable box blur with reflected borders.
fn box_blur(img: &RgbImage, kernel_px: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let r = (kernel_px / 2) as i64;
    let norm = 1.0 / kernel_px as f32;
    let reflect = |i: i64, n: i64| -> usize {
        // Reflection around pixel centers: ... 2 1 0 | 0 1 2 ... n-1 | n-1 ...
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };

    let mut horiz = vec![0.0f32; (w * h * 3) as usize];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = [0.0f32; 3];
            for k in -r..=r {
                let sx = reflect(x + k, w as i64);
                let p = img.get_pixel(sx as u32, y as u32).0;
                for c in 0..3 {
                    acc[c] += p[c] as f32;
                }
            }
            let base = ((y as u32 * w + x as u32) * 3) as usize;
            for c in 0..3 {
                horiz[base + c] = acc[c] * norm;
            }
        }
    }

    let mut out = RgbImage::new(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = [0.0f32; 3];
            for k in -r..=r {
                let sy = reflect(y + k, h as i64);
                let base = ((sy as u32 * w + x as u32) * 3) as usize;
                for c in 0..3 {
                    acc[c] += horiz[base + c];
                }
            }
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = (acc[c] * norm).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out
}

/// Normalized line kernel: cell weight is the supersampled coverage of a
/// 1 px wide segment through the kernel center at the given angle.
fn line_kernel(kernel_px: u32, angle: f64) -> Vec<Vec<f32>> {
    let n = kernel_px as usize;
    let c = (n as f64 - 1.0) / 2.0;
    let (dy, dx) = angle.sin_cos();
    let half_len = n as f64 / 2.0;
    let sub = 4;
    let mut kernel = vec![vec![0.0f32; n]; n];
    let mut total = 0.0f32;
    for (y, row) in kernel.iter_mut().enumerate() {
        for (x, cell) in row.iter_mut().enumerate() {
            let mut cover = 0u32;
            for sy in 0..sub {
                for sx in 0..sub {
                    let px = x as f64 + (sx as f64 + 0.5) / sub as f64 - 0.5 - c;
                    let py = y as f64 + (sy as f64 + 0.5) / sub as f64 - 0.5 - c;
                    // Component along / across the line direction.
                    let along = px * dx + py * dy;
                    let across = -px * dy + py * dx;
                    if across.abs() <= 0.5 && along.abs() <= half_len {
                        cover += 1;
                    }
                }
            }
            *cell = cover as f32;
            total += cover as f32;
        }
    }
    for row in &mut kernel {
        for cell in row {
            *cell /= total;
        }
    }
    kernel
}

fn convolve(img: &RgbImage, kernel: &[Vec<f32>]) -> RgbImage {
    let (w, h) = img.dimensions();
    let n = kernel.len() as i64;
    let r = n / 2;
    let reflect = |i: i64, bound: i64| -> u32 {
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= bound {
                i = 2 * bound - 1 - i;
            } else {
                return i as u32;
            }
        }
    };
    let mut out = RgbImage::new(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = [0.0f32; 3];
            for (ky, row) in kernel.iter().enumerate() {
                let sy = reflect(y + ky as i64 - r, h as i64);
                for (kx, &kv) in row.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let sx = reflect(x + kx as i64 - r, w as i64);
                    let p = img.get_pixel(sx, sy).0;
                    for c in 0..3 {
                        acc[c] += kv * p[c] as f32;
                    }
                }
            }
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out
}

fn shadow(img: &RgbImage, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = img.dimensions();
    let (wf, hf) = (w as f64, h as f64);
    let cx = rng.random_range(0.0..wf);
    let cy = rng.random_range(0.0..hf);
    let scale = wf.min(hf);
    // Convex quadrilateral: four rays at sorted angles, random radii.
    let mut angles: Vec<f64> = (0..4)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quad: Vec<(f64, f64)> = angles
        .iter()
        .map(|&a| {
            let radius = rng.random_range(0.25..0.55) * scale;
            (cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect();
    let darkening = rng.random_range(0.3..0.7);
    let feather = 5.0;

    // Signed distance to the quad boundary: >= 0 inside. The quad is convex
    // with vertices in CCW order, so the distance is the min over edges.
    let inside_depth = |px: f64, py: f64| -> f64 {
        let mut depth = f64::INFINITY;
        for i in 0..4 {
            let (x1, y1) = quad[i];
            let (x2, y2) = quad[(i + 1) % 4];
            let len = (x2 - x1).hypot(y2 - y1).max(1e-9);
            let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            depth = depth.min(cross / len);
        }
        depth
    };

    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let depth = inside_depth(x as f64, y as f64);
            if depth <= -feather {
                continue;
            }
            // Blend from no shadow at the feathered rim to full inside.
            let t = ((depth + feather) / (2.0 * feather)).clamp(0.0, 1.0);
            let factor = 1.0 - t * (1.0 - darkening);
            let p = out.get_pixel_mut(x, y);
            for c in 0..3 {
                p.0[c] = (p.0[c] as f64 * factor).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

fn rain(img: &RgbImage, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = img.dimensions();
    let mut overlay = vec![0.0f32; (w * h) as usize];
    let n_streaks = rng.random_range(50..=300);
    let base_angle: f64 = rng.random_range(-0.35..0.35);
    for _ in 0..n_streaks {
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let angle = base_angle + rng.random_range(-0.05..0.05);
        let length = rng.random_range(8.0..25.0);
        let gain = rng.random_range(40.0..100.0) as f32;
        // Streaks run mostly downward.
        let (dx, dy) = (angle.sin(), angle.cos());
        let steps = (length * 2.0) as u32;
        for s in 0..steps {
            let t = s as f64 / 2.0;
            let x = x0 + t * dx;
            let y = y0 + t * dy;
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                break;
            }
            overlay[(y as u32 * w + x as u32) as usize] += gain / 2.0;
        }
    }
    // Slight blur softens the streaks.
    let mut blurred = vec![0.0f32; overlay.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            let mut count = 0.0;
            for ky in -1..=1i64 {
                for kx in -1..=1i64 {
                    let sx = x + kx;
                    let sy = y + ky;
                    if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                        acc += overlay[(sy as u32 * w + sx as u32) as usize];
                        count += 1.0;
                    }
                }
            }
            blurred[(y as u32 * w + x as u32) as usize] = acc / count;
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let add = blurred[(y * w + x) as usize];
            if add <= 0.0 {
                continue;
            }
            let p = out.get_pixel_mut(x, y);
            for c in 0..3 {
                p.0[c] = (p.0[c] as f32 + add).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

fn gaussian_noise(img: &RgbImage, sigma: f64, seed: u64) -> RgbImage {
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated > 0");
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            let v = p.0[c] as f64 + normal.sample(&mut rng);
            p.0[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{child_rng, stream};

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([
                (x * 255 / w.max(1)) as u8,
                (y * 255 / h.max(1)) as u8,
                ((x + y) % 256) as u8,
            ])
        })
    }

    #[test]
    fn even_kernel_is_rejected() {
        let img = gradient_image(16, 16);
        let result = apply(&DegradationSpec::BoxBlur { kernel_px: 4 }, &img);
        assert!(matches!(result, Err(crate::Error::InvalidArgument(_))));
        let result = apply(
            &DegradationSpec::MotionBlur {
                kernel_px: 2,
                angle: 0.0,
            },
            &img,
        );
        assert!(matches!(result, Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let img = gradient_image(32, 24);
        let out = apply(
            &DegradationSpec::GaussianNoise { sigma: 0.0, seed: 1 },
            &img,
        )
        .unwrap();
        assert_eq!(out.as_raw(), img.as_raw());
    }

    #[test]
    fn zero_k_dimming_is_identity() {
        let img = gradient_image(32, 24);
        let out = apply(&DegradationSpec::Dimming { k: 0.0 }, &img).unwrap();
        assert_eq!(out.as_raw(), img.as_raw());
    }

    #[test]
    fn constant_image_blur_is_identity() {
        let img = RgbImage::from_pixel(40, 30, image::Rgb([123, 45, 67]));
        let out = apply(&DegradationSpec::BoxBlur { kernel_px: 15 }, &img).unwrap();
        assert_eq!(out.as_raw(), img.as_raw());
        let out = apply(
            &DegradationSpec::MotionBlur {
                kernel_px: 9,
                angle: 0.8,
            },
            &img,
        )
        .unwrap();
        assert_eq!(out.as_raw(), img.as_raw());
    }

    #[test]
    fn dimming_factor_values() {
        assert_eq!(dimming_factor(0.0), 1.0);
        assert_eq!(dimming_factor(1.0), 0.6);
        assert!((dimming_factor(2.0) - 0.36).abs() < 1e-12);
    }

    #[test]
    fn dimming_multiplies_by_point_six() {
        let img = gradient_image(16, 16);
        let out = apply(&DegradationSpec::Dimming { k: 1.0 }, &img).unwrap();
        for (pin, pout) in img.pixels().zip(out.pixels()) {
            for c in 0..3 {
                let expect = (pin.0[c] as f64 * 0.6).round().clamp(0.0, 255.0) as u8;
                assert_eq!(pout.0[c], expect);
            }
        }
    }

    #[test]
    fn dimming_is_pixelwise_monotone() {
        let img = gradient_image(48, 36);
        let mut previous = img.clone();
        for k in 1..=3 {
            let current = apply(&DegradationSpec::Dimming { k: k as f64 }, &img).unwrap();
            for (pp, pc) in previous.pixels().zip(current.pixels()) {
                for c in 0..3 {
                    assert!(pc.0[c] <= pp.0[c], "dimming not monotone at k={k}");
                }
            }
            previous = current;
        }
    }

    #[test]
    fn shapes_are_preserved() {
        let img = gradient_image(37, 23);
        let specs = [
            DegradationSpec::MotionBlur { kernel_px: 5, angle: 0.3 },
            DegradationSpec::BoxBlur { kernel_px: 7 },
            DegradationSpec::Brightness { factor: 1.3 },
            DegradationSpec::Dimming { k: 1.5 },
            DegradationSpec::Shadow { seed: 4 },
            DegradationSpec::Rain { seed: 5 },
            DegradationSpec::GaussianNoise { sigma: 10.0, seed: 6 },
        ];
        for spec in &specs {
            let out = apply(spec, &img).unwrap();
            assert_eq!(out.dimensions(), img.dimensions(), "{spec:?}");
        }
    }

    #[test]
    fn blur_preserves_global_mean() {
        let img = gradient_image(64, 48);
        let mean = |im: &RgbImage| {
            im.pixels().flat_map(|p| p.0).map(|v| v as f64).sum::<f64>()
                / (im.width() * im.height() * 3) as f64
        };
        for spec in [
            DegradationSpec::BoxBlur { kernel_px: 9 },
            DegradationSpec::MotionBlur { kernel_px: 7, angle: 1.1 },
        ] {
            let out = apply(&spec, &img).unwrap();
            assert!(
                (mean(&out) - mean(&img)).abs() <= 1.0,
                "{spec:?} shifted the mean by more than one level"
            );
        }
    }

    #[test]
    fn noise_is_zero_mean() {
        let img = RgbImage::from_pixel(256, 256, image::Rgb([128, 128, 128]));
        let out = apply(
            &DegradationSpec::GaussianNoise { sigma: 30.0, seed: 99 },
            &img,
        )
        .unwrap();
        let mean = out.pixels().flat_map(|p| p.0).map(|v| v as f64).sum::<f64>()
            / (256.0 * 256.0 * 3.0);
        assert!((126.0..=130.0).contains(&mean), "noisy mean {mean}");
    }

    #[test]
    fn stochastic_kinds_replay_from_their_seed() {
        let img = gradient_image(48, 48);
        for spec in [
            DegradationSpec::Shadow { seed: 1234 },
            DegradationSpec::Rain { seed: 777 },
            DegradationSpec::GaussianNoise { sigma: 12.0, seed: 31 },
        ] {
            let a = apply(&spec, &img).unwrap();
            let b = apply(&spec, &img).unwrap();
            assert_eq!(a.as_raw(), b.as_raw(), "{spec:?} not replayable");
        }
    }

    #[test]
    fn shadow_only_darkens_and_rain_only_brightens() {
        let img = gradient_image(48, 48);
        let shadowed = apply(&DegradationSpec::Shadow { seed: 8 }, &img).unwrap();
        for (pin, pout) in img.pixels().zip(shadowed.pixels()) {
            for c in 0..3 {
                assert!(pout.0[c] <= pin.0[c]);
            }
        }
        let rained = apply(&DegradationSpec::Rain { seed: 8 }, &img).unwrap();
        for (pin, pout) in img.pixels().zip(rained.pixels()) {
            for c in 0..3 {
                assert!(pout.0[c] >= pin.0[c]);
            }
        }
    }

    #[test]
    fn no_augmentations_before_the_boundary_epoch() {
        let mut rng = child_rng(0, stream::TRAIN_AUGMENT, 10, 0);
        let stack = training_augmentation_stack(&mut rng, 10, 31, &AugmentRanges::default());
        assert!(stack.is_empty());
        let stack = training_augmentation_stack(&mut rng, 30, 31, &AugmentRanges::default());
        assert!(stack.is_empty());
    }

    #[test]
    fn augmentation_stack_is_deterministic() {
        let ranges = AugmentRanges::default();
        let mut a = child_rng(5, stream::TRAIN_AUGMENT, 40, 3);
        let mut b = child_rng(5, stream::TRAIN_AUGMENT, 40, 3);
        assert_eq!(
            training_augmentation_stack(&mut a, 40, 31, &ranges),
            training_augmentation_stack(&mut b, 40, 31, &ranges)
        );
    }

    #[test]
    fn each_kind_appears_with_frequency_half() {
        let ranges = AugmentRanges::default();
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for i in 0..draws {
            let mut rng = child_rng(42, stream::TRAIN_AUGMENT, 40, i as u64);
            for spec in training_augmentation_stack(&mut rng, 40, 31, &ranges) {
                match spec {
                    DegradationSpec::MotionBlur { .. } => counts[0] += 1,
                    DegradationSpec::GaussianNoise { .. } => counts[1] += 1,
                    DegradationSpec::Shadow { .. } => counts[2] += 1,
                    DegradationSpec::Rain { .. } => counts[3] += 1,
                    other => panic!("unexpected kind in stack: {other:?}"),
                }
            }
        }
        for (i, &count) in counts.iter().enumerate() {
            let freq = count as f64 / draws as f64;
            assert!(
                (freq - 0.5).abs() <= 0.02,
                "kind {i} frequency {freq} outside 0.5 +/- 0.02"
            );
        }
    }

    #[test]
    fn specs_round_trip_through_json() {
        let specs = vec![
            DegradationSpec::MotionBlur { kernel_px: 7, angle: 0.4 },
            DegradationSpec::Dimming { k: 2.5 },
            DegradationSpec::GaussianNoise { sigma: 30.0, seed: 17 },
            DegradationSpec::Shadow { seed: 3 },
        ];
        let json = serde_json::to_string(&specs).unwrap();
        let back: Vec<DegradationSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, specs);
    }
}

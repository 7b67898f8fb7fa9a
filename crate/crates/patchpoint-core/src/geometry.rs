//! Constrained random perspective transforms for patch placement.
//!
//! A placement homography is composed as translation * tilt * rotation *
//! scale * center-shift, rejection-sampled until the warped patch satisfies
//! the size and aspect constraints. Constraint checks use the exact conic
//! image of the patch's bounding circle, while the tests re-measure the same
//! quantities with an independent boundary-point oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::patch::PatchRaster;
use crate::{Error, Result};

/// 3x3 projective transform, kept normalized so `m[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> [f64; 9] {
        [
            h.m[0][0], h.m[0][1], h.m[0][2], h.m[1][0], h.m[1][1], h.m[1][2], h.m[2][0], h.m[2][1],
            h.m[2][2],
        ]
    }
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = String;

    fn try_from(v: [f64; 9]) -> std::result::Result<Self, String> {
        Homography::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
            .map_err(|e| e.to_string())
    }
}

impl Homography {
    /// Builds a homography from an arbitrary matrix, normalizing so that
    /// `m[2][2] = 1`. Rejects matrices that cannot be normalized or whose
    /// normalized determinant is numerically singular.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let w = m[2][2];
        if !w.is_finite() || w.abs() < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "homography cannot be normalized: m[2][2] = {w}"
            )));
        }
        let mut n = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                n[r][c] = m[r][c] / w;
                if !n[r][c].is_finite() {
                    return Err(Error::InvalidArgument(
                        "homography has non-finite entries".into(),
                    ));
                }
            }
        }
        let h = Homography { m: n };
        if h.det().abs() <= 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "homography is singular: det = {:.3e}",
                h.det()
            )));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        let (a, b) = (&self.m, &other.m);
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
            }
        }
        Homography::new(out)
    }

    pub fn invert(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.det();
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        Homography::new(inv)
    }

    /// Projective image of a point. Errors if the point maps to infinity.
    pub fn apply(&self, p: (f64, f64)) -> Result<(f64, f64)> {
        let (x, y) = p;
        let m = &self.m;
        let denom = m[2][0] * x + m[2][1] * y + m[2][2];
        if denom.abs() < 1e-12 {
            return Err(Error::DegenerateProjection { x, y, denom });
        }
        Ok((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / denom,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / denom,
        ))
    }
}

/// Convenience wrapper matching the ground-truth generation rule.
pub fn apply_homography(h: &Homography, p: (f64, f64)) -> Result<(f64, f64)> {
    h.apply(p)
}

/// Size/shape constraints a sampled placement must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpConstraints {
    /// Minimum length of the warped ellipse's short axis (full axis, px).
    pub min_short_axis_px: f64,
    /// Minimum short/long axis ratio.
    pub min_axis_ratio: f64,
    pub max_patches_per_image: u32,
    pub image_size: (u32, u32),
}

impl Default for WarpConstraints {
    fn default() -> Self {
        WarpConstraints {
            min_short_axis_px: 10.0,
            min_axis_ratio: 0.2,
            max_patches_per_image: 10,
            image_size: (640, 480),
        }
    }
}

impl WarpConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.min_short_axis_px < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "min_short_axis_px {} must be >= 1",
                self.min_short_axis_px
            )));
        }
        if !(self.min_axis_ratio > 0.0 && self.min_axis_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_axis_ratio {} must lie in (0, 1]",
                self.min_axis_ratio
            )));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(Error::InvalidArgument(format!(
                "image size {:?} too small",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Knobs of the placement sampler that are not constraints: how large and how
/// slanted patches are drawn before rejection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    /// In-plane target radius range, px, before foreshortening.
    pub radius_range: [f64; 2],
    /// Maximum dimensionless tilt (perspective foreshortening strength at the
    /// patch boundary). 0 disables out-of-plane tilt.
    pub max_tilt: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            radius_range: [8.0, 64.0],
            max_tilt: 0.7,
        }
    }
}

/// Semi-axes of the elliptical image of a circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseAxes {
    pub semi_major: f64,
    pub semi_minor: f64,
}

impl EllipseAxes {
    pub fn short_axis(&self) -> f64 {
        2.0 * self.semi_minor
    }

    pub fn axis_ratio(&self) -> f64 {
        self.semi_minor / self.semi_major
    }

    /// Effective circle radius after warping.
    pub fn geometric_mean_radius(&self) -> f64 {
        (self.semi_major * self.semi_minor).sqrt()
    }
}

/// Exact semi-axes of the image of the circle centered at `center` with
/// radius `radius` under `h`, via the conic transform Q = H^-T C H^-1.
/// Errors if the image is not an ellipse (circle crosses the horizon line).
pub fn warped_circle_axes(h: &Homography, center: (f64, f64), radius: f64) -> Result<EllipseAxes> {
    let (cx, cy) = center;
    let c = [
        [1.0, 0.0, -cx],
        [0.0, 1.0, -cy],
        [-cx, -cy, cx * cx + cy * cy - radius * radius],
    ];
    let hin = h.invert()?.m;
    // q = hin^T * c * hin
    let mut tmp = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            tmp[r][col] = (0..3).map(|k| c[r][k] * hin[k][col]).sum();
        }
    }
    let mut q = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            q[r][col] = (0..3).map(|k| hin[k][r] * tmp[k][col]).sum();
        }
    }

    let (a, b2, cc) = (q[0][0], q[0][1], q[1][1]);
    let det2 = a * cc - b2 * b2;
    if det2 <= 0.0 {
        return Err(Error::NumericError(
            "warped circle is not an ellipse".into(),
        ));
    }
    let det3 = q[0][0] * (q[1][1] * q[2][2] - q[1][2] * q[2][1])
        - q[0][1] * (q[1][0] * q[2][2] - q[1][2] * q[2][0])
        + q[0][2] * (q[1][0] * q[2][1] - q[1][1] * q[2][0]);
    let half_trace = (a + cc) / 2.0;
    let delta = ((a - cc) / 2.0).hypot(b2);
    let l1 = half_trace + delta;
    let l2 = half_trace - delta;
    let ax1 = -det3 / (det2 * l1);
    let ax2 = -det3 / (det2 * l2);
    if ax1 <= 0.0 || ax2 <= 0.0 || !ax1.is_finite() || !ax2.is_finite() {
        return Err(Error::NumericError(
            "degenerate ellipse from conic transform".into(),
        ));
    }
    let (s1, s2) = (ax1.sqrt(), ax2.sqrt());
    Ok(EllipseAxes {
        semi_major: s1.max(s2),
        semi_minor: s1.min(s2),
    })
}

/// Samples a placement homography for a patch raster of the given source
/// radius under the default sampler knobs.
pub fn sample_patch_homography(
    rng: &mut impl Rng,
    constraints: &WarpConstraints,
    source_radius_px: f64,
) -> Result<Homography> {
    sample_patch_homography_with(rng, constraints, &SamplerParams::default(), source_radius_px)
}

/// Rejection rounds before declaring the constraints infeasible. Later rounds
/// progressively tame the draw (larger minimum radius, less tilt).
const SAMPLE_ROUNDS: usize = 3;
const ATTEMPTS_PER_ROUND: usize = 100;

pub fn sample_patch_homography_with(
    rng: &mut impl Rng,
    constraints: &WarpConstraints,
    params: &SamplerParams,
    source_radius_px: f64,
) -> Result<Homography> {
    constraints.validate()?;
    if source_radius_px < 5.0 {
        return Err(Error::InvalidArgument(format!(
            "source radius {source_radius_px} px below minimum 5"
        )));
    }
    if params.radius_range[0] > params.radius_range[1] || params.radius_range[0] <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "bad radius range {:?}",
            params.radius_range
        )));
    }
    let (w, h) = (
        constraints.image_size.0 as f64,
        constraints.image_size.1 as f64,
    );
    if constraints.min_short_axis_px > w.min(h) {
        return Err(Error::ConstraintInfeasible(format!(
            "min short axis {} px exceeds the {}x{} image",
            constraints.min_short_axis_px, constraints.image_size.0, constraints.image_size.1
        )));
    }

    let src_center = (source_radius_px, source_radius_px);
    for round in 0..SAMPLE_ROUNDS {
        // Round 0 draws from the caller's ranges; later rounds push the
        // radius up and the tilt down so tight constraints still converge.
        let r_lo = match round {
            0 => params.radius_range[0],
            _ => params.radius_range[0].max(constraints.min_short_axis_px / 2.0 + 1.0),
        };
        let r_hi = params.radius_range[1].max(r_lo);
        let tilt_cap = params.max_tilt / (1 << round) as f64;

        for _ in 0..ATTEMPTS_PER_ROUND {
            let radius = rng.random_range(r_lo..=r_hi);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let tilt = rng.random_range(0.0..=tilt_cap);
            let tilt_dir = rng.random_range(0.0..std::f64::consts::TAU);

            let s = radius / source_radius_px;
            let (sin_t, cos_t) = theta.sin_cos();
            // Scale + rotate about the source center, moved to the origin.
            let lin = Homography {
                m: [
                    [s * cos_t, -s * sin_t, 0.0],
                    [s * sin_t, s * cos_t, 0.0],
                    [0.0, 0.0, 1.0],
                ],
            }
            .compose(&Homography::translation(-src_center.0, -src_center.1))?;
            // Perspective tilt, scaled so `tilt` is the dimensionless
            // foreshortening strength at the warped patch boundary.
            let t = tilt / radius.max(1.0);
            let tilted = Homography::new([
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [t * tilt_dir.cos(), t * tilt_dir.sin(), 1.0],
            ])?
            .compose(&lin)?;

            let axes = match warped_circle_axes(&tilted, src_center, source_radius_px) {
                Ok(a) => a,
                Err(_) => continue,
            };
            if axes.short_axis() < constraints.min_short_axis_px
                || axes.axis_ratio() < constraints.min_axis_ratio
            {
                continue;
            }
            let margin = axes.semi_minor;
            if margin > (w - 1.0) / 2.0 || margin > (h - 1.0) / 2.0 {
                continue;
            }
            let cx = rng.random_range(margin..=(w - 1.0) - margin);
            let cy = rng.random_range(margin..=(h - 1.0) - margin);
            return Homography::translation(cx, cy).compose(&tilted);
        }
    }
    Err(Error::ConstraintInfeasible(format!(
        "no placement found for radius range {:?} with min short axis {} in {}x{}",
        params.radius_range, constraints.min_short_axis_px, constraints.image_size.0,
        constraints.image_size.1
    )))
}

/// Image (under `h`) of the raster's outer square boundary, in drawing order.
pub fn warped_square_corners(h: &Homography, side: u32) -> Result<[(f64, f64); 4]> {
    let lo = -0.5;
    let hi = side as f64 - 0.5;
    Ok([
        h.apply((lo, lo))?,
        h.apply((hi, lo))?,
        h.apply((hi, hi))?,
        h.apply((lo, hi))?,
    ])
}

/// Point-in-convex-quad test, winding-agnostic.
pub fn point_in_convex_quad(quad: &[(f64, f64); 4], p: (f64, f64)) -> bool {
    let mut pos = false;
    let mut neg = false;
    for i in 0..4 {
        let (x1, y1) = quad[i];
        let (x2, y2) = quad[(i + 1) % 4];
        let cross = (x2 - x1) * (p.1 - y1) - (y2 - y1) * (p.0 - x1);
        if cross > 0.0 {
            pos = true;
        }
        if cross < 0.0 {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    true
}

/// Composites a patch raster onto an RGB canvas by inverse-mapped bilinear
/// resampling. Later calls overwrite earlier ones where footprints overlap.
/// Returns the warped keypoint and the effective circle radius.
pub fn warp_raster_onto(
    h: &Homography,
    raster: &PatchRaster,
    canvas: &mut image::RgbImage,
) -> Result<((f64, f64), f64)> {
    let hinv = h.invert()?;
    let side = raster.side();
    let corners = warped_square_corners(h, side)?;
    let (cw, ch) = canvas.dimensions();

    let xs = corners.iter().map(|c| c.0);
    let ys = corners.iter().map(|c| c.1);
    let x_min = xs.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
    let x_max = xs.fold(f64::NEG_INFINITY, f64::max).ceil().min(cw as f64 - 1.0) as i64;
    let y_min = ys.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
    let y_max = ys.fold(f64::NEG_INFINITY, f64::max).ceil().min(ch as f64 - 1.0) as i64;
    if x_min > x_max || y_min > y_max {
        return Err(Error::OutOfBoundsPlacement(format!(
            "footprint bbox misses the {cw}x{ch} canvas"
        )));
    }

    let lo = -0.5;
    let hi = side as f64 - 0.5;
    let max_idx = (side - 1) as f64;
    let mut painted = false;
    for y in y_min..=y_max {
        for x in x_min..=x_max {
            let (sx, sy) = match hinv.apply((x as f64, y as f64)) {
                Ok(p) => p,
                Err(_) => continue,
            };
            if !(lo..hi).contains(&sx) || !(lo..hi).contains(&sy) {
                continue;
            }
            let fx = sx.clamp(0.0, max_idx);
            let fy = sy.clamp(0.0, max_idx);
            let x0 = fx.floor();
            let y0 = fy.floor();
            let tx = fx - x0;
            let ty = fy - y0;
            let x0 = x0 as u32;
            let y0 = y0 as u32;
            let x1 = (x0 + 1).min(side - 1);
            let y1 = (y0 + 1).min(side - 1);
            let p = |xx: u32, yy: u32| raster.pixels.get_pixel(xx, yy).0[0] as f64;
            let v = p(x0, y0) * (1.0 - tx) * (1.0 - ty)
                + p(x1, y0) * tx * (1.0 - ty)
                + p(x0, y1) * (1.0 - tx) * ty
                + p(x1, y1) * tx * ty;
            let v = v.round().clamp(0.0, 255.0) as u8;
            canvas.put_pixel(x as u32, y as u32, image::Rgb([v, v, v]));
            painted = true;
        }
    }
    if !painted {
        return Err(Error::OutOfBoundsPlacement(
            "warped footprint covers no canvas pixel".into(),
        ));
    }

    let center = h.apply(raster.center)?;
    let axes = warped_circle_axes(h, raster.center, raster.radius_px as f64)?;
    Ok((center, axes.geometric_mean_radius()))
}

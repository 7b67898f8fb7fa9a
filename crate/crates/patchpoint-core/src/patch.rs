//! The four canonical keypoint patch designs and their rasterization.
//!
//! A patch is a stack of concentric rings and semi-rings in two intensity
//! classes, all sharing one center; that center is the keypoint. The exact
//! ring radii and half-plane orientations below are versioned data
//! (`DESIGN_VERSION`): datasets are only reproducible against the same
//! geometry revision.

use std::f64::consts::{PI, TAU};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of canonical patch designs.
pub const PATCH_TYPE_COUNT: usize = 4;
/// Smallest radius worth rasterizing; below this the rings collapse.
pub const MIN_RENDER_RADIUS: u32 = 5;
/// Dark intensities must stay at or below this level.
pub const BLACK_LEVEL_MAX: u8 = 120;
/// Light intensities must stay at or above this level.
pub const WHITE_LEVEL_MIN: u8 = 180;
/// Revision of the canonical ring geometry.
pub const DESIGN_VERSION: u32 = 1;

/// Supersampling grid used per pixel when anti-aliasing is enabled.
const AA_GRID: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorClass {
    Black,
    White,
}

/// One annular element of a design: a full ring or a semi-ring, described in
/// unit-disk coordinates (fractions of the patch radius).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingElement {
    pub inner_fraction: f64,
    pub outer_fraction: f64,
    /// Start of the angular extent, radians, measured from the +x axis.
    pub start_angle: f64,
    /// End of the angular extent; `end - start` is either `PI` or `TAU`.
    pub end_angle: f64,
    pub color_class: ColorClass,
}

impl RingElement {
    fn full(inner: f64, outer: f64) -> Self {
        RingElement {
            inner_fraction: inner,
            outer_fraction: outer,
            start_angle: 0.0,
            end_angle: TAU,
            color_class: ColorClass::Black,
        }
    }

    fn semi(inner: f64, outer: f64, start: f64) -> Self {
        RingElement {
            inner_fraction: inner,
            outer_fraction: outer,
            start_angle: start,
            end_angle: start + PI,
            color_class: ColorClass::Black,
        }
    }

    pub fn angular_extent(&self) -> f64 {
        self.end_angle - self.start_angle
    }

    pub fn is_semi(&self) -> bool {
        (self.angular_extent() - PI).abs() < 1e-12
    }

    /// Membership test in pattern coordinates: `radial` is the distance from
    /// the center as a fraction of the patch radius, `angle` in radians.
    /// Radial bounds are closed; the angular interval is half-open at the end
    /// so two opposed semi-rings tile a full ring without overlap.
    pub fn contains(&self, radial: f64, angle: f64) -> bool {
        if radial < self.inner_fraction || radial > self.outer_fraction {
            return false;
        }
        let extent = self.angular_extent();
        if extent >= TAU - 1e-12 {
            return true;
        }
        (angle - self.start_angle).rem_euclid(TAU) < extent
    }
}

/// Parametric geometry of one design. `nominal_radius` is the unit in which
/// the ring fractions are expressed; the pixel radius is chosen at render
/// time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub type_id: u8,
    pub rings: Vec<RingElement>,
    pub nominal_radius: f64,
}

impl PatchSpec {
    /// Color at a point given in unit pattern coordinates. Points outside
    /// every element (and outside the unit disk) are background, i.e. white.
    pub fn color_at(&self, radial: f64, angle: f64) -> ColorClass {
        if radial <= 1.0 {
            for ring in &self.rings {
                if ring.contains(radial, angle) {
                    return ring.color_class;
                }
            }
        }
        ColorClass::White
    }
}

/// The four canonical designs, ordered by `type_id`.
///
/// All four share a central disk so the keypoint is always interior to dark
/// material, and differ in ring count and in the half-plane phases of their
/// semi-rings:
///
/// * type 0: disk + full outer ring
/// * type 1: disk + semi outer ring
/// * type 2: disk + two semi rings on opposite half-planes
/// * type 3: disk + two semi rings on the same half-plane
pub fn canonical_designs() -> Vec<PatchSpec> {
    vec![
        PatchSpec {
            type_id: 0,
            rings: vec![RingElement::full(0.0, 0.40), RingElement::full(0.62, 1.0)],
            nominal_radius: 1.0,
        },
        PatchSpec {
            type_id: 1,
            rings: vec![RingElement::full(0.0, 0.40), RingElement::semi(0.62, 1.0, 0.0)],
            nominal_radius: 1.0,
        },
        PatchSpec {
            type_id: 2,
            rings: vec![
                RingElement::full(0.0, 0.34),
                RingElement::semi(0.48, 0.68, 0.0),
                RingElement::semi(0.82, 1.0, PI),
            ],
            nominal_radius: 1.0,
        },
        PatchSpec {
            type_id: 3,
            rings: vec![
                RingElement::full(0.0, 0.34),
                RingElement::semi(0.48, 0.68, 0.0),
                RingElement::semi(0.82, 1.0, 0.0),
            ],
            nominal_radius: 1.0,
        },
    ]
}

/// Versioned export of the canonical geometry, the document the CLI writes
/// next to rendered previews.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignDocument {
    pub design_version: u32,
    pub designs: Vec<PatchSpec>,
}

impl DesignDocument {
    pub fn current() -> Self {
        DesignDocument {
            design_version: DESIGN_VERSION,
            designs: canonical_designs(),
        }
    }
}

/// A rendered patch. The raster is square with side `2 * radius_px + 1` and
/// the keypoint sits exactly at the middle pixel `(radius_px, radius_px)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRaster {
    pub pixels: GrayImage,
    pub center: (f64, f64),
    pub radius_px: u32,
}

impl PatchRaster {
    pub fn side(&self) -> u32 {
        2 * self.radius_px + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Supersample 4x and area-average. Off means one sample per pixel
    /// center, which keeps every pixel exactly at black_level or white_level.
    pub antialias: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { antialias: true }
    }
}

/// Renders a design at the given radius with anti-aliasing on.
///
/// `rotation` turns the ring pattern about the center, counter-clockwise in
/// standard math orientation (visually clockwise with image y pointing down).
/// Everything outside the outermost ring is filled with `white_level`.
pub fn render_patch(
    spec: &PatchSpec,
    radius_px: u32,
    black_level: u8,
    white_level: u8,
    rotation: f64,
) -> Result<PatchRaster> {
    render_patch_opts(
        spec,
        radius_px,
        black_level,
        white_level,
        rotation,
        RenderOptions::default(),
    )
}

/// `render_patch` with explicit anti-aliasing control.
pub fn render_patch_opts(
    spec: &PatchSpec,
    radius_px: u32,
    black_level: u8,
    white_level: u8,
    rotation: f64,
    opts: RenderOptions,
) -> Result<PatchRaster> {
    if radius_px < MIN_RENDER_RADIUS {
        return Err(Error::InvalidArgument(format!(
            "render radius {radius_px} px is below the minimum {MIN_RENDER_RADIUS}"
        )));
    }
    if black_level > BLACK_LEVEL_MAX {
        return Err(Error::InvalidArgument(format!(
            "black level {black_level} outside [0, {BLACK_LEVEL_MAX}]"
        )));
    }
    if white_level < WHITE_LEVEL_MIN {
        return Err(Error::InvalidArgument(format!(
            "white level {white_level} outside [{WHITE_LEVEL_MIN}, 255]"
        )));
    }
    if !rotation.is_finite() {
        return Err(Error::InvalidArgument("rotation must be finite".into()));
    }

    let side = 2 * radius_px + 1;
    let c = radius_px as f64;
    let r_px = radius_px as f64;
    let black = black_level as f64;
    let white = white_level as f64;

    let sample = |x: f64, y: f64| -> f64 {
        let dx = x - c;
        let dy = y - c;
        let radial = (dx * dx + dy * dy).sqrt() / r_px;
        let angle = dy.atan2(dx) - rotation;
        match spec.color_at(radial, angle) {
            ColorClass::Black => black,
            ColorClass::White => white,
        }
    };

    let mut img = GrayImage::new(side, side);
    for py in 0..side {
        for px in 0..side {
            let value = if opts.antialias {
                let mut acc = 0.0;
                for sy in 0..AA_GRID {
                    for sx in 0..AA_GRID {
                        let ox = (sx as f64 + 0.5) / AA_GRID as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / AA_GRID as f64 - 0.5;
                        acc += sample(px as f64 + ox, py as f64 + oy);
                    }
                }
                acc / (AA_GRID * AA_GRID) as f64
            } else {
                sample(px as f64, py as f64)
            };
            img.put_pixel(px, py, image::Luma([value.round().clamp(0.0, 255.0) as u8]));
        }
    }

    Ok(PatchRaster {
        pixels: img,
        center: (c, c),
        radius_px,
    })
}

/// Normalized cross-correlation between two equally sized rasters, in
/// [-1, 1]. Used for template-match classification and the design
/// dissimilarity audit.
pub fn normalized_cross_correlation(a: &GrayImage, b: &GrayImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions(), "NCC needs equal shapes");
    let n = (a.width() * a.height()) as f64;
    let mean = |img: &GrayImage| img.pixels().map(|p| p.0[0] as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        let va = pa.0[0] as f64 - ma;
        let vb = pb.0[0] as f64 - mb;
        dot += va * vb;
        na += va * va;
        nb += vb * vb;
    }
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Classifies a centered patch raster by nearest rotated template, returning
/// the winning type id. `rotations` is the number of template orientations
/// tried per design.
pub fn classify_by_template(query: &GrayImage, radius_px: u32, rotations: u32) -> Result<u8> {
    let mut best = (f64::NEG_INFINITY, 0u8);
    for spec in canonical_designs() {
        for k in 0..rotations {
            let rot = TAU * k as f64 / rotations as f64;
            let tpl = render_patch(&spec, radius_px, 0, 255, rot)?;
            let score = normalized_cross_correlation(query, &tpl.pixels);
            if score > best.0 {
                best = (score, spec.type_id);
            }
        }
    }
    Ok(best.1)
}

//! Labeled scene synthesis: warp random patches onto a background, degrade,
//! and encode the cell-grid supervision targets.

use image::RgbImage;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backgrounds::BackgroundSource;
use crate::degrade::{self, AugmentRanges, DegradationSpec};
use crate::geometry::{
    point_in_convex_quad, sample_patch_homography_with, warp_raster_onto,
    warped_square_corners, Homography, SamplerParams, WarpConstraints,
};
use crate::patch::{canonical_designs, render_patch_opts, RenderOptions};
use crate::{Error, Result};

/// Cell side of the supervision grid; the network downsamples by this factor.
pub const CELL: u32 = 8;
/// Detector class meaning "no keypoint in this cell".
pub const DUSTBIN_CLASS: u8 = 64;
/// ID class meaning "background".
pub const BACKGROUND_CLASS: u8 = 4;

/// Ground truth for one placed patch. The replay fields (levels, source
/// radius) let a reader rebuild the exact pre-degradation composite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointInstance {
    /// Subpixel keypoint coordinates: the warped patch center.
    pub x: f64,
    pub y: f64,
    pub type_id: u8,
    /// Effective circle radius after warping (geometric-mean semi-axis).
    pub radius_px: f64,
    pub homography: Homography,
    pub black_level: u8,
    pub white_level: u8,
    pub source_radius_px: u32,
}

/// Everything recorded about one synthesized sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAnnotation {
    /// Path of the image, relative to the dataset root. Empty until the
    /// sample is written to a dataset.
    #[serde(default)]
    pub image_path: String,
    pub image_size: [u32; 2],
    pub instances: Vec<KeypointInstance>,
    pub degradations: Vec<DegradationSpec>,
    /// Identifier of the background image used.
    pub background_source: String,
    pub background_index: u64,
    /// Master seed of the generating run; with the sample index this replays
    /// the sample bit-exactly.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub max_patches: u32,
    pub min_short_axis_px: f64,
    pub min_axis_ratio: f64,
    /// In-plane warped radius range, px.
    pub radius_range: [f64; 2],
    pub max_tilt: f64,
    pub black_range: [u8; 2],
    pub white_range: [u8; 2],
    /// Radius at which patches are rasterized before warping.
    pub source_radius_px: u32,
    pub antialias: bool,
    /// Per-kind probability of baking a degradation into the stored image.
    /// Zero for training sets: the training loop degrades on the fly.
    pub degrade_probability: f64,
    pub augment: AugmentRanges,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 640,
            height: 480,
            max_patches: 10,
            min_short_axis_px: 10.0,
            min_axis_ratio: 0.2,
            radius_range: [8.0, 64.0],
            max_tilt: 0.7,
            black_range: [0, 120],
            white_range: [180, 255],
            source_radius_px: 64,
            antialias: true,
            degrade_probability: 0.0,
            augment: AugmentRanges::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidArgument(format!(
                "image size {}x{} too small",
                self.width, self.height
            )));
        }
        if self.black_range[0] > self.black_range[1] || self.black_range[1] > 120 {
            return Err(Error::InvalidArgument(format!(
                "black range {:?} outside [0, 120]",
                self.black_range
            )));
        }
        if self.white_range[0] > self.white_range[1] || self.white_range[0] < 180 {
            return Err(Error::InvalidArgument(format!(
                "white range {:?} outside [180, 255]",
                self.white_range
            )));
        }
        if self.source_radius_px < 5 {
            return Err(Error::InvalidArgument(
                "source radius below minimum 5".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.degrade_probability) {
            return Err(Error::InvalidArgument(format!(
                "degrade probability {} outside [0, 1]",
                self.degrade_probability
            )));
        }
        self.constraints().validate()
    }

    pub fn constraints(&self) -> WarpConstraints {
        WarpConstraints {
            min_short_axis_px: self.min_short_axis_px,
            min_axis_ratio: self.min_axis_ratio,
            max_patches_per_image: self.max_patches,
            image_size: (self.width, self.height),
        }
    }

    pub fn sampler_params(&self) -> SamplerParams {
        SamplerParams {
            radius_range: self.radius_range,
            max_tilt: self.max_tilt,
        }
    }
}

pub struct SynthSample {
    pub image: RgbImage,
    pub annotation: SampleAnnotation,
}

/// Placement retries before a patch is dropped from the sample.
const PLACEMENT_ATTEMPTS: usize = 100;

/// Synthesizes one labeled scene: background, 0..=max_patches warped patches
/// (painter's order), then the configured degradations.
pub fn synthesize_sample(
    rng: &mut impl Rng,
    backgrounds: &dyn BackgroundSource,
    cfg: &SynthConfig,
) -> Result<SynthSample> {
    cfg.validate()?;
    if backgrounds.is_empty() {
        return Err(Error::EmptyCorpus("background source has no entries".into()));
    }

    let bg_index = rng.random_range(0..backgrounds.len());
    let mut canvas = backgrounds.load(bg_index, cfg.width, cfg.height)?;

    let designs = canonical_designs();
    let constraints = cfg.constraints();
    let params = cfg.sampler_params();
    let render_opts = RenderOptions {
        antialias: cfg.antialias,
    };
    let n_patches = rng.random_range(0..=cfg.max_patches);
    let src_center = cfg.source_radius_px as f64;
    let side = 2 * cfg.source_radius_px + 1;

    let mut instances: Vec<KeypointInstance> = Vec::new();
    let mut footprints: Vec<[(f64, f64); 4]> = Vec::new();
    for _ in 0..n_patches {
        let type_id = rng.random_range(0..designs.len()) as u8;
        let black_level = rng.random_range(cfg.black_range[0]..=cfg.black_range[1]);
        let white_level = rng.random_range(cfg.white_range[0]..=cfg.white_range[1]);

        let mut accepted: Option<(Homography, [(f64, f64); 4])> = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let h = sample_patch_homography_with(
                rng,
                &constraints,
                &params,
                cfg.source_radius_px as f64,
            )?;
            let center = h.apply((src_center, src_center))?;
            let quad = warped_square_corners(&h, side)?;
            // Keep every keypoint on visible patch material: reject when the
            // new center lands on an existing patch or an existing center
            // would be painted over by the new one.
            let clashes = footprints.iter().any(|q| point_in_convex_quad(q, center))
                || instances
                    .iter()
                    .any(|inst| point_in_convex_quad(&quad, (inst.x, inst.y)));
            if !clashes {
                accepted = Some((h, quad));
                break;
            }
        }
        let Some((h, quad)) = accepted else {
            // Crowded image: drop this patch and move on.
            continue;
        };

        let raster = render_patch_opts(
            &designs[type_id as usize],
            cfg.source_radius_px,
            black_level,
            white_level,
            0.0,
            render_opts,
        )?;
        let ((x, y), radius_px) = warp_raster_onto(&h, &raster, &mut canvas)?;
        instances.push(KeypointInstance {
            x,
            y,
            type_id,
            radius_px,
            homography: h,
            black_level,
            white_level,
            source_radius_px: cfg.source_radius_px,
        });
        footprints.push(quad);
    }

    let degradations = if cfg.degrade_probability > 0.0 {
        degrade::sample_stack(rng, cfg.degrade_probability, &cfg.augment)
    } else {
        Vec::new()
    };
    let image = if degradations.is_empty() {
        canvas
    } else {
        degrade::apply_stack(&degradations, &canvas)?
    };

    Ok(SynthSample {
        image,
        annotation: SampleAnnotation {
            image_path: String::new(),
            image_size: [cfg.width, cfg.height],
            instances,
            degradations,
            background_source: backgrounds.describe(bg_index),
            background_index: bg_index as u64,
            seed: 0,
        },
    })
}

/// Rebuilds the pre-degradation composite of an annotation from its stored
/// instances: the replay path behind the stored-image contract
/// `stored == apply_stack(degradations, recomposite(...))`.
pub fn recomposite(
    ann: &SampleAnnotation,
    backgrounds: &dyn BackgroundSource,
    antialias: bool,
) -> Result<RgbImage> {
    let designs = canonical_designs();
    let mut canvas = backgrounds.load(
        ann.background_index as usize,
        ann.image_size[0],
        ann.image_size[1],
    )?;
    for inst in &ann.instances {
        let design = designs
            .get(inst.type_id as usize)
            .ok_or_else(|| Error::AnnotationInconsistent(format!("type id {}", inst.type_id)))?;
        let raster = render_patch_opts(
            design,
            inst.source_radius_px,
            inst.black_level,
            inst.white_level,
            0.0,
            RenderOptions { antialias },
        )?;
        warp_raster_onto(&inst.homography, &raster, &mut canvas)?;
    }
    Ok(canvas)
}

/// Per-cell supervision targets: detector class in 0..=64 (64 = dustbin) and
/// ID class in 0..=4 (4 = background), on the (H/8, W/8) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTargets {
    pub detector: Array2<u8>,
    pub id: Array2<u8>,
}

impl CellTargets {
    /// The dustbin/background agreement every target pair must satisfy.
    pub fn check_consistency(&self) -> Result<()> {
        if self.detector.dim() != self.id.dim() {
            return Err(Error::ShapeError(format!(
                "detector grid {:?} vs id grid {:?}",
                self.detector.dim(),
                self.id.dim()
            )));
        }
        for ((r, c), &det) in self.detector.indexed_iter() {
            let id = self.id[(r, c)];
            let dustbin = det == DUSTBIN_CLASS;
            let background = id == BACKGROUND_CLASS;
            if dustbin != background {
                return Err(Error::AnnotationInconsistent(format!(
                    "cell ({r},{c}): detector {det} vs id {id}"
                )));
            }
        }
        Ok(())
    }

    /// Decodes targets back to (x, y, type) keypoints at pixel resolution.
    pub fn decode(&self) -> Result<Vec<(u32, u32, u8)>> {
        self.check_consistency()?;
        let mut out = Vec::new();
        for ((r, c), &det) in self.detector.indexed_iter() {
            if det == DUSTBIN_CLASS {
                continue;
            }
            let x = c as u32 * CELL + (det % CELL as u8) as u32;
            let y = r as u32 * CELL + (det / CELL as u8) as u32;
            out.push((x, y, self.id[(r, c)]));
        }
        Ok(out)
    }
}

/// The per-cell surviving instance index under the tie-break rule: largest
/// radius first, then lowest instance index.
fn survivors(ann: &SampleAnnotation) -> Result<std::collections::HashMap<(usize, usize), usize>> {
    let [w, h] = ann.image_size;
    if w % CELL != 0 || h % CELL != 0 {
        return Err(Error::ShapeError(format!(
            "image size {w}x{h} not divisible by {CELL}"
        )));
    }
    let mut cells: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for (idx, inst) in ann.instances.iter().enumerate() {
        let px = inst.x.round() as i64;
        let py = inst.y.round() as i64;
        if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
            return Err(Error::AnnotationInconsistent(format!(
                "instance {idx} at ({}, {}) rounds outside the {w}x{h} image",
                inst.x, inst.y
            )));
        }
        let cell = ((py / CELL as i64) as usize, (px / CELL as i64) as usize);
        match cells.entry(cell) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(idx);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                let current = &ann.instances[*e.get()];
                if inst.radius_px > current.radius_px {
                    e.insert(idx);
                }
            }
        }
    }
    Ok(cells)
}

fn within_cell_class(inst: &KeypointInstance) -> u8 {
    let px = inst.x.round() as u32;
    let py = inst.y.round() as u32;
    ((py % CELL) * CELL + (px % CELL)) as u8
}

/// Detector supervision grid: within-cell pixel index of the surviving
/// keypoint, dustbin elsewhere.
pub fn make_detector_target(ann: &SampleAnnotation) -> Result<Array2<u8>> {
    let [w, h] = ann.image_size;
    let cells = survivors(ann)?;
    let mut grid = Array2::from_elem(((h / CELL) as usize, (w / CELL) as usize), DUSTBIN_CLASS);
    for (cell, idx) in cells {
        grid[cell] = within_cell_class(&ann.instances[idx]);
    }
    Ok(grid)
}

/// ID supervision grid: patch type of the surviving keypoint, background
/// elsewhere.
pub fn make_id_target(ann: &SampleAnnotation) -> Result<Array2<u8>> {
    let [w, h] = ann.image_size;
    let cells = survivors(ann)?;
    let mut grid = Array2::from_elem(((h / CELL) as usize, (w / CELL) as usize), BACKGROUND_CLASS);
    for (cell, idx) in cells {
        grid[cell] = ann.instances[idx].type_id;
    }
    Ok(grid)
}

/// Both grids from one survivor pass.
pub fn make_cell_targets(ann: &SampleAnnotation) -> Result<CellTargets> {
    let [w, h] = ann.image_size;
    let cells = survivors(ann)?;
    let shape = ((h / CELL) as usize, (w / CELL) as usize);
    let mut detector = Array2::from_elem(shape, DUSTBIN_CLASS);
    let mut id = Array2::from_elem(shape, BACKGROUND_CLASS);
    for (cell, idx) in cells {
        detector[cell] = within_cell_class(&ann.instances[idx]);
        id[cell] = ann.instances[idx].type_id;
    }
    Ok(CellTargets { detector, id })
}

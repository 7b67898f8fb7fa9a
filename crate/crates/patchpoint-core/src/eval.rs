//! Detection metrics, the prediction-to-ground-truth matching rule, and the
//! synthetic experiment harness: validation passes over a dataset and
//! parameter sweeps on hexagon-board scenes.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::backgrounds::{BackgroundSource, ProceduralCorpus};
use crate::dataset::Dataset;
use crate::degrade::{self, AugmentRanges, DegradationSpec};
use crate::geometry::{
    warp_raster_onto, warped_circle_axes, warped_square_corners, Homography,
};
use crate::model::{Detection, SuperPointNet};
use crate::patch::{canonical_designs, render_patch, PatchRaster};
use crate::rng::{child_rng, stream};
use crate::synth::KeypointInstance;
use crate::{Error, Result};

/// A detection counts as a hit when it lies within this fraction of the
/// instance's effective circle radius.
pub const EPSILON_RADIUS_FRACTION: f64 = 0.1;

/// Side of the square board raster the hexagon scenes are rendered from.
pub const BOARD_SOURCE_SIDE: u32 = 640;

/// Patch radius as a fraction of the board side. At the smallest sweep scale
/// (board = 0.5% of a 1624x1240 image) this puts the warped patch diameter at
/// about 16 px.
const BOARD_PATCH_RADIUS_FRACTION: f64 = 0.08;

/// Hexagon circumradius as a fraction of the board side. Keeps every patch
/// footprint inside the board with margin: 0.30 + 0.08 < 0.5.
const HEX_CIRCUMRADIUS_FRACTION: f64 = 0.30;

/// Camera distance proxy for the pitch foreshortening, as a multiple of the
/// scaled board extent. Bounds the perspective term so the board never nears
/// the horizon even at 60 degrees.
const PITCH_DISTANCE_FACTOR: f64 = 4.0;

fn board_patch_radius() -> u32 {
    (BOARD_PATCH_RADIUS_FRACTION * BOARD_SOURCE_SIDE as f64).round() as u32
}

/// Acceptance radius for an instance with the given effective circle radius.
pub fn keypoint_epsilon(radius_px: f64) -> f64 {
    EPSILON_RADIUS_FRACTION * radius_px
}

/// One-to-one assignment between predictions and ground-truth instances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// (prediction index, ground-truth index, distance px), ascending by
    /// distance. No index appears twice.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
    /// Acceptance radius per ground-truth instance, aligned with `gts`.
    pub epsilon_used: Vec<f64>,
}

/// Greedily pairs predictions with ground-truth instances by ascending
/// distance, considering only pairs within the instance's acceptance radius.
/// Ties break by prediction index, then ground-truth index.
pub fn match_detections(preds: &[Detection], gts: &[KeypointInstance]) -> MatchResult {
    let epsilon_used: Vec<f64> = gts.iter().map(|g| keypoint_epsilon(g.radius_px)).collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let d = (p.x - g.x).hypot(p.y - g.y);
            if d <= epsilon_used[j] {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, d));
        }
    }

    MatchResult {
        pairs,
        unmatched_predictions: (0..preds.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_ground_truth: (0..gts.len()).filter(|&j| !gt_used[j]).collect(),
        epsilon_used,
    }
}

/// Fraction of ground-truth instances that were matched. With no ground truth
/// the score is 1.0 on a clean image and 0.0 if anything was predicted;
/// spurious predictions otherwise count only as false alarms.
pub fn detection_score(m: &MatchResult, n_gt: usize) -> f64 {
    if n_gt == 0 {
        if m.pairs.is_empty() && m.unmatched_predictions.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        m.pairs.len() as f64 / n_gt as f64
    }
}

/// Fraction of matched pairs whose predicted type agrees with the ground
/// truth. Defined as 1.0 when there are no pairs.
pub fn id_matching_score(m: &MatchResult, preds: &[Detection], gts: &[KeypointInstance]) -> f64 {
    if m.pairs.is_empty() {
        return 1.0;
    }
    let hits = m
        .pairs
        .iter()
        .filter(|&&(i, j, _)| preds[i].type_id == gts[j].type_id)
        .count();
    hits as f64 / m.pairs.len() as f64
}

/// Unmatched predictions per image, averaged over the result set.
pub fn average_false_alarm(results: &[MatchResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidArgument(
            "false alarm rate needs at least one evaluated image".into(),
        ));
    }
    let total: usize = results.iter().map(|m| m.unmatched_predictions.len()).sum();
    Ok(total as f64 / results.len() as f64)
}

/// Aggregate scores over one evaluation condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection_score: f64,
    pub id_matching_score: f64,
    pub average_false_alarm: f64,
    pub n_images: u64,
    pub condition: String,
}

/// Micro-averaging accumulator: pools pair/instance counts across images so
/// the final ratios weight every instance equally.
#[derive(Clone, Debug, Default)]
pub struct EvalAccumulator {
    pairs: u64,
    id_hits: u64,
    ground_truth: u64,
    false_alarms: u64,
    images: u64,
}

impl EvalAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, preds: &[Detection], gts: &[KeypointInstance]) {
        let m = match_detections(preds, gts);
        self.add_match(&m, preds, gts);
    }

    pub fn add_match(&mut self, m: &MatchResult, preds: &[Detection], gts: &[KeypointInstance]) {
        self.pairs += m.pairs.len() as u64;
        self.id_hits += m
            .pairs
            .iter()
            .filter(|&&(i, j, _)| preds[i].type_id == gts[j].type_id)
            .count() as u64;
        self.ground_truth += gts.len() as u64;
        self.false_alarms += m.unmatched_predictions.len() as u64;
        self.images += 1;
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.pairs += other.pairs;
        self.id_hits += other.id_hits;
        self.ground_truth += other.ground_truth;
        self.false_alarms += other.false_alarms;
        self.images += other.images;
    }

    pub fn report(&self, condition: impl Into<String>) -> Result<EvalReport> {
        if self.images == 0 {
            return Err(Error::InvalidArgument(
                "cannot report scores over zero images".into(),
            ));
        }
        let detection_score = if self.ground_truth == 0 {
            if self.pairs == 0 && self.false_alarms == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.pairs as f64 / self.ground_truth as f64
        };
        let id_matching_score = if self.pairs == 0 {
            1.0
        } else {
            self.id_hits as f64 / self.pairs as f64
        };
        Ok(EvalReport {
            detection_score,
            id_matching_score,
            average_false_alarm: self.false_alarms as f64 / self.images as f64,
            n_images: self.images,
            condition: condition.into(),
        })
    }
}

/// Evaluates the model over the dataset twice with identical image indices:
/// once as stored and once with a per-image deterioration stack (blur, noise,
/// shadow, rain at 50% each). Returns (clean, deteriorated).
pub fn run_validation(
    net: &SuperPointNet,
    dataset: &Dataset,
    master_seed: u64,
    limit: Option<usize>,
) -> Result<(EvalReport, EvalReport)> {
    let n = dataset.len().min(limit.unwrap_or(usize::MAX) as u64);
    if n == 0 {
        return Err(Error::InvalidArgument(
            "validation dataset has no images".into(),
        ));
    }
    let ranges = AugmentRanges::default();
    let per_image: Vec<(EvalAccumulator, EvalAccumulator)> = (0..n)
        .into_par_iter()
        .map(|index| -> Result<(EvalAccumulator, EvalAccumulator)> {
            let ann = dataset.load_annotation(index)?;
            let img = dataset.load_image(index)?;

            let mut clean = EvalAccumulator::new();
            clean.add_image(&net.detect(&img)?, &ann.instances);

            let mut rng = child_rng(master_seed, stream::EVAL_DEGRADE, index, 0);
            let stack = degrade::sample_stack(&mut rng, 0.5, &ranges);
            let degraded = degrade::apply_stack(&stack, &img)?;
            let mut det = EvalAccumulator::new();
            det.add_image(&net.detect(&degraded)?, &ann.instances);

            Ok((clean, det))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clean = EvalAccumulator::new();
    let mut det = EvalAccumulator::new();
    for (c, d) in &per_image {
        clean.merge(c);
        det.merge(d);
    }
    Ok((clean.report("clean")?, det.report("deteriorated")?))
}

/// Sweep axis: which scene or degradation parameter the levels vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Board area as a percentage of the image.
    Scale,
    /// Out-of-plane tilt of the board, degrees.
    Pitch,
    /// Box blur kernel size, px.
    Blur,
    /// Dimming exponent k (intensity factor 0.6^k).
    Dimming,
    /// Additive noise standard deviation, levels.
    GaussianNoise,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Scale => "scale",
            SweepAxis::Pitch => "pitch",
            SweepAxis::Blur => "blur",
            SweepAxis::Dimming => "dimming",
            SweepAxis::GaussianNoise => "gaussian_noise",
        }
    }

    pub fn default_levels(self) -> Vec<f64> {
        match self {
            SweepAxis::Scale => vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            SweepAxis::Pitch => vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            SweepAxis::Blur => vec![3.0, 7.0, 11.0, 15.0],
            SweepAxis::Dimming => vec![10.0, 20.0, 30.0, 40.0],
            SweepAxis::GaussianNoise => vec![15.0, 30.0, 45.0, 60.0],
        }
    }
}

/// Printed board carrying six identical patches at the vertices of a regular
/// hexagon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HexBoardSpec {
    pub type_id: u8,
    /// Fraction of the image area the board occupies on axes that do not
    /// sweep scale.
    pub area_fraction: f64,
}

impl Default for HexBoardSpec {
    fn default() -> Self {
        HexBoardSpec {
            type_id: 0,
            area_fraction: 0.16,
        }
    }
}

impl HexBoardSpec {
    pub fn validate(&self) -> Result<()> {
        let designs = canonical_designs().len();
        if usize::from(self.type_id) >= designs {
            return Err(Error::InvalidArgument(format!(
                "board type_id {} out of range 0..{designs}",
                self.type_id
            )));
        }
        if !(self.area_fraction > 0.0 && self.area_fraction <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "board area fraction {} must lie in (0, 0.5]",
                self.area_fraction
            )));
        }
        Ok(())
    }

    /// Exact vertices of the regular hexagon on a square board raster of the
    /// given side. Adjacent vertex distances are equal by construction.
    pub fn vertices(side: u32) -> [(f64, f64); 6] {
        let c = (side as f64 - 1.0) / 2.0;
        let r = HEX_CIRCUMRADIUS_FRACTION * side as f64;
        std::array::from_fn(|k| {
            let angle = std::f64::consts::FRAC_PI_3 * k as f64;
            (c + r * angle.cos(), c + r * angle.sin())
        })
    }
}

fn default_images_per_level() -> u32 {
    500
}

fn default_sweep_image_size() -> [u32; 2] {
    [1624, 1240]
}

/// One sweep: a set of levels along one axis, evaluated on hexagon-board
/// scenes at the mirrored sensor resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default = "default_images_per_level")]
    pub images_per_level: u32,
    #[serde(default)]
    pub board: HexBoardSpec,
    #[serde(default = "default_sweep_image_size")]
    pub image_size: [u32; 2],
}

impl SweepSpec {
    pub fn for_axis(axis: SweepAxis) -> Self {
        SweepSpec {
            axis,
            levels: axis.default_levels(),
            images_per_level: default_images_per_level(),
            board: HexBoardSpec::default(),
            image_size: default_sweep_image_size(),
        }
    }

    /// Fills an empty level list with the axis defaults.
    pub fn with_default_levels(mut self) -> Self {
        if self.levels.is_empty() {
            self.levels = self.axis.default_levels();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.board.validate()?;
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("sweep has no levels".into()));
        }
        if self.images_per_level == 0 {
            return Err(Error::InvalidArgument(
                "images_per_level must be at least 1".into(),
            ));
        }
        let [w, h] = self.image_size;
        if w < 64 || h < 64 || w % 8 != 0 || h % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "sweep image size {w}x{h} must be at least 64 and divisible by 8"
            )));
        }
        for &level in &self.levels {
            if !level.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite sweep level {level}"
                )));
            }
            let ok = match self.axis {
                SweepAxis::Scale => level > 0.0 && level <= 50.0,
                SweepAxis::Pitch => (0.0..85.0).contains(&level),
                SweepAxis::Blur => level >= 1.0 && level.fract() == 0.0 && (level as u64) % 2 == 1,
                SweepAxis::Dimming | SweepAxis::GaussianNoise => level >= 0.0,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "level {level} is out of range for the {} axis",
                    self.axis.name()
                )));
            }
        }
        Ok(())
    }
}

/// One synthesized board image with its six ground-truth keypoints.
pub struct BoardScene {
    pub image: RgbImage,
    pub instances: Vec<KeypointInstance>,
    /// Board raster to image homography.
    pub homography: Homography,
}

fn render_board_raster(board: &HexBoardSpec) -> Result<PatchRaster> {
    board.validate()?;
    let side = BOARD_SOURCE_SIDE;
    let radius = board_patch_radius();
    let designs = canonical_designs();
    let patch = render_patch(&designs[board.type_id as usize], radius, 0, 255, 0.0)?;

    let mut canvas = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let vertices = HexBoardSpec::vertices(side);
    for &(vx, vy) in &vertices {
        let place = Homography::translation(vx - patch.center.0, vy - patch.center.1);
        warp_raster_onto(&place, &patch, &mut canvas)?;
    }
    let pixels = GrayImage::from_fn(side, side, |x, y| Luma([canvas.get_pixel(x, y).0[0]]));
    let c = (side as f64 - 1.0) / 2.0;
    Ok(PatchRaster {
        pixels,
        center: (c, c),
        radius_px: radius,
    })
}

fn polygon_area(quad: &[(f64, f64); 4]) -> f64 {
    let mut twice = 0.0;
    for i in 0..4 {
        let (x1, y1) = quad[i];
        let (x2, y2) = quad[(i + 1) % 4];
        twice += x1 * y2 - x2 * y1;
    }
    (twice / 2.0).abs()
}

fn pitch_homography(alpha_rad: f64, extent: f64) -> Result<Homography> {
    let d = PITCH_DISTANCE_FACTOR * extent;
    Homography::new([
        [d, 0.0, 0.0],
        [0.0, d * alpha_rad.cos(), 0.0],
        [0.0, -alpha_rad.sin(), d],
    ])
}

/// Board-to-image homography: center the board, scale it so the warped
/// footprint covers `area_fraction` of the image, foreshorten by the pitch
/// angle, rotate in plane, and translate to a random position that keeps the
/// whole footprint inside the image.
fn board_scene_homography(
    rng: &mut impl Rng,
    area_fraction: f64,
    pitch_deg: f64,
    image_size: (u32, u32),
) -> Result<Homography> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let side = BOARD_SOURCE_SIDE as f64;
    let target_area = area_fraction * w * h;
    let alpha = pitch_deg.to_radians();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);

    let rot = Homography::new([
        [theta.cos(), -theta.sin(), 0.0],
        [theta.sin(), theta.cos(), 0.0],
        [0.0, 0.0, 1.0],
    ])?;
    let center = (side - 1.0) / 2.0;
    let recenter = Homography::translation(-center, -center);

    // The pitch term is proportional to the scaled extent, so the warped
    // footprint scales exactly linearly in `s` and one correction step lands
    // on the target area. Iterate a few times to absorb rounding.
    let shape_for = |s: f64| -> Result<Homography> {
        let scale = Homography::new([[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]])?;
        let pitch = pitch_homography(alpha, s * side)?;
        rot.compose(&pitch)?.compose(&scale)?.compose(&recenter)
    };
    let mut s = target_area.sqrt() / side;
    for _ in 0..4 {
        let corners = warped_square_corners(&shape_for(s)?, BOARD_SOURCE_SIDE)?;
        let area = polygon_area(&corners);
        if !(area.is_finite() && area > 0.0) {
            return Err(Error::NumericError(format!(
                "degenerate board footprint area {area}"
            )));
        }
        s *= (target_area / area).sqrt();
    }

    let shape = shape_for(s)?;
    let corners = warped_square_corners(&shape, BOARD_SOURCE_SIDE)?;
    let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);

    let margin = 1.0;
    let lo_x = margin - min_x;
    let hi_x = w - margin - max_x;
    let lo_y = margin - min_y;
    let hi_y = h - margin - max_y;
    if lo_x > hi_x || lo_y > hi_y {
        return Err(Error::ConstraintInfeasible(format!(
            "board footprint {:.0}x{:.0} does not fit a {w}x{h} image",
            max_x - min_x,
            max_y - min_y
        )));
    }
    let tx = rng.random_range(lo_x..=hi_x);
    let ty = rng.random_range(lo_y..=hi_y);
    Homography::translation(tx, ty).compose(&shape)
}

/// Ground-truth keypoints of the six board vertices seen through `h`.
pub fn board_vertex_instances(
    board: &HexBoardSpec,
    h: &Homography,
) -> Result<Vec<KeypointInstance>> {
    let radius = board_patch_radius();
    let rf = f64::from(radius);
    HexBoardSpec::vertices(BOARD_SOURCE_SIDE)
        .iter()
        .map(|&(vx, vy)| {
            let (x, y) = h.apply((vx, vy))?;
            let axes = warped_circle_axes(h, (vx, vy), rf)?;
            let homography = h.compose(&Homography::translation(vx - rf, vy - rf))?;
            Ok(KeypointInstance {
                x,
                y,
                type_id: board.type_id,
                radius_px: axes.geometric_mean_radius(),
                homography,
                black_level: 0,
                white_level: 255,
                source_radius_px: radius,
            })
        })
        .collect()
}

/// Renders the hexagon board onto `canvas` at the given area fraction and
/// pitch, with a random in-plane rotation and position.
pub fn synthesize_board_scene(
    board: &HexBoardSpec,
    area_fraction: f64,
    pitch_deg: f64,
    mut canvas: RgbImage,
    rng: &mut impl Rng,
) -> Result<BoardScene> {
    let raster = render_board_raster(board)?;
    if !(area_fraction > 0.0 && area_fraction <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "board area fraction {area_fraction} must lie in (0, 0.5]"
        )));
    }
    let h = board_scene_homography(rng, area_fraction, pitch_deg, canvas.dimensions())?;
    warp_raster_onto(&h, &raster, &mut canvas)?;
    let instances = board_vertex_instances(board, &h)?;
    Ok(BoardScene {
        image: canvas,
        instances,
        homography: h,
    })
}

fn level_geometry(spec: &SweepSpec, level: f64) -> (f64, f64) {
    match spec.axis {
        SweepAxis::Scale => (level / 100.0, 0.0),
        SweepAxis::Pitch => (spec.board.area_fraction, level),
        _ => (spec.board.area_fraction, 0.0),
    }
}

fn level_degradations(axis: SweepAxis, level: f64, rng: &mut impl Rng) -> Vec<DegradationSpec> {
    match axis {
        SweepAxis::Scale | SweepAxis::Pitch => Vec::new(),
        SweepAxis::Blur => vec![DegradationSpec::BoxBlur {
            kernel_px: level as u32,
        }],
        SweepAxis::Dimming => vec![DegradationSpec::Dimming { k: level }],
        SweepAxis::GaussianNoise => vec![DegradationSpec::GaussianNoise {
            sigma: level,
            seed: rng.next_u64(),
        }],
    }
}

fn level_condition(axis: SweepAxis, level: f64) -> String {
    match axis {
        SweepAxis::Scale => format!("scale={level}%"),
        SweepAxis::Pitch => format!("pitch={level}deg"),
        SweepAxis::Blur => format!("blur={level}"),
        SweepAxis::Dimming => format!("dimming={level}"),
        SweepAxis::GaussianNoise => format!("noise={level}"),
    }
}

/// Evaluates one sweep level: synthesizes `images_per_level` board scenes,
/// applies the level's degradation, runs `detect`, and scores against the six
/// vertex keypoints. The detector also receives the ground truth so oracle
/// stubs can be swept through the same pipeline.
pub fn run_sweep_level<F>(
    spec: &SweepSpec,
    level_index: usize,
    master_seed: u64,
    background: &dyn BackgroundSource,
    detect: &F,
) -> Result<EvalReport>
where
    F: Fn(&RgbImage, &[KeypointInstance]) -> Result<Vec<Detection>> + Sync,
{
    spec.validate()?;
    let level = *spec.levels.get(level_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "level index {level_index} out of range 0..{}",
            spec.levels.len()
        ))
    })?;
    if background.is_empty() {
        return Err(Error::EmptyCorpus("sweep background source".into()));
    }
    let (area_fraction, pitch_deg) = level_geometry(spec, level);
    let [w, h] = spec.image_size;

    let per_image: Vec<EvalAccumulator> = (0..u64::from(spec.images_per_level))
        .into_par_iter()
        .map(|i| -> Result<EvalAccumulator> {
            let mut rng = child_rng(master_seed, stream::SWEEP_SCENE, level_index as u64, i);
            let bg_index =
                (level_index as u64 * u64::from(spec.images_per_level) + i) as usize
                    % background.len();
            let canvas = background.load(bg_index, w, h)?;
            let scene = synthesize_board_scene(&spec.board, area_fraction, pitch_deg, canvas, &mut rng)?;
            let stack = level_degradations(spec.axis, level, &mut rng);
            let image = if stack.is_empty() {
                scene.image
            } else {
                degrade::apply_stack(&stack, &scene.image)?
            };
            let preds = detect(&image, &scene.instances)?;
            let mut acc = EvalAccumulator::new();
            acc.add_image(&preds, &scene.instances);
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut acc = EvalAccumulator::new();
    for a in &per_image {
        acc.merge(a);
    }
    acc.report(level_condition(spec.axis, level))
}

/// Runs every level of the sweep with a custom detector.
pub fn run_sweep_with<F>(
    spec: &SweepSpec,
    master_seed: u64,
    background: &dyn BackgroundSource,
    detect: F,
) -> Result<Vec<EvalReport>>
where
    F: Fn(&RgbImage, &[KeypointInstance]) -> Result<Vec<Detection>> + Sync,
{
    spec.validate()?;
    (0..spec.levels.len())
        .map(|idx| run_sweep_level(spec, idx, master_seed, background, &detect))
        .collect()
}

/// Runs the sweep with the network as the detector, over procedurally
/// generated backgrounds derived from the master seed.
pub fn run_sweep(net: &SuperPointNet, spec: &SweepSpec, master_seed: u64) -> Result<Vec<EvalReport>> {
    spec.validate()?;
    let total = spec.levels.len() * spec.images_per_level as usize;
    let backgrounds = ProceduralCorpus::new(total, master_seed);
    run_sweep_with(spec, master_seed, &backgrounds, |img, _| net.detect(img))
}

/// Per-vertex verdicts of the hexagon consistency rule: each detection is a
/// vertex hit or a false positive, and unseen vertices are misses.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// (vertex index, detection index, distance px).
    pub vertex_hits: Vec<(usize, usize, f64)>,
    pub missed_vertices: Vec<usize>,
    pub false_positives: Vec<usize>,
}

/// Projects the six true vertices through `h` and classifies detections
/// against them with the standard acceptance radius.
pub fn hexagon_consistency_check(
    detections: &[Detection],
    board: &HexBoardSpec,
    h: &Homography,
) -> Result<ConsistencyReport> {
    let instances = board_vertex_instances(board, h)?;
    let m = match_detections(detections, &instances);
    Ok(ConsistencyReport {
        vertex_hits: m.pairs.iter().map(|&(i, j, d)| (j, i, d)).collect(),
        missed_vertices: m.unmatched_ground_truth,
        false_positives: m.unmatched_predictions,
    })
}

/// One row per metric, one column per level.
pub fn sweep_reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric");
    for r in reports {
        let _ = write!(out, ",{}", r.condition);
    }
    out.push('\n');
    let rows: [(&str, fn(&EvalReport) -> f64); 3] = [
        ("detection_score", |r| r.detection_score),
        ("id_matching_score", |r| r.id_matching_score),
        ("average_false_alarm", |r| r.average_false_alarm),
    ];
    for (name, get) in rows {
        out.push_str(name);
        for r in reports {
            let _ = write!(out, ",{:.4}", get(r));
        }
        out.push('\n');
    }
    out
}

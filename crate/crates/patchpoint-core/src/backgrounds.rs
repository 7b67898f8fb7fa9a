//! Background image sources for scene synthesis: a directory corpus of real
//! photographs, or a procedural generator when no corpus is available.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;

use crate::rng::{child_rng, stream};
use crate::{Error, Result};

/// A source of background images. `load` returns an image of exactly the
/// requested size; sources are indexable so sample i's background never
/// depends on how many other samples were drawn.
pub trait BackgroundSource: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stable identifier of entry `index`, recorded in annotations.
    fn describe(&self, index: usize) -> String;

    fn load(&self, index: usize, width: u32, height: u32) -> Result<RgbImage>;
}

/// A directory of image files, sorted by name for stable indexing.
pub struct DirCorpus {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl DirCorpus {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mut files = Vec::new();
        let entries = std::fs::read_dir(&root).map_err(|e| {
            Error::EmptyCorpus(format!("cannot read {}: {e}", root.display()))
        })?;
        for entry in entries {
            let path = entry?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg" | "bmp")) {
                files.push(path);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no usable images under {}",
                root.display()
            )));
        }
        Ok(DirCorpus { root, files })
    }
}

impl BackgroundSource for DirCorpus {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn describe(&self, index: usize) -> String {
        self.files[index]
            .strip_prefix(&self.root)
            .unwrap_or(&self.files[index])
            .to_string_lossy()
            .into_owned()
    }

    fn load(&self, index: usize, width: u32, height: u32) -> Result<RgbImage> {
        let img = image::open(&self.files[index])?.to_rgb8();
        Ok(aspect_fill(&img, width, height))
    }
}

/// Resizes with aspect-fill then center-crops to exactly (width, height).
pub fn aspect_fill(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = img.dimensions();
    if (sw, sh) == (width, height) {
        return img.clone();
    }
    let scale = (width as f64 / sw as f64).max(height as f64 / sh as f64);
    let rw = ((sw as f64 * scale).ceil() as u32).max(width);
    let rh = ((sh as f64 * scale).ceil() as u32).max(height);
    let resized = image::imageops::resize(img, rw, rh, image::imageops::FilterType::Triangle);
    let x0 = (rw - width) / 2;
    let y0 = (rh - height) / 2;
    image::imageops::crop_imm(&resized, x0, y0, width, height).to_image()
}

/// Procedurally generated backgrounds: corner-color gradients with random
/// soft shapes and a little pixel noise. Entirely determined by (seed, index).
pub struct ProceduralCorpus {
    pub count: usize,
    pub seed: u64,
}

impl ProceduralCorpus {
    pub fn new(count: usize, seed: u64) -> Self {
        ProceduralCorpus { count, seed }
    }
}

impl BackgroundSource for ProceduralCorpus {
    fn len(&self) -> usize {
        self.count
    }

    fn describe(&self, index: usize) -> String {
        format!("procedural:{}:{index}", self.seed)
    }

    fn load(&self, index: usize, width: u32, height: u32) -> Result<RgbImage> {
        if index >= self.count {
            return Err(Error::InvalidArgument(format!(
                "background index {index} out of range 0..{}",
                self.count
            )));
        }
        let mut rng = child_rng(self.seed, stream::BACKGROUND, index as u64, 0);
        Ok(procedural_background(&mut rng, width, height))
    }
}

fn procedural_background(rng: &mut impl Rng, width: u32, height: u32) -> RgbImage {
    let corners: [[f64; 3]; 4] = std::array::from_fn(|_| {
        std::array::from_fn(|_| rng.random_range(30.0..230.0))
    });
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        let u = x as f64 / (width - 1).max(1) as f64;
        let v = y as f64 / (height - 1).max(1) as f64;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let top = corners[0][c] * (1.0 - u) + corners[1][c] * u;
            let bottom = corners[2][c] * (1.0 - u) + corners[3][c] * u;
            px[c] = (top * (1.0 - v) + bottom * v).round() as u8;
        }
        image::Rgb(px)
    });

    let n_shapes = rng.random_range(8..24);
    for _ in 0..n_shapes {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(0.03..0.25) * width as f64;
        let ry = rng.random_range(0.03..0.25) * height as f64;
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(10.0..245.0));
        let alpha = rng.random_range(0.35..0.9);
        let rectangular = rng.random::<f64>() < 0.4;
        let x_lo = ((cx - rx).floor().max(0.0)) as u32;
        let x_hi = ((cx + rx).ceil().min(width as f64 - 1.0)) as u32;
        let y_lo = ((cy - ry).floor().max(0.0)) as u32;
        let y_hi = ((cy + ry).ceil().min(height as f64 - 1.0)) as u32;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if rectangular {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                } else {
                    dx * dx + dy * dy <= 1.0
                };
                if !inside {
                    continue;
                }
                let p = img.get_pixel_mut(x, y);
                for c in 0..3 {
                    let blended = p.0[c] as f64 * (1.0 - alpha) + color[c] * alpha;
                    p.0[c] = blended.round() as u8;
                }
            }
        }
    }

    let noise_amp = rng.random_range(0.0..6.0);
    if noise_amp > 0.0 {
        for p in img.pixels_mut() {
            let n = rng.random_range(-noise_amp..=noise_amp);
            for c in 0..3 {
                p.0[c] = (p.0[c] as f64 + n).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

//! Minimal CHW tensor ops for the conv net: 3x3 same-padding convolution via
//! row-tiled im2col + matrix multiply, 1x1 convolution as a plain matmul,
//! ReLU, and 2x2 max pooling, each with a hand-derived backward pass.
//!
//! Everything is f32 and single-image (no batch axis); the trainer loops over
//! the batch and accumulates gradients in a deterministic order.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array3, ArrayView3, Axis};

use crate::{Error, Result};

/// Weights of one convolution layer. 3x3 kernels are stored flattened as
/// (c_out, c_in * 9) so forward and backward are single matrix products;
/// 1x1 kernels as (c_out, c_in).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvParams {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        assert!(kernel == 1 || kernel == 3, "only 1x1 and 3x3 kernels");
        ConvParams {
            w: Array2::zeros((c_out, c_in * kernel * kernel)),
            b: Array1::zeros(c_out),
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Checks an incoming weight blob shape against this layer.
    pub fn check_shapes(&self, w_len: usize, b_len: usize, name: &str) -> Result<()> {
        if w_len != self.w.len() || b_len != self.b.len() {
            return Err(Error::WeightMismatch(format!(
                "layer {name}: got {w_len}+{b_len} values, expected {}+{}",
                self.w.len(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Gradients for one layer, same shapes as the parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl ConvGrads {
    pub fn zeros_like(p: &ConvParams) -> Self {
        ConvGrads {
            w: Array2::zeros(p.w.dim()),
            b: Array1::zeros(p.b.dim()),
        }
    }

    pub fn norm(&self) -> f64 {
        let wsq: f64 = self.w.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let bsq: f64 = self.b.iter().map(|&v| (v as f64) * (v as f64)).sum();
        (wsq + bsq).sqrt()
    }
}

/// Rows per im2col tile, sized to keep the tile buffer modest at the widest
/// layer (128 channels at sensor widths).
fn tile_rows(c_in: usize, w: usize) -> usize {
    const BUDGET: usize = 8 << 20; // 8 MiB of f32 columns per tile
    (BUDGET / (c_in * 9 * w * 4)).clamp(1, 64)
}

/// Fills `cols` (c_in*9, rows*w) with the padded 3x3 neighborhoods of image
/// rows [y0, y0+rows).
fn im2col_rows(x: &ArrayView3<f32>, y0: usize, rows: usize, cols: &mut Array2<f32>) {
    let (c_in, h, w) = x.dim();
    debug_assert_eq!(cols.dim(), (c_in * 9, rows * w));
    let xs = x.as_slice().expect("input must be standard layout");
    let cs = cols.as_slice_mut().expect("cols is standard layout");
    let tile_len = rows * w;
    for c in 0..c_in {
        let plane = &xs[c * h * w..(c + 1) * h * w];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row_base = (c * 9 + ky * 3 + kx) * tile_len;
                for r in 0..rows {
                    let sy = (y0 + r) as isize + ky as isize - 1;
                    let dst = &mut cs[row_base + r * w..row_base + (r + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            // Shift right: dst[0] is the left pad.
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` (the gradient of the im2col view) back into `dx`.
fn col2im_rows(dx: &mut Array3<f32>, y0: usize, rows: usize, cols: &Array2<f32>) {
    let (c_in, h, w) = dx.dim();
    let tile_len = rows * w;
    let cs = cols.as_slice().expect("cols is standard layout");
    let dxs = dx.as_slice_mut().expect("dx is standard layout");
    for c in 0..c_in {
        let plane = &mut dxs[c * h * w..(c + 1) * h * w];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row_base = (c * 9 + ky * 3 + kx) * tile_len;
                for r in 0..rows {
                    let sy = (y0 + r) as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &cs[row_base + r * w..row_base + (r + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for i in 1..w {
                                dst[i - 1] += src[i];
                            }
                        }
                        1 => {
                            for i in 0..w {
                                dst[i] += src[i];
                            }
                        }
                        _ => {
                            for i in 0..w - 1 {
                                dst[i + 1] += src[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution with padding 1 and stride 1.
pub fn conv3x3(x: &ArrayView3<f32>, p: &ConvParams) -> Array3<f32> {
    debug_assert_eq!(p.kernel, 3);
    let (c_in, h, w) = x.dim();
    debug_assert_eq!(c_in, p.c_in);
    let mut y = Array3::zeros((p.c_out, h, w));
    let tile = tile_rows(c_in, w);
    let mut cols = Array2::zeros((c_in * 9, tile * w));
    let mut out_tile = Array2::zeros((p.c_out, tile * w));
    let mut y0 = 0;
    while y0 < h {
        let rows = tile.min(h - y0);
        if rows != tile {
            // Last partial tile: shrink the scratch buffers once.
            cols = Array2::zeros((c_in * 9, rows * w));
            out_tile = Array2::zeros((p.c_out, rows * w));
        }
        im2col_rows(x, y0, rows, &mut cols);
        general_mat_mul(1.0, &p.w, &cols.view(), 0.0, &mut out_tile.view_mut());
        for (o, bias) in p.b.iter().enumerate() {
            let mut dst = y.slice_mut(ndarray::s![o, y0..y0 + rows, ..]);
            let src = out_tile.row(o);
            let src = src.to_shape((rows, w)).unwrap();
            dst.assign(&src);
            dst += *bias;
        }
        y0 += rows;
    }
    y
}

/// Backward pass of `conv3x3`: input gradient plus parameter gradients.
pub fn conv3x3_backward(
    x: &ArrayView3<f32>,
    p: &ConvParams,
    dy: &ArrayView3<f32>,
) -> (Array3<f32>, ConvGrads) {
    let (c_in, h, w) = x.dim();
    let c_out = p.c_out;
    debug_assert_eq!(dy.dim(), (c_out, h, w));
    let mut grads = ConvGrads::zeros_like(p);
    let mut dx = Array3::zeros((c_in, h, w));

    for (o, g) in grads.b.iter_mut().enumerate() {
        *g = dy.index_axis(Axis(0), o).sum();
    }

    let tile = tile_rows(c_in, w);
    let mut cols = Array2::zeros((c_in * 9, tile * w));
    let mut dy_tile = Array2::zeros((c_out, tile * w));
    let mut dcols = Array2::zeros((c_in * 9, tile * w));
    let mut y0 = 0;
    while y0 < h {
        let rows = tile.min(h - y0);
        if rows != tile {
            cols = Array2::zeros((c_in * 9, rows * w));
            dy_tile = Array2::zeros((c_out, rows * w));
            dcols = Array2::zeros((c_in * 9, rows * w));
        }
        im2col_rows(x, y0, rows, &mut cols);
        for o in 0..c_out {
            let src = dy.slice(ndarray::s![o, y0..y0 + rows, ..]);
            let flat = src.to_shape(rows * w).unwrap();
            dy_tile.row_mut(o).assign(&flat);
        }
        general_mat_mul(1.0, &dy_tile.view(), &cols.view().reversed_axes(), 1.0, &mut grads.w);
        general_mat_mul(
            1.0,
            &p.w.view().reversed_axes(),
            &dy_tile.view(),
            0.0,
            &mut dcols.view_mut(),
        );
        col2im_rows(&mut dx, y0, rows, &dcols);
        y0 += rows;
    }
    (dx, grads)
}

/// 1x1 convolution: a channel-mixing matmul.
pub fn conv1x1(x: &ArrayView3<f32>, p: &ConvParams) -> Array3<f32> {
    debug_assert_eq!(p.kernel, 1);
    let (c_in, h, w) = x.dim();
    debug_assert_eq!(c_in, p.c_in);
    let x2 = x.to_shape((c_in, h * w)).expect("standard layout");
    let mut y2 = Array2::zeros((p.c_out, h * w));
    general_mat_mul(1.0, &p.w, &x2.view(), 0.0, &mut y2);
    for (o, bias) in p.b.iter().enumerate() {
        y2.row_mut(o).iter_mut().for_each(|v| *v += bias);
    }
    y2.into_shape_with_order((p.c_out, h, w)).unwrap()
}

pub fn conv1x1_backward(
    x: &ArrayView3<f32>,
    p: &ConvParams,
    dy: &ArrayView3<f32>,
) -> (Array3<f32>, ConvGrads) {
    let (c_in, h, w) = x.dim();
    let c_out = p.c_out;
    let x2 = x.to_shape((c_in, h * w)).expect("standard layout");
    let dy2 = dy.to_shape((c_out, h * w)).expect("standard layout");
    let mut grads = ConvGrads::zeros_like(p);
    for (o, g) in grads.b.iter_mut().enumerate() {
        *g = dy2.row(o).sum();
    }
    general_mat_mul(1.0, &dy2.view(), &x2.view().reversed_axes(), 0.0, &mut grads.w);
    let mut dx2 = Array2::zeros((c_in, h * w));
    general_mat_mul(1.0, &p.w.view().reversed_axes(), &dy2.view(), 0.0, &mut dx2);
    (dx2.into_shape_with_order((c_in, h, w)).unwrap(), grads)
}

pub fn relu_inplace(x: &mut Array3<f32>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Masks `dy` by the post-ReLU activation `y`: gradient flows only where the
/// unit was active.
pub fn relu_backward_inplace(dy: &mut Array3<f32>, y: &ArrayView3<f32>) {
    azip_mask(dy, y);
}

fn azip_mask(dy: &mut Array3<f32>, y: &ArrayView3<f32>) {
    ndarray::Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
}

/// 2x2 max pooling with stride 2. Returns the pooled map and the argmax index
/// (0..4, row-major within the window) needed by the backward pass. Ties keep
/// the first maximum in scan order.
pub fn maxpool2(x: &ArrayView3<f32>) -> (Array3<f32>, Array3<u8>) {
    let (c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dims");
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array3::zeros((c, ho, wo));
    let mut idx = Array3::zeros((c, ho, wo));
    for ch in 0..c {
        for r in 0..ho {
            for col in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut best_k = 0u8;
                for k in 0..4u8 {
                    let dy = (k / 2) as usize;
                    let dx = (k % 2) as usize;
                    let v = x[(ch, 2 * r + dy, 2 * col + dx)];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                y[(ch, r, col)] = best;
                idx[(ch, r, col)] = best_k;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward(
    dy: &ArrayView3<f32>,
    idx: &Array3<u8>,
    input_dim: (usize, usize, usize),
) -> Array3<f32> {
    let (c, ho, wo) = dy.dim();
    debug_assert_eq!(idx.dim(), (c, ho, wo));
    let mut dx = Array3::zeros(input_dim);
    for ch in 0..c {
        for r in 0..ho {
            for col in 0..wo {
                let k = idx[(ch, r, col)];
                let dyv = dy[(ch, r, col)];
                dx[(ch, 2 * r + (k / 2) as usize, 2 * col + (k % 2) as usize)] += dyv;
            }
        }
    }
    dx
}

//! Deterministic context encoder.
//!
//! Substitutes the heavyweight perception stack with something the policy
//! can train through: pooled patch statistics of the depth map pass through
//! a learned linear map and are added to pooled RGB intensities; the fused
//! vector is concatenated with a one-hot task token and the conditioning
//! hand state, and a second learned linear map produces the embedding `z`.
//! Both maps receive gradients from the flow-matching loss.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::dataset::RgbImage;
use crate::handmodel::HAND_PARAM_DIM;
use crate::renderer::DepthMap;

/// Pooling grid resolution (per axis).
pub const POOL_GRID: usize = 8;

/// Depth feature width: mean and min of the valid depths per cell.
pub const DEPTH_FEAT_DIM: usize = POOL_GRID * POOL_GRID * 2;

/// RGB feature width: mean intensity per cell.
pub const RGB_FEAT_DIM: usize = POOL_GRID * POOL_GRID;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("depth map is {depth:?} but rgb raster is {rgb:?}")]
    ShapeMismatch { depth: (u32, u32), rgb: (u32, u32) },
    #[error("hand state must have {HAND_PARAM_DIM} entries, got {0}")]
    BadStateLength(usize),
    #[error("task token {got} out of range (encoder has {tokens} tokens)")]
    BadToken { got: u8, tokens: usize },
}

/// Pools mean and min of the valid depths over an 8x8 grid. Cells with no
/// valid pixel contribute zeros, so a fully empty map yields the zero
/// feature vector.
pub fn pool_depth(map: &DepthMap) -> DVector<f64> {
    let mut out = DVector::zeros(DEPTH_FEAT_DIM);
    let (w, h) = (map.width() as usize, map.height() as usize);
    for gy in 0..POOL_GRID {
        for gx in 0..POOL_GRID {
            let x0 = gx * w / POOL_GRID;
            let x1 = (gx + 1) * w / POOL_GRID;
            let y0 = gy * h / POOL_GRID;
            let y1 = (gy + 1) * h / POOL_GRID;
            let mut sum = 0.0;
            let mut min = f64::INFINITY;
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    if map.validity()[i] {
                        let d = map.data()[i] as f64;
                        sum += d;
                        min = min.min(d);
                        n += 1;
                    }
                }
            }
            let cell = 2 * (gy * POOL_GRID + gx);
            if n > 0 {
                out[cell] = sum / n as f64;
                out[cell + 1] = min;
            }
        }
    }
    out
}

/// Pools mean pixel intensity over an 8x8 grid.
pub fn pool_rgb(img: &RgbImage) -> DVector<f64> {
    let mut out = DVector::zeros(RGB_FEAT_DIM);
    let (w, h) = (img.width() as usize, img.height() as usize);
    for gy in 0..POOL_GRID {
        for gx in 0..POOL_GRID {
            let x0 = gx * w / POOL_GRID;
            let x1 = (gx + 1) * w / POOL_GRID;
            let y0 = gy * h / POOL_GRID;
            let y1 = (gy + 1) * h / POOL_GRID;
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += img.intensity(x as u32, y as u32);
                    n += 1;
                }
            }
            if n > 0 {
                out[gy * POOL_GRID + gx] = sum / n as f64;
            }
        }
    }
    out
}

/// Fixed-length conditioning embedding.
pub type ContextEmbedding = DVector<f64>;

/// Gradients of the two learned maps.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub w_depth: DMatrix<f64>,
    pub b_depth: DVector<f64>,
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &ContextEncoder) -> Self {
        EncoderGrads {
            w_depth: DMatrix::zeros(enc.w_depth.nrows(), enc.w_depth.ncols()),
            b_depth: DVector::zeros(enc.b_depth.len()),
            w_out: DMatrix::zeros(enc.w_out.nrows(), enc.w_out.ncols()),
            b_out: DVector::zeros(enc.b_out.len()),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w_depth.iter_mut().for_each(|x| *x *= s);
        self.b_depth.iter_mut().for_each(|x| *x *= s);
        self.w_out.iter_mut().for_each(|x| *x *= s);
        self.b_out.iter_mut().for_each(|x| *x *= s);
    }

    /// Same parameter order as [`ContextEncoder::params`].
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w_depth
            .iter()
            .chain(self.b_depth.iter())
            .chain(self.w_out.iter())
            .chain(self.b_out.iter())
    }
}

/// The two-map encoder. `z = W_out [fused; onehot(token); h_k] + b_out`
/// with `fused = W_depth * depth_feat + b_depth + rgb_feat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoder {
    pub z_dim: usize,
    pub num_tokens: usize,
    pub(crate) w_depth: DMatrix<f64>,
    pub(crate) b_depth: DVector<f64>,
    pub(crate) w_out: DMatrix<f64>,
    pub(crate) b_out: DVector<f64>,
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

impl ContextEncoder {
    pub fn new(z_dim: usize, num_tokens: usize, rng: &mut impl Rng) -> Self {
        let fused = RGB_FEAT_DIM;
        let in_out = fused + num_tokens + HAND_PARAM_DIM;
        ContextEncoder {
            z_dim,
            num_tokens,
            w_depth: glorot(fused, DEPTH_FEAT_DIM, rng),
            b_depth: DVector::zeros(fused),
            w_out: glorot(z_dim, in_out, rng),
            b_out: DVector::zeros(z_dim),
        }
    }

    pub(crate) fn from_parts(
        z_dim: usize,
        num_tokens: usize,
        w_depth: DMatrix<f64>,
        b_depth: DVector<f64>,
        w_out: DMatrix<f64>,
        b_out: DVector<f64>,
    ) -> Self {
        ContextEncoder { z_dim, num_tokens, w_depth, b_depth, w_out, b_out }
    }

    /// Full path from raw observations.
    pub fn encode(
        &self,
        depth: &DepthMap,
        rgb: &RgbImage,
        token: u8,
        h_k: &[f64],
    ) -> Result<ContextEmbedding, ContextError> {
        if depth.width() != rgb.width() || depth.height() != rgb.height() {
            return Err(ContextError::ShapeMismatch {
                depth: (depth.width(), depth.height()),
                rgb: (rgb.width(), rgb.height()),
            });
        }
        if h_k.len() != HAND_PARAM_DIM {
            return Err(ContextError::BadStateLength(h_k.len()));
        }
        if token as usize >= self.num_tokens {
            return Err(ContextError::BadToken { got: token, tokens: self.num_tokens });
        }
        Ok(self.encode_features(&pool_depth(depth), &pool_rgb(rgb), token, h_k))
    }

    /// Fast path over precomputed pooled features.
    pub fn encode_features(
        &self,
        depth_feat: &DVector<f64>,
        rgb_feat: &DVector<f64>,
        token: u8,
        h_k: &[f64],
    ) -> ContextEmbedding {
        let u = self.stack_input(depth_feat, rgb_feat, token, h_k);
        &self.w_out * u + &self.b_out
    }

    fn stack_input(
        &self,
        depth_feat: &DVector<f64>,
        rgb_feat: &DVector<f64>,
        token: u8,
        h_k: &[f64],
    ) -> DVector<f64> {
        let fused = &self.w_depth * depth_feat + &self.b_depth + rgb_feat;
        let mut u = DVector::zeros(self.w_out.ncols());
        u.rows_mut(0, RGB_FEAT_DIM).copy_from(&fused);
        u[RGB_FEAT_DIM + token as usize] = 1.0;
        u.rows_mut(RGB_FEAT_DIM + self.num_tokens, HAND_PARAM_DIM)
            .copy_from_slice(h_k);
        u
    }

    /// The depth branch alone: `W_depth * feat + b_depth`.
    pub fn depth_branch(&self, depth_feat: &DVector<f64>) -> DVector<f64> {
        &self.w_depth * depth_feat + &self.b_depth
    }

    pub fn depth_bias(&self) -> &DVector<f64> {
        &self.b_depth
    }

    /// Accumulates parameter gradients for one sample given `dL/dz`. The
    /// forward inputs are passed back in because both maps are linear.
    pub fn backward_into(
        &self,
        depth_feat: &DVector<f64>,
        rgb_feat: &DVector<f64>,
        token: u8,
        h_k: &[f64],
        dz: &DVector<f64>,
        grads: &mut EncoderGrads,
    ) {
        let u = self.stack_input(depth_feat, rgb_feat, token, h_k);
        grads.w_out += dz * u.transpose();
        grads.b_out += dz;
        let d_fused = self.w_out.columns(0, RGB_FEAT_DIM).transpose() * dz;
        grads.w_depth += &d_fused * depth_feat.transpose();
        grads.b_depth += d_fused;
    }

    /// Deterministic iteration order of the trainable parameters:
    /// `w_depth`, `b_depth`, `w_out`, `b_out`, column-major within each.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w_depth
            .iter()
            .chain(self.b_depth.iter())
            .chain(self.w_out.iter())
            .chain(self.b_out.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_depth
            .iter_mut()
            .chain(self.b_depth.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_out.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.w_depth.len() + self.b_depth.len() + self.w_out.len() + self.b_out.len()
    }

    pub(crate) fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.w_depth.nrows(),
            self.w_depth.ncols(),
            self.w_out.nrows(),
            self.w_out.ncols(),
        )
    }

    /// Spectral-norm bound on `||dz||` per unit of per-pixel depth
    /// perturbation, before the grid-size factor.
    pub fn depth_lipschitz_bound(&self) -> f64 {
        let s_out = self
            .w_out
            .columns(0, RGB_FEAT_DIM)
            .into_owned()
            .svd(false, false)
            .singular_values[0];
        let s_depth = self.w_depth.clone().svd(false, false).singular_values[0];
        s_out * s_depth
    }
}

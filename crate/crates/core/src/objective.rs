//! Redundancy-reduction objective on a pair of embedding batches.
//!
//! Embeddings are standardized per feature over the batch, their
//! cross-correlation `C = Ẑᵀ Ẑ′ / B` is formed, and the loss is
//! `α Σ_i (1 − C_ii)² + λ Σ_{i≠j} C_ij²`. Dividing by `B` with the
//! population standard deviation makes `C_ii = 1` for identical columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gemm, Mat, MatMut};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda: f64,
    /// Added to each feature's standard deviation before dividing.
    pub std_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, lambda: 0.005, std_floor: 1e-9 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.lambda >= 0.0) || !(self.std_floor > 0.0) {
            return Err(Error::invalid("loss needs alpha > 0, lambda >= 0 and std_floor > 0"));
        }
        Ok(())
    }
}

/// Loss value split into its two terms (unweighted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub invariance: f64,
    pub redundancy: f64,
}

/// Per-feature standardization over a `[B, d]` batch.
pub struct Normalized {
    pub zhat: Tensor,
    pub centered: Tensor,
    /// Population standard deviation per feature.
    pub std: Vec<f64>,
}

fn check_batch(z: &Tensor) -> Result<(usize, usize)> {
    if z.ndim() != 2 {
        return Err(Error::shape(format!("embeddings must be [B, d], got {:?}", z.shape())));
    }
    if z.dim(0) < 2 {
        return Err(Error::DegenerateBatch);
    }
    Ok((z.dim(0), z.dim(1)))
}

pub fn batch_normalize_full(z: &Tensor, std_floor: f64) -> Result<Normalized> {
    let (b, d) = check_batch(z)?;
    let mut mean = vec![0.0; d];
    for row in z.data().chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut centered = z.clone();
    for row in centered.data_mut().chunks_mut(d) {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let mut var = vec![0.0; d];
    for row in centered.data().chunks(d) {
        var.iter_mut().zip(row).for_each(|(s, v)| *s += v * v);
    }
    let std: Vec<f64> = var.iter().map(|v| (v / b as f64).sqrt()).collect();
    let mut zhat = centered.clone();
    for row in zhat.data_mut().chunks_mut(d) {
        row.iter_mut().zip(&std).for_each(|(v, s)| *v /= s + std_floor);
    }
    Ok(Normalized { zhat, centered, std })
}

/// `(Z − mean) / (std + std_floor)` per feature.
pub fn batch_normalize(z: &Tensor, std_floor: f64) -> Result<Tensor> {
    Ok(batch_normalize_full(z, std_floor)?.zhat)
}

/// `C = Ẑᵀ Ẑ′ / B`.
pub fn cross_correlation(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = check_batch(a)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("cross-correlation of {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut c = vec![0.0; d * d];
    gemm(1.0 / n as f64, Mat::new(a.data(), n, d).t(), Mat::new(b.data(), n, d), 0.0, MatMut::new(&mut c, d, d));
    Ok(Tensor::from_vec(&[d, d], c))
}

pub fn bt_loss(c: &Tensor, cfg: &LossConfig) -> Result<LossTerms> {
    if c.ndim() != 2 || c.dim(0) != c.dim(1) {
        return Err(Error::shape(format!("cross-correlation must be square, got {:?}", c.shape())));
    }
    let d = c.dim(0);
    let (mut invariance, mut redundancy) = (0.0, 0.0);
    for (k, &v) in c.data().iter().enumerate() {
        if k / d == k % d {
            invariance += (1.0 - v) * (1.0 - v);
        } else {
            redundancy += v * v;
        }
    }
    Ok(LossTerms { loss: cfg.alpha * invariance + cfg.lambda * redundancy, invariance, redundancy })
}

/// Loss, cross-correlation and gradients with respect to the raw embeddings.
pub struct LossOutput {
    pub terms: LossTerms,
    pub c: Tensor,
    pub grad_a: Tensor,
    pub grad_b: Tensor,
    /// Population standard deviation of each feature of the two raw batches.
    pub std_a: Vec<f64>,
    pub std_b: Vec<f64>,
}

pub fn bt_loss_grad(za: &Tensor, zb: &Tensor, cfg: &LossConfig) -> Result<LossOutput> {
    if za.shape() != zb.shape() {
        return Err(Error::shape(format!("embedding batches {:?} and {:?} differ", za.shape(), zb.shape())));
    }
    let na = batch_normalize_full(za, cfg.std_floor)?;
    let nb = batch_normalize_full(zb, cfg.std_floor)?;
    let c = cross_correlation(&na.zhat, &nb.zhat)?;
    let terms = bt_loss(&c, cfg)?;
    let (b, d) = (za.dim(0), za.dim(1));
    // dL/dC
    let mut gc = vec![0.0; d * d];
    for (k, (g, &v)) in gc.iter_mut().zip(c.data()).enumerate() {
        *g = if k / d == k % d { -2.0 * cfg.alpha * (1.0 - v) } else { 2.0 * cfg.lambda * v };
    }
    // dL/dẐ = Ẑ′ Gᵀ / B and dL/dẐ′ = Ẑ G / B
    let mut ga = vec![0.0; b * d];
    let mut gb = vec![0.0; b * d];
    let scale = 1.0 / b as f64;
    gemm(scale, Mat::new(nb.zhat.data(), b, d), Mat::new(&gc, d, d).t(), 0.0, MatMut::new(&mut ga, b, d));
    gemm(scale, Mat::new(na.zhat.data(), b, d), Mat::new(&gc, d, d), 0.0, MatMut::new(&mut gb, b, d));
    let grad_a = normalize_backward(&na, &ga, cfg.std_floor, b, d);
    let grad_b = normalize_backward(&nb, &gb, cfg.std_floor, b, d);
    Ok(LossOutput { terms, c, grad_a, grad_b, std_a: na.std, std_b: nb.std })
}

/// Back-propagates through `(z − mean) / (std + floor)` including the batch statistics.
fn normalize_backward(n: &Normalized, g: &[f64], floor: f64, b: usize, d: usize) -> Tensor {
    let u = n.centered.data();
    let mut out = vec![0.0; b * d];
    for j in 0..d {
        let s = n.std[j] + floor;
        let (mut g_mean, mut gu) = (0.0, 0.0);
        for r in 0..b {
            g_mean += g[r * d + j];
            gu += g[r * d + j] * u[r * d + j];
        }
        g_mean /= b as f64;
        // d std / d u_r = u_r / (B std); zero when the feature is constant.
        let dstd = if n.std[j] > 0.0 { gu / (s * s * b as f64 * n.std[j]) } else { 0.0 };
        for r in 0..b {
            out[r * d + j] = (g[r * d + j] - g_mean) / s - dstd * u[r * d + j];
        }
    }
    Tensor::from_vec(&[b, d], out)
}

/// Summary statistics of a cross-correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationStats {
    pub diag_mean: f64,
    pub offdiag_mean_abs: f64,
    pub offdiag_max_abs: f64,
}

pub fn correlation_stats(c: &Tensor) -> CorrelationStats {
    let d = c.dim(0);
    let (mut diag, mut off, mut off_max) = (0.0, 0.0, 0.0f64);
    for (k, &v) in c.data().iter().enumerate() {
        if k / d == k % d {
            diag += v;
        } else {
            off += v.abs();
            off_max = off_max.max(v.abs());
        }
    }
    let n_off = (d * d - d).max(1) as f64;
    CorrelationStats { diag_mean: diag / d as f64, offdiag_mean_abs: off / n_off, offdiag_max_abs: off_max }
}

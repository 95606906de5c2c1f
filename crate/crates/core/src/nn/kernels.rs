//! Allocation-light numeric kernels behind the graph ops.

use super::gemm::{gemm, Mat, MatMut};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pw - self.kw) / self.sw + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds one `C x H x W` image into `(C kh kw) x (Ho Wo)` patch columns.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let n = ho * wo;
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oi in 0..ho {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    let out_row = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= g.height as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.height + ii as usize) * g.width..][..g.width];
                    for (oj, v) in out_row.iter_mut().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        *v = if jj < 0 || jj >= g.width as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let n = ho * wo;
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oi in 0..ho {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.height + ii as usize) * g.width..][..g.width];
                    for oj in 0..wo {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && (jj as usize) < g.width {
                            dst[jj as usize] += src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Multi-head scaled dot-product self-attention over packed `[B, n, 3d]` projections.
///
/// Returns the `[B, n, d]` output and the `[B, heads, n, n]` attention weights.
pub fn attention_forward(qkv: &[f64], batch: usize, n: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; batch * n * d];
    let mut probs = vec![0.0; batch * heads * n * n];
    for b in 0..batch {
        let base = b * n * 3 * d;
        for h in 0..heads {
            let p = &mut probs[(b * heads + h) * n * n..][..n * n];
            let q = Mat::strided(qkv, base + h * dh, n, dh, 3 * d);
            let k = Mat::strided(qkv, base + d + h * dh, n, dh, 3 * d);
            gemm(scale, q, k.t(), 0.0, MatMut::new(p, n, n));
            for row in p.chunks_mut(n) {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                row.iter_mut().for_each(|v| *v /= s);
            }
            let v = Mat::strided(qkv, base + 2 * d + h * dh, n, dh, 3 * d);
            gemm(1.0, Mat::new(p, n, n), v, 0.0, MatMut::strided(&mut out, b * n * d + h * dh, n, dh, d));
        }
    }
    (out, probs)
}

/// Gradient of [`attention_forward`] with respect to the packed projections.
pub fn attention_backward(
    qkv: &[f64],
    probs: &[f64],
    dout: &[f64],
    batch: usize,
    n: usize,
    d: usize,
    heads: usize,
) -> Vec<f64> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = vec![0.0; qkv.len()];
    let mut dp = vec![0.0; n * n];
    for b in 0..batch {
        let base = b * n * 3 * d;
        for h in 0..heads {
            let p = &probs[(b * heads + h) * n * n..][..n * n];
            let dout_h = Mat::strided(dout, b * n * d + h * dh, n, dh, d);
            let v = Mat::strided(qkv, base + 2 * d + h * dh, n, dh, 3 * d);
            // dV = P^T dO
            gemm(1.0, Mat::new(p, n, n).t(), dout_h, 0.0, MatMut::strided(&mut dqkv, base + 2 * d + h * dh, n, dh, 3 * d));
            // dP = dO V^T, then the softmax Jacobian in place.
            gemm(1.0, dout_h, v.t(), 0.0, MatMut::new(&mut dp, n, n));
            for (drow, prow) in dp.chunks_mut(n).zip(p.chunks(n)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                drow.iter_mut().zip(prow).for_each(|(g, &pv)| *g = pv * (*g - dot));
            }
            let q = Mat::strided(qkv, base + h * dh, n, dh, 3 * d);
            let k = Mat::strided(qkv, base + d + h * dh, n, dh, 3 * d);
            gemm(scale, Mat::new(&dp, n, n), k, 0.0, MatMut::strided(&mut dqkv, base + h * dh, n, dh, 3 * d));
            gemm(scale, Mat::new(&dp, n, n).t(), q, 0.0, MatMut::strided(&mut dqkv, base + d + h * dh, n, dh, 3 * d));
        }
    }
    dqkv
}

/// Per-group standardization over `[outer, groups, inner]` data, grouping by the middle axis.
///
/// Returns `(xhat, inv_std, mean, biased_var)`.
pub fn group_moments(x: &[f64], outer: usize, groups: usize, inner: usize, eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let count = (outer * inner) as f64;
    let mut mean = vec![0.0; groups];
    let mut var = vec![0.0; groups];
    for o in 0..outer {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += x[(o * groups + c) * inner..][..inner].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for o in 0..outer {
        for c in 0..groups {
            let m = mean[c];
            var[c] += x[(o * groups + c) * inner..][..inner].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    for o in 0..outer {
        for c in 0..groups {
            let off = (o * groups + c) * inner;
            for i in 0..inner {
                xhat[off + i] = (x[off + i] - mean[c]) * inv_std[c];
            }
        }
    }
    (xhat, inv_std, mean, var)
}

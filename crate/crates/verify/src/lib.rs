//! Independent reference implementations used to check the main crate.
//!
//! Everything here is deliberately naive: straight loops, no shared code
//! with `abt-core`, and no shortcuts that the production path also takes.

use serde::Serialize;
use std::f64::consts::PI;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(1, |a|, |b|)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

/// Redundancy-reduction loss by triple loops over row-major `[batch, dim]` embeddings.
///
/// Columns are standardized with the population standard deviation plus `floor`.
pub fn bruteforce_bt_loss(z1: &[f64], z2: &[f64], batch: usize, dim: usize, alpha: f64, lambda: f64, floor: f64) -> f64 {
    let standardize = |z: &[f64]| {
        let mut out = vec![0.0; batch * dim];
        for j in 0..dim {
            let mut mean = 0.0;
            for b in 0..batch {
                mean += z[b * dim + j];
            }
            mean /= batch as f64;
            let mut var = 0.0;
            for b in 0..batch {
                var += (z[b * dim + j] - mean).powi(2);
            }
            let std = (var / batch as f64).sqrt();
            for b in 0..batch {
                out[b * dim + j] = (z[b * dim + j] - mean) / (std + floor);
            }
        }
        out
    };
    let a = standardize(z1);
    let c = standardize(z2);
    let mut loss = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let mut cij = 0.0;
            for b in 0..batch {
                cij += a[b * dim + i] * c[b * dim + j];
            }
            cij /= batch as f64;
            loss += if i == j { alpha * (1.0 - cij).powi(2) } else { lambda * cij * cij };
        }
    }
    loss
}

/// Index of the largest-magnitude bin of a naive DFT over the first half spectrum.
pub fn dft_peak_bin(x: &[f64]) -> usize {
    let n = x.len();
    let mut best = (0usize, f64::NEG_INFINITY);
    for k in 0..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let ph = -2.0 * PI * (k * t) as f64 / n as f64;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (k, mag);
        }
    }
    best.0
}

/// HTK mel scale via the natural-log form.
pub fn hz_to_mel_ref(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz_ref(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Center frequencies of `n_mels` triangles spaced evenly in mel between `f_min` and `f_max`.
pub fn mel_centers_ref(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel_ref(f_min), hz_to_mel_ref(f_max));
    let step = (hi - lo) / (n_mels + 1) as f64;
    (1..=n_mels).map(|i| mel_to_hz_ref(lo + step * i as f64)).collect()
}

/// Average precision of one class: mean precision at the rank of each positive.
///
/// Returns `None` when there are no positives. Ties are broken by input order.
pub fn average_precision_ref(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable selection sort keeps the reference obviously correct.
    for i in 0..order.len() {
        let mut best = i;
        for j in i + 1..order.len() {
            if scores[order[j]] > scores[order[best]] {
                best = j;
            }
        }
        let v = order.remove(best);
        order.insert(i, v);
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if positive[idx] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// One named comparison between an implementation and its oracle.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Collected oracle comparisons, serializable for archiving alongside test output.
#[derive(Debug, Default, Serialize)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn check(&mut self, name: &str, observed: f64, expected: f64, tolerance: f64) -> bool {
        let passed = (observed - expected).abs() <= tolerance;
        self.checks.push(OracleCheck { name: name.into(), observed, expected, tolerance, passed });
        passed
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_quadratic() {
        let g = finite_diff_grad(&mut |x: &[f64]| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn identical_whitened_views_have_zero_invariance_loss() {
        // Two orthogonal columns with zero mean and unit variance.
        let z = [1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let l = bruteforce_bt_loss(&z, &z, 4, 2, 1.0, 0.005, 0.0);
        assert!(l.abs() < 1e-12, "{l}");
    }

    #[test]
    fn dft_finds_bin() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * 5.0 * t as f64 / n as f64).sin()).collect();
        assert_eq!(dft_peak_bin(&x), 5);
    }

    #[test]
    fn mel_of_1000hz_is_about_1000() {
        assert!((hz_to_mel_ref(1000.0) - 999.99).abs() < 0.05);
        assert!((mel_to_hz_ref(hz_to_mel_ref(440.0)) - 440.0).abs() < 1e-9);
    }

    #[test]
    fn ap_hand_case() {
        // Ranking: pos, neg, pos -> (1/1 + 2/3) / 2.
        let ap = average_precision_ref(&[0.9, 0.5, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(average_precision_ref(&[0.1], &[false]).is_none());
    }
}

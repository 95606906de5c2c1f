use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Which patches survive random masking.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    /// Surviving patch indices, in shuffled order.
    pub kept_indices: Vec<usize>,
    pub masked_indices: Vec<usize>,
    pub ratio: f64,
}

impl MaskPlan {
    /// Keeps every patch in grid order.
    pub fn keep_all(n_patches: usize) -> Self {
        Self { kept_indices: (0..n_patches).collect(), masked_indices: Vec::new(), ratio: 0.0 }
    }

    pub fn n_patches(&self) -> usize {
        self.kept_indices.len() + self.masked_indices.len()
    }
}

/// Shuffles `0..n_patches` and drops the last `round(r * N)` entries.
pub fn mask_patches(n_patches: usize, ratio: f64, rng: &mut SeededRng) -> Result<MaskPlan> {
    if n_patches == 0 {
        return Err(Error::invalid("cannot mask zero patches"));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("masking ratio {ratio} outside [0, 1)")));
    }
    let n_masked = (ratio * n_patches as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_patches).collect();
    order.shuffle(rng);
    let masked_indices = order.split_off(n_patches - n_masked);
    Ok(MaskPlan { kept_indices: order, masked_indices, ratio })
}

/// Masking ratio for `epoch`: zero through warm-up, then a quarter sine
/// rising to `beta` at `total_epochs`.
pub fn masking_ratio_at(epoch: usize, beta: f64, total_epochs: usize, warmup_epochs: usize) -> f64 {
    if epoch < warmup_epochs {
        return 0.0;
    }
    if total_epochs <= warmup_epochs {
        return beta;
    }
    let progress = ((epoch - warmup_epochs) as f64 / (total_epochs - warmup_epochs) as f64).min(1.0);
    beta * (std::f64::consts::FRAC_PI_2 * progress).sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn counts() {
        let mut rng = stream(0, Stream::Mask, &[]);
        assert_eq!(mask_patches(48, 0.2, &mut rng).unwrap().masked_indices.len(), 10);
        assert_eq!(mask_patches(48, 0.5, &mut rng).unwrap().masked_indices.len(), 24);
        let p = mask_patches(48, 0.0, &mut rng).unwrap();
        assert!(p.masked_indices.is_empty());
        let mut k = p.kept_indices.clone();
        k.sort();
        assert_eq!(k, (0..48).collect::<Vec<_>>());
    }

    #[test]
    fn bad_ratio_rejected() {
        let mut rng = stream(0, Stream::Mask, &[]);
        assert!(mask_patches(48, 1.0, &mut rng).is_err());
        assert!(mask_patches(48, -0.1, &mut rng).is_err());
        assert!(mask_patches(0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn schedule_points() {
        assert_eq!(masking_ratio_at(0, 0.3, 100, 10), 0.0);
        assert_eq!(masking_ratio_at(9, 0.3, 100, 10), 0.0);
        assert!((masking_ratio_at(100, 0.3, 100, 10) - 0.3).abs() < 1e-15);
        let mid = masking_ratio_at(55, 0.3, 100, 10);
        assert!((mid - 0.3 * 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn partition(n in 1usize..200, r in 0.0f64..0.999, seed in any::<u64>()) {
            let p = mask_patches(n, r, &mut stream(seed, Stream::Mask, &[])).unwrap();
            prop_assert_eq!(p.masked_indices.len(), (r * n as f64).round() as usize);
            let mut all: Vec<usize> = p.kept_indices.iter().chain(&p.masked_indices).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn schedule_is_monotone(beta in 0.0f64..0.9, total in 1usize..200, warm_frac in 0.0f64..1.0) {
            let warm = (warm_frac * total as f64) as usize;
            let mut prev = 0.0;
            for e in 0..=total {
                let r = masking_ratio_at(e, beta, total, warm);
                prop_assert!(r >= prev - 1e-15);
                prev = r;
            }
        }
    }
}

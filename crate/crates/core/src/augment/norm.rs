use crate::data::{DatasetStats, MomentAccumulator};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// `(s - mean) / std` with dataset statistics (per bin when available).
pub fn normalize(s: &Spectrogram, stats: &DatasetStats) -> Spectrogram {
    let mut out = s.clone();
    match &stats.per_bin {
        Some(pb) if pb.mean.len() == s.n_mels => {
            for (f, row) in out.values.chunks_mut(s.n_frames).enumerate() {
                let (m, sd) = (pb.mean[f], pb.std[f]);
                row.iter_mut().for_each(|v| *v = (*v - m) / sd);
            }
        }
        _ => out.values.iter_mut().for_each(|v| *v = (*v - stats.mean) / stats.std),
    }
    out
}

/// Where in the pipeline batch standardization runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormStage {
    /// Before augmentation, replacing dataset statistics.
    Pre,
    /// After augmentation, undoing the drift the blocks introduce.
    Post,
}

/// Standardizes a batch with moments pooled over every cell of every item.
pub fn pre_post_norm(batch: &[Spectrogram], stage: NormStage) -> Result<Vec<Spectrogram>> {
    if batch.is_empty() {
        return Err(Error::invalid(format!("{stage:?}-normalization of an empty batch")));
    }
    let mut acc = MomentAccumulator::default();
    for s in batch {
        acc.extend(&s.values);
    }
    let (mean, std) = (acc.mean(), acc.std());
    if !(std > 0.0) {
        return Err(Error::DegenerateBatch);
    }
    Ok(batch
        .iter()
        .map(|s| {
            let mut out = s.clone();
            out.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, std: f64) -> DatasetStats {
        DatasetStats { mean, std, ..DatasetStats::identity() }
    }

    #[test]
    fn dataset_normalization_cases() {
        let c = Spectrogram::filled(4, 6, 10.0, 2.5);
        assert!(normalize(&c, &stats(2.5, 3.0)).values.iter().all(|&v| v == 0.0));
        let s = Spectrogram::new(vec![0.0, 2.0], 1, 2, 10.0).unwrap();
        assert_eq!(normalize(&s, &stats(0.0, 1.0)), s);
        assert_eq!(normalize(&s, &stats(1.0, 1.0)).values, vec![-1.0, 1.0]);
    }

    #[test]
    fn batch_moments_and_idempotence() {
        let batch: Vec<Spectrogram> = (0..3)
            .map(|k| Spectrogram::new((0..12).map(|i| (i * (k + 2)) as f64 * 0.37 - 4.0).collect(), 3, 4, 10.0).unwrap())
            .collect();
        let once = pre_post_norm(&batch, NormStage::Pre).unwrap();
        let mut acc = MomentAccumulator::default();
        once.iter().for_each(|s| acc.extend(&s.values));
        assert!(acc.mean().abs() < 1e-6 && (acc.std() - 1.0).abs() < 1e-6);
        let twice = pre_post_norm(&once, NormStage::Post).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-6));
        }
    }

    #[test]
    fn constant_batch_is_degenerate() {
        let batch = [Spectrogram::filled(4, 4, 10.0, 1.0)];
        assert!(matches!(pre_post_norm(&batch, NormStage::Pre), Err(Error::DegenerateBatch)));
    }
}

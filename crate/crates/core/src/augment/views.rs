use super::mixup::mix_from_queue;
use super::{add_noise, normalize, pre_post_norm, rlf, rrc, AugmentConfig, MixupQueue, NormMode, NormStage};
use crate::data::DatasetStats;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng, Stream};

/// Two augmented views of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub first: Spectrogram,
    pub second: Spectrogram,
}

fn augment_one(s: &Spectrogram, cfg: &AugmentConfig, queue: &MixupQueue, rng: &mut SeededRng) -> Result<Spectrogram> {
    let mut v = if cfg.use_mixup {
        mix_from_queue(s, queue, cfg.mixup_alpha, rng)?
    } else {
        s.clone()
    };
    if cfg.use_rrc {
        v = rrc(&v, cfg, rng);
    }
    if cfg.use_rlf {
        v = rlf(&v, cfg, rng);
    }
    if cfg.use_noise {
        v = add_noise(&v, cfg, rng);
    }
    Ok(v)
}

/// Builds view pairs for a batch of raw log-mel crops.
///
/// Blocks run in the fixed order Mixup, RRC, RLF, Noise. View `k` of clip
/// `i` draws from the stream `(seed, keys[i], k)`, so views are independent
/// of each other and of batch composition. Each normalized clip enters the
/// Mixup queue after both of its views are built. In `PrePost` mode the
/// batch is standardized before augmenting, and each view batch again after.
pub fn make_view_batch(
    batch: &[Spectrogram],
    cfg: &AugmentConfig,
    stats: Option<&DatasetStats>,
    queue: &mut MixupQueue,
    seed: u64,
    keys: &[u64],
) -> Result<Vec<ViewPair>> {
    if batch.len() != keys.len() {
        return Err(Error::invalid("one stream key per clip is required"));
    }
    let normed = match cfg.norm_mode {
        NormMode::Dataset => {
            let stats = stats.ok_or_else(|| Error::Config("dataset normalization needs dataset statistics".into()))?;
            batch.iter().map(|s| normalize(s, stats)).collect()
        }
        NormMode::PrePost => pre_post_norm(batch, NormStage::Pre)?,
    };

    let mut firsts = Vec::with_capacity(batch.len());
    let mut seconds = Vec::with_capacity(batch.len());
    for (s, &key) in normed.iter().zip(keys) {
        let v1 = augment_one(s, cfg, queue, &mut stream(seed, Stream::View, &[key, 0]))?;
        let v2 = augment_one(s, cfg, queue, &mut stream(seed, Stream::View, &[key, 1]))?;
        if cfg.use_mixup {
            queue.push(s.clone())?;
        }
        firsts.push(v1);
        seconds.push(v2);
    }
    if cfg.norm_mode == NormMode::PrePost {
        firsts = pre_post_norm(&firsts, NormStage::Post)?;
        seconds = pre_post_norm(&seconds, NormStage::Post)?;
    }
    Ok(firsts.into_iter().zip(seconds).map(|(first, second)| ViewPair { first, second }).collect())
}

/// Single-clip form of [`make_view_batch`]; batch statistics come from the clip alone.
pub fn make_views(
    s: &Spectrogram,
    cfg: &AugmentConfig,
    stats: Option<&DatasetStats>,
    queue: &mut MixupQueue,
    seed: u64,
    key: u64,
) -> Result<ViewPair> {
    let mut pairs = make_view_batch(std::slice::from_ref(s), cfg, stats, queue, seed, &[key])?;
    Ok(pairs.remove(0))
}

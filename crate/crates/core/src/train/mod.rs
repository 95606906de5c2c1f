//! Pretraining: views of each clip through shared encoder and projector,
//! the redundancy-reduction loss, an optimizer step, metrics and checkpoints.

mod checkpoint;
mod metrics;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_hash, Checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION, MAGIC};
pub use metrics::{collapse_probe, read_metrics, CollapseConfig, CollapseDiagnosis, MetricsLog, StepMetrics};

use crate::augment::{make_view_batch, mask_patches, masking_ratio_at, AugmentConfig, MaskPlan, MixupQueue, ViewPair};
use crate::data::{DatasetStats, Manifest};
use crate::dsp::{crop_or_pad, load_audio, logmel, MelConfig, Spectrogram};
use crate::encoder::{stack_batch, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{apply_buffer_updates, Graph, ParamStore};
use crate::objective::{bt_loss_grad, correlation_stats, LossConfig};
use crate::optim::{scale_lr, LrSchedule, Optimizer, OptimizerConfig};
use crate::projector::{Projector, ProjectorConfig};
use crate::provenance::{config_hash, CODE_VERSION};
use crate::rng::{derive_seed, stream, Stream};
use crate::tensor::Tensor;

/// Numeric precision of training. Only double precision is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
}

/// Patch masking of the second view (transformer encoders only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub enabled: bool,
    /// Fixed ratio, used when `schedule_beta` is unset.
    pub ratio: f64,
    /// Final ratio of a sinusoidal ramp that starts after `warmup_epochs`.
    pub schedule_beta: Option<f64>,
    pub warmup_epochs: usize,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self { enabled: false, ratio: 0.5, schedule_beta: None, warmup_epochs: 10 }
    }
}

impl MaskingConfig {
    pub fn ratio_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        match (self.enabled, self.schedule_beta) {
            (false, _) => 0.0,
            (true, None) => self.ratio,
            (true, Some(beta)) => masking_ratio_at(epoch.min(total_epochs), beta, total_epochs, self.warmup_epochs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub crop_frames: usize,
    pub encoder: EncoderConfig,
    pub projector: ProjectorConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Batch size the learning rates were tuned at; rates scale linearly from it (0: no scaling).
    pub lr_reference_batch: usize,
    pub lr_schedule: LrSchedule,
    pub masking: MaskingConfig,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            max_steps: None,
            crop_frames: 96,
            encoder: EncoderConfig::default(),
            projector: ProjectorConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::Adamw(Default::default()),
            lr_reference_batch: 128,
            lr_schedule: LrSchedule::Constant,
            masking: MaskingConfig::default(),
            seed: 42,
            checkpoint_every: 10,
            precision: Precision::F64,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if self.crop_frames == 0 {
            return Err(Error::Config("train.crop_frames must be positive".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.projector.validate()?;
        let m = &self.masking;
        if m.enabled {
            if matches!(self.encoder, EncoderConfig::AudioNtt(_)) {
                return Err(Error::Config("train.masking needs a transformer encoder".into()));
            }
            let r = m.schedule_beta.unwrap_or(m.ratio);
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config("train.masking ratio must lie in [0, 1)".into()));
            }
            if m.schedule_beta.is_some() && m.warmup_epochs > self.epochs {
                return Err(Error::Config("train.masking.warmup_epochs exceeds epochs".into()));
            }
        }
        Ok(())
    }

    /// Optimizer settings after linear batch-size scaling.
    pub fn effective_optimizer(&self) -> OptimizerConfig {
        match self.lr_reference_batch {
            0 => self.optimizer,
            r => self.optimizer.scaled(scale_lr(1.0, r, self.batch_size)),
        }
    }
}

/// Everything that determines a run's numbers; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSnapshot {
    pub mel: MelConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
}

impl RunSnapshot {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.augment.validate()?;
        self.train.validate()
    }
}

/// Encoder and projector sharing one parameter store; both views use it.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub projector: Projector,
}

impl Model {
    pub fn new(cfg: &TrainConfig, n_mels: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, Stream::Init, &[]);
        let encoder = Encoder::new(&cfg.encoder, n_mels, cfg.crop_frames, &mut store, &mut rng)?;
        let projector = Projector::new(&cfg.projector, encoder.rep_dim(), &mut store, &mut rng)?;
        Ok(Self { store, encoder, projector })
    }

    /// Rebuilds the model described by a checkpoint and loads its parameters and buffers.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = &ckpt.header.config;
        let mut model = Self::new(&cfg.train, cfg.mel.n_mels, ckpt.header.seed)?;
        model.load_tensors(ckpt)?;
        Ok(model)
    }

    fn load_tensors(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let fetch = |name: String, like: &Tensor| -> Result<Tensor> {
            let t = ckpt.tensor(&name).ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != like.shape() {
                return Err(Error::CorruptCheckpoint(format!("tensor `{name}` has shape {:?}, model expects {:?}", t.shape(), like.shape())));
            }
            Ok(t.clone())
        };
        for p in self.store.params_mut() {
            p.value = fetch(format!("param.{}", p.name), &p.value)?;
        }
        for b in self.store.buffers_mut() {
            b.value = fetch(format!("buffer.{}", b.name), &b.value)?;
        }
        Ok(())
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let params = self.store.params().iter().map(|p| (format!("param.{}", p.name), p.value.clone()));
        let buffers = self.store.buffers().iter().map(|b| (format!("buffer.{}", b.name), b.value.clone()));
        params.chain(buffers).collect()
    }

    /// Encoder representations `[B, rep_dim]` in inference mode.
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.store, false);
        let out = self.encoder.forward(&mut g, x, None)?;
        Ok(g.value(out.rep).clone())
    }
}

/// Log-mel spectrograms of the training clips plus normalization statistics.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub clips: Vec<Spectrogram>,
    pub stats: Option<DatasetStats>,
}

impl TrainData {
    pub fn from_manifest(m: &Manifest, mel: &MelConfig, stats: Option<DatasetStats>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::invalid("empty manifest"));
        }
        let clips = m
            .entries
            .iter()
            .map(|e| logmel(&load_audio(&e.path, mel.sample_rate_hz)?, mel))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { clips, stats })
    }
}

/// Hook that may rewrite the two embedding batches before the loss (diagnostics and fault injection).
pub type EmbeddingHook<'h> = &'h (dyn Fn(u64, &mut Tensor, &mut Tensor) + Sync);

/// Result of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub metrics: StepMetrics,
    /// Sequence length seen by the transformer for each view.
    pub attention_tokens: (Option<usize>, Option<usize>),
}

/// One step over a batch of view pairs: forward both views with shared
/// weights, loss and gradient, backward, buffer updates and optimizer step.
///
/// `step` is the index this step will carry (1-based).
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    opt: &mut Optimizer,
    views: &[ViewPair],
    masks: Option<&[MaskPlan]>,
    cfg: &TrainConfig,
    step: u64,
    epoch: usize,
    lr_mult: f64,
    hook: Option<EmbeddingHook<'_>>,
) -> Result<StepOutput> {
    if views.len() < 2 {
        return Err(Error::DegenerateBatch);
    }
    let first: Vec<Spectrogram> = views.iter().map(|v| v.first.clone()).collect();
    let second: Vec<Spectrogram> = views.iter().map(|v| v.second.clone()).collect();
    let (x1, x2) = (stack_batch(&first)?, stack_batch(&second)?);

    let (metrics, grads, updates, tokens) = {
        let mut g = Graph::new(&model.store, true).with_rng(stream(cfg.seed, Stream::Dropout, &[step]));
        let e1 = model.encoder.forward(&mut g, &x1, None)?;
        let e2 = model.encoder.forward(&mut g, &x2, masks)?;
        let z1 = model.projector.forward(&mut g, e1.rep)?;
        let z2 = model.projector.forward(&mut g, e2.rep)?;
        let (mut za, mut zb) = (g.value(z1).clone(), g.value(z2).clone());
        if let Some(hook) = hook {
            hook(step, &mut za, &mut zb);
        }
        let out = bt_loss_grad(&za, &zb, &cfg.loss)?;
        let cs = correlation_stats(&out.c);
        if !out.terms.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                diagnostic: format!(
                    "diag_mean={} offdiag_mean_abs={} offdiag_max_abs={} feature_std_min={}",
                    cs.diag_mean,
                    cs.offdiag_mean_abs,
                    cs.offdiag_max_abs,
                    out.std_a.iter().chain(&out.std_b).copied().fold(f64::INFINITY, f64::min)
                ),
            });
        }
        let stds = out.std_a.iter().chain(&out.std_b);
        let n_std = (out.std_a.len() + out.std_b.len()) as f64;
        let metrics = StepMetrics {
            step,
            epoch,
            loss: out.terms.loss,
            invariance_term: out.terms.invariance,
            redundancy_term: out.terms.redundancy,
            offdiag_mean_abs: cs.offdiag_mean_abs,
            diag_mean: cs.diag_mean,
            feature_std_min: stds.clone().copied().fold(f64::INFINITY, f64::min),
            feature_std_mean: stds.sum::<f64>() / n_std,
            mask_ratio: masks.and_then(|m| m.first()).map_or(0.0, |m| m.ratio),
            lr_mult,
        };
        let grads = g.backward_many(vec![(z1, out.grad_a), (z2, out.grad_b)]).take_params();
        (metrics, grads, g.take_buffer_updates(), (e1.attention_tokens, e2.attention_tokens))
    };
    apply_buffer_updates(&mut model.store, updates);
    opt.step(&mut model.store, &grads, lr_mult)?;
    Ok(StepOutput { metrics, attention_tokens: tokens })
}

/// Where a pretraining run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunPaths {
    /// Metrics log and checkpoints go here; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl RunPaths {
    pub fn metrics(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join("metrics.jsonl"))
    }

    pub fn checkpoint_dir(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join("checkpoints"))
    }
}

/// Full training state: model, optimizer, Mixup memory and counters.
pub struct Trainer {
    pub snapshot: RunSnapshot,
    pub model: Model,
    pub opt: Optimizer,
    pub queue: MixupQueue,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
    pub history: Vec<StepMetrics>,
    stopped_mid_epoch: bool,
}

/// A batch prepared by the producer thread.
struct Prepared {
    views: Vec<ViewPair>,
    masks: Option<Vec<MaskPlan>>,
}

impl Trainer {
    pub fn new(snapshot: RunSnapshot) -> Result<Self> {
        snapshot.validate()?;
        let model = Model::new(&snapshot.train, snapshot.mel.n_mels, snapshot.train.seed)?;
        let opt = Optimizer::new(snapshot.train.effective_optimizer(), &model.store)?;
        let queue = MixupQueue::new(snapshot.augment.mixup_queue_len);
        Ok(Self { snapshot, model, opt, queue, epoch: 0, step: 0, history: Vec::new(), stopped_mid_epoch: false })
    }

    /// Restores a run from an epoch-boundary checkpoint.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.mid_epoch {
            return Err(Error::invalid("checkpoint was saved mid-epoch and cannot resume training"));
        }
        let mut t = Self::new(ckpt.header.config.clone())?;
        t.model.load_tensors(ckpt)?;
        t.opt.load_state(&t.model.store, ckpt.header.step, &ckpt.tensors_with_prefix(""))?;
        let mut items: Vec<(usize, Spectrogram)> = Vec::new();
        for (name, tensor) in ckpt.tensors_with_prefix("queue.") {
            let i: usize = name.parse().map_err(|_| Error::CorruptCheckpoint(format!("bad queue entry `{name}`")))?;
            let (f, n) = (tensor.dim(0), tensor.dim(1));
            items.push((i, Spectrogram::new(tensor.into_data(), f, n, t.snapshot.mel.hop_ms)?));
        }
        items.sort_by_key(|(i, _)| *i);
        t.queue = MixupQueue::from_items(t.snapshot.augment.mixup_queue_len, items.into_iter().map(|(_, s)| s).collect())?;
        t.epoch = ckpt.header.epoch;
        t.step = ckpt.header.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut named = self.model.named_tensors();
        named.extend(self.opt.state_tensors(&self.model.store));
        for (i, s) in self.queue.items().enumerate() {
            named.push((format!("queue.{i:05}"), Tensor::from_vec(&[s.n_mels, s.n_frames], s.values.clone())));
        }
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            code_version: CODE_VERSION.to_string(),
            config: self.snapshot.clone(),
            config_hash: config_hash(&self.snapshot),
            epoch: self.epoch,
            step: self.step,
            mid_epoch: self.stopped_mid_epoch,
            seed: self.snapshot.train.seed,
            metrics: self.history.last().cloned(),
            tensors: Vec::new(),
        };
        Checkpoint::new(header, named)
    }

    fn steps_per_epoch(&self, n_clips: usize) -> usize {
        n_clips / self.snapshot.train.batch_size
    }

    fn check_fills_batch(&self, n_clips: usize) -> Result<()> {
        if self.steps_per_epoch(n_clips) == 0 {
            return Err(Error::invalid(format!("{n_clips} clips cannot fill one batch of {}", self.snapshot.train.batch_size)));
        }
        Ok(())
    }

    fn total_steps(&self, n_clips: usize) -> u64 {
        let cfg = &self.snapshot.train;
        let planned = (cfg.epochs * self.steps_per_epoch(n_clips)) as u64;
        cfg.max_steps.map_or(planned, |m| m.min(planned))
    }

    fn finished(&self, n_clips: usize) -> bool {
        self.stopped_mid_epoch || self.epoch >= self.snapshot.train.epochs || self.step >= self.total_steps(n_clips)
    }

    /// Runs one epoch. A producer thread builds view batches ahead of the
    /// optimizer through a two-batch bounded channel; it owns the Mixup
    /// memory for the epoch and is joined before returning.
    pub fn run_epoch(&mut self, data: &TrainData, sink: &mut dyn FnMut(&StepMetrics) -> Result<()>, hook: Option<EmbeddingHook<'_>>) -> Result<()> {
        let cfg = self.snapshot.train.clone();
        let n = data.clips.len();
        let per_epoch = self.steps_per_epoch(n);
        self.check_fills_batch(n)?;
        if n % cfg.batch_size != 0 && self.epoch == 0 {
            log::info!("dropping {} clips per epoch that do not fill a batch", n % cfg.batch_size);
        }
        let epoch = self.epoch;
        let total = self.total_steps(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, Stream::Shuffle, &[epoch as u64]));
        let ratio = cfg.masking.ratio_at(epoch, cfg.epochs);
        let n_patches = self.model.encoder.n_patches();
        let remaining = (total - self.step).min(per_epoch as u64) as usize;
        let pad = self.snapshot.mel.silence_value();
        let augment = self.snapshot.augment.clone();
        let seed = cfg.seed;

        let queue = &mut self.queue;
        let model = &mut self.model;
        let opt = &mut self.opt;
        let history = &mut self.history;
        let mut step = self.step;
        let result = std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Prepared>>(2);
            let order = &order;
            let producer = scope.spawn(move || {
                for b in 0..remaining {
                    let prepared = (|| -> Result<Prepared> {
                        let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
                        let keys: Vec<u64> =
                            (0..idx.len()).map(|i| derive_seed(seed, Stream::Crop, &[epoch as u64, b as u64, i as u64])).collect();
                        let crops: Vec<Spectrogram> = idx
                            .iter()
                            .zip(&keys)
                            .map(|(&c, &k)| crop_or_pad(&data.clips[c], cfg.crop_frames, pad, &mut stream(k, Stream::Crop, &[])))
                            .collect();
                        let views = make_view_batch(&crops, &augment, data.stats.as_ref(), queue, seed, &keys)?;
                        let masks = match (ratio > 0.0, n_patches) {
                            (true, Some(np)) => Some(
                                (0..idx.len())
                                    .map(|i| mask_patches(np, ratio, &mut stream(seed, Stream::Mask, &[epoch as u64, b as u64, i as u64])))
                                    .collect::<Result<Vec<_>>>()?,
                            ),
                            _ => None,
                        };
                        Ok(Prepared { views, masks })
                    })();
                    let failed = prepared.is_err();
                    if tx.send(prepared).is_err() || failed {
                        break;
                    }
                }
            });
            for received in rx.iter() {
                let batch = received?;
                let next = step + 1;
                let lr_mult = cfg.lr_schedule.multiplier(step, total);
                let out = train_step(model, opt, &batch.views, batch.masks.as_deref(), &cfg, next, epoch, lr_mult, hook)?;
                step = next;
                if cfg.log_every > 0 && step % cfg.log_every == 0 {
                    let m = &out.metrics;
                    log::info!(
                        "epoch {epoch} step {step}: loss {:.4} (inv {:.4}, red {:.4}) offdiag {:.4} std_min {:.3e}",
                        m.loss, m.invariance_term, m.redundancy_term, m.offdiag_mean_abs, m.feature_std_min
                    );
                }
                sink(&out.metrics)?;
                history.push(out.metrics);
            }
            producer.join().expect("view producer panicked");
            Ok(())
        });
        self.step = step;
        result?;
        if remaining < per_epoch {
            self.stopped_mid_epoch = true;
        } else {
            self.epoch += 1;
        }
        Ok(())
    }

    /// Trains until the configured epochs or step budget are exhausted,
    /// writing metrics and checkpoints under `paths`.
    pub fn fit(&mut self, data: &TrainData, paths: &RunPaths, hook: Option<EmbeddingHook<'_>>) -> Result<Checkpoint> {
        self.check_fills_batch(data.clips.len())?;
        let mut log = match paths.metrics() {
            Some(p) => {
                std::fs::create_dir_all(p.parent().expect("metrics path has a parent"))?;
                Some(MetricsLog::open(&p, self.step)?)
            }
            None => None,
        };
        if let Some(dir) = paths.checkpoint_dir() {
            std::fs::create_dir_all(&dir)?;
        }
        let every = self.snapshot.train.checkpoint_every;
        while !self.finished(data.clips.len()) {
            let mut sink = |m: &StepMetrics| -> Result<()> {
                if let Some(log) = log.as_mut() {
                    log.append(m)?;
                }
                Ok(())
            };
            self.run_epoch(data, &mut sink, hook)?;
            if let Some(log) = log.as_mut() {
                log.flush()?;
            }
            if let Some(dir) = paths.checkpoint_dir() {
                if every > 0 && !self.stopped_mid_epoch && self.epoch % every == 0 {
                    self.checkpoint().save(&epoch_checkpoint_path(&dir, self.epoch))?;
                }
            }
        }
        let ckpt = self.checkpoint();
        if let Some(dir) = paths.checkpoint_dir() {
            ckpt.save(&dir.join("final.ckpt"))?;
        }
        Ok(ckpt)
    }
}

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Trains from scratch, or from `resume` when given.
pub fn pretrain(snapshot: &RunSnapshot, data: &TrainData, paths: &RunPaths, resume: Option<&Checkpoint>) -> Result<(Trainer, Checkpoint)> {
    let mut trainer = match resume {
        Some(ckpt) => {
            if ckpt.header.config != *snapshot {
                log::warn!("resuming with the configuration stored in the checkpoint");
            }
            Trainer::resume(ckpt)?
        }
        None => Trainer::new(snapshot.clone())?,
    };
    let ckpt = trainer.fit(data, paths, None)?;
    Ok((trainer, ckpt))
}

/// Names of parameters whose values differ between two stores.
pub fn changed_params(a: &ParamStore, b: &ParamStore) -> Vec<String> {
    let bv: HashMap<&str, &Tensor> = b.params().iter().map(|p| (p.name.as_str(), &p.value)).collect();
    a.params().iter().filter(|p| bv.get(p.name.as_str()) != Some(&&p.value)).map(|p| p.name.clone()).collect()
}

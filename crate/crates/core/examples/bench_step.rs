//! Times training steps and summarizes the loss trend on the synthetic set.
//!
//! Usage: `bench_step [depth] [batch] [steps]`. Env knobs: OUT, HID, CROP, LR, WD,
//! PER_CLASS, VANILLA (plain ViT stem), COSINE (cosine lr decay).

use std::time::Instant;

use abt_core::augment::AugmentConfig;
use abt_core::data::{stats_from_spectrograms, synth_dataset, SynthSpec};
use abt_core::dsp::MelConfig;
use abt_core::encoder::{EncoderConfig, VitConfig, VitVariant};
use abt_core::optim::{AdamWConfig, LrSchedule, OptimizerConfig};
use abt_core::projector::ProjectorConfig;
use abt_core::train::{RunSnapshot, StepMetrics, TrainConfig, TrainData, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let depth: usize = args.get(1).map_or(1, |s| s.parse().unwrap());
    let batch: usize = args.get(2).map_or(16, |s| s.parse().unwrap());
    let steps: u64 = args.get(3).map_or(10, |s| s.parse().unwrap());
    let env = |k: &str, d: f64| std::env::var(k).ok().map_or(d, |v| v.parse().unwrap());
    let out_dim = env("OUT", 256.0) as usize;
    let hidden = env("HID", 512.0) as usize;
    let crop = env("CROP", 96.0) as usize;
    let lr = env("LR", 1e-4);
    let wd = env("WD", 0.06);
    let per_class = env("PER_CLASS", 20.0) as usize;
    let variant = if std::env::var("VANILLA").is_ok() { VitVariant::Vit } else { VitVariant::VitC };
    let lr_schedule = if std::env::var("COSINE").is_ok() { LrSchedule::Cosine } else { LrSchedule::Constant };
    let dir = tempfile::tempdir().unwrap();
    let mel = MelConfig::default();
    let (manifest, _) = synth_dataset(&SynthSpec { clips_per_class: per_class, ..SynthSpec::default() }, &mel, dir.path()).unwrap();
    let mut data = TrainData::from_manifest(&manifest, &mel, None).unwrap();
    data.stats = Some(stats_from_spectrograms(&data.clips, &mel, false).unwrap());
    let train = TrainConfig {
        epochs: 10000,
        batch_size: batch,
        max_steps: Some(steps),
        encoder: EncoderConfig::Vit(VitConfig { depth: Some(depth), variant, ..VitConfig::default() }),
        projector: ProjectorConfig { hidden_dim: hidden, out_dim, n_hidden_layers: 1 },
        optimizer: OptimizerConfig::Adamw(AdamWConfig { lr, weight_decay: wd, ..Default::default() }),
        lr_reference_batch: 0,
        log_every: 0,
        lr_schedule,
        crop_frames: crop,
        ..TrainConfig::default()
    };
    let snap = RunSnapshot { mel, augment: AugmentConfig::default(), train };
    let mut t = Trainer::new(snap).unwrap();
    println!("params {}", t.model.store.n_scalars());
    let start = Instant::now();
    t.fit(&data, &Default::default(), None).unwrap();
    let el = start.elapsed().as_secs_f64();
    println!("{} steps in {el:.2}s => {:.3}s/step", t.step, el / t.step as f64);
    for m in t.history.iter().step_by((steps as usize / 10).max(1)) {
        println!("{} loss {:.3} inv {:.3} red {:.2} off {:.3} std_min {:.3e}", m.step, m.loss, m.invariance_term, m.redundancy_term, m.offdiag_mean_abs, m.feature_std_min);
    }
    let h = &t.history;
    let avg = |xs: &[StepMetrics], f: fn(&StepMetrics) -> f64| xs.iter().map(f).sum::<f64>() / xs.len() as f64;
    let head = &h[..10.min(h.len())];
    let tail = &h[h.len().saturating_sub(50)..];
    println!(
        "first10 {:.2} last50 {:.2} ratio {:.3} off_last50 {:.3} std_min_last50 {:.3}",
        avg(head, |m| m.loss),
        avg(tail, |m| m.loss),
        avg(tail, |m| m.loss) / avg(head, |m| m.loss),
        avg(tail, |m| m.offdiag_mean_abs),
        avg(tail, |m| m.feature_std_min)
    );
}

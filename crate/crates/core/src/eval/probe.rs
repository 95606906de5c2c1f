use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{compute_metric, Split, TaskLabels};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Linear, ParamKind, ParamStore};
use crate::optim::{AdamWConfig, Optimizer, OptimizerConfig};
use crate::provenance::CODE_VERSION;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// One shallow-MLP probe configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub id: String,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub max_epochs: usize,
    pub check_every: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Multiplier on the default initial weights.
    pub init_scale: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            id: "default".into(),
            hidden_layers: 1,
            hidden_width: 256,
            max_epochs: 500,
            check_every: 3,
            patience: 20,
            lr: 1e-3,
            batch_size: 64,
            init_scale: 1.0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.check_every == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("probe `{}`: epochs, check interval, patience and batch size must be positive", self.id)));
        }
        if !(self.lr > 0.0 && self.init_scale > 0.0) || (self.hidden_layers > 0 && self.hidden_width == 0) {
            return Err(Error::Config(format!("probe `{}`: lr, init scale and hidden width must be positive", self.id)));
        }
        Ok(())
    }
}

/// Eight configurations: hidden layers {1, 2} x lr {1e-3, 3e-4} x init scale {1, 0.1}.
pub fn default_probe_grid() -> Vec<ProbeConfig> {
    let mut grid = Vec::new();
    for hidden_layers in [1, 2] {
        for lr in [1e-3, 3e-4] {
            for init_scale in [1.0, 0.1] {
                grid.push(ProbeConfig {
                    id: format!("h{hidden_layers}_lr{lr:e}_init{init_scale}"),
                    hidden_layers,
                    lr,
                    init_scale,
                    ..ProbeConfig::default()
                });
            }
        }
    }
    grid
}

/// Training record of one probe configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub config_id: String,
    pub val_metric: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task_name: String,
    pub metric_name: String,
    pub value: f64,
    pub chosen_config_id: String,
    pub val_value: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub runs: Vec<ProbeRun>,
    #[serde(default)]
    pub embeddings_checkpoint_hash: String,
    pub code_version: String,
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone)]
struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8))
            .collect();
        Self { mean, std }
    }

    fn apply(&self, x: &[Vec<f64>]) -> Tensor {
        let d = self.mean.len();
        let data = x.iter().flat_map(|r| r.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j])).collect();
        Tensor::from_vec(&[x.len(), d], data)
    }
}

/// A trained probe, holding the best-validation weights.
#[derive(Debug, Clone)]
pub struct FittedProbe {
    store: ParamStore,
    layers: Vec<Linear>,
    scaler: Scaler,
    pub run: ProbeRun,
}

impl FittedProbe {
    fn forward_scores(store: &ParamStore, layers: &[Linear], x: &Tensor) -> Tensor {
        let mut g = Graph::new(store, false);
        let out = forward(&mut g, layers, x);
        g.value(out).clone()
    }

    /// Raw output scores (logits), one row per input.
    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let s = Self::forward_scores(&self.store, &self.layers, &self.scaler.apply(x));
        s.data().chunks(s.last_dim()).map(<[f64]>::to_vec).collect()
    }
}

fn forward(g: &mut Graph<'_>, layers: &[Linear], x: &Tensor) -> crate::nn::Var {
    let mut h = g.input(x.clone());
    for (i, l) in layers.iter().enumerate() {
        h = l.forward(g, h);
        if i + 1 < layers.len() {
            h = g.relu(h);
        }
    }
    h
}

/// Mean loss gradient with respect to the logits.
fn loss_grad(logits: &Tensor, labels: &TaskLabels) -> Tensor {
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut grad = vec![0.0; n * k];
    for (i, row) in logits.data().chunks(k).enumerate() {
        let gr = &mut grad[i * k..(i + 1) * k];
        match labels {
            TaskLabels::Multiclass { targets, .. } => {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for (c, (g, v)) in gr.iter_mut().zip(row).enumerate() {
                    *g = ((v - m).exp() / z - f64::from(u8::from(c == targets[i]))) / n as f64;
                }
            }
            TaskLabels::Multilabel { targets, .. } => {
                for (c, (g, v)) in gr.iter_mut().zip(row).enumerate() {
                    let p = 1.0 / (1.0 + (-v).exp());
                    *g = (p - f64::from(u8::from(targets[i][c]))) / n as f64;
                }
            }
        }
    }
    Tensor::from_vec(&[n, k], grad)
}

fn check_labels(labels: &TaskLabels) -> Result<()> {
    let distinct = match labels {
        TaskLabels::Multiclass { targets, .. } => {
            let mut t = targets.clone();
            t.sort_unstable();
            t.dedup();
            t.len()
        }
        TaskLabels::Multilabel { classes, targets } => (0..classes.len()).filter(|&c| targets.iter().any(|t| t[c])).count(),
    };
    if distinct < 2 {
        return Err(Error::invalid("probe training labels contain a single class"));
    }
    Ok(())
}

/// Trains one probe with early stopping and returns it with the best-validation weights restored.
pub fn fit_probe(
    train_x: &[Vec<f64>],
    train_y: &TaskLabels,
    val_x: &[Vec<f64>],
    val_y: &TaskLabels,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<FittedProbe> {
    cfg.validate()?;
    if train_x.is_empty() || val_x.is_empty() || train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::shape("probe inputs and labels must be non-empty and aligned"));
    }
    check_labels(train_y)?;
    let scaler = Scaler::fit(train_x);
    let (xt, xv) = (scaler.apply(train_x), scaler.apply(val_x));
    let d = xt.dim(1);
    let k = train_y.n_classes();

    let mut store = ParamStore::new();
    let mut rng = stream(seed, Stream::Probe, &[0]);
    let mut layers = Vec::new();
    let mut width = d;
    for i in 0..=cfg.hidden_layers {
        let out = if i == cfg.hidden_layers { k } else { cfg.hidden_width };
        let l = Linear::new(&mut store, &format!("probe.{i}"), width, out, true, Init::FanIn, &mut rng);
        store.get_mut(l.weight).scale(cfg.init_scale);
        layers.push(l);
        width = out;
    }
    debug_assert!(store.params().iter().all(|p| p.kind == ParamKind::Weight || p.name.ends_with(".bias")));
    let adam = OptimizerConfig::Adamw(AdamWConfig { lr: cfg.lr, weight_decay: 0.0, ..AdamWConfig::default() });
    let mut opt = Optimizer::new(adam, &store)?;

    let evaluate = |store: &ParamStore| -> Result<f64> {
        let s = FittedProbe::forward_scores(store, &layers, &xv);
        let rows: Vec<Vec<f64>> = s.data().chunks(k).map(<[f64]>::to_vec).collect();
        compute_metric(&rows, val_y)
    };

    let n = train_x.len();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut bad_checks = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, Stream::Probe, &[1, epoch as u64]));
        for idx in order.chunks(cfg.batch_size) {
            let xb = Tensor::from_vec(&[idx.len(), d], idx.iter().flat_map(|&i| xt.row(i).iter().copied()).collect());
            let yb = train_y.subset(idx);
            let grads = {
                let mut g = Graph::new(&store, true);
                let out = forward(&mut g, &layers, &xb);
                let seed_grad = loss_grad(g.value(out), &yb);
                g.backward(out, seed_grad).take_params()
            };
            opt.step(&mut store, &grads, 1.0)?;
        }
        epochs_run = epoch;
        if epoch % cfg.check_every == 0 || epoch == cfg.max_epochs {
            let v = evaluate(&store)?;
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, store.clone()));
                bad_checks = 0;
            } else {
                bad_checks += 1;
                if bad_checks >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (val_metric, best_epoch, best_store) = best.expect("at least one validation check runs");
    Ok(FittedProbe {
        store: best_store,
        layers,
        scaler,
        run: ProbeRun { config_id: cfg.id.clone(), val_metric, epochs_run, best_epoch },
    })
}

/// Model selection over `grid` by validation metric; reports the test metric of the winner.
pub fn train_probe(
    task_name: &str,
    embeddings: &[Vec<f64>],
    labels: &TaskLabels,
    split: &Split,
    grid: &[ProbeConfig],
    seed: u64,
) -> Result<ProbeReport> {
    if grid.is_empty() {
        return Err(Error::Config("probe grid is empty".into()));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::shape(format!("{} embeddings for {} labels", embeddings.len(), labels.len())));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| embeddings[i].clone()).collect::<Vec<_>>();
    let (xtr, xva, xte) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let (ytr, yva, yte) = (labels.subset(&split.train), labels.subset(&split.val), labels.subset(&split.test));
    let mut runs = Vec::new();
    let mut chosen: Option<FittedProbe> = None;
    for (i, cfg) in grid.iter().enumerate() {
        let fitted = fit_probe(&xtr, &ytr, &xva, &yva, cfg, crate::rng::derive_seed(seed, Stream::Probe, &[i as u64]))?;
        log::info!("probe `{}`: val {:.4} after {} epochs (best at {})", cfg.id, fitted.run.val_metric, fitted.run.epochs_run, fitted.run.best_epoch);
        runs.push(fitted.run.clone());
        // Ties keep the earlier configuration.
        if chosen.as_ref().is_none_or(|c| fitted.run.val_metric > c.run.val_metric) {
            chosen = Some(fitted);
        }
    }
    let chosen = chosen.expect("grid is non-empty");
    let value = compute_metric(&chosen.predict(&xte), &yte)?;
    Ok(ProbeReport {
        task_name: task_name.to_string(),
        metric_name: labels.task_type().metric_name().to_string(),
        value,
        chosen_config_id: chosen.run.config_id.clone(),
        val_value: chosen.run.val_metric,
        train_size: xtr.len(),
        val_size: xva.len(),
        test_size: xte.len(),
        runs,
        embeddings_checkpoint_hash: String::new(),
        code_version: CODE_VERSION.to_string(),
    })
}

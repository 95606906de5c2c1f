use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    #[default]
    Multiclass,
    Multilabel,
}

impl TaskType {
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskType::Multiclass => "accuracy",
            TaskType::Multilabel => "mAP",
        }
    }
}

/// Targets of a probing task, indexed like the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskLabels {
    Multiclass { classes: Vec<String>, targets: Vec<usize> },
    Multilabel { classes: Vec<String>, targets: Vec<Vec<bool>> },
}

impl TaskLabels {
    pub fn len(&self) -> usize {
        match self {
            TaskLabels::Multiclass { targets, .. } => targets.len(),
            TaskLabels::Multilabel { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        match self {
            TaskLabels::Multiclass { classes, .. } | TaskLabels::Multilabel { classes, .. } => classes.len(),
        }
    }

    pub fn task_type(&self) -> TaskType {
        match self {
            TaskLabels::Multiclass { .. } => TaskType::Multiclass,
            TaskLabels::Multilabel { .. } => TaskType::Multilabel,
        }
    }

    /// Class used for stratification: the target, or the first positive label.
    pub fn strata(&self) -> Vec<usize> {
        match self {
            TaskLabels::Multiclass { targets, .. } => targets.clone(),
            TaskLabels::Multilabel { classes, targets } => {
                targets.iter().map(|t| t.iter().position(|&b| b).unwrap_or(classes.len())).collect()
            }
        }
    }

    pub fn subset(&self, idx: &[usize]) -> TaskLabels {
        match self {
            TaskLabels::Multiclass { classes, targets } => {
                TaskLabels::Multiclass { classes: classes.clone(), targets: idx.iter().map(|&i| targets[i]).collect() }
            }
            TaskLabels::Multilabel { classes, targets } => {
                TaskLabels::Multilabel { classes: classes.clone(), targets: idx.iter().map(|&i| targets[i].clone()).collect() }
            }
        }
    }
}

/// Accuracy for multiclass targets, mean average precision for multilabel ones.
///
/// `scores` holds one row of per-class scores per example.
pub fn compute_metric(scores: &[Vec<f64>], labels: &TaskLabels) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    match labels {
        TaskLabels::Multiclass { targets, .. } => {
            let hits = scores.iter().zip(targets).filter(|(row, &t)| argmax(row) == t).count();
            Ok(hits as f64 / targets.len() as f64)
        }
        TaskLabels::Multilabel { classes, targets } => {
            let mut aps = Vec::new();
            for c in 0..classes.len() {
                let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
                let pos: Vec<bool> = targets.iter().map(|t| t[c]).collect();
                match average_precision(&col, &pos) {
                    Some(ap) => aps.push(ap),
                    None => log::info!("class `{}` has no positives; excluded from mAP", classes[c]),
                }
            }
            if aps.is_empty() {
                return Err(Error::invalid("no class has a positive example"));
            }
            Ok(aps.iter().sum::<f64>() / aps.len() as f64)
        }
    }
}

/// First index of the largest score.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean of the precision at the rank of each positive. `None` without positives.
///
/// Ties are ordered by input position.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

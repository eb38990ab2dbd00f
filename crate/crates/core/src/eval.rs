//! Hold-out and leave-one-participant-out protocols, and classification
//! scores.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Requested test fraction; `None` for participant folds.
    pub fraction: Option<f64>,
    pub seed: Option<u64>,
    /// Held-out participant of a leave-one-out fold.
    pub fold_id: Option<u32>,
}

/// Seeded uniform split of `0..n` with `round(n·fraction)` test samples.
/// Not stratified; both index lists are ascending.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {fraction} outside (0, 1)")));
    }
    if n < 5 {
        return Err(Error::Domain(format!("hold-out split needs at least 5 samples, got {n}")));
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split {
        train,
        test,
        fraction: Some(fraction),
        seed: Some(seed),
        fold_id: None,
    })
}

/// One fold per participant, in ascending participant order. `groups[i]` is
/// the participant of sample `i`.
pub fn loocv_folds(groups: &[u32]) -> Result<Vec<Split>> {
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::Domain(format!(
            "leave-one-participant-out needs at least 2 participants, got {}",
            members.len()
        )));
    }
    Ok(members
        .iter()
        .map(|(&p, test)| Split {
            train: (0..groups.len()).filter(|&i| groups[i] != p).collect(),
            test: test.clone(),
            fraction: None,
            seed: None,
            fold_id: Some(p),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are actual classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub fold_id: Option<u32>,
}

impl EvalReport {
    /// Scores a confusion matrix. Undefined per-class F1 counts as 0.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Domain("confusion matrix is empty".into()));
        }
        let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let per_class_f1: Vec<f64> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let predicted: u64 = (0..c).map(|r| confusion[r][k]).sum();
                let actual: u64 = confusion[k].iter().sum();
                let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            })
            .collect();
        Ok(Self {
            accuracy: trace as f64 / total as f64,
            macro_f1: per_class_f1.iter().sum::<f64>() / c as f64,
            per_class_f1,
            confusion,
            fold_id: None,
        })
    }

    pub fn with_fold(mut self, fold_id: u32) -> Self {
        self.fold_id = Some(fold_id);
        self
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn score(predictions: &[usize], truths: &[usize], n_classes: usize) -> Result<EvalReport> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::Domain(format!(
            "need equal non-empty prediction and truth lists, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Domain(format!(
                "label {} outside {n_classes} classes",
                p.max(t)
            )));
        }
        confusion[t][p] += 1;
    }
    EvalReport::from_confusion(confusion)
}

/// Per-fold reports plus the pooled confusion over all folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<EvalReport>,
    pub pooled: EvalReport,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

impl CrossValReport {
    /// Merges fold reports, ordered by fold id.
    pub fn merge(mut folds: Vec<EvalReport>) -> Result<Self> {
        let first = folds
            .first()
            .ok_or_else(|| Error::Domain("no folds to merge".into()))?;
        let c = first.confusion.len();
        let mut pooled = vec![vec![0u64; c]; c];
        for f in &folds {
            if f.confusion.len() != c {
                return Err(Error::Shape("folds disagree on class count".into()));
            }
            for (row, frow) in pooled.iter_mut().zip(&f.confusion) {
                for (a, b) in row.iter_mut().zip(frow) {
                    *a += b;
                }
            }
        }
        folds.sort_by_key(|f| f.fold_id);
        let n = folds.len() as f64;
        Ok(Self {
            mean_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / n,
            mean_macro_f1: folds.iter().map(|f| f.macro_f1).sum::<f64>() / n,
            pooled: EvalReport::from_confusion(pooled)?,
            folds,
        })
    }
}

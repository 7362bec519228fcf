//! Second-order gradient-boosted trees for binary classification.
//!
//! Each round fits a depth-limited regression tree to the gradient and
//! hessian of the logistic loss. Leaf weights use L1 soft-thresholding and an
//! L2 penalty: `w = -T_α(G) / (H + λ)`.

mod io;
mod tree;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, FeatureSpec};
use crate::signal_io::Site;

pub use io::{load, save, MODEL_VERSION};
pub use tree::{best_split, Node, SplitCandidate, Tree};

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training matrix has no rows")]
    EmptyMatrix,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("feature catalog mismatch: {0}")]
    CatalogMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Objective {
    #[default]
    #[serde(rename = "binary:logistic")]
    LogisticBinary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            n_estimators: 100,
            max_depth: 3,
            min_child_weight: 3.0,
            reg_alpha: 0.3,
            reg_lambda: 1.0,
            subsample: 0.9,
            objective: Objective::LogisticBinary,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_child_weight >= 0.0 && self.reg_alpha >= 0.0 && self.reg_lambda >= 0.0) {
            return bad("min_child_weight, reg_alpha and reg_lambda must be nonnegative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the log-loss with respect to the logit.
pub fn logistic_grad_hess(logit: f64, label: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    (p - label, p * (1.0 - p))
}

/// Mean log-loss of `logits` against 0/1 `labels`.
pub fn log_loss(logits: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            // log(1 + e^z) - y z, written to stay finite for large |z|.
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            softplus - if y { z } else { 0.0 }
        })
        .sum();
    total / logits.len() as f64
}

pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

/// Minimizer of `G w + ½ (H + λ) w² + α |w|`.
pub fn leaf_weight(g: f64, h: f64, params: &GbdtParams) -> f64 {
    let denom = h + params.reg_lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    -soft_threshold(g, params.reg_alpha) / denom
}

/// A fitted ensemble without feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub base_logit: f64,
    pub trees: Vec<Tree>,
}

impl Booster {
    pub fn predict_logit_with(&self, x: &[f64], n_trees: usize) -> f64 {
        self.base_logit
            + self.trees[..n_trees.min(self.trees.len())]
                .iter()
                .map(|t| t.predict(x))
                .sum::<f64>()
    }

    pub fn predict_logit(&self, x: &[f64]) -> f64 {
        self.predict_logit_with(x, self.trees.len())
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.predict_logit(x))
    }
}

/// Boosts trees on column-major data. `columns[j][r]` is feature `j` of row `r`.
pub fn fit(
    columns: &[Vec<f64>],
    labels: &[bool],
    params: &GbdtParams,
) -> Result<Booster, GbdtError> {
    params.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(GbdtError::EmptyMatrix);
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(GbdtError::InvalidParams(
            "column length differs from label count".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == n {
        return Err(GbdtError::SingleClass);
    }
    let prior = n_pos as f64 / n as f64;
    let base_logit = (prior / (1.0 - prior)).ln();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();

    let data = tree::Presorted::new(columns);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_sample = ((params.subsample * n as f64).ceil() as usize).clamp(1, n);
    let mut logits = vec![base_logit; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    for _ in 0..params.n_estimators {
        for r in 0..n {
            (g[r], h[r]) = logistic_grad_hess(logits[r], y[r]);
        }
        let rows = if n_sample == n {
            (0..n).collect()
        } else {
            let mut rows = index::sample(&mut rng, n, n_sample).into_vec();
            rows.sort_unstable();
            rows
        };
        let t = tree::grow(&data, rows, &g, &h, params);
        for (r, logit) in logits.iter_mut().enumerate() {
            *logit += t.predict_by(|f| columns[f][r]);
        }
        trees.push(t);
    }
    Ok(Booster { base_logit, trees })
}

/// Context recorded alongside a trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub n_rows: usize,
    pub n_positive: usize,
    pub label_threshold: Option<f64>,
    pub site: Option<Site>,
    pub window_len: Option<usize>,
    pub rate_hz: Option<f64>,
}

/// A booster bound to an ordered feature catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub catalog: Vec<FeatureSpec>,
    pub training_meta: TrainingMeta,
    pub booster: Booster,
}

impl GbdtModel {
    /// Trains on every column of `x`.
    pub fn train(
        x: &FeatureMatrix,
        labels: &[bool],
        params: &GbdtParams,
    ) -> Result<Self, GbdtError> {
        if x.n_rows() != labels.len() {
            return Err(GbdtError::InvalidParams(format!(
                "{} rows but {} labels",
                x.n_rows(),
                labels.len()
            )));
        }
        if x.n_rows() == 0 {
            return Err(GbdtError::EmptyMatrix);
        }
        let columns: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
        let booster = fit(&columns, labels, params)?;
        Ok(Self {
            params: params.clone(),
            catalog: x.catalog.clone(),
            training_meta: TrainingMeta {
                n_rows: labels.len(),
                n_positive: labels.iter().filter(|&&l| l).count(),
                ..TrainingMeta::default()
            },
            booster,
        })
    }

    /// A model with no trees that always predicts `p`.
    pub fn constant(catalog: Vec<FeatureSpec>, p: f64) -> Self {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        Self {
            params: GbdtParams {
                n_estimators: 0,
                ..GbdtParams::default()
            },
            catalog,
            training_meta: TrainingMeta::default(),
            booster: Booster {
                base_logit: (p / (1.0 - p)).ln(),
                trees: Vec::new(),
            },
        }
    }

    /// Probability for a row laid out in catalog order.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.catalog.len() {
            return Err(GbdtError::CatalogMismatch(format!(
                "row has {} values, catalog has {}",
                x.len(),
                self.catalog.len()
            )));
        }
        Ok(self.booster.predict_proba(x))
    }

    /// Probability for a named feature vector; every catalog entry must be present.
    pub fn predict_proba(&self, values: &BTreeMap<FeatureSpec, f64>) -> Result<f64, GbdtError> {
        let row = self
            .catalog
            .iter()
            .map(|s| {
                values
                    .get(s)
                    .copied()
                    .ok_or_else(|| GbdtError::CatalogMismatch(format!("missing feature {s}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.predict_row(&row)
    }
}

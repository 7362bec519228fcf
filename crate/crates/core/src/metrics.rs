//! Precision, RMSE, longest silent interval and error CDFs.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::Site;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(labels: &[bool], predictions: &[bool]) -> Result<Self, MetricsError> {
        if labels.len() != predictions.len() {
            return Err(MetricsError::LengthMismatch {
                labels: labels.len(),
                predictions: predictions.len(),
            });
        }
        let mut c = Confusion::default();
        for (&l, &p) in labels.iter().zip(predictions) {
            match (l, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// `tp / (tp + fp)`, absent when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        let pos = self.tp + self.fp;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }
}

pub fn precision(labels: &[bool], predictions: &[bool]) -> Result<Option<f64>, MetricsError> {
    Ok(Confusion::from_pairs(labels, predictions)?.precision())
}

/// Root mean squared difference of `(estimate, reference)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let ss: f64 = pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum();
    Some((ss / pairs.len() as f64).sqrt())
}

pub fn mae(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Longest stretch of `span` without an emission, in seconds. The stretches
/// before the first and after the last emission count.
pub fn max_silent_interval(emitted_t_ms: &[i64], span: (i64, i64)) -> f64 {
    let (start, end) = span;
    let mut prev = start;
    let mut longest = 0;
    for &t in emitted_t_ms {
        longest = longest.max(t - prev);
        prev = t;
    }
    longest = longest.max(end - prev);
    longest as f64 / 1000.0
}

/// Empirical CDF as `(error, fraction ≤ error)` rows, one per distinct error.
pub fn error_cdf(abs_errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = abs_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    out
}

pub fn write_cdf_csv<W: Write>(mut w: W, cdf: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "abs_error,fraction")?;
    for (e, f) in cdf {
        writeln!(w, "{e},{f}")?;
    }
    w.flush()
}

/// Metrics for one held-out subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject_id: String,
    pub train_site: Site,
    pub test_site: Site,
    pub group: Option<String>,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub rmse_baseline: Option<f64>,
    pub rmse_enhanced: Option<f64>,
    pub rmse_pruned: Option<f64>,
    pub n_baseline: usize,
    pub n_enhanced: usize,
    pub n_pruned: usize,
    pub max_silent_interval_s: f64,
    pub n_emitted: usize,
    pub session_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_reports: usize,
    pub mean_precision: Option<f64>,
    /// Reports without a defined precision.
    pub precision_skipped: usize,
    pub mean_rmse_baseline: Option<f64>,
    pub mean_rmse_enhanced: Option<f64>,
    pub mean_rmse_pruned: Option<f64>,
    pub rmse_pruned_skipped: usize,
    pub pooled_rmse_baseline: Option<f64>,
    pub pooled_rmse_enhanced: Option<f64>,
    pub pooled_rmse_pruned: Option<f64>,
    pub mean_max_silent_s: Option<f64>,
    pub mean_session_s: Option<f64>,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

fn pooled(reports: &[EvalReport], f: impl Fn(&EvalReport) -> (Option<f64>, usize)) -> Option<f64> {
    let (mut ss, mut n) = (0.0, 0usize);
    for r in reports {
        if let (Some(v), k) = f(r) {
            ss += v * v * k as f64;
            n += k;
        }
    }
    (n > 0).then(|| (ss / n as f64).sqrt())
}

/// Means over reports (absent values skipped) and RMSEs pooled over pairs.
pub fn aggregate(reports: &[EvalReport]) -> Aggregate {
    let (mean_precision, precision_skipped) = mean_present(reports.iter().map(|r| r.precision));
    let (mean_rmse_pruned, rmse_pruned_skipped) =
        mean_present(reports.iter().map(|r| r.rmse_pruned));
    Aggregate {
        n_reports: reports.len(),
        mean_precision,
        precision_skipped,
        mean_rmse_baseline: mean_present(reports.iter().map(|r| r.rmse_baseline)).0,
        mean_rmse_enhanced: mean_present(reports.iter().map(|r| r.rmse_enhanced)).0,
        mean_rmse_pruned,
        rmse_pruned_skipped,
        pooled_rmse_baseline: pooled(reports, |r| (r.rmse_baseline, r.n_baseline)),
        pooled_rmse_enhanced: pooled(reports, |r| (r.rmse_enhanced, r.n_enhanced)),
        pooled_rmse_pruned: pooled(reports, |r| (r.rmse_pruned, r.n_pruned)),
        mean_max_silent_s: mean_present(reports.iter().map(|r| Some(r.max_silent_interval_s))).0,
        mean_session_s: mean_present(reports.iter().map(|r| Some(r.session_s))).0,
    }
}

pub const AGGREGATE_HEADER: &str =
    "subject,site,group,precision,rmse_baseline,rmse_enhanced,rmse_pruned,max_silent_s,n_emitted";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per report; absent values are empty fields.
pub fn write_aggregate_csv<W: Write>(mut w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.subject_id,
            r.test_site,
            r.group.as_deref().unwrap_or(""),
            opt(r.precision),
            opt(r.rmse_baseline),
            opt(r.rmse_enhanced),
            opt(r.rmse_pruned),
            r.max_silent_interval_s,
            r.n_emitted
        )?;
    }
    w.flush()
}

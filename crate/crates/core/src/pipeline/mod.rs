//! Alignment, labeling, cross-validation, pruning and sweeps.

mod eval;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    default_catalog, extract_row, FeatureMatrix, FeatureSpec, SampleWindow, SelectionError,
};
use crate::gbdt::{GbdtError, GbdtParams};
use crate::signal_io::{load_regular, RegularStream, SignalError, Site, SkinTone, StreamKind};
use crate::spo2::{baseline_spo2, enhanced_spo2, CalibrationCurve, EnhancedConfig, Spo2Estimate};
use crate::window::{WindowConfig, WindowError};

pub use eval::{
    calibrate_user, evaluate_subject, evaluate_with, prune, run_group_experiment, run_loocv, sweep,
    train_model, write_sweep_csv, CohortSplit, Fold, SweepAxis, SweepRow, TrainedModel,
    SWEEP_HEADER,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("subject {0}: no wrist window has a fingertip reading within tolerance")]
    NoOverlap(String),
    #[error("training data for {0} contains a single class")]
    SingleClass(String),
    #[error("group `{0}` has no subjects")]
    EmptyGroup(String),
    #[error(
        "user stream covers {available_s:.1} s but {needed_s:.1} s of calibration were requested"
    )]
    InsufficientUserData { needed_s: f64, available_s: f64 },
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub reliability_threshold_pct: f64,
    pub alignment_tolerance_ms: i64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            reliability_threshold_pct: 2.0,
            alignment_tolerance_ms: 500,
        }
    }
}

/// Everything an experiment needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_len: usize,
    pub label: LabelConfig,
    pub calibration: CalibrationCurve,
    pub enhanced: EnhancedConfig,
    pub gbdt: GbdtParams,
    pub fdr_q: f64,
    /// Minimum predicted probability for a window to be kept.
    pub decision_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len: 100,
            label: LabelConfig::default(),
            calibration: CalibrationCurve::default(),
            enhanced: EnhancedConfig::default(),
            gbdt: GbdtParams::default(),
            fdr_q: 0.05,
            decision_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        WindowConfig::non_overlapping(self.window_len)?;
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.label.reliability_threshold_pct.is_nan()
            || self.label.reliability_threshold_pct <= 0.0
        {
            return bad("reliability threshold must be positive");
        }
        if self.label.alignment_tolerance_ms < 0 {
            return bad("alignment tolerance must be nonnegative");
        }
        if !(self.fdr_q > 0.0 && self.fdr_q < 1.0) {
            return bad("fdr_q must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return bad("decision_threshold must lie in [0, 1]");
        }
        self.gbdt.validate()?;
        Ok(())
    }
}

/// For each `query` timestamp, the index of the nearest `target` timestamp
/// within `tolerance_ms` (earlier wins a tie). Both inputs must be sorted.
pub fn align_timestamps(query: &[i64], target: &[i64], tolerance_ms: i64) -> Vec<Option<usize>> {
    let mut j = 0;
    query
        .iter()
        .map(|&t| {
            while j + 1 < target.len() && target[j + 1] <= t {
                j += 1;
            }
            let mut best: Option<(i64, usize)> = None;
            for k in [j, j + 1] {
                if let Some(&u) = target.get(k) {
                    let d = (u - t).abs();
                    if d <= tolerance_ms && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, k));
                    }
                }
            }
            best.map(|(_, k)| k)
        })
        .collect()
}

/// A wrist estimate and the reference reading it was paired with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedReading {
    pub wrist: Spo2Estimate,
    pub reference_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<PairedReading>,
    /// Wrist estimates without a reference inside the tolerance.
    pub dropped: usize,
}

/// Pairs each wrist estimate with the nearest emitted reference estimate.
pub fn align_streams(
    wrist: &[Spo2Estimate],
    reference: &[Spo2Estimate],
    cfg: &LabelConfig,
) -> Result<Alignment, PipelineError> {
    let refs: Vec<(i64, f64)> = reference
        .iter()
        .filter_map(|e| e.spo2_pct.map(|v| (e.t_ms, v)))
        .collect();
    let ref_t: Vec<i64> = refs.iter().map(|r| r.0).collect();
    let wrist_t: Vec<i64> = wrist.iter().map(|e| e.t_ms).collect();
    let idx = align_timestamps(&wrist_t, &ref_t, cfg.alignment_tolerance_ms);
    let pairs: Vec<PairedReading> = wrist
        .iter()
        .zip(&idx)
        .filter_map(|(w, i)| {
            i.map(|i| PairedReading {
                wrist: *w,
                reference_pct: refs[i].1,
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(PipelineError::NoOverlap(String::new()));
    }
    Ok(Alignment {
        dropped: wrist.len() - pairs.len(),
        pairs,
    })
}

/// `|wrist - reference| ≤ threshold`; a window without a reading is unreliable.
pub fn is_reliable(wrist: Option<f64>, reference: f64, threshold: f64) -> bool {
    wrist.is_some_and(|w| (w - reference).abs() <= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledWindow {
    pub t_ms: i64,
    pub wrist_estimate: Spo2Estimate,
    pub reference_pct: f64,
    pub reliable: bool,
}

pub fn label_windows(paired: &[PairedReading], cfg: &LabelConfig) -> Vec<LabeledWindow> {
    paired
        .iter()
        .map(|p| LabeledWindow {
            t_ms: p.wrist.t_ms,
            wrist_estimate: p.wrist,
            reference_pct: p.reference_pct,
            reliable: is_reliable(
                p.wrist.spo2_pct,
                p.reference_pct,
                cfg.reliability_threshold_pct,
            ),
        })
        .collect()
}

/// Share of reliable windows.
pub fn class_balance(labels: &[LabeledWindow]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.reliable).count() as f64 / labels.len() as f64
}

/// Regularized wrist and fingertip streams of one subject.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub id: String,
    pub site: Site,
    pub tone: SkinTone,
    pub wrist: RegularStream,
    pub finger: RegularStream,
}

impl SubjectData {
    pub fn new(wrist: RegularStream, finger: RegularStream) -> Self {
        Self {
            id: wrist.meta.subject_id.clone(),
            site: wrist.meta.site,
            tone: wrist.meta.skin_tone,
            wrist,
            finger,
        }
    }

    pub fn load(wrist_csv: &Path, finger_csv: &Path) -> Result<Self, PipelineError> {
        let (wrist, _) = load_regular(wrist_csv, StreamKind::Wrist)?;
        let (finger, _) = load_regular(finger_csv, StreamKind::Fingertip)?;
        Ok(Self::new(wrist, finger))
    }

    /// Reference readings: enhanced estimates of the fingertip stream on
    /// step-1 windows, as `(t_ms, spo2)`.
    pub fn reference(&self, cfg: &PipelineConfig) -> Vec<(i64, f64)> {
        let w = WindowConfig {
            window_len: cfg.window_len,
            step: 1,
        };
        enhanced_spo2(&self.finger, &cfg.calibration, &cfg.enhanced, w)
            .into_iter()
            .filter_map(|e| e.spo2_pct.map(|v| (e.t_ms, v)))
            .collect()
    }
}

/// One step-1 wrist window as seen at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalWindow {
    pub start: usize,
    pub t_ms: i64,
    pub baseline: Option<f64>,
    pub enhanced: Option<f64>,
    pub reference: Option<f64>,
    /// Row of [`PreparedSubject::eval_features`] when the enhanced gate passed.
    pub feature_row: Option<usize>,
}

/// Non-overlapping labeled windows with features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRows {
    pub starts: Vec<usize>,
    pub wrist: Vec<Option<f64>>,
    pub reference: Vec<f64>,
    pub features: FeatureMatrix,
}

impl TrainingRows {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn labels(&self, threshold: f64) -> Vec<bool> {
        self.wrist
            .iter()
            .zip(&self.reference)
            .map(|(&w, &r)| is_reliable(w, r, threshold))
            .collect()
    }
}

/// A subject with every window-level quantity precomputed for one window length.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub site: Site,
    pub tone: SkinTone,
    pub window_len: usize,
    pub rate_hz: f64,
    pub span_ms: (i64, i64),
    pub eval: Vec<EvalWindow>,
    pub eval_features: FeatureMatrix,
    pub train: TrainingRows,
}

impl PreparedSubject {
    pub fn session_s(&self) -> f64 {
        (self.span_ms.1 - self.span_ms.0) as f64 / 1000.0
    }
}

/// Computes estimates, references and features for one subject.
pub fn prepare_subject(
    data: &SubjectData,
    cfg: &PipelineConfig,
    catalog: &[FeatureSpec],
) -> Result<PreparedSubject, PipelineError> {
    cfg.validate()?;
    let n = cfg.window_len;
    let reference = data.reference(cfg);
    let ref_t: Vec<i64> = reference.iter().map(|r| r.0).collect();
    let tol = cfg.label.alignment_tolerance_ms;
    let stream = &data.wrist;

    let sliding = WindowConfig {
        window_len: n,
        step: 1,
    };
    let base = baseline_spo2(stream, &cfg.calibration, sliding);
    let enh = enhanced_spo2(stream, &cfg.calibration, &cfg.enhanced, sliding);
    let t: Vec<i64> = base.iter().map(|e| e.t_ms).collect();
    let matched = align_timestamps(&t, &ref_t, tol);
    if !t.is_empty() && matched.iter().all(Option::is_none) {
        return Err(PipelineError::NoOverlap(data.id.clone()));
    }

    let mut eval_features = FeatureMatrix::new(catalog.to_vec());
    let mut row = Vec::with_capacity(catalog.len());
    let mut eval = Vec::with_capacity(base.len());
    for ((b, e), m) in base.iter().zip(&enh).zip(&matched) {
        let feature_row = if e.spo2_pct.is_some() {
            row.clear();
            extract_row(&SampleWindow::at(stream, e.start, n), catalog, &mut row);
            eval_features.push_row(e.t_ms, &row);
            Some(eval_features.n_rows() - 1)
        } else {
            None
        };
        eval.push(EvalWindow {
            start: b.start,
            t_ms: b.t_ms,
            baseline: b.spo2_pct,
            enhanced: e.spo2_pct,
            reference: m.map(|i| reference[i].1),
            feature_row,
        });
    }

    let mut train = TrainingRows {
        starts: Vec::new(),
        wrist: Vec::new(),
        reference: Vec::new(),
        features: FeatureMatrix::new(catalog.to_vec()),
    };
    for s in WindowConfig::non_overlapping(n)?.starts(stream.len()) {
        if stream.gaps_in(s, n) > 0 {
            continue;
        }
        // Step-1 window `s` is the one starting at sample `s`.
        let w = &eval[s];
        let Some(r) = w.reference else { continue };
        row.clear();
        extract_row(&SampleWindow::at(stream, s, n), catalog, &mut row);
        train.features.push_row(w.t_ms, &row);
        train.starts.push(s);
        train.wrist.push(w.baseline);
        train.reference.push(r);
    }

    Ok(PreparedSubject {
        id: data.id.clone(),
        site: data.site,
        tone: data.tone,
        window_len: n,
        rate_hz: stream.rate_hz(),
        span_ms: stream.span_ms(),
        eval,
        eval_features,
        train,
    })
}

/// Prepares every subject with the default catalog, sorted by id.
pub fn prepare_cohort(
    subjects: &[SubjectData],
    cfg: &PipelineConfig,
) -> Result<Vec<PreparedSubject>, PipelineError> {
    let catalog = default_catalog();
    let mut out = subjects
        .iter()
        .map(|s| prepare_subject(s, cfg, &catalog))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Training rows of several subjects stacked in subject-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: FeatureMatrix,
    pub labels: Vec<bool>,
    pub subjects: Vec<String>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Appends rows of `subject`, keeping only the first `limit` if given.
    pub fn extend_from(&mut self, subject: &PreparedSubject, threshold: f64, limit: Option<usize>) {
        let labels = subject.train.labels(threshold);
        let take = limit.unwrap_or(labels.len()).min(labels.len());
        for (i, &label) in labels.iter().enumerate().take(take) {
            self.features.push_row(
                subject.train.features.t_ms[i],
                subject.train.features.row(i),
            );
            self.labels.push(label);
            self.subjects.push(subject.id.clone());
        }
    }
}

/// Stacks the training rows of `subjects` in id order.
pub fn build_training_set(subjects: &[&PreparedSubject], threshold: f64) -> TrainingSet {
    let catalog = subjects
        .first()
        .map(|s| s.train.features.catalog.clone())
        .unwrap_or_default();
    let mut set = TrainingSet {
        features: FeatureMatrix::new(catalog),
        labels: Vec::new(),
        subjects: Vec::new(),
    };
    let mut sorted = subjects.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for s in sorted {
        set.extend_from(s, threshold, None);
    }
    set
}

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    build_training_set, is_reliable, prepare_cohort, EvalWindow, PipelineConfig, PipelineError,
    PreparedSubject, SubjectData, TrainingSet,
};
use crate::features::{extract_row, select_features, SampleWindow, SelectionResult};
use crate::gbdt::{GbdtError, GbdtModel};
use crate::metrics::{aggregate, max_silent_interval, rmse, Aggregate, Confusion, EvalReport};
use crate::signal_io::{RegularStream, Site};
use crate::spo2::{enhanced_spo2, Algorithm, CalibrationCurve, EnhancedConfig, Spo2Estimate};
use crate::window::WindowConfig;

/// A model together with the selection that chose its features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: GbdtModel,
    pub selection: SelectionResult,
}

/// Selects features on `set` and trains a classifier on the kept columns.
/// When no feature survives the correction, the whole catalog is used.
pub fn train_model(
    set: &TrainingSet,
    cfg: &PipelineConfig,
    site: Option<Site>,
) -> Result<TrainedModel, PipelineError> {
    let label = || set.subjects.first().cloned().unwrap_or_default();
    if set.is_empty() {
        return Err(GbdtError::EmptyMatrix.into());
    }
    let n_pos = set.labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == set.len() {
        return Err(PipelineError::SingleClass(label()));
    }
    let selection = select_features(&set.features, &set.labels, cfg.fdr_q)?;
    let kept: Vec<_> = if selection.kept.is_empty() {
        set.features.catalog.clone()
    } else {
        // Keep catalog order so column layout does not depend on p-values.
        set.features
            .catalog
            .iter()
            .filter(|s| selection.kept.contains(s))
            .copied()
            .collect()
    };
    let x = set
        .features
        .select_columns(&kept)
        .expect("kept specs come from the catalog");
    let mut model = GbdtModel::train(&x, &set.labels, &cfg.gbdt)?;
    model.training_meta.label_threshold = Some(cfg.label.reliability_threshold_pct);
    model.training_meta.site = site;
    model.training_meta.window_len = Some(cfg.window_len);
    Ok(TrainedModel { model, selection })
}

/// Scores a prepared subject with an arbitrary keep/drop rule applied to
/// windows that passed the enhanced gate.
pub fn evaluate_with(
    subject: &PreparedSubject,
    threshold: f64,
    train_site: Site,
    group: Option<String>,
    mut keep: impl FnMut(&EvalWindow, &[f64]) -> bool,
) -> EvalReport {
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    let mut base_pairs = Vec::new();
    let mut enh_pairs = Vec::new();
    let mut pruned_pairs = Vec::new();
    let mut emitted = Vec::new();
    for w in &subject.eval {
        if let (Some(b), Some(r)) = (w.baseline, w.reference) {
            base_pairs.push((b, r));
        }
        let (Some(e), Some(row)) = (w.enhanced, w.feature_row) else {
            continue;
        };
        let kept = keep(w, subject.eval_features.row(row));
        if kept {
            emitted.push(w.t_ms);
        }
        if let Some(r) = w.reference {
            enh_pairs.push((e, r));
            labels.push(is_reliable(Some(e), r, threshold));
            preds.push(kept);
            if kept {
                pruned_pairs.push((e, r));
            }
        }
    }
    let confusion = Confusion::from_pairs(&labels, &preds).expect("equal lengths");
    EvalReport {
        subject_id: subject.id.clone(),
        train_site,
        test_site: subject.site,
        group,
        confusion,
        precision: confusion.precision(),
        recall: confusion.recall(),
        rmse_baseline: rmse(&base_pairs),
        rmse_enhanced: rmse(&enh_pairs),
        rmse_pruned: rmse(&pruned_pairs),
        n_baseline: base_pairs.len(),
        n_enhanced: enh_pairs.len(),
        n_pruned: pruned_pairs.len(),
        max_silent_interval_s: max_silent_interval(&emitted, subject.span_ms),
        n_emitted: emitted.len(),
        session_s: subject.session_s(),
    }
}

/// Scores a prepared subject with a trained model.
pub fn evaluate_subject(
    subject: &PreparedSubject,
    model: &GbdtModel,
    cfg: &PipelineConfig,
    train_site: Site,
    group: Option<String>,
) -> Result<EvalReport, PipelineError> {
    let idx = subject
        .eval_features
        .column_indices(&model.catalog)
        .ok_or_else(|| {
            GbdtError::CatalogMismatch(format!("subject {} lacks model features", subject.id))
        })?;
    let mut x = vec![0.0; idx.len()];
    Ok(evaluate_with(
        subject,
        cfg.label.reliability_threshold_pct,
        train_site,
        group,
        |_, row| {
            for (dst, &j) in x.iter_mut().zip(&idx) {
                *dst = row[j];
            }
            model.booster.predict_proba(&x) >= cfg.decision_threshold
        },
    ))
}

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub subject_id: String,
    pub train_subjects: Vec<String>,
    pub n_train_rows: usize,
    pub n_selected: usize,
    /// `None` when the fold was skipped; see `diagnostic`.
    pub report: Option<EvalReport>,
    pub diagnostic: Option<String>,
}

fn common_site(subjects: &[&PreparedSubject]) -> Option<Site> {
    let first = subjects.first()?.site;
    subjects.iter().all(|s| s.site == first).then_some(first)
}

/// Trains on all subjects but one and tests on the held-out one, for each
/// subject in id order. Folds whose training labels have one class are
/// skipped with a diagnostic.
pub fn run_loocv(
    subjects: &[PreparedSubject],
    cfg: &PipelineConfig,
) -> Result<Vec<Fold>, PipelineError> {
    if subjects.len() < 2 {
        return Err(PipelineError::InvalidConfig(
            "cross-validation needs at least two subjects".into(),
        ));
    }
    let mut order: Vec<&PreparedSubject> = subjects.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let thr = cfg.label.reliability_threshold_pct;
    let mut folds = Vec::with_capacity(order.len());
    for held in &order {
        let train: Vec<&PreparedSubject> =
            order.iter().copied().filter(|s| s.id != held.id).collect();
        let set = build_training_set(&train, thr);
        let site = common_site(&train).unwrap_or(held.site);
        let mut fold = Fold {
            subject_id: held.id.clone(),
            train_subjects: train.iter().map(|s| s.id.clone()).collect(),
            n_train_rows: set.len(),
            n_selected: 0,
            report: None,
            diagnostic: None,
        };
        match train_model(&set, cfg, Some(site)) {
            Ok(t) => {
                fold.n_selected = t.model.catalog.len();
                fold.report = Some(evaluate_subject(held, &t.model, cfg, site, None)?);
            }
            Err(PipelineError::SingleClass(_)) => {
                fold.diagnostic = Some("training labels contain a single class".into());
            }
            Err(e) => return Err(e),
        }
        folds.push(fold);
    }
    Ok(folds)
}

/// Train and test sides of a group experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub name: String,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

impl CohortSplit {
    /// Subjects selected by a predicate on each side.
    pub fn by(
        name: impl Into<String>,
        subjects: &[PreparedSubject],
        train: impl Fn(&PreparedSubject) -> bool,
        test: impl Fn(&PreparedSubject) -> bool,
    ) -> Self {
        let ids = |f: &dyn Fn(&PreparedSubject) -> bool| {
            subjects
                .iter()
                .filter(|s| f(s))
                .map(|s| s.id.clone())
                .collect()
        };
        Self {
            name: name.into(),
            train_subjects: ids(&train),
            test_subjects: ids(&test),
        }
    }
}

/// Trains on one side of `split` and reports on every subject of the other.
pub fn run_group_experiment(
    split: &CohortSplit,
    subjects: &[PreparedSubject],
    cfg: &PipelineConfig,
) -> Result<Vec<EvalReport>, PipelineError> {
    let pick = |ids: &[String]| -> Vec<&PreparedSubject> {
        let mut v: Vec<&PreparedSubject> =
            subjects.iter().filter(|s| ids.contains(&s.id)).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    let train = pick(&split.train_subjects);
    let test = pick(&split.test_subjects);
    if train.is_empty() {
        return Err(PipelineError::EmptyGroup(format!("{} (train)", split.name)));
    }
    if test.is_empty() {
        return Err(PipelineError::EmptyGroup(format!("{} (test)", split.name)));
    }
    let set = build_training_set(&train, cfg.label.reliability_threshold_pct);
    let site = common_site(&train).unwrap_or(train[0].site);
    let t = train_model(&set, cfg, Some(site))?;
    test.iter()
        .map(|s| evaluate_subject(s, &t.model, cfg, site, Some(split.name.clone())))
        .collect()
}

/// Retrains from scratch on `base` plus the user's labeled windows that lie
/// entirely inside the first `minutes` of the session. Returns the model and
/// the number of user rows added.
pub fn calibrate_user(
    base: &TrainingSet,
    user: &PreparedSubject,
    minutes: f64,
    cfg: &PipelineConfig,
) -> Result<(TrainedModel, usize), PipelineError> {
    if minutes.is_nan() || minutes < 0.0 {
        return Err(PipelineError::InvalidConfig(
            "minutes must be nonnegative".into(),
        ));
    }
    let n_samples = user.eval.len() + user.window_len - 1;
    let needed = minutes * 60.0 * user.rate_hz;
    if needed > n_samples as f64 + 1e-9 {
        return Err(PipelineError::InsufficientUserData {
            needed_s: minutes * 60.0,
            available_s: n_samples as f64 / user.rate_hz,
        });
    }
    let limit = user
        .train
        .starts
        .iter()
        .take_while(|&&s| (s + user.window_len) as f64 <= needed + 1e-9)
        .count();
    let mut set = base.clone();
    set.extend_from(user, cfg.label.reliability_threshold_pct, Some(limit));
    let site = user.site;
    Ok((train_model(&set, cfg, Some(site))?, limit))
}

/// Step-1 enhanced estimates that the model keeps, tagged as pruned output.
pub fn prune(
    stream: &RegularStream,
    model: &GbdtModel,
    calib: &CalibrationCurve,
    enhanced: &EnhancedConfig,
    window_len: usize,
    decision_threshold: f64,
) -> Result<Vec<Spo2Estimate>, PipelineError> {
    let window = WindowConfig::sliding(window_len)?;
    let mut row = Vec::with_capacity(model.catalog.len());
    let mut out = Vec::new();
    for mut e in enhanced_spo2(stream, calib, enhanced, window) {
        if !e.is_emitted() {
            continue;
        }
        row.clear();
        extract_row(
            &SampleWindow::at(stream, e.start, window_len),
            &model.catalog,
            &mut row,
        );
        if model.predict_row(&row)? >= decision_threshold {
            e.algorithm = Algorithm::Pruned;
            out.push(e);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    WindowLen,
    ReliabilityThreshold,
    DecisionThreshold,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::WindowLen => "window_len",
            SweepAxis::ReliabilityThreshold => "reliability_threshold",
            SweepAxis::DecisionThreshold => "decision_threshold",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            SweepAxis::WindowLen,
            SweepAxis::ReliabilityThreshold,
            SweepAxis::DecisionThreshold,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
        .ok_or_else(|| format!("unknown sweep axis `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub n_train_rows: usize,
    pub n_emitted: usize,
    pub n_folds: usize,
    pub aggregate: Aggregate,
}

/// One full cross-validation per value of `axis`.
pub fn sweep(
    axis: SweepAxis,
    values: &[f64],
    subjects: &[SubjectData],
    cfg: &PipelineConfig,
) -> Result<Vec<SweepRow>, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::InvalidConfig(
            "sweep needs at least one value".into(),
        ));
    }
    let mut prepared: BTreeMap<usize, Vec<PreparedSubject>> = BTreeMap::new();
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = cfg.clone();
        match axis {
            SweepAxis::WindowLen => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(PipelineError::InvalidConfig(format!(
                        "window length {value}"
                    )));
                }
                c.window_len = value as usize;
            }
            SweepAxis::ReliabilityThreshold => c.label.reliability_threshold_pct = value,
            SweepAxis::DecisionThreshold => c.decision_threshold = value,
        }
        c.validate()?;
        let cohort = match prepared.entry(c.window_len) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(prepare_cohort(subjects, &c)?),
        };
        let folds = run_loocv(cohort, &c)?;
        let reports: Vec<EvalReport> = folds.iter().filter_map(|f| f.report.clone()).collect();
        rows.push(SweepRow {
            value,
            n_train_rows: cohort.iter().map(|s| s.train.len()).sum(),
            n_emitted: reports.iter().map(|r| r.n_emitted).sum(),
            n_folds: reports.len(),
            aggregate: aggregate(&reports),
        });
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "value,precision,rmse_baseline,rmse_enhanced,rmse_pruned,max_silent_s,n_train_rows,n_emitted,n_folds";

/// Plot-ready sweep table; absent values are empty fields.
pub fn write_sweep_csv<W: Write>(
    mut w: W,
    axis: SweepAxis,
    rows: &[SweepRow],
) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(w, "{}", SWEEP_HEADER.replacen("value", axis.as_str(), 1))?;
    for r in rows {
        let a = &r.aggregate;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.value,
            opt(a.mean_precision),
            opt(a.mean_rmse_baseline),
            opt(a.mean_rmse_enhanced),
            opt(a.mean_rmse_pruned),
            opt(a.mean_max_silent_s),
            r.n_train_rows,
            r.n_emitted,
            r.n_folds
        )?;
    }
    w.flush()
}

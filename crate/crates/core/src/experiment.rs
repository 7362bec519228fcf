//! Experiment configs, command runners and replayable manifests.
//!
//! Every runner writes its outputs plus a `manifest.json` into an output
//! directory. The manifest holds the full invocation (with absolute input
//! paths), the seed, component versions and SHA-256 digests of all inputs
//! and outputs, so [`replay`] can re-run it and produce the same bytes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::default_catalog;
use crate::gbdt::{self, GbdtError, GbdtModel, GbdtParams, MODEL_VERSION};
use crate::metrics::{aggregate, write_aggregate_csv, Aggregate, EvalReport};
use crate::pipeline::{
    build_training_set, evaluate_subject, prepare_subject, prune, run_loocv, sweep, train_model,
    write_sweep_csv, Fold, LabelConfig, PipelineConfig, PipelineError, PreparedSubject,
    SubjectData, SweepAxis, SweepRow, TrainedModel,
};
use crate::signal_io::{
    load_regular, meta_path, read_meta, read_records, regularize, to_frames, SignalError,
    StreamKind,
};
use crate::spo2::{
    baseline_spo2, enhanced_spo2, write_estimates, Algorithm, CalibrationCurve, EnhancedConfig,
    Spo2Estimate,
};
use crate::synth::{gen_cohort, write_cohort, CohortConfig, SynthError};
use crate::window::WindowConfig;

pub const CONFIG_VERSION: u64 = 1;
pub const MANIFEST_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("every fold failed")]
    AllFoldsFailed,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl ExperimentError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Pipeline(PipelineError::InvalidConfig(_))
            | ExperimentError::Pipeline(PipelineError::Gbdt(GbdtError::InvalidParams(_)))
            | ExperimentError::Gbdt(GbdtError::InvalidParams(_))
            | ExperimentError::Synth(SynthError::ConfigOutOfRange(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

/// One subject's recordings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortEntry {
    pub wrist_csv: PathBuf,
    pub finger_csv: PathBuf,
    /// Wrist metadata; defaults to the `.meta` sidecar of `wrist_csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u64,
    pub cohort: Vec<CohortEntry>,
    /// Window length in samples.
    pub window: usize,
    pub label: LabelConfig,
    pub gbdt_params: GbdtParams,
    pub calibration: CalibrationCurve,
    pub enhanced: EnhancedConfig,
    pub fdr_q: f64,
    pub decision_threshold: f64,
    /// Overrides `gbdt_params.seed`.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            version: CONFIG_VERSION,
            cohort: Vec::new(),
            window: p.window_len,
            label: p.label,
            gbdt_params: p.gbdt,
            calibration: p.calibration,
            enhanced: p.enhanced,
            fdr_q: p.fdr_q,
            decision_threshold: p.decision_threshold,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window_len: self.window,
            label: self.label,
            calibration: self.calibration,
            enhanced: self.enhanced,
            gbdt: GbdtParams {
                seed: self.seed,
                ..self.gbdt_params.clone()
            },
            fdr_q: self.fdr_q,
            decision_threshold: self.decision_threshold,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.version != CONFIG_VERSION {
            return Err(ExperimentError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.cohort.is_empty() {
            return Err(ExperimentError::Config("cohort is empty".into()));
        }
        self.pipeline().validate().map_err(config_err)
    }

    /// Parses a config, resolving relative paths against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: Self = serde_json::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        for e in &mut cfg.cohort {
            e.wrist_csv = absolute(base_dir, &e.wrist_csv)?;
            e.finger_csv = absolute(base_dir, &e.finger_csv)?;
            if let Some(m) = &mut e.meta {
                *m = absolute(base_dir, m)?;
            }
        }
        Ok(cfg)
    }

    /// Reads a config file. A manifest of a train, evaluate or sweep run is
    /// accepted too and yields the config it recorded.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if is_manifest(&text) {
            let m = Manifest::from_json(&text)?;
            return match m.invocation {
                Invocation::Train { config }
                | Invocation::Evaluate { config, .. }
                | Invocation::Sweep { config, .. } => Ok(config),
                other => Err(ExperimentError::Config(format!(
                    "manifest of a `{}` run holds no experiment config",
                    other.command()
                ))),
            };
        }
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        pretty(self)
    }
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf, ExperimentError> {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    fs::canonicalize(&joined).map_err(io_err(&joined))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn is_manifest(text: &str) -> bool {
    serde_json::from_str::<Value>(text)
        .ok()
        .and_then(|v| v.get("manifest_version").cloned())
        .is_some()
}

/// Reads a cohort entry into regularized streams.
pub fn load_subject(entry: &CohortEntry) -> Result<SubjectData, ExperimentError> {
    let Some(meta_file) = &entry.meta else {
        return Ok(SubjectData::load(&entry.wrist_csv, &entry.finger_csv)?);
    };
    let meta = read_meta(meta_file)?;
    let file = File::open(&entry.wrist_csv).map_err(io_err(&entry.wrist_csv))?;
    let (records, _) = read_records(file, StreamKind::Wrist)?;
    let wrist = regularize(&to_frames(&records), &meta)?;
    let (finger, _) = load_regular(&entry.finger_csv, StreamKind::Fingertip)?;
    Ok(SubjectData::new(wrist, finger))
}

pub fn load_cohort(cfg: &ExperimentConfig) -> Result<Vec<SubjectData>, ExperimentError> {
    cfg.cohort.iter().map(load_subject).collect()
}

/// What a run did, with everything needed to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Simulate {
        config: CohortConfig,
    },
    Spo2 {
        stream: PathBuf,
        algorithm: Algorithm,
        calibration: CalibrationCurve,
        enhanced: EnhancedConfig,
        window_len: usize,
        step: usize,
    },
    Train {
        config: ExperimentConfig,
    },
    Evaluate {
        config: ExperimentConfig,
        model: Option<PathBuf>,
    },
    Prune {
        stream: PathBuf,
        model: PathBuf,
        calibration: CalibrationCurve,
        enhanced: EnhancedConfig,
        decision_threshold: f64,
    },
    Sweep {
        config: ExperimentConfig,
        axis: SweepAxis,
        values: Vec<f64>,
    },
}

impl Invocation {
    pub fn command(&self) -> &'static str {
        match self {
            Invocation::Simulate { .. } => "simulate",
            Invocation::Spo2 { .. } => "spo2",
            Invocation::Train { .. } => "train",
            Invocation::Evaluate { .. } => "evaluate",
            Invocation::Prune { .. } => "prune",
            Invocation::Sweep { .. } => "sweep",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Simulate { config } => Some(config.seed),
            Invocation::Train { config }
            | Invocation::Evaluate { config, .. }
            | Invocation::Sweep { config, .. } => Some(config.seed),
            Invocation::Spo2 { .. } | Invocation::Prune { .. } => None,
        }
    }

    /// Files the run reads, including stream metadata sidecars.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let stream = |p: &Path| {
            let mut v = vec![p.to_path_buf()];
            let m = meta_path(p);
            if m.exists() {
                v.push(m);
            }
            v
        };
        let cohort = |c: &ExperimentConfig| {
            let mut v = Vec::new();
            for e in &c.cohort {
                match &e.meta {
                    Some(m) => v.extend([e.wrist_csv.clone(), m.clone()]),
                    None => v.extend(stream(&e.wrist_csv)),
                }
                v.extend(stream(&e.finger_csv));
            }
            v
        };
        let mut v = match self {
            Invocation::Simulate { .. } => Vec::new(),
            Invocation::Spo2 { stream: s, .. } => stream(s),
            Invocation::Train { config } | Invocation::Sweep { config, .. } => cohort(config),
            Invocation::Evaluate { config, model } => {
                let mut v = cohort(config);
                v.extend(model.iter().cloned());
                v
            }
            Invocation::Prune {
                stream: s, model, ..
            } => {
                let mut v = stream(s);
                v.push(model.clone());
                v
            }
        };
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u64,
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    /// Absolute input path to SHA-256.
    pub inputs: BTreeMap<PathBuf, String>,
    /// Output path relative to the output directory to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let m: Self = serde_json::from_str(text).map_err(config_err)?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(ExperimentError::Config(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.manifest_version
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("config_schema".to_string(), CONFIG_VERSION.to_string()),
        ("model_schema".to_string(), MODEL_VERSION.to_string()),
        (
            "wristsat".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
    ])
}

pub fn sha256_file(path: &Path) -> Result<String, ExperimentError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects output files in a run directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf, ExperimentError> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        self.written.push(rel.to_string());
        Ok(p)
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<PathBuf, ExperimentError> {
        let p = self.path(rel)?;
        fs::write(&p, text).map_err(io_err(&p))?;
        Ok(p)
    }

    fn csv(
        &mut self,
        rel: &str,
        f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<PathBuf, ExperimentError> {
        let p = self.path(rel)?;
        let file = File::create(&p).map_err(io_err(&p))?;
        f(BufWriter::new(file)).map_err(io_err(&p))?;
        Ok(p)
    }

    fn finish(self, invocation: &Invocation) -> Result<Manifest, ExperimentError> {
        let mut inputs = BTreeMap::new();
        for p in invocation.inputs() {
            inputs.insert(p.clone(), sha256_file(&p)?);
        }
        let mut outputs = BTreeMap::new();
        for rel in &self.written {
            outputs.insert(rel.clone(), sha256_file(&self.dir.join(rel))?);
        }
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            invocation: invocation.clone(),
            seed: invocation.seed(),
            versions: versions(),
            inputs,
            outputs,
        };
        let p = self.dir.join(MANIFEST_FILE);
        fs::write(&p, manifest.to_json()).map_err(io_err(&p))?;
        Ok(manifest)
    }
}

/// Per-subject line of a simulate run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSubject {
    pub id: String,
    pub tone: String,
    pub heart_rate_bpm: f64,
    pub clean_fraction: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Simulate {
        subjects: Vec<SimulatedSubject>,
        experiment: PathBuf,
    },
    Spo2 {
        estimates: Vec<Spo2Estimate>,
    },
    Train {
        trained: TrainedModel,
        n_rows: usize,
    },
    Evaluate {
        folds: Vec<Fold>,
        aggregate: Aggregate,
    },
    Prune {
        estimates: Vec<Spo2Estimate>,
    },
    Sweep {
        rows: Vec<SweepRow>,
    },
}

/// Runs `inv`, writes its outputs and manifest under `out_dir`.
pub fn run(inv: &Invocation, out_dir: &Path) -> Result<(Outcome, Manifest), ExperimentError> {
    let mut out = Outputs::new(out_dir)?;
    let outcome = match inv {
        Invocation::Simulate { config } => run_simulate(config, &mut out)?,
        Invocation::Spo2 {
            stream,
            algorithm,
            calibration,
            enhanced,
            window_len,
            step,
        } => {
            let window = WindowConfig::new(*window_len, *step).map_err(config_err)?;
            let (s, _) = load_regular(stream, StreamKind::Wrist)?;
            let estimates = match algorithm {
                Algorithm::Baseline => baseline_spo2(&s, calibration, window),
                Algorithm::Enhanced => enhanced_spo2(&s, calibration, enhanced, window),
                Algorithm::Pruned => {
                    return Err(ExperimentError::Config(
                        "spo2 computes baseline or enhanced readings; use prune".into(),
                    ))
                }
            };
            out.csv("estimates.csv", |w| write_estimates(w, &estimates))?;
            Outcome::Spo2 { estimates }
        }
        Invocation::Train { config } => run_train(config, &mut out)?,
        Invocation::Evaluate { config, model } => run_evaluate(config, model.as_deref(), &mut out)?,
        Invocation::Prune {
            stream,
            model,
            calibration,
            enhanced,
            decision_threshold,
        } => {
            if !(0.0..=1.0).contains(decision_threshold) {
                return Err(ExperimentError::Config(
                    "decision threshold must lie in [0, 1]".into(),
                ));
            }
            let m = gbdt::load(model)?;
            let window_len = model_window(&m)?;
            let (s, _) = load_regular(stream, StreamKind::Wrist)?;
            let estimates = prune(
                &s,
                &m,
                calibration,
                enhanced,
                window_len,
                *decision_threshold,
            )?;
            out.csv("pruned.csv", |w| write_estimates(w, &estimates))?;
            Outcome::Prune { estimates }
        }
        Invocation::Sweep {
            config,
            axis,
            values,
        } => {
            let subjects = load_cohort(config)?;
            let rows = sweep(*axis, values, &subjects, &config.pipeline())?;
            out.csv("sweep.csv", |w| write_sweep_csv(w, *axis, &rows))?;
            Outcome::Sweep { rows }
        }
    };
    let manifest = out.finish(inv)?;
    Ok((outcome, manifest))
}

fn model_window(m: &GbdtModel) -> Result<usize, ExperimentError> {
    m.training_meta.window_len.ok_or_else(|| {
        ExperimentError::Config("model does not record the window length it was trained on".into())
    })
}

fn run_simulate(config: &CohortConfig, out: &mut Outputs) -> Result<Outcome, ExperimentError> {
    let cohort = gen_cohort(config)?;
    let files = write_cohort(&out.dir, &cohort, config.site)?;
    let name = |p: &Path| -> String {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    for f in &files {
        for p in [&f.wrist_csv, &f.finger_csv] {
            out.written.push(name(p));
            out.written.push(name(&meta_path(p)));
        }
        out.written.push(name(&f.truth_csv));
    }
    let experiment = ExperimentConfig {
        cohort: files
            .iter()
            .map(|f| CohortEntry {
                wrist_csv: PathBuf::from(name(&f.wrist_csv)),
                finger_csv: PathBuf::from(name(&f.finger_csv)),
                meta: None,
            })
            .collect(),
        calibration: config.calibration,
        seed: config.seed,
        ..ExperimentConfig::default()
    };
    let path = out.text("experiment.json", &experiment.to_json())?;
    let window = experiment.window;
    let subjects = cohort
        .iter()
        .map(|s| SimulatedSubject {
            id: s.id.clone(),
            tone: s.tone.as_str().to_string(),
            heart_rate_bpm: s.wrist_cfg.heart_rate_bpm,
            clean_fraction: s.wrist.truth.clean_window_fraction(window),
            n_samples: s.wrist.records.len(),
        })
        .collect();
    Ok(Outcome::Simulate {
        subjects,
        experiment: path,
    })
}

fn run_train(config: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, ExperimentError> {
    let cfg = config.pipeline();
    let subjects = load_cohort(config)?;
    let catalog = default_catalog();
    let prepared = subjects
        .iter()
        .map(|s| prepare_subject(s, &cfg, &catalog))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&PreparedSubject> = prepared.iter().collect();
    let set = build_training_set(&refs, cfg.label.reliability_threshold_pct);
    let site = prepared[0].site;
    let same_site = prepared.iter().all(|s| s.site == site);
    let trained = train_model(&set, &cfg, same_site.then_some(site))?;
    out.text("model.json", &trained.model.to_json())?;
    out.text("selection.json", &pretty(&trained.selection))?;
    Ok(Outcome::Train {
        trained,
        n_rows: set.len(),
    })
}

fn run_evaluate(
    config: &ExperimentConfig,
    model: Option<&Path>,
    out: &mut Outputs,
) -> Result<Outcome, ExperimentError> {
    let mut cfg = config.pipeline();
    let model = model.map(gbdt::load).transpose()?;
    if let Some(m) = &model {
        cfg.window_len = model_window(m)?;
    }
    let subjects = load_cohort(config)?;
    let catalog = default_catalog();
    let mut folds = Vec::new();
    let mut prepared = Vec::new();
    for s in &subjects {
        match prepare_subject(s, &cfg, &catalog) {
            Ok(p) => prepared.push(p),
            Err(e) => folds.push(failed_fold(&s.id, e.to_string())),
        }
    }
    match &model {
        Some(m) => {
            let train_site = m.training_meta.site;
            for p in &prepared {
                let site = train_site.unwrap_or(p.site);
                folds.push(match evaluate_subject(p, m, &cfg, site, None) {
                    Ok(r) => Fold {
                        subject_id: p.id.clone(),
                        train_subjects: Vec::new(),
                        n_train_rows: m.training_meta.n_rows,
                        n_selected: m.catalog.len(),
                        report: Some(r),
                        diagnostic: None,
                    },
                    Err(e) => failed_fold(&p.id, e.to_string()),
                });
            }
        }
        None if prepared.len() >= 2 => folds.extend(run_loocv(&prepared, &cfg)?),
        None => {
            for p in &prepared {
                folds.push(failed_fold(&p.id, "no other subject to train on".into()));
            }
        }
    }
    folds.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let reports: Vec<EvalReport> = folds.iter().filter_map(|f| f.report.clone()).collect();
    for f in &folds {
        out.text(&format!("reports/{}.json", f.subject_id), &pretty(f))?;
    }
    let agg = aggregate(&reports);
    out.csv("aggregate.csv", |w| write_aggregate_csv(w, &reports))?;
    out.text("summary.json", &pretty(&agg))?;
    if reports.is_empty() {
        return Err(ExperimentError::AllFoldsFailed);
    }
    Ok(Outcome::Evaluate {
        folds,
        aggregate: agg,
    })
}

fn failed_fold(id: &str, diagnostic: String) -> Fold {
    Fold {
        subject_id: id.to_string(),
        train_subjects: Vec::new(),
        n_train_rows: 0,
        n_selected: 0,
        report: None,
        diagnostic: Some(diagnostic),
    }
}

/// Re-runs the invocation recorded in a manifest. Inputs must still hash
/// to the recorded digests.
pub fn replay(manifest: &Path, out_dir: &Path) -> Result<(Outcome, Manifest), ExperimentError> {
    let m = Manifest::load(manifest)?;
    for (path, digest) in &m.inputs {
        if &sha256_file(path)? != digest {
            return Err(ExperimentError::Config(format!(
                "input {} changed since the recorded run",
                path.display()
            )));
        }
    }
    run(&m.invocation, out_dir)
}

/// Absolute form of an existing input path.
pub fn resolve_input(path: &Path) -> Result<PathBuf, ExperimentError> {
    fs::canonicalize(path).map_err(io_err(path))
}

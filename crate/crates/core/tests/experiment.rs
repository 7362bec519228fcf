use std::fs;
use std::path::Path;

use wristsat::experiment::{
    load_cohort, replay, run, ExperimentConfig, ExperimentError, Invocation, Manifest, Outcome,
    MANIFEST_FILE,
};
use wristsat::pipeline::SweepAxis;
use wristsat::synth::CohortConfig;

fn simulate(dir: &Path, n: usize) -> ExperimentConfig {
    let inv = Invocation::Simulate {
        config: CohortConfig {
            n_subjects: n,
            duration_s: 200.0,
            seed: 31,
            ..CohortConfig::default()
        },
    };
    let (outcome, manifest) = run(&inv, dir).unwrap();
    let Outcome::Simulate {
        subjects,
        experiment,
    } = outcome
    else {
        panic!("wrong outcome");
    };
    assert_eq!(subjects.len(), n);
    // Five files per subject plus the experiment config.
    assert_eq!(manifest.outputs.len(), 5 * n + 1);
    ExperimentConfig::load(&experiment).unwrap()
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate(tmp.path(), 2);
    for e in &cfg.cohort {
        assert!(e.wrist_csv.is_absolute() && e.wrist_csv.exists());
        assert!(e.finger_csv.is_absolute() && e.finger_csv.exists());
    }
    assert_eq!(load_cohort(&cfg).unwrap().len(), 2);
}

#[test]
fn config_errors_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let missing = ExperimentConfig::load(&dir.join("absent.json")).unwrap_err();
    assert_eq!(missing.exit_code(), 2);

    let unknown = write("unknown.json", r#"{"cohort": [], "colour": 1}"#);
    assert_eq!(ExperimentConfig::load(&unknown).unwrap_err().exit_code(), 2);

    let version = write(
        "version.json",
        r#"{"version": 9, "cohort": [{"wrist_csv": "a", "finger_csv": "b"}]}"#,
    );
    assert_eq!(ExperimentConfig::load(&version).unwrap_err().exit_code(), 2);

    let bad_q = write(
        "q.json",
        r#"{"fdr_q": 2.0, "cohort": [{"wrist_csv": "a", "finger_csv": "b"}]}"#,
    );
    assert_eq!(ExperimentConfig::load(&bad_q).unwrap_err().exit_code(), 2);

    let no_data = write(
        "data.json",
        r#"{"cohort": [{"wrist_csv": "a.csv", "finger_csv": "b.csv"}]}"#,
    );
    let e = ExperimentConfig::load(&no_data).unwrap_err();
    assert!(matches!(e, ExperimentError::Io { .. }));
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn explicit_meta_overrides_the_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = simulate(tmp.path(), 2);
    let sidecar = cfg.cohort[0].wrist_csv.with_extension("meta");
    let mut meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&sidecar).unwrap()).unwrap();
    meta["subject_id"] = "renamed".into();
    let alt = tmp.path().join("alt.meta");
    fs::write(&alt, serde_json::to_string(&meta).unwrap()).unwrap();
    cfg.cohort[0].meta = Some(alt);
    let subjects = load_cohort(&cfg).unwrap();
    assert_eq!(subjects[0].id, "renamed");
    assert_ne!(subjects[1].id, "renamed");
}

#[test]
fn train_evaluate_sweep_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = simulate(&root.join("cohort"), 3);

    let (out, manifest) = run(
        &Invocation::Train {
            config: cfg.clone(),
        },
        &root.join("train"),
    )
    .unwrap();
    let Outcome::Train { trained, n_rows } = out else {
        panic!()
    };
    assert_eq!(trained.model.training_meta.n_rows, n_rows);
    assert!(manifest.outputs.contains_key("model.json"));
    assert!(manifest.outputs.contains_key("selection.json"));
    assert_eq!(manifest.seed, Some(cfg.seed));
    assert!(manifest.inputs.keys().all(|p| p.is_absolute()));
    assert!(manifest.versions.contains_key("wristsat"));

    // A manifest doubles as a config.
    let again = ExperimentConfig::load(&root.join("train").join(MANIFEST_FILE)).unwrap();
    assert_eq!(again, cfg);

    let model = root.join("train/model.json").canonicalize().unwrap();
    let (out, _) = run(
        &Invocation::Evaluate {
            config: cfg.clone(),
            model: Some(model),
        },
        &root.join("eval"),
    )
    .unwrap();
    let Outcome::Evaluate { folds, .. } = out else {
        panic!()
    };
    assert_eq!(folds.len(), 3);
    let csv = fs::read_to_string(root.join("eval/aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for f in &folds {
        assert!(root
            .join(format!("eval/reports/{}.json", f.subject_id))
            .exists());
    }

    let (out, _) = run(
        &Invocation::Sweep {
            config: cfg.clone(),
            axis: SweepAxis::DecisionThreshold,
            values: vec![0.3, 0.7],
        },
        &root.join("sweep"),
    )
    .unwrap();
    let Outcome::Sweep { rows } = out else {
        panic!()
    };
    assert_eq!(rows.len(), 2);
    let csv = fs::read_to_string(root.join("sweep/sweep.csv")).unwrap();
    assert!(csv.starts_with("decision_threshold,"));

    replay(
        &root.join("sweep").join(MANIFEST_FILE),
        &root.join("sweep2"),
    )
    .unwrap();
    assert_eq!(
        fs::read(root.join("sweep/sweep.csv")).unwrap(),
        fs::read(root.join("sweep2/sweep.csv")).unwrap()
    );
    assert_eq!(
        fs::read(root.join("sweep").join(MANIFEST_FILE)).unwrap(),
        fs::read(root.join("sweep2").join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn replay_refuses_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = simulate(&root.join("cohort"), 2);
    run(
        &Invocation::Train {
            config: cfg.clone(),
        },
        &root.join("train"),
    )
    .unwrap();
    let csv = &cfg.cohort[0].wrist_csv;
    let mut text = fs::read_to_string(csv).unwrap();
    let last = text.lines().last().unwrap().to_string();
    text.push_str(&last);
    text.push('\n');
    fs::write(csv, text).unwrap();
    let e = replay(&root.join("train").join(MANIFEST_FILE), &root.join("again")).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn manifest_rejects_other_versions() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), 2);
    let text = fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap();
    assert!(Manifest::from_json(&text).is_ok());
    let bumped = text.replacen("\"manifest_version\": 1", "\"manifest_version\": 2", 1);
    assert!(Manifest::from_json(&bumped).is_err());
}

#[test]
fn evaluation_fails_only_when_every_fold_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = simulate(tmp.path(), 2);
    cfg.cohort.truncate(1);
    let e = run(
        &Invocation::Evaluate {
            config: cfg,
            model: None,
        },
        &tmp.path().join("eval"),
    )
    .unwrap_err();
    assert!(matches!(e, ExperimentError::AllFoldsFailed));
    assert_eq!(e.exit_code(), 1);
    let report = fs::read_to_string(tmp.path().join("eval/reports/subject_01.json")).unwrap();
    assert!(report.contains("no other subject"));
}

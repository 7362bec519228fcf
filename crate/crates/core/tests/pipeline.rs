mod common;

use std::collections::BTreeSet;

use wristsat::features::default_catalog;
use wristsat::metrics::aggregate;
use wristsat::pipeline::{
    build_training_set, calibrate_user, evaluate_subject, prepare_cohort, prepare_subject, prune,
    run_group_experiment, run_loocv, sweep, train_model, CohortSplit, PipelineConfig,
    PipelineError, PreparedSubject, SweepAxis,
};
use wristsat::signal_io::{Site, SkinTone};
use wristsat::spo2::{enhanced_spo2, Algorithm};
use wristsat::synth::{ArtifactKind, ArtifactSpec, CohortConfig, SynthConfig};
use wristsat::{GbdtModel, WindowConfig};

fn prepared(n: usize, seed: u64) -> (Vec<PreparedSubject>, PipelineConfig) {
    let cfg = PipelineConfig::default();
    let data = common::small_cohort(n, seed);
    (prepare_cohort(&data, &cfg).unwrap(), cfg)
}

#[test]
fn loocv_is_order_independent_and_never_trains_on_the_test_subject() {
    let cfg = PipelineConfig::default();
    let mut data = common::small_cohort(4, 3);
    let a = run_loocv(&prepare_cohort(&data, &cfg).unwrap(), &cfg).unwrap();
    data.reverse();
    data.swap(0, 2);
    let b = run_loocv(&prepare_cohort(&data, &cfg).unwrap(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    for f in &a {
        assert!(!f.train_subjects.contains(&f.subject_id));
        assert_eq!(f.train_subjects.len(), 3);
        assert!(f.report.is_some(), "{:?}", f.diagnostic);
    }
}

#[test]
fn loocv_needs_two_subjects() {
    let (p, cfg) = prepared(2, 4);
    assert!(matches!(
        run_loocv(&p[..1], &cfg),
        Err(PipelineError::InvalidConfig(_))
    ));
}

#[test]
fn sweep_examples() {
    let cfg = PipelineConfig::default();
    let data = common::small_cohort(3, 5);
    let single = sweep(SweepAxis::ReliabilityThreshold, &[2.0], &data, &cfg).unwrap();
    let folds = run_loocv(&prepare_cohort(&data, &cfg).unwrap(), &cfg).unwrap();
    let reports: Vec<_> = folds.into_iter().filter_map(|f| f.report).collect();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].aggregate, aggregate(&reports));

    let windows = sweep(SweepAxis::WindowLen, &[25.0, 50.0, 100.0], &data, &cfg).unwrap();
    assert_eq!(windows.len(), 3);
    assert!(windows
        .windows(2)
        .all(|w| w[0].n_train_rows >= w[1].n_train_rows));

    assert!(sweep(SweepAxis::WindowLen, &[], &data, &cfg).is_err());
    assert!(sweep(SweepAxis::WindowLen, &[12.5], &data, &cfg).is_err());
}

#[test]
fn threshold_sweep_trades_silence_for_accuracy() {
    let cfg = PipelineConfig::default();
    let data = common::small_cohort(4, 6);
    let rows = sweep(
        SweepAxis::ReliabilityThreshold,
        &[1.0, 2.0, 3.0, 5.0],
        &data,
        &cfg,
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    let silent: Vec<f64> = rows
        .iter()
        .map(|r| r.aggregate.mean_max_silent_s.unwrap())
        .collect();
    assert!(silent.windows(2).all(|w| w[1] <= w[0]), "{silent:?}");
}

#[test]
fn group_permutations_by_tone() {
    let (p, cfg) = prepared(6, 8);
    let light = |s: &PreparedSubject| s.tone == SkinTone::Light;
    let dark = |s: &PreparedSubject| s.tone == SkinTone::Dark;
    let mut n = 0;
    for (name, train, test) in [
        (
            "light-light",
            light as fn(&PreparedSubject) -> bool,
            light as fn(&PreparedSubject) -> bool,
        ),
        ("light-dark", light, dark),
        ("dark-light", dark, light),
        ("dark-dark", dark, dark),
    ] {
        let split = CohortSplit::by(name, &p, train, test);
        let reports = run_group_experiment(&split, &p, &cfg).unwrap();
        assert_eq!(reports.len(), split.test_subjects.len());
        assert!(reports.iter().all(|r| r.group.as_deref() == Some(name)));
        n += 1;
    }
    assert_eq!(n, 4);
    let empty = CohortSplit::by("none", &p, |_| false, light);
    assert!(matches!(
        run_group_experiment(&empty, &p, &cfg),
        Err(PipelineError::EmptyGroup(_))
    ));
}

#[test]
fn site_mismatch_is_reported() {
    let cfg = PipelineConfig::default();
    let top = common::small_cohort(2, 9);
    let bottom = common::cohort(&CohortConfig {
        n_subjects: 2,
        duration_s: 240.0,
        site: Site::WristBottom,
        seed: 10,
        ..CohortConfig::default()
    })
    .1;
    let catalog = default_catalog();
    let mut all: Vec<PreparedSubject> = top
        .iter()
        .map(|s| prepare_subject(s, &cfg, &catalog).unwrap())
        .collect();
    for s in &bottom {
        let mut p = prepare_subject(s, &cfg, &catalog).unwrap();
        p.id = format!("bottom_{}", p.id);
        all.push(p);
    }
    let split = CohortSplit::by(
        "top-bottom",
        &all,
        |s| s.site == Site::WristTop,
        |s| s.site == Site::WristBottom,
    );
    let reports = run_group_experiment(&split, &all, &cfg).unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert_eq!(r.train_site, Site::WristTop);
        assert_eq!(r.test_site, Site::WristBottom);
    }
}

#[test]
fn calibration_rows_and_limits() {
    let cfg = PipelineConfig::default();
    let data = common::cohort(&CohortConfig {
        n_subjects: 3,
        seed: 12,
        ..CohortConfig::default()
    })
    .1;
    let p = prepare_cohort(&data, &cfg).unwrap();
    let user = &p[0];
    let others: Vec<&PreparedSubject> = p[1..].iter().collect();
    let base = build_training_set(&others, cfg.label.reliability_threshold_pct);

    let (zero, added) = calibrate_user(&base, user, 0.0, &cfg).unwrap();
    assert_eq!(added, 0);
    assert_eq!(zero, train_model(&base, &cfg, Some(user.site)).unwrap());

    let (ten, added) = calibrate_user(&base, user, 10.0, &cfg).unwrap();
    assert_eq!(added, 150);
    assert_eq!(ten.model.training_meta.n_rows, base.len() + 150);

    assert!(matches!(
        calibrate_user(&base, user, 13.0, &cfg),
        Err(PipelineError::InsufficientUserData { .. })
    ));
    assert!(calibrate_user(&base, user, -1.0, &cfg).is_err());
}

#[test]
fn training_rows_per_subject() {
    let (_, data) = common::cohort(&CohortConfig {
        n_subjects: 2,
        seed: 13,
        ..CohortConfig::default()
    });
    let cfg = PipelineConfig::default();
    for s in &data {
        assert_eq!(s.wrist.len(), 18_000);
        let p = prepare_subject(s, &cfg, &default_catalog()).unwrap();
        assert!(p.train.len() <= 180);
        assert!(p.train.len() >= 170);
    }
}

#[test]
fn class_balance_follows_artifact_share() {
    let cfg = PipelineConfig::default();
    let wrist_cfg = SynthConfig {
        duration_s: 600.0,
        perfusion_index: 0.008,
        noise_sigma: 0.05 * 0.008 * 50_000.0,
        artifacts: (0..15)
            .map(|i| ArtifactSpec {
                start_s: 40.0 * i as f64 + 10.0,
                duration_s: 12.0,
                kind: ArtifactKind::Motion,
                intensity: 1.5,
            })
            .collect(),
        seed: 21,
        ..SynthConfig::default()
    };
    let finger_cfg = SynthConfig {
        perfusion_index: 0.03,
        dc_red: 60_000.0,
        dc_ir: 60_000.0,
        artifacts: Vec::new(),
        imu: false,
        seed: 22,
        ..wrist_cfg.clone()
    };
    let calib = wristsat::CalibrationCurve::default();
    let wrist = wristsat::synth::gen_ppg(&wrist_cfg, &calib).unwrap();
    let finger = wristsat::synth::gen_ppg(&finger_cfg, &calib).unwrap();
    let meta = |id: &str, site| wristsat::StreamMeta::new(id, site);
    let w = wristsat::signal_io::regularize(&wrist.frames(), &meta("u", Site::WristTop)).unwrap();
    let f = wristsat::signal_io::regularize(&finger.frames(), &meta("u", Site::Fingertip)).unwrap();
    let s = wristsat::pipeline::SubjectData::new(w, f);
    let p = prepare_subject(&s, &cfg, &default_catalog()).unwrap();
    let labels = p.train.labels(cfg.label.reliability_threshold_pct);
    let reliable = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    let oracle = wrist.truth.clean_window_fraction(cfg.window_len);
    assert!(
        (reliable - oracle).abs() <= 0.05,
        "reliable {reliable} vs clean {oracle}"
    );
}

#[test]
fn prune_with_constant_models() {
    let (p, cfg) = prepared(2, 14);
    let data = common::small_cohort(2, 14);
    let stream = &data[0].wrist;
    let enhanced: Vec<_> = enhanced_spo2(
        stream,
        &cfg.calibration,
        &cfg.enhanced,
        WindowConfig::sliding(cfg.window_len).unwrap(),
    )
    .into_iter()
    .filter(|e| e.is_emitted())
    .collect();
    let keep_all = GbdtModel::constant(Vec::new(), 1.0);
    let all = prune(
        stream,
        &keep_all,
        &cfg.calibration,
        &cfg.enhanced,
        cfg.window_len,
        0.5,
    )
    .unwrap();
    assert_eq!(all.len(), enhanced.len());
    for (a, e) in all.iter().zip(&enhanced) {
        assert_eq!(a.algorithm, Algorithm::Pruned);
        assert_eq!(
            (a.t_ms, a.spo2_pct, a.ratio_r),
            (e.t_ms, e.spo2_pct, e.ratio_r)
        );
    }
    let keep_none = GbdtModel::constant(Vec::new(), 0.0);
    assert!(prune(
        stream,
        &keep_none,
        &cfg.calibration,
        &cfg.enhanced,
        cfg.window_len,
        0.5
    )
    .unwrap()
    .is_empty());

    // Same selection through the evaluation path.
    let r = evaluate_subject(&p[0], &keep_all, &cfg, Site::WristTop, None).unwrap();
    assert_eq!(r.n_pruned, r.n_enhanced);
    assert_eq!(r.rmse_pruned, r.rmse_enhanced);
}

#[test]
fn pruned_readings_avoid_artifacts() {
    let cfg = PipelineConfig::default();
    let (subjects, data) = common::cohort(&CohortConfig {
        n_subjects: 5,
        duration_s: 360.0,
        seed: 15,
        ..CohortConfig::default()
    });
    let p = prepare_cohort(&data, &cfg).unwrap();
    let held = &p[0];
    let train: Vec<&PreparedSubject> = p[1..].iter().collect();
    let set = build_training_set(&train, cfg.label.reliability_threshold_pct);
    let model = train_model(&set, &cfg, Some(Site::WristTop)).unwrap().model;
    let idx = subjects.iter().position(|s| s.id == held.id).unwrap();
    let mask = &subjects[idx].wrist.truth.artifact_mask;
    let out = prune(
        &data[idx].wrist,
        &model,
        &cfg.calibration,
        &cfg.enhanced,
        cfg.window_len,
        cfg.decision_threshold,
    )
    .unwrap();
    assert!(!out.is_empty());
    let clean = out
        .iter()
        .filter(|e| !mask[e.start..e.start + cfg.window_len].iter().any(|&m| m))
        .count();
    let share = clean as f64 / out.len() as f64;
    assert!(share >= 0.9, "{share}");
}

#[test]
fn selection_keeps_catalog_order() {
    let (p, cfg) = prepared(3, 16);
    let refs: Vec<&PreparedSubject> = p.iter().collect();
    let set = build_training_set(&refs, cfg.label.reliability_threshold_pct);
    let t = train_model(&set, &cfg, None).unwrap();
    let catalog = default_catalog();
    let pos: Vec<usize> = t
        .model
        .catalog
        .iter()
        .map(|s| catalog.iter().position(|c| c == s).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    let kept: BTreeSet<_> = t.model.catalog.iter().copied().collect();
    if !t.selection.kept.is_empty() {
        assert_eq!(kept, t.selection.kept);
    }
}

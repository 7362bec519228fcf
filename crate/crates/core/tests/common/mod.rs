#![allow(dead_code)]

use wristsat::pipeline::SubjectData;
use wristsat::signal_io::{regularize, Site};
use wristsat::synth::{gen_cohort, CohortConfig, SyntheticSubject};

pub fn subject_data(subjects: &[SyntheticSubject], site: Site) -> Vec<SubjectData> {
    subjects
        .iter()
        .map(|s| {
            let w = regularize(&s.wrist.frames(), &s.wrist_meta(site)).unwrap();
            let f = regularize(&s.finger.frames(), &s.finger_meta()).unwrap();
            SubjectData::new(w, f)
        })
        .collect()
}

pub fn cohort(cfg: &CohortConfig) -> (Vec<SyntheticSubject>, Vec<SubjectData>) {
    let subjects = gen_cohort(cfg).unwrap();
    let data = subject_data(&subjects, cfg.site);
    (subjects, data)
}

/// A short cohort for tests that only need the plumbing to work.
pub fn small_cohort(n: usize, seed: u64) -> Vec<SubjectData> {
    cohort(&CohortConfig {
        n_subjects: n,
        duration_s: 240.0,
        seed,
        ..CohortConfig::default()
    })
    .1
}

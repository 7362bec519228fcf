//! Synthetic PPG + IMU traces with known SpO₂ and annotated artifacts.
//!
//! Both optical channels share one cardiac waveform `s(t)` (zero mean, unit
//! RMS per beat). The infrared pulse amplitude is `perfusion · dc_ir`; the red
//! amplitude is chosen so the ratio of ratios equals the value implied by the
//! target SpO₂ under the given calibration line. Everything is seeded.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::{
    to_frames, write_stream, ImuSample, RawRecord, SensorFrame, SignalError, Site, SkinTone,
    StreamKind, StreamMeta,
};
use crate::spo2::CalibrationCurve;

/// Standard gravity, the accelerometer magnitude at rest.
pub const GRAVITY: f64 = 9.81;

/// Generated samples are rounded to this resolution so files round-trip exactly.
const STEPS_PER_UNIT: f64 = 1000.0;

// Independent random streams per concern.
const STREAM_NOISE: u64 = 1;
const STREAM_JITTER: u64 = 2;
const STREAM_ARTIFACT: u64 = 3;
const STREAM_IMU: u64 = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration out of range: {0}")]
    ConfigOutOfRange(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Motion,
    AmbientSpike,
    ContactLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub start_s: f64,
    pub duration_s: f64,
    pub kind: ArtifactKind,
    pub intensity: f64,
}

/// SpO₂ level that holds from `start_s` until the next step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spo2Step {
    pub start_s: f64,
    pub spo2_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub heart_rate_bpm: f64,
    /// Piecewise-constant target; the first step should start at 0.
    pub spo2_schedule: Vec<Spo2Step>,
    pub dc_red: f64,
    pub dc_ir: f64,
    /// Infrared AC/DC ratio.
    pub perfusion_index: f64,
    /// Gaussian sensor noise, raw units, independent per channel.
    pub noise_sigma: f64,
    pub artifacts: Vec<ArtifactSpec>,
    pub skin_tone_attenuation: f64,
    pub seed: u64,
    /// Uniform timestamp jitter bound in ms.
    pub jitter_ms: f64,
    /// Emit accelerometer and gyroscope columns.
    pub imu: bool,
    pub t0_ms: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 720.0,
            rate_hz: 25.0,
            heart_rate_bpm: 75.0,
            spo2_schedule: vec![Spo2Step {
                start_s: 0.0,
                spo2_pct: 97.0,
            }],
            dc_red: 50_000.0,
            dc_ir: 50_000.0,
            perfusion_index: 0.01,
            noise_sigma: 0.0,
            artifacts: Vec::new(),
            skin_tone_attenuation: 1.0,
            seed: 0,
            jitter_ms: 0.0,
            imu: true,
            t0_ms: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigOutOfRange(m));
        if !(self.duration_s > 0.0 && self.rate_hz > 0.0) {
            return bad("duration_s and rate_hz must be positive".into());
        }
        if !(self.heart_rate_bpm > 0.0 && self.heart_rate_bpm < 300.0) {
            return bad(format!("heart rate {} bpm", self.heart_rate_bpm));
        }
        if self.spo2_schedule.is_empty() {
            return bad("empty spo2 schedule".into());
        }
        if let Some(s) = self
            .spo2_schedule
            .iter()
            .find(|s| !(70.0..=100.0).contains(&s.spo2_pct))
        {
            return bad(format!("spo2 {} outside [70, 100]", s.spo2_pct));
        }
        if !(self.dc_red > 0.0 && self.dc_ir > 0.0) {
            return bad("dc levels must be positive".into());
        }
        if !(self.perfusion_index >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("perfusion and noise must be nonnegative".into());
        }
        if !(self.skin_tone_attenuation > 0.0 && self.skin_tone_attenuation <= 1.0) {
            return bad(format!("attenuation {}", self.skin_tone_attenuation));
        }
        let period = 1000.0 / self.rate_hz;
        if !(self.jitter_ms >= 0.0 && self.jitter_ms < period / 2.0) {
            return bad(format!(
                "jitter {} ms must stay below half a period",
                self.jitter_ms
            ));
        }
        for a in &self.artifacts {
            if a.start_s < 0.0
                || a.duration_s <= 0.0
                || a.start_s + a.duration_s > self.duration_s + 1e-9
            {
                return bad(format!("artifact {a:?} outside the trace"));
            }
            if a.intensity < 0.0 {
                return bad(format!("artifact intensity {}", a.intensity));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn spo2_at(&self, t_s: f64) -> f64 {
        self.spo2_schedule
            .iter()
            .rev()
            .find(|s| s.start_s <= t_s)
            .unwrap_or(&self.spo2_schedule[0])
            .spo2_pct
    }
}

/// Ground truth for each generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub t_ms: Vec<i64>,
    pub true_spo2_pct: Vec<f64>,
    pub artifact_mask: Vec<bool>,
    pub implied_r: Vec<f64>,
}

impl SynthTruth {
    /// Writes `t_ms,true_spo2_pct,artifact` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ms,true_spo2_pct,artifact")?;
        for i in 0..self.t_ms.len() {
            writeln!(
                w,
                "{},{},{}",
                self.t_ms[i],
                self.true_spo2_pct[i],
                u8::from(self.artifact_mask[i])
            )?;
        }
        w.flush()
    }

    /// Share of non-overlapping windows that contain no artifact sample.
    pub fn clean_window_fraction(&self, window_len: usize) -> f64 {
        let n = self.artifact_mask.len() / window_len;
        if n == 0 {
            return 0.0;
        }
        let clean = self
            .artifact_mask
            .chunks_exact(window_len)
            .filter(|w| !w.iter().any(|&a| a))
            .count();
        clean as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub records: Vec<RawRecord>,
    pub truth: SynthTruth,
}

impl SynthTrace {
    pub fn frames(&self) -> Vec<SensorFrame> {
        to_frames(&self.records)
    }
}

/// Pulse shape parameters: (centre phase, width, height) of the systolic
/// peak and the dicrotic wave.
const SYSTOLIC: (f64, f64, f64) = (0.2, 0.06, 1.0);
const DICROTIC: (f64, f64, f64) = (0.5, 0.09, 0.45);

/// Sum of both waves, wrapped so neighbouring beats overlap smoothly.
fn raw_pulse(phase: f64) -> f64 {
    let g = |(c, w, a): (f64, f64, f64), p: f64| a * (-(p - c).powi(2) / (2.0 * w * w)).exp();
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|shift| g(SYSTOLIC, phase + shift) + g(DICROTIC, phase + shift))
        .sum()
}

/// Mean and RMS of the raw pulse over one beat.
fn pulse_moments() -> (f64, f64) {
    static MOMENTS: OnceLock<(f64, f64)> = OnceLock::new();
    *MOMENTS.get_or_init(|| {
        let n = 100_000;
        let vals: Vec<f64> = (0..n).map(|i| raw_pulse(i as f64 / n as f64)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let rms = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        (mean, rms)
    })
}

/// Cardiac waveform at `phase` (beats, any real): zero mean and unit RMS per beat.
pub fn pulse(phase: f64) -> f64 {
    let (mean, rms) = pulse_moments();
    (raw_pulse(phase.rem_euclid(1.0)) - mean) / rms
}

fn quantize(v: f64) -> f64 {
    (v * STEPS_PER_UNIT).round() / STEPS_PER_UNIT
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates a clean trace and then applies `cfg.artifacts`.
pub fn gen_ppg(cfg: &SynthConfig, calib: &CalibrationCurve) -> Result<SynthTrace, SynthError> {
    cfg.validate()?;
    let n = cfg.n_samples();
    let period_ms = 1000.0 / cfg.rate_hz;
    let att = cfg.skin_tone_attenuation;
    let a_ir = cfg.perfusion_index * cfg.dc_ir;
    let mut noise_rng = rng_for(cfg.seed, STREAM_NOISE);
    let mut jitter_rng = rng_for(cfg.seed, STREAM_JITTER);
    let mut imu_rng = rng_for(cfg.seed, STREAM_IMU);

    let mut red = Vec::with_capacity(n);
    let mut ir = Vec::with_capacity(n);
    let mut truth = SynthTruth {
        t_ms: Vec::with_capacity(n),
        true_spo2_pct: Vec::with_capacity(n),
        artifact_mask: vec![false; n],
        implied_r: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t_s = k as f64 / cfg.rate_hz;
        let jitter = if cfg.jitter_ms > 0.0 {
            jitter_rng.random_range(-cfg.jitter_ms..=cfg.jitter_ms)
        } else {
            0.0
        };
        truth
            .t_ms
            .push(cfg.t0_ms + (k as f64 * period_ms + jitter).round() as i64);
        let spo2 = cfg.spo2_at(t_s);
        let r = calib.ratio_for(spo2);
        let a_red = r * (cfg.dc_red / cfg.dc_ir) * a_ir;
        let s = pulse(t_s * cfg.heart_rate_bpm / 60.0);
        let (nr, ni) = if cfg.noise_sigma > 0.0 {
            (
                cfg.noise_sigma * gauss(&mut noise_rng),
                cfg.noise_sigma * gauss(&mut noise_rng),
            )
        } else {
            (0.0, 0.0)
        };
        red.push(att * (cfg.dc_red + a_red * s) + nr);
        ir.push(att * (cfg.dc_ir + a_ir * s) + ni);
        truth.true_spo2_pct.push(spo2);
        truth.implied_r.push(r);
    }

    let mut imu: Vec<ImuSample> = (0..n)
        .map(|_| ImuSample {
            accel: [
                0.02 * gauss(&mut imu_rng),
                0.02 * gauss(&mut imu_rng),
                GRAVITY + 0.02 * gauss(&mut imu_rng),
            ],
            gyro: [
                0.01 * gauss(&mut imu_rng),
                0.01 * gauss(&mut imu_rng),
                0.01 * gauss(&mut imu_rng),
            ],
        })
        .collect();

    let mut channels = Channels {
        red: &mut red,
        ir: &mut ir,
        imu: &mut imu,
    };
    let mut art_rng = rng_for(cfg.seed, STREAM_ARTIFACT);
    for spec in &cfg.artifacts {
        inject(
            cfg,
            calib,
            spec,
            &mut channels,
            &mut truth.artifact_mask,
            &mut art_rng,
        );
    }

    let records = (0..n)
        .map(|k| RawRecord {
            t_ms: truth.t_ms[k],
            red: quantize(red[k]),
            ir: quantize(ir[k]),
            imu: cfg.imu.then(|| ImuSample {
                accel: imu[k].accel.map(quantize),
                gyro: imu[k].gyro.map(quantize),
            }),
        })
        .collect();
    Ok(SynthTrace { records, truth })
}

struct Channels<'a> {
    red: &'a mut [f64],
    ir: &'a mut [f64],
    imu: &'a mut [ImuSample],
}

fn inject(
    cfg: &SynthConfig,
    calib: &CalibrationCurve,
    spec: &ArtifactSpec,
    ch: &mut Channels<'_>,
    mask: &mut [bool],
    rng: &mut ChaCha8Rng,
) {
    let n = mask.len();
    let first = ((spec.start_s * cfg.rate_hz).round() as usize).min(n);
    let last = (((spec.start_s + spec.duration_s) * cfg.rate_hz).round() as usize).min(n);
    if first >= last {
        return;
    }
    let att = cfg.skin_tone_attenuation;
    let intensity = spec.intensity;
    let a_ir = att * cfg.perfusion_index * cfg.dc_ir;
    match spec.kind {
        ArtifactKind::Motion => {
            let f = rng.random_range(0.1..0.3);
            let phi = rng.random_range(0.0..2.0 * PI);
            for k in first..last {
                let t_s = k as f64 / cfg.rate_hz;
                let r = calib.ratio_for(cfg.spo2_at(t_s));
                let a_red = r * (cfg.dc_red / cfg.dc_ir) * a_ir;
                let wander = 0.5 * intensity * (2.0 * PI * f * t_s + phi).sin();
                ch.red[k] += wander * a_red + 6.0 * intensity * a_red * gauss(rng);
                ch.ir[k] += wander * a_ir;
                for axis in 0..3 {
                    ch.imu[k].accel[axis] += 3.0 * intensity * gauss(rng);
                    ch.imu[k].gyro[axis] += 1.5 * intensity * gauss(rng);
                }
            }
        }
        ArtifactKind::AmbientSpike => {
            let mut k = first;
            let mut on = true;
            while k < last {
                let dur_s = if on {
                    rng.random_range(0.2..1.0)
                } else {
                    rng.random_range(0.3..1.5)
                };
                let end = (k + ((dur_s * cfg.rate_hz).round() as usize).max(1)).min(last);
                if on {
                    let ur: f64 = rng.random_range(0.5..1.5);
                    let ui: f64 = rng.random_range(0.5..1.5);
                    for j in k..end {
                        ch.red[j] += ur * 0.05 * intensity * att * cfg.dc_red;
                        ch.ir[j] += ui * 0.05 * intensity * att * cfg.dc_ir;
                    }
                }
                on = !on;
                k = end;
            }
        }
        ArtifactKind::ContactLoss => {
            let ramp = ((0.2 * cfg.rate_hz).round() as usize).max(1);
            let len = last - first;
            for k in first..last {
                let i = k - first;
                let edge = i.min(len - 1 - i);
                let keep = if edge < ramp {
                    1.0 - (edge + 1) as f64 / (ramp + 1) as f64
                } else {
                    0.0
                };
                ch.red[k] *= keep;
                ch.ir[k] *= keep;
            }
        }
    }
    mask[first..last].iter_mut().for_each(|m| *m = true);
}

/// Cohort-level knobs; per-subject values are drawn from these ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub site: Site,
    pub heart_rate_bpm: (f64, f64),
    pub wrist_perfusion: (f64, f64),
    /// Noise sigma as a fraction of the unattenuated infrared pulse amplitude.
    pub wrist_noise: (f64, f64),
    /// Lowest and highest target share of artifact-free time.
    pub clean_fraction: (f64, f64),
    /// Length of one clean period plus one artifact burst, seconds.
    pub cycle_s: (f64, f64),
    pub segment_s: (f64, f64),
    pub intensity: (f64, f64),
    pub baseline_spo2: (f64, f64),
    pub desaturation_spo2: (f64, f64),
    pub finger_offset_ms: i64,
    pub jitter_ms: f64,
    pub calibration: CalibrationCurve,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            duration_s: 720.0,
            rate_hz: 25.0,
            site: Site::WristTop,
            heart_rate_bpm: (55.0, 110.0),
            wrist_perfusion: (0.004, 0.012),
            wrist_noise: (0.03, 0.08),
            clean_fraction: (0.10, 0.75),
            cycle_s: (50.0, 90.0),
            segment_s: (2.0, 15.0),
            intensity: (0.5, 2.0),
            baseline_spo2: (95.0, 99.0),
            desaturation_spo2: (86.0, 92.0),
            finger_offset_ms: 120,
            jitter_ms: 4.0,
            calibration: CalibrationCurve::default(),
            seed: 7,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigOutOfRange(m.to_string()));
        if self.n_subjects < 2 {
            return bad("a cohort needs at least two subjects");
        }
        for (name, (lo, hi)) in [
            ("heart_rate_bpm", self.heart_rate_bpm),
            ("wrist_perfusion", self.wrist_perfusion),
            ("wrist_noise", self.wrist_noise),
            ("clean_fraction", self.clean_fraction),
            ("cycle_s", self.cycle_s),
            ("segment_s", self.segment_s),
            ("intensity", self.intensity),
            ("baseline_spo2", self.baseline_spo2),
            ("desaturation_spo2", self.desaturation_spo2),
        ] {
            if !(lo <= hi && lo >= 0.0) {
                return bad(name);
            }
        }
        if self.clean_fraction.1 > 1.0 {
            return bad("clean_fraction");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub id: String,
    pub tone: SkinTone,
    pub wrist_cfg: SynthConfig,
    pub finger_cfg: SynthConfig,
    pub wrist: SynthTrace,
    pub finger: SynthTrace,
}

impl SyntheticSubject {
    pub fn wrist_meta(&self, site: Site) -> StreamMeta {
        StreamMeta {
            nominal_rate_hz: self.wrist_cfg.rate_hz,
            site,
            subject_id: self.id.clone(),
            skin_tone: self.tone,
        }
    }

    pub fn finger_meta(&self) -> StreamMeta {
        StreamMeta {
            nominal_rate_hz: self.finger_cfg.rate_hz,
            site: Site::Fingertip,
            subject_id: self.id.clone(),
            skin_tone: self.tone,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn tone_attenuation(rng: &mut ChaCha8Rng, tone: SkinTone) -> f64 {
    match tone {
        SkinTone::Light => rng.random_range(0.9..=1.0),
        SkinTone::Medium => rng.random_range(0.6..0.8),
        SkinTone::Dark => rng.random_range(0.35..0.55),
        SkinTone::Unknown => 1.0,
    }
}

/// Alternating clean periods and artifact bursts made of back-to-back segments.
fn artifact_schedule(rng: &mut ChaCha8Rng, cfg: &CohortConfig, clean: f64) -> Vec<ArtifactSpec> {
    let kinds = [
        (ArtifactKind::Motion, 0.5),
        (ArtifactKind::AmbientSpike, 0.3),
        (ArtifactKind::ContactLoss, 0.2),
    ];
    let mut out = Vec::new();
    let cycle = draw(rng, cfg.cycle_s);
    // Random phase: the trace may open mid-burst or mid-clean.
    let mut t = -rng.random_range(0.0..cycle);
    while t < cfg.duration_s {
        let cycle = draw(rng, cfg.cycle_s);
        let clean_len = clean * cycle;
        let burst_end = t + cycle - clean_len;
        let mut s = t;
        while s < burst_end {
            let len = draw(rng, cfg.segment_s).min(burst_end - s);
            let (lo, hi) = (s.max(0.0), (s + len).min(cfg.duration_s));
            if hi - lo >= 0.5 {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let kind = kinds
                    .iter()
                    .find(|(_, p)| {
                        acc += p;
                        u < acc
                    })
                    .map_or(ArtifactKind::Motion, |(k, _)| *k);
                out.push(ArtifactSpec {
                    start_s: lo,
                    duration_s: hi - lo,
                    kind,
                    intensity: draw(rng, cfg.intensity),
                });
            }
            s += len;
        }
        t += cycle;
    }
    out
}

fn spo2_schedule(rng: &mut ChaCha8Rng, cfg: &CohortConfig) -> Vec<Spo2Step> {
    let base = draw(rng, cfg.baseline_spo2);
    let mut steps = vec![Spo2Step {
        start_s: 0.0,
        spo2_pct: base,
    }];
    // One or two desaturation episodes in separate halves of the session.
    let episodes = rng.random_range(1..=2);
    for e in 0..episodes {
        let half = cfg.duration_s / episodes as f64;
        let len = rng.random_range(30.0..90.0f64).min(half * 0.8);
        let start = e as f64 * half + rng.random_range(0.0..(half - len));
        steps.push(Spo2Step {
            start_s: start,
            spo2_pct: draw(rng, cfg.desaturation_spo2),
        });
        steps.push(Spo2Step {
            start_s: start + len,
            spo2_pct: base,
        });
    }
    steps
}

/// Draws and generates every subject of a cohort.
pub fn gen_cohort(cfg: &CohortConfig) -> Result<Vec<SyntheticSubject>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_subjects;
    // Evenly spaced clean fractions and tones, shuffled across subjects.
    let mut cleans: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = cfg.clean_fraction;
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        })
        .collect();
    cleans.shuffle(&mut rng);
    let mut tones: Vec<SkinTone> = (0..n)
        .map(|i| [SkinTone::Light, SkinTone::Medium, SkinTone::Dark][i % 3])
        .collect();
    tones.shuffle(&mut rng);

    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("subject_{:02}", i + 1);
        let tone = tones[i];
        let hr = draw(&mut rng, cfg.heart_rate_bpm);
        let perfusion = draw(&mut rng, cfg.wrist_perfusion);
        let dc_ir = 50_000.0;
        let dc_red = rng.random_range(40_000.0..60_000.0);
        let noise = draw(&mut rng, cfg.wrist_noise) * perfusion * dc_ir;
        let schedule = spo2_schedule(&mut rng, cfg);
        let artifacts = artifact_schedule(&mut rng, cfg, cleans[i]);
        let wrist_cfg = SynthConfig {
            duration_s: cfg.duration_s,
            rate_hz: cfg.rate_hz,
            heart_rate_bpm: hr,
            spo2_schedule: schedule.clone(),
            dc_red,
            dc_ir,
            perfusion_index: perfusion,
            noise_sigma: noise,
            artifacts,
            skin_tone_attenuation: tone_attenuation(&mut rng, tone),
            seed: rng.random(),
            jitter_ms: cfg.jitter_ms,
            imu: true,
            t0_ms: 0,
        };
        let finger_cfg = SynthConfig {
            dc_red: 60_000.0,
            dc_ir: 60_000.0,
            perfusion_index: 0.03,
            noise_sigma: 0.01 * 0.03 * 60_000.0,
            artifacts: Vec::new(),
            skin_tone_attenuation: 1.0,
            seed: rng.random(),
            imu: false,
            t0_ms: cfg.finger_offset_ms,
            ..wrist_cfg.clone()
        };
        let wrist = gen_ppg(&wrist_cfg, &cfg.calibration)?;
        let finger = gen_ppg(&finger_cfg, &cfg.calibration)?;
        subjects.push(SyntheticSubject {
            id,
            tone,
            wrist_cfg,
            finger_cfg,
            wrist,
            finger,
        });
    }
    Ok(subjects)
}

/// Paths of one written subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectFiles {
    pub subject_id: String,
    pub wrist_csv: PathBuf,
    pub finger_csv: PathBuf,
    pub truth_csv: PathBuf,
}

/// Writes `<id>_wrist.csv`, `<id>_finger.csv` (each with a `.meta` sidecar)
/// and `<id>_truth.csv` for every subject.
pub fn write_cohort(
    dir: &Path,
    subjects: &[SyntheticSubject],
    site: Site,
) -> Result<Vec<SubjectFiles>, SynthError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::new();
    for s in subjects {
        let wrist_csv = dir.join(format!("{}_wrist.csv", s.id));
        let finger_csv = dir.join(format!("{}_finger.csv", s.id));
        let truth_csv = dir.join(format!("{}_truth.csv", s.id));
        write_stream(
            &wrist_csv,
            &s.wrist.records,
            StreamKind::Wrist,
            &s.wrist_meta(site),
        )?;
        write_stream(
            &finger_csv,
            &s.finger.records,
            StreamKind::Fingertip,
            &s.finger_meta(),
        )?;
        let f = File::create(&truth_csv).map_err(io_err(&truth_csv))?;
        s.wrist
            .truth
            .write_csv(std::io::BufWriter::new(f))
            .map_err(io_err(&truth_csv))?;
        out.push(SubjectFiles {
            subject_id: s.id.clone(),
            wrist_csv,
            finger_csv,
            truth_csv,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{parse_stream, regularize, StreamMeta};
    use crate::spo2::{enhanced_spo2, EnhancedConfig};
    use crate::window::WindowConfig;

    #[test]
    fn pulse_is_normalized() {
        let n = 10_000;
        let v: Vec<f64> = (0..n).map(|i| pulse(i as f64 / n as f64)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!((rms - 1.0).abs() < 1e-6, "{rms}");
        assert!((pulse(0.3) - pulse(1.3)).abs() < 1e-12);
    }

    fn short(seed: u64) -> SynthConfig {
        SynthConfig {
            duration_s: 40.0,
            seed,
            noise_sigma: 5.0,
            jitter_ms: 3.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = CalibrationCurve::default();
        assert_eq!(
            gen_ppg(&short(1), &c).unwrap(),
            gen_ppg(&short(1), &c).unwrap()
        );
        assert_ne!(
            gen_ppg(&short(1), &c).unwrap(),
            gen_ppg(&short(2), &c).unwrap()
        );
    }

    #[test]
    fn clean_trace_recovers_target() {
        let cfg = SynthConfig {
            duration_s: 60.0,
            ..SynthConfig::default()
        };
        let trace = gen_ppg(&cfg, &CalibrationCurve::default()).unwrap();
        let s = regularize(&trace.frames(), &StreamMeta::new("s", Site::WristTop)).unwrap();
        let est = enhanced_spo2(
            &s,
            &CalibrationCurve::default(),
            &EnhancedConfig::default(),
            WindowConfig::new(100, 1).unwrap(),
        );
        assert!(est
            .iter()
            .all(|e| (e.spo2_pct.unwrap() - 97.0).abs() <= 0.5));
    }

    #[test]
    fn zero_perfusion_is_degenerate() {
        let cfg = SynthConfig {
            duration_s: 10.0,
            perfusion_index: 0.0,
            ..SynthConfig::default()
        };
        let trace = gen_ppg(&cfg, &CalibrationCurve::default()).unwrap();
        let s = regularize(&trace.frames(), &StreamMeta::new("s", Site::WristTop)).unwrap();
        let est = enhanced_spo2(
            &s,
            &CalibrationCurve::default(),
            &EnhancedConfig::default(),
            WindowConfig::default(),
        );
        assert!(est.iter().all(|e| e.gates.degenerate_ir && !e.is_emitted()));
    }

    #[test]
    fn contact_loss_invalidates_dc() {
        let cfg = SynthConfig {
            duration_s: 20.0,
            artifacts: vec![ArtifactSpec {
                start_s: 4.0,
                duration_s: 10.0,
                kind: ArtifactKind::ContactLoss,
                intensity: 1.0,
            }],
            ..SynthConfig::default()
        };
        let trace = gen_ppg(&cfg, &CalibrationCurve::default()).unwrap();
        let s = regularize(&trace.frames(), &StreamMeta::new("s", Site::WristTop)).unwrap();
        let est = enhanced_spo2(
            &s,
            &CalibrationCurve::default(),
            &EnhancedConfig::default(),
            WindowConfig::default(),
        );
        // Window 2 covers 8..12 s, inside the flat part of the loss.
        assert!(est[2].gates.dc_invalid);
        assert!(trace.truth.artifact_mask[100] && !trace.truth.artifact_mask[99]);
    }

    #[test]
    fn empty_artifact_list_is_identity() {
        let c = CalibrationCurve::default();
        let a = gen_ppg(&short(3), &c).unwrap();
        assert!(a.truth.artifact_mask.iter().all(|m| !m));
    }

    #[test]
    fn validation() {
        let c = CalibrationCurve::default();
        let bad = SynthConfig {
            spo2_schedule: vec![Spo2Step {
                start_s: 0.0,
                spo2_pct: 60.0,
            }],
            ..SynthConfig::default()
        };
        assert!(matches!(
            gen_ppg(&bad, &c),
            Err(SynthError::ConfigOutOfRange(_))
        ));
        let bad = SynthConfig {
            artifacts: vec![ArtifactSpec {
                start_s: 700.0,
                duration_s: 30.0,
                kind: ArtifactKind::Motion,
                intensity: 1.0,
            }],
            ..SynthConfig::default()
        };
        assert!(gen_ppg(&bad, &c).is_err());
    }

    #[test]
    fn files_round_trip() {
        let cfg = CohortConfig {
            n_subjects: 2,
            duration_s: 30.0,
            ..CohortConfig::default()
        };
        let subjects = gen_cohort(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_cohort(dir.path(), &subjects, Site::WristTop).unwrap();
        let parsed = parse_stream(&files[0].wrist_csv, StreamKind::Wrist).unwrap();
        assert_eq!(parsed.records, subjects[0].wrist.records);
        assert_eq!(parsed.meta.subject_id, "subject_01");
        let finger = parse_stream(&files[1].finger_csv, StreamKind::Fingertip).unwrap();
        assert_eq!(finger.records, subjects[1].finger.records);
        let truth = std::fs::read_to_string(&files[0].truth_csv).unwrap();
        assert_eq!(truth.lines().next().unwrap(), "t_ms,true_spo2_pct,artifact");
        assert_eq!(truth.lines().count(), 30 * 25 + 1);
    }
}

//! Ratio-of-ratios SpO2 estimation.
//!
//! `SpO2 = y0 - m · (AC_red / DC_red) / (AC_ir / DC_ir)`, with DC the window
//! mean and AC the RMS of the least-squares detrended window. The baseline
//! algorithm applies this to every window; the enhanced algorithm first
//! checks that the detrended red and infrared channels are correlated and
//! discards windows below the correlation threshold.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::RegularStream;
use crate::window::{WindowConfig, MIN_WINDOW_LEN};

/// AC/DC ratios below this are treated as a flat channel.
const FLAT_RELATIVE_AC: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum Spo2Error {
    #[error("window of {0} samples is shorter than {MIN_WINDOW_LEN}")]
    WindowTooShort(usize),
    #[error("window mean {0} is not positive")]
    DcNonPositive(f64),
    #[error("infrared channel has no alternating component")]
    DegenerateIr,
    #[error("recalibration needs at least 10 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("fit fraction must be in (0, 1], got {0}")]
    InvalidFitFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcDc {
    pub ac: f64,
    pub dc: f64,
}

/// Linear map from ratio R to SpO2 percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub y0: f64,
    pub m: f64,
}

impl Default for CalibrationCurve {
    fn default() -> Self {
        Self { y0: 110.0, m: 25.0 }
    }
}

impl CalibrationCurve {
    /// Ratio that maps to `spo2_pct` (before clamping).
    pub fn ratio_for(&self, spo2_pct: f64) -> f64 {
        (self.y0 - spo2_pct) / self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancedConfig {
    pub corr_threshold: f64,
}

impl Default for EnhancedConfig {
    fn default() -> Self {
        Self {
            corr_threshold: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Baseline,
    Enhanced,
    /// Enhanced readings that survived classifier pruning.
    Pruned,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Enhanced => "enhanced",
            Algorithm::Pruned => "pruned",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-window diagnostic flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gates {
    pub corr_rejected: bool,
    pub out_of_range_clamped: bool,
    pub dc_invalid: bool,
    pub degenerate_ir: bool,
}

impl Gates {
    pub fn is_empty(&self) -> bool {
        *self == Gates::default()
    }
}

impl fmt::Display for Gates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (self.corr_rejected, "corr_rejected"),
            (self.out_of_range_clamped, "out_of_range_clamped"),
            (self.dc_invalid, "dc_invalid"),
            (self.degenerate_ir, "degenerate_ir"),
        ];
        let mut first = true;
        for (_, name) in names.iter().filter(|(on, _)| *on) {
            if !first {
                f.write_str("|")?;
            }
            f.write_str(name)?;
            first = false;
        }
        Ok(())
    }
}

/// One window's reading. `spo2_pct` is `None` when the window produced no
/// value (invalid DC, flat infrared, or rejected by the correlation gate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spo2Estimate {
    pub t_ms: i64,
    /// Index of the window's first sample in the source stream.
    pub start: usize,
    pub ratio_r: Option<f64>,
    pub spo2_pct: Option<f64>,
    pub algorithm: Algorithm,
    pub gates: Gates,
}

impl Spo2Estimate {
    pub fn is_emitted(&self) -> bool {
        self.spo2_pct.is_some()
    }
}

/// Residuals of `x` after removing its least-squares line over `0..n`.
pub fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let tc = (nf - 1.0) / 2.0;
    let stt = nf * (nf * nf - 1.0) / 12.0;
    let sxt: f64 = x
        .iter()
        .enumerate()
        .map(|(t, &v)| (t as f64 - tc) * (v - mean))
        .sum();
    let slope = if stt > 0.0 { sxt / stt } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(t, &v)| v - mean - slope * (t as f64 - tc))
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// DC = window mean, AC = RMS of the linearly detrended window.
pub fn extract_ac_dc(window: &[f64]) -> Result<AcDc, Spo2Error> {
    if window.len() < MIN_WINDOW_LEN {
        return Err(Spo2Error::WindowTooShort(window.len()));
    }
    let dc = window.iter().sum::<f64>() / window.len() as f64;
    if dc <= 0.0 || !dc.is_finite() {
        return Err(Spo2Error::DcNonPositive(dc));
    }
    Ok(AcDc {
        ac: rms(&detrend(window)),
        dc,
    })
}

/// Ratio of ratios `(red.ac / red.dc) / (ir.ac / ir.dc)`.
pub fn compute_r(red: AcDc, ir: AcDc) -> Result<f64, Spo2Error> {
    for dc in [red.dc, ir.dc] {
        if dc <= 0.0 {
            return Err(Spo2Error::DcNonPositive(dc));
        }
    }
    let ir_ratio = ir.ac / ir.dc;
    if ir_ratio <= FLAT_RELATIVE_AC {
        return Err(Spo2Error::DegenerateIr);
    }
    Ok((red.ac / red.dc) / ir_ratio)
}

/// Applies the calibration line and clamps to `[0, 100]`.
///
/// Returns the percentage and whether clamping happened.
pub fn spo2_from_r(r: f64, calib: &CalibrationCurve) -> (f64, bool) {
    let raw = calib.y0 - calib.m * r;
    let clamped = raw.clamp(0.0, 100.0);
    (clamped, clamped != raw)
}

/// Two-pass Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n == 0 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Everything both algorithms need from one red/ir window.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowReading {
    pub ratio: Option<f64>,
    pub spo2: Option<f64>,
    pub gates: Gates,
}

pub(crate) fn read_window(
    red: &[f64],
    ir: &[f64],
    calib: &CalibrationCurve,
    gate: Option<&EnhancedConfig>,
) -> WindowReading {
    let mut gates = Gates::default();
    let dc_red = red.iter().sum::<f64>() / red.len() as f64;
    let dc_ir = ir.iter().sum::<f64>() / ir.len() as f64;
    if !(dc_red > 0.0 && dc_ir > 0.0) {
        gates.dc_invalid = true;
        return WindowReading {
            ratio: None,
            spo2: None,
            gates,
        };
    }
    let red_d = detrend(red);
    let ir_d = detrend(ir);
    let red_acdc = AcDc {
        ac: rms(&red_d),
        dc: dc_red,
    };
    let ir_acdc = AcDc {
        ac: rms(&ir_d),
        dc: dc_ir,
    };
    let ratio = match compute_r(red_acdc, ir_acdc) {
        Ok(r) => Some(r),
        Err(_) => {
            gates.degenerate_ir = true;
            None
        }
    };
    if let Some(cfg) = gate {
        let flat = red_acdc.ac / red_acdc.dc <= FLAT_RELATIVE_AC
            || ir_acdc.ac / ir_acdc.dc <= FLAT_RELATIVE_AC;
        match pearson(&red_d, &ir_d).filter(|_| !flat) {
            Some(r) if r >= cfg.corr_threshold => {}
            _ => gates.corr_rejected = true,
        }
    }
    let spo2 = match ratio {
        Some(r) if !gates.corr_rejected => {
            let (pct, clamped) = spo2_from_r(r, calib);
            gates.out_of_range_clamped = clamped;
            Some(pct)
        }
        _ => None,
    };
    WindowReading { ratio, spo2, gates }
}

fn run_windows(
    stream: &RegularStream,
    calib: &CalibrationCurve,
    gate: Option<&EnhancedConfig>,
    window: WindowConfig,
) -> Vec<Spo2Estimate> {
    let algorithm = if gate.is_some() {
        Algorithm::Enhanced
    } else {
        Algorithm::Baseline
    };
    let n = window.window_len;
    window
        .starts(stream.len())
        .map(|s| {
            let t_ms = stream.timestamps()[s + n - 1];
            if stream.gaps_in(s, n) > 0 {
                return Spo2Estimate {
                    t_ms,
                    start: s,
                    ratio_r: None,
                    spo2_pct: None,
                    algorithm,
                    gates: Gates {
                        dc_invalid: true,
                        ..Gates::default()
                    },
                };
            }
            let reading = read_window(&stream.red()[s..s + n], &stream.ir()[s..s + n], calib, gate);
            Spo2Estimate {
                t_ms,
                start: s,
                ratio_r: reading.ratio,
                spo2_pct: reading.spo2,
                algorithm,
                gates: reading.gates,
            }
        })
        .collect()
}

/// Ratio of ratios on every complete window, without filtering.
pub fn baseline_spo2(
    stream: &RegularStream,
    calib: &CalibrationCurve,
    window: WindowConfig,
) -> Vec<Spo2Estimate> {
    run_windows(stream, calib, None, window)
}

/// Baseline computation gated by red/ir Pearson correlation of the
/// detrended channels.
pub fn enhanced_spo2(
    stream: &RegularStream,
    calib: &CalibrationCurve,
    cfg: &EnhancedConfig,
    window: WindowConfig,
) -> Vec<Spo2Estimate> {
    run_windows(stream, calib, Some(cfg), window)
}

/// Result of a bias recalibration against a reference device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recalibration {
    /// Mean of `reference - device` over the fitting prefix.
    pub offset: f64,
    pub calibration: CalibrationCurve,
    pub n_fit: usize,
    /// Mean absolute difference over the held-out remainder after correction.
    pub holdout_mad: Option<f64>,
}

/// Fits a constant bias on the first `fit_fraction` of `(reference, device)`
/// pairs and shifts `y0` by it.
pub fn recalibrate(
    paired: &[(f64, f64)],
    fit_fraction: f64,
    calib: &CalibrationCurve,
) -> Result<Recalibration, Spo2Error> {
    if paired.len() < 10 {
        return Err(Spo2Error::TooFewPairs(paired.len()));
    }
    if !(fit_fraction > 0.0 && fit_fraction <= 1.0) {
        return Err(Spo2Error::InvalidFitFraction(fit_fraction));
    }
    let n_fit = ((fit_fraction * paired.len() as f64).ceil() as usize).clamp(1, paired.len());
    let (fit, held) = paired.split_at(n_fit);
    let offset = fit.iter().map(|(r, d)| r - d).sum::<f64>() / n_fit as f64;
    let holdout_mad = (!held.is_empty()).then(|| {
        held.iter()
            .map(|(r, d)| (r - (d + offset)).abs())
            .sum::<f64>()
            / held.len() as f64
    });
    Ok(Recalibration {
        offset,
        calibration: CalibrationCurve {
            y0: calib.y0 + offset,
            m: calib.m,
        },
        n_fit,
        holdout_mad,
    })
}

fn opt_real(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `t_ms,algorithm,ratio_r,spo2_pct,gates` rows.
pub fn write_estimates<W: Write>(mut w: W, estimates: &[Spo2Estimate]) -> std::io::Result<()> {
    writeln!(w, "t_ms,algorithm,ratio_r,spo2_pct,gates")?;
    for e in estimates {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.t_ms,
            e.algorithm,
            opt_real(e.ratio_r),
            opt_real(e.spo2_pct),
            e.gates
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{SensorFrame, Site, StreamMeta};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream_of(red: &[f64], ir: &[f64]) -> RegularStream {
        let frames: Vec<_> = red
            .iter()
            .zip(ir)
            .enumerate()
            .map(|(i, (&r, &x))| SensorFrame {
                t_ms: i as i64 * 40,
                red: r,
                ir: x,
                accel_mag: 0.0,
                gyro_mag: 0.0,
            })
            .collect();
        RegularStream::from_uniform_frames(&frames, StreamMeta::new("t", Site::WristTop))
    }

    #[test]
    fn constant_window() {
        let acdc = extract_ac_dc(&[5.0; 20]).unwrap();
        assert_eq!(acdc.dc, 5.0);
        assert!(acdc.ac < 1e-12);
    }

    #[test]
    fn ramp_has_no_ac() {
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let acdc = extract_ac_dc(&ramp).unwrap();
        assert_eq!(acdc.dc, 49.5);
        assert!(acdc.ac < 1e-9);
    }

    #[test]
    fn centred_sinusoid_ac() {
        // Cosine symmetric about the window centre: orthogonal to the trend line.
        let n = 100;
        let c = (n as f64 - 1.0) / 2.0;
        let x: Vec<f64> = (0..n)
            .map(|t| 10.0 + (2.0 * std::f64::consts::PI * 5.0 * (t as f64 - c) / n as f64).cos())
            .collect();
        let direct_rms = (x.iter().map(|v| (v - 10.0).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((direct_rms - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let acdc = extract_ac_dc(&x).unwrap();
        assert!((acdc.dc - 10.0).abs() < 1e-12);
        assert!((acdc.ac - direct_rms).abs() < 1e-6);
    }

    #[test]
    fn ac_dc_errors() {
        assert_eq!(extract_ac_dc(&[1.0; 7]), Err(Spo2Error::WindowTooShort(7)));
        assert!(matches!(
            extract_ac_dc(&[0.0; 10]),
            Err(Spo2Error::DcNonPositive(_))
        ));
    }

    #[test]
    fn ratio_examples() {
        let a = AcDc { ac: 2.0, dc: 100.0 };
        assert_eq!(compute_r(a, a).unwrap(), 1.0);
        let red = AcDc { ac: 2.0, dc: 100.0 };
        let ir = AcDc { ac: 1.0, dc: 100.0 };
        assert!((compute_r(red, ir).unwrap() - 2.0).abs() < 1e-15);
        let flat = AcDc { ac: 0.0, dc: 100.0 };
        assert_eq!(compute_r(red, flat), Err(Spo2Error::DegenerateIr));
    }

    #[test]
    fn calibration_examples() {
        let c = CalibrationCurve::default();
        assert_eq!(spo2_from_r(0.4, &c), (100.0, false));
        assert_eq!(spo2_from_r(0.2, &c), (100.0, true));
        let (v, clamped) = spo2_from_r(0.56, &c);
        assert!((v - 96.0).abs() < 1e-12 && !clamped);
        assert_eq!(spo2_from_r(5.0, &c), (0.0, true));
    }

    #[test]
    fn baseline_window_counts() {
        let red: Vec<f64> = (0..300).map(|i| 100.0 + (i as f64 * 0.7).sin()).collect();
        let ir: Vec<f64> = (0..300)
            .map(|i| 100.0 + 2.0 * (i as f64 * 0.7).sin())
            .collect();
        let s = stream_of(&red, &ir);
        let est = baseline_spo2(
            &s,
            &CalibrationCurve::default(),
            WindowConfig::new(100, 100).unwrap(),
        );
        assert_eq!(est.len(), 3);
        assert_eq!(est[0].t_ms, 99 * 40);
        let short = stream_of(&red[..50], &ir[..50]);
        assert!(baseline_spo2(
            &short,
            &CalibrationCurve::default(),
            WindowConfig::default()
        )
        .is_empty());
    }

    #[test]
    fn correlation_gate_examples() {
        let pulse: Vec<f64> = (0..100).map(|i| (i as f64 * 0.9).sin()).collect();
        let red: Vec<f64> = pulse.iter().map(|p| 100.0 + p).collect();
        let ir_same: Vec<f64> = pulse.iter().map(|p| 200.0 + 2.0 * p).collect();
        let ir_anti: Vec<f64> = pulse.iter().map(|p| 200.0 - 2.0 * p).collect();
        let cfg = EnhancedConfig::default();
        let w = WindowConfig::default();
        let c = CalibrationCurve::default();
        let kept = enhanced_spo2(&stream_of(&red, &ir_same), &c, &cfg, w);
        assert!(kept[0].is_emitted());
        let rejected = enhanced_spo2(&stream_of(&red, &ir_anti), &c, &cfg, w);
        assert!(!rejected[0].is_emitted());
        assert!(rejected[0].gates.corr_rejected);
        let d_red = detrend(&red);
        let d_anti = detrend(&ir_anti);
        assert!((pearson(&d_red, &d_anti).unwrap() + 1.0).abs() < 1e-12);
        let flat = enhanced_spo2(&stream_of(&red, &[50.0; 100]), &c, &cfg, w);
        assert!(flat[0].gates.corr_rejected && flat[0].gates.degenerate_ir);
    }

    #[test]
    fn white_noise_is_rejected() {
        let mut rejected = 0;
        let cfg = EnhancedConfig::default();
        let c = CalibrationCurve::default();
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let red: Vec<f64> = (0..100).map(|_| 1000.0 + rng.random::<f64>()).collect();
            let ir: Vec<f64> = (0..100).map(|_| 1000.0 + rng.random::<f64>()).collect();
            let e = enhanced_spo2(&stream_of(&red, &ir), &c, &cfg, WindowConfig::default());
            if !e[0].is_emitted() {
                rejected += 1;
            }
        }
        assert!(rejected >= 950, "rejected {rejected}/1000");
    }

    #[test]
    fn gap_windows_flag_dc_invalid() {
        let frames: Vec<_> = (0..250)
            .filter(|&i| i != 150)
            .map(|i| SensorFrame {
                t_ms: i * 40,
                red: 10.0 + (i as f64).sin(),
                ir: 20.0 + (i as f64).sin(),
                accel_mag: 0.0,
                gyro_mag: 0.0,
            })
            .collect();
        let s =
            crate::signal_io::regularize(&frames, &StreamMeta::new("t", Site::WristTop)).unwrap();
        let est = baseline_spo2(
            &s,
            &CalibrationCurve::default(),
            WindowConfig::non_overlapping(100).unwrap(),
        );
        assert_eq!(est.len(), 2);
        assert!(est[0].is_emitted());
        assert!(est[1].gates.dc_invalid && !est[1].is_emitted());
    }

    #[test]
    fn recalibration_removes_constant_bias() {
        let pairs: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let r = 95.0 + (i % 5) as f64;
                (r, r + 1.46)
            })
            .collect();
        let rc = recalibrate(&pairs, 0.5, &CalibrationCurve::default()).unwrap();
        assert!((rc.offset + 1.46).abs() < 1e-12);
        assert!(rc.holdout_mad.unwrap() < 1e-12);
        assert!((rc.calibration.y0 - (110.0 - 1.46)).abs() < 1e-12);

        let same: Vec<(f64, f64)> = (0..20)
            .map(|i| (90.0 + i as f64 * 0.1, 90.0 + i as f64 * 0.1))
            .collect();
        assert_eq!(
            recalibrate(&same, 0.5, &CalibrationCurve::default())
                .unwrap()
                .offset,
            0.0
        );
        assert_eq!(
            recalibrate(&same[..9], 0.5, &CalibrationCurve::default()),
            Err(Spo2Error::TooFewPairs(9))
        );
        assert!(recalibrate(&same, 0.0, &CalibrationCurve::default()).is_err());
    }

    #[test]
    fn recalibration_noisy_offset() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(1.0, 0.1).unwrap();
        let pairs: Vec<(f64, f64)> = (0..600)
            .map(|i| {
                let r = 94.0 + (i % 7) as f64 * 0.5;
                (r, r + noise.sample(&mut rng))
            })
            .collect();
        let rc = recalibrate(&pairs, 0.5, &CalibrationCurve::default()).unwrap();
        assert!((rc.offset + 1.0).abs() < 0.05, "offset {}", rc.offset);
    }

    fn window_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-1.0f64..1.0, 100),
            prop::collection::vec(-1.0f64..1.0, 100),
        )
            .prop_map(|(a, b)| {
                let red = a
                    .iter()
                    .enumerate()
                    .map(|(i, v)| 500.0 + 5.0 * (i as f64 * 0.5).sin() + v)
                    .collect();
                let ir = b
                    .iter()
                    .enumerate()
                    .map(|(i, v)| 800.0 + 9.0 * (i as f64 * 0.5).sin() + v)
                    .collect();
                (red, ir)
            })
    }

    proptest! {
        #[test]
        fn ratio_is_scale_invariant((red, ir) in window_strategy(), c in 0.01f64..100.0) {
            let r0 = compute_r(extract_ac_dc(&red).unwrap(), extract_ac_dc(&ir).unwrap()).unwrap();
            let scaled: Vec<f64> = red.iter().map(|v| v * c).collect();
            let r1 = compute_r(extract_ac_dc(&scaled).unwrap(), extract_ac_dc(&ir).unwrap()).unwrap();
            prop_assert!((r1 - r0).abs() <= 1e-9 * r0.abs());
        }

        #[test]
        fn offset_changes_only_dc((red, ir) in window_strategy(), k in 0.0f64..1000.0) {
            let base_red = extract_ac_dc(&red).unwrap();
            let irv = extract_ac_dc(&ir).unwrap();
            let shifted: Vec<f64> = red.iter().map(|v| v + k).collect();
            let s = extract_ac_dc(&shifted).unwrap();
            prop_assert!((s.ac - base_red.ac).abs() <= 1e-9 * base_red.ac);
            let expected = compute_r(base_red, irv).unwrap() * base_red.dc / (base_red.dc + k);
            let got = compute_r(s, irv).unwrap();
            prop_assert!((got - expected).abs() <= 1e-9 * expected);
        }

        #[test]
        fn enhanced_is_subset_of_baseline(
            noise in prop::collection::vec(-30.0f64..30.0, 400),
            step in 1usize..60,
        ) {
            let red: Vec<f64> = noise.iter().enumerate().map(|(i, v)| 1000.0 + 10.0 * (i as f64 * 0.4).sin() + v).collect();
            let ir: Vec<f64> = noise.iter().rev().enumerate().map(|(i, v)| 1500.0 + 20.0 * (i as f64 * 0.4).sin() + v).collect();
            let s = stream_of(&red, &ir);
            let w = WindowConfig::new(100, step).unwrap();
            let c = CalibrationCurve::default();
            let base = baseline_spo2(&s, &c, w);
            let enh = enhanced_spo2(&s, &c, &EnhancedConfig::default(), w);
            prop_assert_eq!(base.len(), enh.len());
            for (b, e) in base.iter().zip(&enh) {
                prop_assert_eq!(b.t_ms, e.t_ms);
                if let Some(v) = e.spo2_pct {
                    prop_assert_eq!(b.spo2_pct, Some(v));
                }
            }
        }

        #[test]
        fn spo2_monotone_in_r(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let c = CalibrationCurve::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(spo2_from_r(hi, &c).0 <= spo2_from_r(lo, &c).0);
        }

        #[test]
        fn pearson_matches_naive(
            x in prop::collection::vec(-100.0f64..100.0, 5..120),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random::<f64>() * 50.0).collect();
            // Naive definition: covariance over product of standard deviations.
            let n = x.len() as f64;
            let mx: f64 = x.iter().sum::<f64>() / n;
            let my: f64 = y.iter().sum::<f64>() / n;
            let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
            let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
            let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
            prop_assume!(sx > 0.0 && sy > 0.0);
            let naive = cov / (sx * sy);
            let got = pearson(&x, &y).unwrap();
            prop_assert!((got - naive).abs() <= 1e-12, "{got} vs {naive}");
        }
    }
}

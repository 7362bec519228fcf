use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use super::catalog::{Channel, FeatureKind, FeatureSpec, FftAttr};
use crate::signal_io::RegularStream;
use crate::window::WindowConfig;

/// Standard deviations at or below this fraction of the mean magnitude count
/// as a constant window.
const FLAT_RELATIVE_STD: f64 = 1e-12;

/// Four aligned channel slices of one window.
#[derive(Debug, Clone, Copy)]
pub struct SampleWindow<'a> {
    pub start: usize,
    pub end_t_ms: i64,
    pub rate_hz: f64,
    pub red: &'a [f64],
    pub ir: &'a [f64],
    pub accel_mag: &'a [f64],
    pub gyro_mag: &'a [f64],
}

impl<'a> SampleWindow<'a> {
    pub fn at(stream: &'a RegularStream, start: usize, len: usize) -> Self {
        let r = start..start + len;
        Self {
            start,
            end_t_ms: stream.timestamps()[start + len - 1],
            rate_hz: stream.rate_hz(),
            red: &stream.red()[r.clone()],
            ir: &stream.ir()[r.clone()],
            accel_mag: &stream.accel_mag()[r.clone()],
            gyro_mag: &stream.gyro_mag()[r],
        }
    }

    pub fn channel(&self, c: Channel) -> &'a [f64] {
        match c {
            Channel::Red => self.red,
            Channel::Ir => self.ir,
            Channel::AccelMag => self.accel_mag,
            Channel::GyroMag => self.gyro_mag,
        }
    }

    pub fn len(&self) -> usize {
        self.red.len()
    }

    pub fn is_empty(&self) -> bool {
        self.red.is_empty()
    }
}

/// Windows over a regularized stream; windows touching a gap are skipped.
pub fn window_stream(stream: &RegularStream, cfg: WindowConfig) -> Vec<SampleWindow<'_>> {
    cfg.starts(stream.len())
        .filter(|&s| stream.gaps_in(s, cfg.window_len) == 0)
        .map(|s| SampleWindow::at(stream, s, cfg.window_len))
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance around a known mean.
fn variance(x: &[f64], mu: f64) -> f64 {
    x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64
}

fn is_flat(var: f64, mu: f64) -> bool {
    var.sqrt() <= FLAT_RELATIVE_STD * mu.abs().max(1.0)
}

fn longest_strike_below_mean(x: &[f64]) -> f64 {
    let mu = mean(x);
    let mut best = 0usize;
    let mut run = 0usize;
    for &v in x {
        if v < mu {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64
}

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mu = mean(x);
    let var = variance(x, mu);
    if is_flat(var, mu) {
        return 0.0;
    }
    let s: f64 = x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mu) * (b - mu))
        .sum();
    s / ((n - lag) as f64 * var)
}

fn cid_ce(x: &[f64], normalize: bool) -> f64 {
    let diff_sq: f64 = x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    if !normalize {
        return diff_sq.sqrt();
    }
    let mu = mean(x);
    let var = variance(x, mu);
    if is_flat(var, mu) {
        return 0.0;
    }
    // Standardizing divides every difference by sigma.
    diff_sq.sqrt() / var.sqrt()
}

/// Least-squares solution of `a · x ≈ b` by Householder QR, with `a` stored
/// column-major as `cols` columns of length `rows`. Returns `None` when a
/// diagonal entry of R collapses relative to the largest one.
fn householder_lstsq(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let cols = a.len();
    let rows = b.len();
    let mut diag = vec![0.0; cols];
    for c in 0..cols {
        let norm = a[c][c..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[c][c] > 0.0 { -norm } else { norm };
        a[c][c] -= alpha;
        let vv: f64 = a[c][c..].iter().map(|v| v * v).sum();
        let (head, tail) = a.split_at_mut(c + 1);
        let v = &head[c][c..];
        for col in tail.iter_mut() {
            let f = 2.0 * v.iter().zip(&col[c..]).map(|(p, q)| p * q).sum::<f64>() / vv;
            col[c..].iter_mut().zip(v).for_each(|(q, p)| *q -= f * p);
        }
        let f = 2.0 * v.iter().zip(&b[c..]).map(|(p, q)| p * q).sum::<f64>() / vv;
        b[c..].iter_mut().zip(v).for_each(|(q, p)| *q -= f * p);
        diag[c] = alpha;
    }
    let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= 1e-12 * max_diag) || rows < cols {
        return None;
    }
    let mut x = vec![0.0; cols];
    for c in (0..cols).rev() {
        let s: f64 = (c + 1..cols).map(|j| a[j][c] * x[j]).sum();
        x[c] = (b[c] - s) / diag[c];
    }
    Some(x)
}

/// Parameters of `x_t = c + Σ_j φ_j x_{t-j}` fitted by least squares.
/// Index 0 is the intercept `c`, index `j` is `φ_j`.
fn ar_fit(x: &[f64], k: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if k == 0 || n <= 2 * k {
        return None;
    }
    let ym = mean(&x[k..]);
    // Column j (lag j+1) covers x[k-j-1 .. n-j-1].
    let col = |j: usize| &x[k - j - 1..n - j - 1];
    let cm: Vec<f64> = (0..k).map(|j| mean(col(j))).collect();
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|j| col(j).iter().map(|v| v - cm[j]).collect())
        .collect();
    let mut b: Vec<f64> = x[k..].iter().map(|v| v - ym).collect();
    let phi = householder_lstsq(&mut a, &mut b)?;
    let intercept = ym - phi.iter().zip(&cm).map(|(p, m)| p * m).sum::<f64>();
    let mut out = Vec::with_capacity(k + 1);
    out.push(intercept);
    out.extend(phi);
    Some(out)
}

/// Single DFT bin `Σ_t v_t e^{-2πi·c·t/n}` with a rotating phasor.
fn dft_bin(values: impl Iterator<Item = f64>, coeff: usize, n: usize) -> (f64, f64) {
    let theta = -2.0 * PI * coeff as f64 / n as f64;
    let (step_im, step_re) = theta.sin_cos();
    let (mut wr, mut wi) = (1.0f64, 0.0f64);
    let (mut re, mut im) = (0.0, 0.0);
    for v in values {
        re += v * wr;
        im += v * wi;
        let nr = wr * step_re - wi * step_im;
        wi = wr * step_im + wi * step_re;
        wr = nr;
    }
    (re, im)
}

/// One-sided Welch density at bin `coeff`: a single Hann-windowed segment
/// spanning the whole window, mean removed, density scaling.
fn welch_density(x: &[f64], coeff: usize, fs: f64) -> f64 {
    let n = x.len();
    if coeff > n / 2 {
        return 0.0;
    }
    let mu = mean(x);
    let hann = |t: usize| 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos();
    let win_energy: f64 = (0..n).map(|t| hann(t) * hann(t)).sum();
    let (re, im) = dft_bin(
        x.iter().enumerate().map(|(t, v)| (v - mu) * hann(t)),
        coeff,
        n,
    );
    let mut p = (re * re + im * im) / (fs * win_energy);
    let nyquist = n.is_multiple_of(2) && coeff == n / 2;
    if coeff != 0 && !nyquist {
        p *= 2.0;
    }
    p
}

fn fft_coefficient(x: &[f64], coeff: usize, attr: FftAttr) -> f64 {
    let n = x.len();
    if coeff > n / 2 {
        return 0.0;
    }
    let (re, im) = dft_bin(x.iter().copied(), coeff, n);
    match attr {
        FftAttr::Real => re,
        FftAttr::Imag => im,
        FftAttr::Abs => re.hypot(im),
        FftAttr::Angle => im.atan2(re).to_degrees(),
    }
}

/// Evaluates one feature definition on a single channel.
///
/// Degenerate inputs (constant window, rank-deficient AR design, bins past
/// Nyquist) give 0 rather than NaN.
pub fn compute_kind(kind: &FeatureKind, x: &[f64], rate_hz: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    match *kind {
        FeatureKind::Mean => mean(x),
        FeatureKind::Sum => x.iter().sum(),
        FeatureKind::Std => variance(x, mean(x)).sqrt(),
        FeatureKind::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
        FeatureKind::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        FeatureKind::AbsEnergy => x.iter().map(|v| v * v).sum(),
        FeatureKind::LongestStrikeBelowMean => longest_strike_below_mean(x),
        FeatureKind::Autocorrelation { lag } => autocorrelation(x, lag),
        FeatureKind::CidCe { normalize } => cid_ce(x, normalize),
        FeatureKind::ArCoefficient { coeff, k } => {
            if coeff > k {
                return 0.0;
            }
            ar_fit(x, k).map_or(0.0, |p| p[coeff])
        }
        FeatureKind::SpktWelchDensity { coeff } => welch_density(x, coeff, rate_hz),
        FeatureKind::FftCoefficient { coeff, attr } => fft_coefficient(x, coeff, attr),
    }
}

pub fn compute_feature(spec: &FeatureSpec, window: &SampleWindow<'_>) -> f64 {
    let v = compute_kind(&spec.kind, window.channel(spec.channel), window.rate_hz);
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Appends the catalog's values for one window to `out`.
pub fn extract_row(window: &SampleWindow<'_>, catalog: &[FeatureSpec], out: &mut Vec<f64>) {
    out.extend(catalog.iter().map(|s| compute_feature(s, window)));
}

/// Named feature values of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub t_ms: i64,
    pub values: BTreeMap<FeatureSpec, f64>,
}

/// Dense row-major feature matrix with its column catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub catalog: Vec<FeatureSpec>,
    pub t_ms: Vec<i64>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(catalog: Vec<FeatureSpec>) -> Self {
        Self {
            catalog,
            t_ms: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.t_ms.len()
    }

    pub fn n_cols(&self) -> usize {
        self.catalog.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn push_row(&mut self, t_ms: i64, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols(), "row width must match the catalog");
        self.t_ms.push(t_ms);
        self.values.extend_from_slice(row);
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Copy restricted to `specs`, in the order given. Returns `None` if a
    /// spec is not a column of this matrix.
    pub fn select_columns(&self, specs: &[FeatureSpec]) -> Option<FeatureMatrix> {
        let idx = self.column_indices(specs)?;
        let mut out = FeatureMatrix::new(specs.to_vec());
        let mut buf = Vec::with_capacity(idx.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            buf.clear();
            buf.extend(idx.iter().map(|&j| row[j]));
            out.push_row(self.t_ms[i], &buf);
        }
        Some(out)
    }

    /// Position of each of `specs` among the columns.
    pub fn column_indices(&self, specs: &[FeatureSpec]) -> Option<Vec<usize>> {
        specs
            .iter()
            .map(|s| self.catalog.iter().position(|c| c == s))
            .collect()
    }

    pub fn vector(&self, i: usize) -> FeatureVector {
        FeatureVector {
            t_ms: self.t_ms[i],
            values: self
                .catalog
                .iter()
                .copied()
                .zip(self.row(i).iter().copied())
                .collect(),
        }
    }

    /// Writes `t_ms,<feature ids...>` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t_ms")?;
        for s in &self.catalog {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
        for i in 0..self.n_rows() {
            write!(w, "{}", self.t_ms[i])?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// One row per window, in window order.
pub fn extract_matrix(windows: &[SampleWindow<'_>], catalog: &[FeatureSpec]) -> FeatureMatrix {
    let mut m = FeatureMatrix::new(catalog.to_vec());
    let mut row = Vec::with_capacity(catalog.len());
    for w in windows {
        row.clear();
        extract_row(w, catalog, &mut row);
        m.push_row(w.end_t_ms, &row);
    }
    m
}

//! Hinge stiffness and damping from recorded oscillations.
//!
//! Pipeline: per-body orientation quaternions → relative rotation of the
//! child with respect to the parent → continuous signed joint angle →
//! Fourier-series smoothing with analytic derivatives → linear least squares
//! on the pendulum model
//!
//!   (I_G + m·r²)·θ̈ = −k·θ − b·θ̇ − m·g·r·sin θ.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinge_models::{fit_quadratic_surface, QuadraticPolynomial};
use crate::lstsq;
use crate::mechanism::{compute_mass_properties, MassProperties, MechanismSpec};

/// Below this angle (rad) the rotation axis of a sample is not trusted.
pub const AXIS_ANGLE_THRESHOLD: f64 = 1e-3;
/// Longest run of missing samples that is bridged by interpolation.
pub const MAX_INTERPOLATED_GAP: usize = 5;
/// Allowed relative deviation of any sample interval from the nominal rate.
pub const RATE_TOLERANCE: f64 = 0.01;
/// Required ratio of the spectral peak to the median spectral magnitude.
pub const PEAK_TO_MEDIAN: f64 = 3.0;
pub const DEFAULT_FOURIER_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation by `angle` about `axis` (any non-zero length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let u = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, u.x * s, u.y * s, u.z * s)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::Value(format!(
                "quaternion ({}, {}, {}, {}) cannot be normalized",
                self.w, self.x, self.y, self.z
            )));
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let Self { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Unsigned rotation angle in [0, π] and its unit axis (`None` when the
    /// rotation is the identity).
    pub fn axis_angle(&self) -> (f64, Option<Vector3<f64>>) {
        let q = if self.w < 0.0 { self.scale(-1.0) } else { *self };
        let v = q.vector();
        let s = v.norm();
        let angle = 2.0 * s.atan2(q.w);
        (angle, (s > 0.0).then(|| v / s))
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

/// Rotation taking orientation `qi` to `qi1`: `qi1 ⊗ qi⁻¹`, normalized.
pub fn relative_quaternion(qi: &Quaternion, qi1: &Quaternion) -> Quaternion {
    let d = *qi1 * qi.conjugate();
    d.scale(1.0 / d.norm())
}

/// Per-body orientation samples on a common clock.
#[derive(Debug, Clone, PartialEq)]
pub struct MocapRecording {
    /// Hz
    pub rate: f64,
    pub bodies: Vec<String>,
    /// s
    pub times: Vec<f64>,
    /// `samples[i][b]` is body `b` at `times[i]`; `None` marks a dropout.
    pub samples: Vec<Vec<Option<Quaternion>>>,
}

impl MocapRecording {
    /// Builds a recording, normalizing every quaternion and estimating the
    /// rate from the median sample interval.
    pub fn new(
        bodies: Vec<String>,
        times: Vec<f64>,
        samples: Vec<Vec<Option<Quaternion>>>,
    ) -> Result<Self> {
        if times.len() != samples.len() {
            return Err(Error::Value(format!(
                "{} timestamps but {} sample rows",
                times.len(),
                samples.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Value("a recording needs at least two samples".into()));
        }
        if let Some(row) = samples.iter().find(|r| r.len() != bodies.len()) {
            return Err(Error::Value(format!(
                "sample row has {} bodies, expected {}",
                row.len(),
                bodies.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &bodies {
            if !seen.insert(b) {
                return Err(Error::Value(format!("body '{b}' appears twice")));
            }
        }
        let samples = samples
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|q| q.map(|q| q.normalized()).transpose())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if dts.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Value("timestamps must be strictly increasing".into()));
        }
        dts.sort_by(f64::total_cmp);
        let dt = dts[dts.len() / 2];
        let (lo, hi) = (dts[0], dts[dts.len() - 1]);
        if (lo - dt).abs() > RATE_TOLERANCE * dt || (hi - dt).abs() > RATE_TOLERANCE * dt {
            return Err(Error::Value(format!(
                "sample intervals range over [{lo:.6e}, {hi:.6e}] s, more than {}% from the nominal {dt:.6e} s",
                RATE_TOLERANCE * 100.0
            )));
        }
        Ok(Self {
            rate: 1.0 / dt,
            bodies,
            times,
            samples,
        })
    }

    pub fn body_index(&self, id: &str) -> Result<usize> {
        self.bodies
            .iter()
            .position(|b| b == id)
            .ok_or_else(|| Error::Reference(format!("body '{id}' is not in the recording")))
    }

    /// Parses `t,<body>_qw,<body>_qx,<body>_qy,<body>_qz,...`; a body's four
    /// cells are either all present or all blank.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Schema(format!("mocap header: {e}")))?
            .clone();
        if header.get(0) != Some("t") || (header.len() - 1) % 4 != 0 || header.len() < 5 {
            return Err(Error::Schema(
                "mocap header must be `t` followed by groups of <body>_qw,<body>_qx,<body>_qy,<body>_qz"
                    .into(),
            ));
        }
        let mut bodies = Vec::new();
        for g in 0..(header.len() - 1) / 4 {
            let mut name = None;
            for (k, suffix) in ["_qw", "_qx", "_qy", "_qz"].iter().enumerate() {
                let col = &header[1 + 4 * g + k];
                let body = col.strip_suffix(suffix).filter(|b| !b.is_empty()).ok_or_else(|| {
                    Error::Schema(format!("mocap column '{col}' should end in '{suffix}'"))
                })?;
                match name {
                    None => name = Some(body),
                    Some(n) if n == body => {}
                    Some(n) => {
                        return Err(Error::Schema(format!(
                            "column '{col}' breaks the quaternion group of body '{n}'"
                        )))
                    }
                }
            }
            bodies.push(name.unwrap().to_string());
        }

        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Schema(format!("mocap row {}: {e}", line + 2)))?;
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::Schema(format!("mocap row {}: '{s}' is not a number", line + 2))
                })
            };
            times.push(parse(&record[0])?);
            let mut row = Vec::with_capacity(bodies.len());
            for g in 0..bodies.len() {
                let cells: Vec<&str> = (0..4).map(|k| &record[1 + 4 * g + k]).collect();
                let blank = cells.iter().filter(|c| c.is_empty()).count();
                row.push(match blank {
                    4 => None,
                    0 => Some(Quaternion::new(
                        parse(cells[0])?,
                        parse(cells[1])?,
                        parse(cells[2])?,
                        parse(cells[3])?,
                    )),
                    _ => {
                        return Err(Error::Schema(format!(
                            "mocap row {}: body '{}' is partially blank",
                            line + 2,
                            bodies[g]
                        )))
                    }
                });
            }
            samples.push(row);
        }
        Self::new(bodies, times, samples)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for b in &self.bodies {
            for c in ["qw", "qx", "qy", "qz"] {
                out.push_str(&format!(",{b}_{c}"));
            }
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.samples) {
            out.push_str(&format!("{t:e}"));
            for q in row {
                match q {
                    Some(q) => out.push_str(&format!(",{:e},{:e},{:e},{:e}", q.w, q.x, q.y, q.z)),
                    None => out.push_str(",,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Two-body recording whose child is rotated by `angles[i]` about the
/// parent-frame `axis`: child = R(axis, θ) ⊗ parent.
pub fn synthetic_recording(
    times: &[f64],
    angles: &[f64],
    axis: &Vector3<f64>,
    parent_pose: impl Fn(f64) -> Quaternion,
    parent_id: &str,
    child_id: &str,
) -> Result<MocapRecording> {
    if times.len() != angles.len() {
        return Err(Error::Value("one angle per timestamp is required".into()));
    }
    let samples = times
        .iter()
        .zip(angles)
        .map(|(&t, &theta)| {
            let parent = parent_pose(t);
            let child = Quaternion::from_axis_angle(axis, theta) * parent;
            vec![Some(parent), Some(child)]
        })
        .collect();
    MocapRecording::new(
        vec![parent_id.to_string(), child_id.to_string()],
        times.to_vec(),
        samples,
    )
}

/// Cubic Hermite interpolation of samples with known slopes onto `at`
/// (each query must lie within the sampled span).
pub fn resample_hermite(t: &[f64], value: &[f64], slope: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    if t.len() < 2 || value.len() != t.len() || slope.len() != t.len() {
        return Err(Error::Value("hermite resampling needs matching series of length ≥ 2".into()));
    }
    let mut out = Vec::with_capacity(at.len());
    let mut i = 0;
    for &s in at {
        if s < t[0] || s > t[t.len() - 1] {
            return Err(Error::Value(format!(
                "resample time {s} outside [{}, {}]",
                t[0],
                t[t.len() - 1]
            )));
        }
        while i + 2 < t.len() && t[i + 1] < s {
            i += 1;
        }
        while i > 0 && t[i] > s {
            i -= 1;
        }
        let h = t[i + 1] - t[i];
        let u = (s - t[i]) / h;
        let (u2, u3) = (u * u, u * u * u);
        out.push(
            (2.0 * u3 - 3.0 * u2 + 1.0) * value[i]
                + (u3 - 2.0 * u2 + u) * h * slope[i]
                + (-2.0 * u3 + 3.0 * u2) * value[i + 1]
                + (u3 - u2) * h * slope[i + 1],
        );
    }
    Ok(out)
}

/// Continuous signed joint angle.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSeries {
    /// s
    pub t: Vec<f64>,
    /// rad
    pub theta: Vec<f64>,
    /// Unit axis whose orientation defines positive angles.
    pub axis: Vector3<f64>,
    /// Whether each sample was bridged across a dropout.
    pub interpolated: Vec<bool>,
}

impl AngleSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn interpolated_count(&self) -> usize {
        self.interpolated.iter().filter(|&&f| f).count()
    }
}

/// Relative-rotation samples of one contiguous stretch.
struct RelativeSegment {
    t: Vec<f64>,
    rel: Vec<Quaternion>,
    interpolated: Vec<bool>,
}

fn lerp_quaternion(a: &Quaternion, b: &Quaternion, u: f64) -> Quaternion {
    let b = if a.dot(b) < 0.0 { b.scale(-1.0) } else { *b };
    let q = Quaternion::new(
        a.w + u * (b.w - a.w),
        a.x + u * (b.x - a.x),
        a.y + u * (b.y - a.y),
        a.z + u * (b.z - a.z),
    );
    q.scale(1.0 / q.norm())
}

fn relative_segments(rec: &MocapRecording, parent: usize, child: usize) -> Vec<RelativeSegment> {
    let present: Vec<bool> = rec
        .samples
        .iter()
        .map(|r| r[parent].is_some() && r[child].is_some())
        .collect();
    let n = present.len();
    let mut segments = Vec::new();
    let mut current: Option<RelativeSegment> = None;
    let mut last_good: Option<usize> = None;
    let mut i = 0;
    while i < n {
        if present[i] {
            let (p, c) = (rec.samples[i][parent].unwrap(), rec.samples[i][child].unwrap());
            let seg = current.get_or_insert_with(|| RelativeSegment {
                t: Vec::new(),
                rel: Vec::new(),
                interpolated: Vec::new(),
            });
            seg.t.push(rec.times[i]);
            seg.rel.push(relative_quaternion(&p, &c));
            seg.interpolated.push(false);
            last_good = Some(i);
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !present[i] {
            i += 1;
        }
        let gap = i - start;
        match (last_good, current.as_mut()) {
            (Some(a), Some(seg)) if i < n && gap <= MAX_INTERPOLATED_GAP => {
                let b = i;
                let span = rec.times[b] - rec.times[a];
                for j in start..b {
                    let u = (rec.times[j] - rec.times[a]) / span;
                    let p = lerp_quaternion(
                        &rec.samples[a][parent].unwrap(),
                        &rec.samples[b][parent].unwrap(),
                        u,
                    );
                    let c = lerp_quaternion(
                        &rec.samples[a][child].unwrap(),
                        &rec.samples[b][child].unwrap(),
                        u,
                    );
                    seg.t.push(rec.times[j]);
                    seg.rel.push(relative_quaternion(&p, &c));
                    seg.interpolated.push(true);
                }
            }
            _ => segments.extend(current.take()),
        }
    }
    segments.extend(current);
    segments
}

fn unwrap_in_place(theta: &mut [f64]) {
    let mut offset = 0.0;
    for i in 1..theta.len() {
        let raw_prev = theta[i - 1] - offset;
        let d = theta[i] - raw_prev;
        offset -= TAU * (d / TAU).round();
        theta[i] += offset;
    }
}

/// Signed angle series of `child` relative to `parent`, one per contiguous
/// stretch (dropouts longer than [`MAX_INTERPOLATED_GAP`] split the record).
/// All stretches share one reference axis: the axis of the first sample
/// rotated by more than [`AXIS_ANGLE_THRESHOLD`].
pub fn signed_angle_segments(
    rec: &MocapRecording,
    parent: &str,
    child: &str,
) -> Result<Vec<AngleSeries>> {
    let (p, c) = (rec.body_index(parent)?, rec.body_index(child)?);
    let segments = relative_segments(rec, p, c);
    let reference = segments
        .iter()
        .flat_map(|s| s.rel.iter())
        .find_map(|q| match q.axis_angle() {
            (angle, Some(axis)) if angle > AXIS_ANGLE_THRESHOLD => Some(axis),
            _ => None,
        })
        .ok_or_else(|| {
            Error::DegenerateAxis(format!(
                "'{child}' never rotates more than {AXIS_ANGLE_THRESHOLD} rad relative to '{parent}'"
            ))
        })?;

    Ok(segments
        .into_iter()
        .map(|seg| {
            let mut theta: Vec<f64> = seg
                .rel
                .iter()
                .map(|q| match q.axis_angle() {
                    (angle, Some(axis)) if axis.dot(&reference) < 0.0 => -angle,
                    (angle, _) => angle,
                })
                .collect();
            unwrap_in_place(&mut theta);
            AngleSeries {
                t: seg.t,
                theta,
                axis: reference,
                interpolated: seg.interpolated,
            }
        })
        .collect())
}

/// The longest contiguous signed angle series of `child` relative to `parent`.
pub fn signed_angle_series(rec: &MocapRecording, parent: &str, child: &str) -> Result<AngleSeries> {
    let segments = signed_angle_segments(rec, parent, child)?;
    Ok(segments
        .into_iter()
        .rev()
        .max_by_key(AngleSeries::len)
        .expect("at least one segment holds the reference sample"))
}

/// Truncated Fourier series `a0 + Σ a_k·cos(2πkft) + b_k·sin(2πkft)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFit {
    /// Hz
    pub fundamental: f64,
    /// rad
    pub a0: f64,
    /// rad, harmonics 1..=order
    pub cos: Vec<f64>,
    /// rad, harmonics 1..=order
    pub sin: Vec<f64>,
    /// Residual RMS over the fitted samples, rad.
    pub rms: f64,
}

impl FourierFit {
    pub fn order(&self) -> usize {
        self.cos.len()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_all(t).0
    }

    /// Value and first two time derivatives at `t`.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64) {
        let (mut v, mut d1, mut d2) = (self.a0, 0.0, 0.0);
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let w = TAU * (k + 1) as f64 * self.fundamental;
            let (s, c) = (w * t).sin_cos();
            v += a * c + b * s;
            d1 += w * (b * c - a * s);
            d2 -= w * w * (a * c + b * s);
        }
        (v, d1, d2)
    }
}

fn fourier_design(t: &[f64], fundamental: f64, order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), 1 + 2 * order, |r, c| {
        if c == 0 {
            return 1.0;
        }
        let k = (c - 1) % order + 1;
        let phase = TAU * k as f64 * fundamental * t[r];
        if c <= order {
            phase.cos()
        } else {
            phase.sin()
        }
    })
}

/// Linear least-squares Fourier fit at a known fundamental.
pub fn fourier_fit_with_fundamental(
    t: &[f64],
    theta: &[f64],
    fundamental: f64,
    order: usize,
) -> Result<FourierFit> {
    if t.len() != theta.len() {
        return Err(Error::Value("times and angles differ in length".into()));
    }
    if order == 0 || !(fundamental > 0.0) {
        return Err(Error::Value(format!(
            "need order ≥ 1 and a positive fundamental, got {order} and {fundamental}"
        )));
    }
    let design = fourier_design(t, fundamental, order);
    let y = DVector::from_column_slice(theta);
    let c = lstsq::solve(&design, &y)?;
    let residual = &design * &c - &y;
    Ok(FourierFit {
        fundamental,
        a0: c[0],
        cos: c.rows(1, order).iter().copied().collect(),
        sin: c.rows(1 + order, order).iter().copied().collect(),
        rms: (residual.norm_squared() / t.len() as f64).sqrt(),
    })
}

fn sample_interval(t: &[f64]) -> Result<f64> {
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Value("timestamps must increase".into()));
    }
    Ok(dt)
}

/// Frequency (Hz) of the dominant peak in the spectrum of the linearly
/// detrended, uniformly sampled series, refined by a parabola through the
/// peak bin and its neighbours.
pub fn dominant_frequency(t: &[f64], theta: &[f64]) -> Result<f64> {
    let n = t.len();
    if n < 4 || theta.len() != n {
        return Err(Error::Value("spectrum needs at least four matching samples".into()));
    }
    let dt = sample_interval(t)?;
    let line = lstsq::solve(
        &DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { t[r] - t[0] }),
        &DVector::from_column_slice(theta),
    )?;
    let detrended: Vec<f64> = (0..n)
        .map(|i| theta[i] - line[0] - line[1] * (t[i] - t[0]))
        .collect();
    let scale = theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if detrended.iter().all(|d| d.abs() <= 1e-12 * (1.0 + scale)) {
        return Err(Error::Spectrum("series has no oscillation".into()));
    }

    let mut buf: Vec<Complex<f64>> = detrended.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    let (peak, &peak_mag) = mag
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("n ≥ 4 leaves positive-frequency bins");
    let mut sorted = mag[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(peak_mag > PEAK_TO_MEDIAN * median) {
        return Err(Error::Spectrum(format!(
            "peak magnitude {peak_mag:.3e} does not exceed {PEAK_TO_MEDIAN}× the median {median:.3e}"
        )));
    }
    let mut bin = peak as f64;
    if peak + 1 < mag.len() {
        let (a, b, c) = (mag[peak - 1], mag[peak], mag[peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            bin += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(bin / (n as f64 * dt))
}

/// Gauss-Newton refinement of the fundamental of a Fourier fit, starting
/// from `f0` and staying within `max_shift` Hz of it.
fn refine_fundamental(
    t: &[f64],
    theta: &[f64],
    f0: f64,
    order: usize,
    max_shift: f64,
) -> Result<FourierFit> {
    let mut best = fourier_fit_with_fundamental(t, theta, f0, order)?;
    for _ in 0..50 {
        let f = best.fundamental;
        let mut design = fourier_design(t, f, order).insert_column(0, 0.0);
        for (r, &tr) in t.iter().enumerate() {
            design[(r, 0)] = (1..=order)
                .map(|k| {
                    let w = TAU * k as f64;
                    let (s, c) = (w * f * tr).sin_cos();
                    w * tr * (best.sin[k - 1] * c - best.cos[k - 1] * s)
                })
                .sum();
        }
        let residual =
            DVector::from_iterator(t.len(), t.iter().zip(theta).map(|(&tr, &y)| y - best.eval(tr)));
        let Ok(step) = lstsq::solve(&design, &residual) else {
            break;
        };
        let mut df = step[0];
        let mut improved = false;
        for _ in 0..8 {
            let candidate = f + df;
            if (candidate - f0).abs() > max_shift || candidate <= 0.0 {
                df *= 0.5;
                continue;
            }
            let trial = fourier_fit_with_fundamental(t, theta, candidate, order)?;
            if trial.rms <= best.rms {
                best = trial;
                improved = true;
                break;
            }
            df *= 0.5;
        }
        if !improved || df.abs() <= 1e-14 * f {
            break;
        }
    }
    Ok(best)
}

/// Fourier fit of `order` harmonics whose fundamental comes from the
/// dominant spectral peak, refined to the least-squares optimum.
pub fn fourier_fit(series: &AngleSeries, order: usize) -> Result<FourierFit> {
    let n = series.len();
    if order == 0 || n < 2 * order + 2 {
        return Err(Error::Value(format!(
            "{n} samples cannot support a Fourier fit of order {order} (need ≥ {})",
            2 * order + 2
        )));
    }
    let f0 = dominant_frequency(&series.t, &series.theta)?;
    let duration = series.t[n - 1] - series.t[0];
    if f0 * duration < 2.0 {
        return Err(Error::Spectrum(format!(
            "record spans {:.2} periods of the {f0:.4} Hz peak, need at least 2",
            f0 * duration
        )));
    }
    let bin = 1.0 / (n as f64 * sample_interval(&series.t)?);
    refine_fundamental(&series.t, &series.theta, f0, order, bin)
}

/// Fitted series and its analytic first and second derivatives at `t`.
pub fn fs_derivatives(fit: &FourierFit, t: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v = Vec::with_capacity(t.len());
    let mut d1 = Vec::with_capacity(t.len());
    let mut d2 = Vec::with_capacity(t.len());
    for &s in t {
        let (a, b, c) = fit.eval_all(s);
        v.push(a);
        d1.push(b);
        d2.push(c);
    }
    (v, d1, d2)
}

/// Local Fourier smoothing settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    /// Harmonics of the local basis.
    pub order: usize,
    /// Window length in periods of the dominant oscillation. The local basis
    /// period is twice the window.
    pub window_periods: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_FOURIER_ORDER,
            window_periods: 2.0,
        }
    }
}

/// Smoothed angle with analytic derivatives, trimmed by half a window at
/// each end.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SmoothedSeries {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub thetadot: Vec<f64>,
    pub thetaddot: Vec<f64>,
}

/// Fits a Fourier series in a sliding window centred on every sample and
/// evaluates it and its derivatives at the centre. A decaying oscillation is
/// not periodic over the whole record, so one global series cannot follow it.
pub fn smooth_windowed(
    series: &AngleSeries,
    fundamental: f64,
    config: &SmootherConfig,
) -> Result<SmoothedSeries> {
    let n = series.len();
    if n < 2 || !(fundamental > 0.0) || !(config.window_periods > 0.0) || config.order == 0 {
        return Err(Error::Value("smoothing needs data, a positive fundamental and window".into()));
    }
    let dt = sample_interval(&series.t)?;
    let half = ((config.window_periods / fundamental) / (2.0 * dt)).round() as usize;
    let width = 2 * half + 1;
    if width < 2 * config.order + 2 || width > n {
        return Err(Error::Value(format!(
            "a {width}-sample window does not fit {n} samples at order {}",
            config.order
        )));
    }
    let basis_f = 1.0 / (2.0 * width as f64 * dt);
    let tau: Vec<f64> = (0..width).map(|j| (j as f64 - half as f64) * dt).collect();
    let pinv = lstsq::pseudo_inverse(&fourier_design(&tau, basis_f, config.order))?;
    // basis value, slope and curvature at the window centre
    let mut at_centre = [
        DVector::zeros(1 + 2 * config.order),
        DVector::zeros(1 + 2 * config.order),
        DVector::zeros(1 + 2 * config.order),
    ];
    at_centre[0][0] = 1.0;
    for k in 1..=config.order {
        let w = TAU * k as f64 * basis_f;
        at_centre[0][k] = 1.0;
        at_centre[1][config.order + k] = w;
        at_centre[2][k] = -w * w;
    }
    let weights: Vec<DVector<f64>> = at_centre.iter().map(|e| pinv.tr_mul(e)).collect();

    let mut out = SmoothedSeries::default();
    for i in half..n - half {
        let window = &series.theta[i - half..=i + half];
        let apply = |w: &DVector<f64>| w.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
        out.t.push(series.t[i]);
        out.theta.push(apply(&weights[0]));
        out.thetadot.push(apply(&weights[1]));
        out.thetaddot.push(apply(&weights[2]));
    }
    Ok(out)
}

/// Inertial properties of a body swinging about a fixed hinge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumProperties {
    /// Moment of inertia about the line through the centre of mass parallel
    /// to the hinge, kg·m².
    pub inertia_com: f64,
    /// kg
    pub mass: f64,
    /// Distance from the hinge line to the centre of mass, m.
    pub lever: f64,
}

impl PendulumProperties {
    pub fn from_mass_properties(
        mp: &MassProperties,
        hinge_point: &Vector3<f64>,
        hinge_axis: &Vector3<f64>,
    ) -> Self {
        let u = hinge_axis.normalize();
        let d = mp.com - hinge_point;
        Self {
            inertia_com: u.dot(&(mp.inertia * u)),
            mass: mp.mass,
            lever: (d - u * d.dot(&u)).norm(),
        }
    }

    /// Properties of the child body of `joint` in a mechanism file, in the
    /// flat fabricated pose.
    pub fn from_mechanism(spec: &MechanismSpec, joint: &str) -> Result<Self> {
        let j = spec
            .joint(joint)
            .ok_or_else(|| Error::Reference(format!("no joint '{joint}'")))?;
        let body = spec
            .body(&j.child)
            .ok_or_else(|| Error::Reference(format!("no body '{}'", j.child)))?;
        let mp = compute_mass_properties(body, &spec.materials)?;
        Ok(Self::from_mass_properties(
            &mp,
            &Vector3::from(j.axis_p1),
            &j.axis_direction(),
        ))
    }

    /// Moment of inertia about the hinge, kg·m².
    pub fn inertia_hinge(&self) -> f64 {
        self.inertia_com + self.mass * self.lever * self.lever
    }

    /// θ̈ of the pendulum model.
    pub fn acceleration(&self, k: f64, b: f64, g: f64, theta: f64, thetadot: f64) -> f64 {
        (-k * theta - b * thetadot - self.mass * g * self.lever * theta.sin()) / self.inertia_hinge()
    }

    /// RK4 solution of the pendulum model sampled at `t` (increasing), with
    /// internal steps no longer than `max_step`.
    pub fn simulate(
        &self,
        k: f64,
        b: f64,
        g: f64,
        initial: (f64, f64),
        t: &[f64],
        max_step: f64,
    ) -> Vec<f64> {
        let f = |x: (f64, f64)| (x.1, self.acceleration(k, b, g, x.0, x.1));
        let mut x = initial;
        let mut out = Vec::with_capacity(t.len());
        for (i, &ti) in t.iter().enumerate() {
            if i > 0 {
                let span = ti - t[i - 1];
                let steps = (span / max_step).ceil().max(1.0) as usize;
                let h = span / steps as f64;
                for _ in 0..steps {
                    let k1 = f(x);
                    let k2 = f((x.0 + 0.5 * h * k1.0, x.1 + 0.5 * h * k1.1));
                    let k3 = f((x.0 + 0.5 * h * k2.0, x.1 + 0.5 * h * k2.1));
                    let k4 = f((x.0 + h * k3.0, x.1 + h * k3.1));
                    x.0 += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                    x.1 += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                }
            }
            out.push(x.0);
        }
        out
    }
}

/// Least-squares hinge estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KbEstimate {
    /// N·m·rad⁻¹
    pub k: f64,
    /// N·m·s·rad⁻¹
    pub b: f64,
    /// Torque residual RMS, N·m.
    pub rms: f64,
}

fn varies(x: &[f64]) -> bool {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo > 1e-12 * lo.abs().max(hi.abs())
}

/// Regresses `−(I_G + m·r²)·θ̈ − m·g·r·sin θ` onto `[θ, θ̇]`.
pub fn identify_kb(
    theta: &[f64],
    thetadot: &[f64],
    thetaddot: &[f64],
    props: &PendulumProperties,
    g: f64,
) -> Result<KbEstimate> {
    let n = theta.len();
    if n == 0 || thetadot.len() != n || thetaddot.len() != n {
        return Err(Error::Value("angle series must be non-empty and equally long".into()));
    }
    if !varies(theta) || !varies(thetadot) {
        return Err(Error::Rank("angle or rate series has no variation".into()));
    }
    let inertia = props.inertia_hinge();
    let design = DMatrix::from_fn(n, 2, |r, c| if c == 0 { theta[r] } else { thetadot[r] });
    let y = DVector::from_iterator(
        n,
        (0..n).map(|i| -inertia * thetaddot[i] - props.mass * g * props.lever * theta[i].sin()),
    );
    let kb = lstsq::solve(&design, &y)?;
    let residual = &design * &kb - &y;
    Ok(KbEstimate {
        k: kb[0],
        b: kb[1],
        rms: (residual.norm_squared() / n as f64).sqrt(),
    })
}

/// Settings of the full recording-to-(k, b) pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub smoother: SmootherConfig,
    /// m·s⁻²
    pub gravity: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            smoother: SmootherConfig::default(),
            gravity: 9.81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub k: f64,
    pub b: f64,
    pub rms: f64,
    /// Samples entering the regression.
    pub n_samples: usize,
    pub fundamental_hz: f64,
    pub interpolated_samples: usize,
    pub segments: usize,
    pub warnings: Vec<String>,
}

/// Report plus the intermediate series, for plotting.
#[derive(Debug, Clone)]
pub struct Identification {
    pub report: IdentificationReport,
    pub segments: Vec<AngleSeries>,
    pub smoothed: Vec<SmoothedSeries>,
}

/// Runs the whole pipeline on the joint between `parent` and `child`.
pub fn identify_recording(
    rec: &MocapRecording,
    parent: &str,
    child: &str,
    props: &PendulumProperties,
    config: &IdentifyConfig,
) -> Result<Identification> {
    let segments = signed_angle_segments(rec, parent, child)?;
    let longest = segments
        .iter()
        .max_by_key(|s| s.len())
        .expect("reference sample lies in some segment");
    let fundamental = dominant_frequency(&longest.t, &longest.theta)?;

    let mut warnings = Vec::new();
    let interpolated: usize = segments.iter().map(AngleSeries::interpolated_count).sum();
    if interpolated > 0 {
        warnings.push(format!(
            "{interpolated} missing samples were interpolated (gaps of at most {MAX_INTERPOLATED_GAP})"
        ));
    }
    if segments.len() > 1 {
        warnings.push(format!(
            "dropouts longer than {MAX_INTERPOLATED_GAP} samples split the record into {} segments",
            segments.len()
        ));
    }

    let mut smoothed = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        match smooth_windowed(seg, fundamental, &config.smoother) {
            Ok(s) => smoothed.push(s),
            Err(_) => {
                warnings.push(format!("segment {i} ({} samples) is shorter than one window", seg.len()));
                smoothed.push(SmoothedSeries::default());
            }
        }
    }
    let cat = |f: fn(&SmoothedSeries) -> &Vec<f64>| -> Vec<f64> {
        smoothed.iter().flat_map(|s| f(s).iter().copied()).collect()
    };
    let (theta, thetadot, thetaddot) = (cat(|s| &s.theta), cat(|s| &s.thetadot), cat(|s| &s.thetaddot));
    if theta.is_empty() {
        return Err(Error::Value(
            "no segment is long enough for the smoothing window".into(),
        ));
    }
    let est = identify_kb(&theta, &thetadot, &thetaddot, props, config.gravity)?;
    Ok(Identification {
        report: IdentificationReport {
            k: est.k,
            b: est.b,
            rms: est.rms,
            n_samples: theta.len(),
            fundamental_hz: fundamental,
            interpolated_samples: interpolated,
            segments: segments.len(),
            warnings,
        },
        segments,
        smoothed,
    })
}

/// Air-damping model `b_a(a)` obtained from total-damping measurements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AirDampingFit {
    /// `b_a(a) = intercept + linear·a + quadratic·a²`.
    pub polynomial: QuadraticPolynomial,
    /// Assumed material share, subtracted from the intercept.
    pub material_damping: f64,
    /// Mean absolute error of the total-damping fit, N·m·s·rad⁻¹.
    pub mae: f64,
}

impl AirDampingFit {
    pub fn eval(&self, area: f64) -> f64 {
        self.polynomial.eval(&[area])
    }
}

impl fmt::Display for AirDampingFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.polynomial;
        write!(
            f,
            "b_a = {:e}·a² + {:e}·a + {:e}",
            p.quadratic[0], p.linear[0], p.intercept
        )
    }
}

/// Splits total damping `b = b_m + b_a(a)` measured at several body areas
/// into the air part, given the material part `b_m`.
pub fn split_air_damping(pairs: &[(f64, f64)], material_damping: f64) -> Result<AirDampingFit> {
    if pairs.len() < 3 {
        return Err(Error::Rank(format!(
            "a quadratic in area needs at least 3 (area, damping) pairs, got {}",
            pairs.len()
        )));
    }
    let points: Vec<Vec<f64>> = pairs.iter().map(|p| vec![p.0]).collect();
    let measured: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let fit = fit_quadratic_surface(&points, &measured)?;
    let mut polynomial = fit.polynomial;
    polynomial.intercept -= material_damping;
    Ok(AirDampingFit {
        polynomial,
        material_damping,
        mae: fit.mae,
    })
}

/// Samples of a pendulum trajectory turned into a two-body recording at
/// `rate`, with optional additive angle noise per sample.
pub fn recording_from_trajectory(
    t: &[f64],
    theta: &[f64],
    thetadot: &[f64],
    rate: f64,
    axis: &Vector3<f64>,
    noise: impl FnMut() -> f64,
) -> Result<MocapRecording> {
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let count = ((t1 - t0) * rate).floor() as usize + 1;
    let at: Vec<f64> = (0..count).map(|i| t0 + i as f64 / rate).filter(|&s| s <= t1).collect();
    let mut noise = noise;
    let angles: Vec<f64> = resample_hermite(t, theta, thetadot, &at)?
        .into_iter()
        .map(|a| a + noise())
        .collect();
    synthetic_recording(&at, &angles, axis, |_| Quaternion::IDENTITY, "frame", "arm")
}

/// Per-body counts of missing samples.
pub fn dropout_summary(rec: &MocapRecording) -> BTreeMap<String, usize> {
    rec.bodies
        .iter()
        .enumerate()
        .map(|(b, id)| (id.clone(), rec.samples.iter().filter(|r| r[b].is_none()).count()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_unit(rng: &mut ChaCha8Rng) -> Quaternion {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        q.normalized().unwrap()
    }

    fn uniform(rate: f64, duration: f64) -> Vec<f64> {
        (0..=(duration * rate).round() as usize)
            .map(|i| i as f64 / rate)
            .collect()
    }

    #[test]
    fn equal_orientations_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_unit(&mut rng);
        let d = relative_quaternion(&q, &q);
        assert!((d.w.abs() - 1.0).abs() < 1e-15);
        assert!(d.vector().norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let qz = Quaternion::from_axis_angle(&Vector3::z(), PI / 2.0);
        let d = relative_quaternion(&Quaternion::IDENTITY, &qz);
        let h = (PI / 4.0).cos();
        assert!((d.w - h).abs() < 1e-15 && (d.z - h).abs() < 1e-15);
        assert!(d.x.abs() < 1e-15 && d.y.abs() < 1e-15);
    }

    #[test]
    fn relative_rotation_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (a, b) = (random_unit(&mut rng), random_unit(&mut rng));
            let d = relative_quaternion(&a, &b);
            let err = d.rotation_matrix() * a.rotation_matrix() - b.rotation_matrix();
            assert!(err.amax() < 1e-10);
        }
    }

    #[test]
    fn signed_angles_follow_oscillation_through_zero() {
        let t = uniform(360.0, 2.0);
        let truth: Vec<f64> = t.iter().map(|s| 30f64.to_radians() * (TAU * 1.3 * s).sin()).collect();
        let axis = Vector3::new(0.3, -0.5, 0.8);
        let tilt = |s: f64| Quaternion::from_axis_angle(&Vector3::new(1.0, 0.2, 0.0), 0.4 * s);
        let rec = synthetic_recording(&t, &truth, &axis, tilt, "base", "link").unwrap();
        let series = signed_angle_series(&rec, "base", "link").unwrap();
        // first sample is exactly zero, so the reference is the first positive swing
        for (a, b) in series.theta.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let bound = 2.0 * 30f64.to_radians() * TAU * 1.3 / 360.0;
        assert!(series.theta.windows(2).all(|w| (w[1] - w[0]).abs() < bound));
    }

    #[test]
    fn constant_pose_gives_constant_series() {
        let t = uniform(100.0, 1.0);
        let angles = vec![0.25; t.len()];
        let rec = synthetic_recording(&t, &angles, &Vector3::y(), |_| Quaternion::IDENTITY, "a", "b")
            .unwrap();
        let s = signed_angle_series(&rec, "a", "b").unwrap();
        assert!(s.theta.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn motionless_joint_has_no_axis() {
        let t = uniform(100.0, 1.0);
        let angles = vec![1e-4; t.len()];
        let rec = synthetic_recording(&t, &angles, &Vector3::y(), |_| Quaternion::IDENTITY, "a", "b")
            .unwrap();
        assert!(matches!(
            signed_angle_series(&rec, "a", "b"),
            Err(Error::DegenerateAxis(_))
        ));
    }

    #[test]
    fn rotations_beyond_half_turn_are_unwrapped() {
        let t = uniform(200.0, 2.0);
        let truth: Vec<f64> = t.iter().map(|s| 0.5 + 2.0 * s).collect();
        let rec = synthetic_recording(&t, &truth, &Vector3::z(), |_| Quaternion::IDENTITY, "a", "b")
            .unwrap();
        let s = signed_angle_series(&rec, "a", "b").unwrap();
        for (a, b) in s.theta.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn short_dropouts_are_bridged_and_long_ones_split() {
        let t = uniform(200.0, 2.0);
        let truth: Vec<f64> = t.iter().map(|s| 0.3 * (TAU * 2.0 * s).cos()).collect();
        let mut rec =
            synthetic_recording(&t, &truth, &Vector3::x(), |_| Quaternion::IDENTITY, "a", "b").unwrap();
        for i in 100..103 {
            rec.samples[i][1] = None;
        }
        let s = signed_angle_series(&rec, "a", "b").unwrap();
        assert_eq!(s.len(), t.len());
        assert_eq!(s.interpolated_count(), 3);
        assert!(s.interpolated[100] && !s.interpolated[99]);
        // chord error of a 20 ms bridge: max|θ̈|·h²/8
        let chord = 0.3 * (TAU * 2.0).powi(2) * 0.02f64.powi(2) / 8.0;
        assert!((s.theta[101] - truth[101]).abs() < chord);

        for i in 200..210 {
            rec.samples[i][0] = None;
        }
        let segs = signed_angle_segments(&rec, "a", "b").unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].len() + segs[1].len(), t.len() - 10);
    }

    #[test]
    fn csv_round_trip_with_blanks() {
        let t = uniform(50.0, 0.5);
        let truth: Vec<f64> = t.iter().map(|s| s.sin()).collect();
        let mut rec =
            synthetic_recording(&t, &truth, &Vector3::x(), |_| Quaternion::IDENTITY, "p", "c").unwrap();
        rec.samples[3][1] = None;
        let back = MocapRecording::from_csv(&rec.to_csv()).unwrap();
        assert_eq!(back.bodies, rec.bodies);
        assert_eq!(back.samples[3][1], None);
        assert!((back.rate - 50.0).abs() < 1e-9);
        for (a, b) in back.samples.iter().flatten().zip(rec.samples.iter().flatten()) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a.dot(b) - 1.0).abs() < 1e-15),
                (None, None) => {}
                _ => panic!("presence mismatch"),
            }
        }
    }

    #[test]
    fn irregular_clock_rejected() {
        let text = "t,a_qw,a_qx,a_qy,a_qz\n0,1,0,0,0\n0.01,1,0,0,0\n0.02,1,0,0,0\n0.0305,1,0,0,0\n";
        assert!(matches!(MocapRecording::from_csv(text), Err(Error::Value(_))));
    }

    #[test]
    fn partially_blank_quaternion_rejected() {
        let text = "t,a_qw,a_qx,a_qy,a_qz\n0,1,0,0,0\n0.01,1,,0,0\n";
        assert!(matches!(MocapRecording::from_csv(text), Err(Error::Schema(_))));
    }

    #[test]
    fn ingestion_normalizes() {
        let text = "t,a_qw,a_qx,a_qy,a_qz\n0,2,0,0,0\n0.01,0,3,0,4\n";
        let rec = MocapRecording::from_csv(text).unwrap();
        for q in rec.samples.iter().flatten().flatten() {
            assert!((q.norm() - 1.0).abs() < 1e-15);
        }
    }

    fn series(t: Vec<f64>, theta: Vec<f64>) -> AngleSeries {
        let n = t.len();
        AngleSeries {
            t,
            theta,
            axis: Vector3::x(),
            interpolated: vec![false; n],
        }
    }

    #[test]
    fn single_harmonic_fit() {
        let t = uniform(100.0, 3.3);
        let theta: Vec<f64> = t.iter().map(|s| 0.1 * (TAU * 2.0 * s).cos()).collect();
        let fit = fourier_fit(&series(t, theta), 3).unwrap();
        assert!((fit.fundamental - 2.0).abs() < 1e-9, "{}", fit.fundamental);
        assert!((fit.cos[0] - 0.1).abs() < 1e-9);
        for c in fit.cos[1..].iter().chain(&fit.sin).chain([&fit.a0]) {
            assert!(c.abs() < 1e-9, "{c}");
        }
    }

    #[test]
    fn noisy_harmonic_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let t = uniform(100.0, 5.0);
        let theta: Vec<f64> = t
            .iter()
            .map(|s| 0.1 * (TAU * 2.0 * s).cos() + noise.sample(&mut rng))
            .collect();
        let fit = fourier_fit(&series(t, theta), 3).unwrap();
        assert!((fit.cos[0] - 0.1).abs() < 0.002);
        for c in fit.cos[1..].iter().chain(&fit.sin).chain([&fit.a0]) {
            assert!(c.abs() < 0.002);
        }
    }

    #[test]
    fn constant_series_has_no_spectrum() {
        let t = uniform(100.0, 3.0);
        let theta = vec![0.4; t.len()];
        assert!(matches!(
            fourier_fit(&series(t, theta), 3),
            Err(Error::Spectrum(_))
        ));
    }

    #[test]
    fn too_few_samples_rejected() {
        let t = uniform(1.0, 5.0);
        let theta: Vec<f64> = t.iter().map(|s| s.sin()).collect();
        assert!(matches!(fourier_fit(&series(t, theta), 3), Err(Error::Value(_))));
    }

    #[test]
    fn band_limited_round_trip() {
        let t = uniform(200.0, 4.0);
        let f = 1.7;
        let theta: Vec<f64> = t
            .iter()
            .map(|s| {
                0.05 + 0.2 * (TAU * f * s).sin() - 0.03 * (TAU * 2.0 * f * s).cos()
                    + 0.01 * (TAU * 3.0 * f * s + 0.4).sin()
            })
            .collect();
        let fit = fourier_fit(&series(t.clone(), theta.clone()), 4).unwrap();
        let (v, _, _) = fs_derivatives(&fit, &t);
        let rms = (v.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        assert!(rms < 1e-9, "{rms}");
    }

    #[test]
    fn derivative_peaks_of_single_harmonic() {
        let (a, f) = (0.3, 1.5);
        let fit = FourierFit {
            fundamental: f,
            a0: 0.0,
            cos: vec![a],
            sin: vec![0.0],
            rms: 0.0,
        };
        let t = uniform(1000.0, 1.0 / f);
        let (_, d1, d2) = fs_derivatives(&fit, &t);
        let w = TAU * f;
        let p1 = d1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let p2 = d2.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!((p1 - w * a).abs() < 1e-4 * w * a);
        assert!((p2 - w * w * a).abs() < 1e-9);
    }

    #[test]
    fn derivatives_of_constant_vanish() {
        let fit = FourierFit {
            fundamental: 1.0,
            a0: 0.7,
            cos: vec![0.0; 3],
            sin: vec![0.0; 3],
            rms: 0.0,
        };
        let (v, d1, d2) = fs_derivatives(&fit, &[0.0, 0.3, 1.1]);
        assert!(v.iter().all(|x| *x == 0.7));
        assert!(d1.iter().chain(&d2).all(|x| *x == 0.0));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fit = FourierFit {
            fundamental: 2.2,
            a0: 0.1,
            cos: vec![0.2, -0.05, 0.01],
            sin: vec![0.1, 0.03, -0.02],
            rms: 0.0,
        };
        let h = 1e-4;
        let w = TAU * fit.fundamental;
        for i in 1..40 {
            let t = i as f64 * 0.037;
            let (_, d1, d2) = fit.eval_all(t);
            let fd1 = (fit.eval(t + h) - fit.eval(t - h)) / (2.0 * h);
            let fd2 = (fit.eval(t + h) - 2.0 * fit.eval(t) + fit.eval(t - h)) / (h * h);
            assert!((d1 - fd1).abs() < 1e-6 * w * w);
            assert!((d2 - fd2).abs() < 1e-6 * w * w);
        }
    }

    #[test]
    fn windowed_smoother_tracks_damped_oscillation() {
        let (f, zeta) = (3.0, 0.02);
        let w = TAU * f;
        let t = uniform(360.0, 4.0);
        let exact = |s: f64| {
            let e = (-zeta * w * s).exp();
            let (sn, cs) = (w * s).sin_cos();
            let x = e * cs;
            let v = e * (-zeta * w * cs - w * sn);
            let a = e * ((zeta * w).powi(2) * cs + 2.0 * zeta * w * w * sn - w * w * cs);
            (x, v, a)
        };
        let theta: Vec<f64> = t.iter().map(|&s| 0.2 * exact(s).0).collect();
        let sm = smooth_windowed(&series(t, theta), f, &SmootherConfig::default()).unwrap();
        for i in 0..sm.t.len() {
            let (x, v, a) = exact(sm.t[i]);
            assert!((sm.theta[i] - 0.2 * x).abs() < 1e-6);
            assert!((sm.thetadot[i] - 0.2 * v).abs() < 1e-4 * 0.2 * w);
            assert!((sm.thetaddot[i] - 0.2 * a).abs() < 1e-3 * 0.2 * w * w);
        }
    }

    fn props() -> PendulumProperties {
        PendulumProperties {
            inertia_com: 2e-5,
            mass: 0.01,
            lever: 0.03,
        }
    }

    #[test]
    fn exact_derivatives_recover_kb() {
        let p = props();
        let (k, b, g) = (0.05, 2e-5, 9.81);
        let t = uniform(2000.0, 2.0);
        let theta = p.simulate(k, b, g, (0.3, 0.0), &t, 1e-5);
        let h = 1.0 / 2000.0;
        let mut th = Vec::new();
        let mut td = Vec::new();
        let mut tdd = Vec::new();
        for i in 1..theta.len() - 1 {
            let v = (theta[i + 1] - theta[i - 1]) / (2.0 * h);
            th.push(theta[i]);
            td.push(v);
            tdd.push(p.acceleration(k, b, g, theta[i], v));
        }
        let est = identify_kb(&th, &td, &tdd, &p, g).unwrap();
        assert!((est.k - k).abs() < 1e-9 * k);
        assert!((est.b - b).abs() < 1e-9 * k);
    }

    #[test]
    fn undamped_data_gives_zero_damping() {
        let p = props();
        let (k, g) = (0.05, 9.81);
        let theta: Vec<f64> = (0..500).map(|i| 0.2 * (i as f64 * 0.05).cos()).collect();
        let thetadot: Vec<f64> = (0..500).map(|i| -0.2 * (i as f64 * 0.05).sin()).collect();
        let thetaddot: Vec<f64> = theta
            .iter()
            .zip(&thetadot)
            .map(|(&a, &v)| p.acceleration(k, 0.0, g, a, v))
            .collect();
        let est = identify_kb(&theta, &thetadot, &thetaddot, &p, g).unwrap();
        assert!(est.b.abs() < 1e-8);
        assert!((est.k - k).abs() < 1e-10);
    }

    #[test]
    fn collinear_regressors_rejected() {
        let p = props();
        let theta: Vec<f64> = (0..100).map(|i| (-0.1 * i as f64).exp()).collect();
        let thetadot: Vec<f64> = theta.iter().map(|v| -0.1 * v).collect();
        let thetaddot = vec![0.0; 100];
        assert!(matches!(
            identify_kb(&theta, &thetadot, &thetaddot, &p, 9.81),
            Err(Error::Rank(_))
        ));
        let flat = vec![0.1; 100];
        assert!(matches!(
            identify_kb(&flat, &thetadot, &thetaddot, &p, 9.81),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn pendulum_properties_from_mass_properties() {
        let mp = MassProperties {
            mass: 0.02,
            com: Vector3::new(0.3, -0.04, 0.0),
            inertia: Matrix3::from_diagonal(&Vector3::new(1e-5, 2e-5, 3e-5)),
        };
        let p = PendulumProperties::from_mass_properties(&mp, &Vector3::zeros(), &Vector3::x());
        assert_eq!(p.inertia_com, 1e-5);
        assert!((p.lever - 0.04).abs() < 1e-15);
        assert!((p.inertia_hinge() - mp.inertia_about_line(&Vector3::zeros(), &Vector3::x())).abs() < 1e-18);
    }

    #[test]
    fn air_damping_generator_recovered() {
        let gen = |a: f64| 2.34 * a * a - 0.0042 * a + 1.8e-5;
        let pairs: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let a = 5e-4 + i as f64 * 3.5e-4;
                (a, gen(a) + 3e-6)
            })
            .collect();
        let fit = split_air_damping(&pairs, 3e-6).unwrap();
        let p = &fit.polynomial;
        assert!((p.quadratic[0] - 2.34).abs() < 1e-9);
        assert!((p.linear[0] + 0.0042).abs() < 1e-9);
        assert!((p.intercept - 1.8e-5).abs() < 1e-9);
        assert!(fit.mae < 1e-15);
    }

    #[test]
    fn two_pairs_are_not_enough() {
        assert!(matches!(
            split_air_damping(&[(1e-3, 1e-5), (2e-3, 2e-5)], 0.0),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn fitted_air_damping_rises_above_vertex() {
        let gen = |a: f64| 2.34 * a * a - 0.0042 * a + 1.8e-5;
        let pairs: Vec<(f64, f64)> = (0..6).map(|i| (1e-3 + i as f64 * 4e-4, gen(1e-3 + i as f64 * 4e-4))).collect();
        let fit = split_air_damping(&pairs, 0.0).unwrap();
        let vertex = -fit.polynomial.linear[0] / (2.0 * fit.polynomial.quadratic[0]);
        let grid: Vec<f64> = (0..50).map(|i| vertex + i as f64 * 1e-4).collect();
        assert!(grid.windows(2).all(|w| fit.eval(w[1]) > fit.eval(w[0])));
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let t = [0.0, 0.4, 1.0];
        let f = |s: f64| 1.0 - 2.0 * s + 0.5 * s * s * s;
        let df = |s: f64| -2.0 + 1.5 * s * s;
        let v: Vec<f64> = t.iter().map(|&s| f(s)).collect();
        let d: Vec<f64> = t.iter().map(|&s| df(s)).collect();
        let at = [0.0, 0.1, 0.55, 0.999, 1.0];
        let out = resample_hermite(&t, &v, &d, &at).unwrap();
        for (s, o) in at.iter().zip(out) {
            assert!((f(*s) - o).abs() < 1e-14);
        }
    }
}

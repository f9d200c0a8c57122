//! Hinge design relations.
//!
//! Two groups live here. The first is cantilever elastic limits for a
//! flexure strip. The second is quadratic response surfaces mapping hinge
//! gap length `l`, flexure width `w` and moving-body area `a` to torsional
//! stiffness `k` and damping `b`, and least-squares fitting of new surfaces.
//!
//! Surface inputs are taken in SI units (m, m, m²). Every surface carries the
//! input range it is meant for; evaluating outside that range succeeds but
//! attaches a [`RangeWarning`]. Negative evaluations are clamped to zero and
//! flagged.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstsq;
use crate::mechanism::MaterialSpec;

/// Exponent on the strip thickness in the maximum-load relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BeamExponent {
    /// `F = σ·b·t³ / (6L)`, the form used by the reference hinge figures.
    #[default]
    Cubic,
    /// `F = σ·b·t² / (6L)`, the dimensionally consistent cantilever form.
    Square,
}

impl BeamExponent {
    pub fn power(self) -> i32 {
        match self {
            BeamExponent::Cubic => 3,
            BeamExponent::Square => 2,
        }
    }
}

/// Flexure strip geometry for [`beam_limits`]. Any consistent unit system
/// may be used; note that with the cubic exponent the results are not
/// dimensionally homogeneous and therefore depend on that choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    /// Strip width `b`.
    pub width: f64,
    /// Strip thickness `t`.
    pub thickness: f64,
    /// Cantilever span `L`.
    pub span: f64,
    /// Load position `x`.
    pub lever_x: f64,
    /// Hinge lever `l`.
    pub lever_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamLimits {
    pub f_max: f64,
    pub delta_max: f64,
    /// rad
    pub phi_max: f64,
}

/// Flexure strip giving the reference allowable deflection of 1.96° for the
/// polyester flex layer, in millimetres with stresses in MPa. Only the ratio
/// of load position to span and the hinge lever matter for the angle; this
/// geometry is a reconstruction.
pub const REFERENCE_FLEXURE_MM: BeamGeometry = BeamGeometry {
    width: 25.0,
    thickness: 0.127,
    span: 5.0,
    lever_x: 5.0,
    lever_l: 1.75,
};
/// Flex-layer yield stress in MPa.
pub const REFERENCE_YIELD_MPA: f64 = 42.84;
/// Flex-layer Young's modulus in MPa.
pub const REFERENCE_MODULUS_MPA: f64 = 4383.27;

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Value(format!("{name} must be positive, got {v}")))
    }
}

/// Elastic limits of a cantilevered flexure strip with the default
/// [`BeamExponent::Cubic`] load relation.
pub fn beam_limits(geom: &BeamGeometry, sigma_max: f64, youngs_modulus: f64) -> Result<BeamLimits> {
    beam_limits_with(geom, sigma_max, youngs_modulus, BeamExponent::default())
}

/// Elastic limits with an explicit thickness exponent in the load relation.
///
/// `F = σ·b·tⁿ/(6L)`, `I = b·t³/12`, `δ = F·x²·l/(2EI)`, `φ = F·x·l/(EI)`.
pub fn beam_limits_with(
    geom: &BeamGeometry,
    sigma_max: f64,
    youngs_modulus: f64,
    exponent: BeamExponent,
) -> Result<BeamLimits> {
    require_positive("width", geom.width)?;
    require_positive("thickness", geom.thickness)?;
    require_positive("span", geom.span)?;
    require_positive("lever x", geom.lever_x)?;
    require_positive("lever l", geom.lever_l)?;
    require_positive("sigma_max", sigma_max)?;
    require_positive("Young's modulus", youngs_modulus)?;
    let t = geom.thickness;
    let f_max = sigma_max * geom.width * t.powi(exponent.power()) / (6.0 * geom.span);
    let ei = youngs_modulus * geom.width * t.powi(3) / 12.0;
    Ok(BeamLimits {
        f_max,
        delta_max: f_max * geom.lever_x.powi(2) * geom.lever_l / (2.0 * ei),
        phi_max: f_max * geom.lever_x * geom.lever_l / ei,
    })
}

/// Quadratic without cross terms: `c0 + Σ lin_i·x_i + Σ quad_i·x_i²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPolynomial {
    pub intercept: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
}

impl QuadraticPolynomial {
    pub fn new(intercept: f64, linear: Vec<f64>, quadratic: Vec<f64>) -> Self {
        assert_eq!(linear.len(), quadratic.len(), "one linear and one square term per variable");
        Self {
            intercept,
            linear,
            quadratic,
        }
    }

    /// From the flat coefficient order `[c0, lin…, quad…]`.
    pub fn from_coefficients(coefficients: &[f64]) -> Self {
        assert!(coefficients.len() % 2 == 1, "expected 1 + 2·n coefficients");
        let n = coefficients.len() / 2;
        Self::new(
            coefficients[0],
            coefficients[1..=n].to_vec(),
            coefficients[n + 1..].to_vec(),
        )
    }

    pub fn n_variables(&self) -> usize {
        self.linear.len()
    }

    /// Flat coefficient vector `[c0, lin…, quad…]`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(1 + 2 * self.n_variables());
        c.push(self.intercept);
        c.extend(&self.linear);
        c.extend(&self.quadratic);
        c
    }

    /// Evaluates each variable's part in Horner form.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_variables(), "wrong number of inputs");
        self.intercept
            + x.iter()
                .zip(self.linear.iter().zip(&self.quadratic))
                .map(|(&xi, (&l, &q))| xi * (l + q * xi))
                .sum::<f64>()
    }
}

/// The input box a surface was fitted over.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedRange {
    pub variables: Vec<&'static str>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FittedRange {
    pub fn check(&self, x: &[f64]) -> Vec<RangeWarning> {
        self.variables
            .iter()
            .enumerate()
            .filter(|&(i, _)| !(x[i] >= self.min[i] && x[i] <= self.max[i]))
            .map(|(i, name)| RangeWarning {
                variable: name.to_string(),
                value: x[i],
                min: self.min[i],
                max: self.max[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeWarning {
    pub variable: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

impl fmt::Display for RangeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} outside fitted range [{}, {}]",
            self.variable, self.value, self.min, self.max
        )
    }
}

/// A stiffness/damping surface pair over named inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeSurface {
    pub source: PropertySource,
    pub stiffness: Option<QuadraticPolynomial>,
    pub damping: QuadraticPolynomial,
    pub range: FittedRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertySource {
    AirModel,
    WidthModel,
    LengthModel,
    ComprehensiveModel,
    Identified,
    User,
}

impl fmt::Display for PropertySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PropertySource::AirModel => "air_model",
            PropertySource::WidthModel => "width_model",
            PropertySource::LengthModel => "length_model",
            PropertySource::ComprehensiveModel => "comprehensive_model",
            PropertySource::Identified => "identified",
            PropertySource::User => "user",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeProperties {
    /// N·m·rad⁻¹
    pub stiffness: f64,
    /// N·m·s·rad⁻¹
    pub damping: f64,
    pub source: PropertySource,
    /// A surface evaluated negative and was clamped to zero.
    pub clamped: bool,
    pub warnings: Vec<RangeWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HingeDesign {
    /// Hinge gap length `l` (m).
    pub length: f64,
    /// Total flexure width `w` (m).
    pub width: f64,
    /// Cross-sectional area `a` of the moving body (m²).
    pub body_area: f64,
    pub material: MaterialSpec,
}

impl HingeDesign {
    pub fn validate(&self) -> Result<()> {
        require_positive("hinge length", self.length)?;
        require_positive("hinge width", self.width)?;
        require_positive("body area", self.body_area)
    }
}

/// Air-damping surface `b(a)`.
pub fn air_model() -> HingeSurface {
    HingeSurface {
        source: PropertySource::AirModel,
        stiffness: None,
        damping: QuadraticPolynomial::new(1.8e-5, vec![-0.0042], vec![2.34]),
        range: FittedRange {
            variables: vec!["a"],
            min: vec![5e-4],
            max: vec![3e-3],
        },
    }
}

/// Width surfaces `k(w)`, `b(w)`.
pub fn width_model() -> HingeSurface {
    HingeSurface {
        source: PropertySource::WidthModel,
        stiffness: Some(QuadraticPolynomial::new(0.0003, vec![-0.1361], vec![3.0857])),
        damping: QuadraticPolynomial::new(1.9812e-5, vec![-3.3197e-4], vec![0.0166]),
        range: FittedRange {
            variables: vec!["w"],
            min: vec![0.045],
            max: vec![0.08],
        },
    }
}

/// Length surfaces `k(l)`, `b(l)`.
pub fn length_model() -> HingeSurface {
    HingeSurface {
        source: PropertySource::LengthModel,
        stiffness: Some(QuadraticPolynomial::new(0.251, vec![-7.4590], vec![746.6667])),
        damping: QuadraticPolynomial::new(8.3506e-5, vec![-0.0297], vec![3.6381]),
        range: FittedRange {
            variables: vec!["l"],
            min: vec![0.001],
            max: vec![0.005],
        },
    }
}

/// Three-input surfaces `k(l, w, a)`, `b(l, w, a)`; stiffness has no area terms.
pub fn comprehensive_model() -> HingeSurface {
    HingeSurface {
        source: PropertySource::ComprehensiveModel,
        stiffness: Some(QuadraticPolynomial::new(
            0.0073,
            vec![-7.5305, 0.4298, 0.0],
            vec![762.5397, -1.4444, 0.0],
        )),
        damping: QuadraticPolynomial::new(
            5.0855e-5,
            vec![-0.227, -0.0023, 0.0129],
            vec![2.0822, 0.0408, -0.8565],
        ),
        range: FittedRange {
            variables: vec!["l", "w", "a"],
            min: vec![5e-5, 0.045, 5e-4],
            max: vec![1.5e-4, 0.08, 3e-3],
        },
    }
}

impl HingeSurface {
    /// Raw (unclamped) stiffness and damping at `x`; stiffness is `None` for
    /// damping-only surfaces.
    pub fn eval_raw(&self, x: &[f64]) -> (Option<f64>, f64) {
        (
            self.stiffness.as_ref().map(|p| p.eval(x)),
            self.damping.eval(x),
        )
    }

    /// Clamped properties with range warnings.
    pub fn evaluate(&self, x: &[f64]) -> HingeProperties {
        let (k, b) = self.eval_raw(x);
        let k = k.unwrap_or(0.0);
        HingeProperties {
            stiffness: k.max(0.0),
            damping: b.max(0.0),
            source: self.source,
            clamped: k < 0.0 || b < 0.0,
            warnings: self.range.check(x),
        }
    }
}

/// Air damping at body area `a`, clamped at zero.
pub fn damping_from_area(a: f64) -> HingeProperties {
    air_model().evaluate(&[a])
}

pub fn properties_from_width(w: f64) -> HingeProperties {
    width_model().evaluate(&[w])
}

pub fn properties_from_length(l: f64) -> HingeProperties {
    length_model().evaluate(&[l])
}

/// Stiffness and damping from hinge length, width and body area.
///
/// Zero inputs are accepted so the surface can be probed at its origin; the
/// result then carries range warnings.
pub fn properties_comprehensive(d: &HingeDesign) -> HingeProperties {
    comprehensive_model().evaluate(&[d.length, d.width, d.body_area])
}

/// Result of [`fit_quadratic_surface`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub polynomial: QuadraticPolynomial,
    /// Mean absolute error of the fit over the samples.
    pub mae: f64,
    /// MAE as a percentage of the mean measured value.
    pub mae_percent: f64,
}

/// Least-squares fit of a cross-term-free quadratic surface.
pub fn fit_quadratic_surface(points: &[Vec<f64>], measured: &[f64]) -> Result<QuadraticFit> {
    if points.len() != measured.len() {
        return Err(Error::Value(format!(
            "{} design points but {} measurements",
            points.len(),
            measured.len()
        )));
    }
    let Some(first) = points.first() else {
        return Err(Error::Rank("no samples".into()));
    };
    let n = first.len();
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::Value("design points differ in dimension".into()));
    }
    let cols = 1 + 2 * n;
    let design = DMatrix::from_fn(points.len(), cols, |r, c| {
        let p = &points[r];
        match c {
            0 => 1.0,
            c if c <= n => p[c - 1],
            c => p[c - n - 1].powi(2),
        }
    });
    let y = DVector::from_column_slice(measured);
    let coeffs = lstsq::solve(&design, &y)?;
    let polynomial = QuadraticPolynomial::from_coefficients(coeffs.as_slice());
    let mae = points
        .iter()
        .zip(measured)
        .map(|(p, m)| (polynomial.eval(p) - m).abs())
        .sum::<f64>()
        / points.len() as f64;
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    let mae_percent = if mean != 0.0 {
        100.0 * mae / mean.abs()
    } else {
        f64::NAN
    };
    Ok(QuadraticFit {
        polynomial,
        mae,
        mae_percent,
    })
}

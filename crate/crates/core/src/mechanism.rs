//! Declarative mechanism description: materials, laminate bodies, hinge joints.
//!
//! A mechanism file is YAML with the top-level keys `schema`, `gravity`,
//! `materials`, `bodies` and `joints`. All quantities are SI (m, kg, s, rad,
//! Pa, N·m). Body polygons live in the flat fabricated plane (z = 0) and the
//! same coordinates serve as every body's local frame, so the flat state is
//! the configuration where all joint angles are zero.
//!
//! ```yaml
//! schema: 1
//! gravity: [0.0, 0.0, -9.81]
//! materials:
//!   - { name: board, density: 700.0, thickness: 0.0015,
//!       youngs_modulus: 4.38327e9, yield_stress: 4.284e7 }
//! bodies:
//!   - { id: base, newtonian: true, polygon: [[0, 0], [0.1, 0], [0.1, 0.1]] }
//!   - id: flap
//!     polygon: [[0, 0], [0.1, 0.1], [0, 0.1]]
//!     layers: [{ material: board }]
//! joints:
//!   - { id: hinge, parent: base, child: flap,
//!       axis_p1: [0, 0, 0], axis_p2: [0.1, 0.1, 0],
//!       stiffness: 0.0073, damping: 5.0e-5 }
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    /// kg·m⁻³
    pub density: f64,
    /// Default sheet thickness (m), used when a layer does not override it.
    pub thickness: f64,
    /// Pa
    pub youngs_modulus: f64,
    /// Pa
    pub yield_stress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<f64>,
}

/// A concentrated mass such as a motion-capture marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMass {
    pub position: [f64; 3],
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub id: String,
    #[serde(default)]
    pub newtonian: bool,
    pub polygon: Vec<[f64; 2]>,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub point_masses: Vec<PointMass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueBreakpoint {
    /// Time (s) from which `torque` applies.
    pub t: f64,
    /// N·m
    pub torque: f64,
}

/// Piecewise-constant torque. The value at time `t` is the torque of the last
/// breakpoint with `t_i <= t`, or zero before the first breakpoint. Breakpoints
/// at negative times define the torque held during burn-in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorqueSchedule(pub Vec<TorqueBreakpoint>);

impl TorqueSchedule {
    pub fn at(&self, t: f64) -> f64 {
        self.0
            .iter()
            .take_while(|bp| bp.t <= t)
            .last()
            .map_or(0.0, |bp| bp.torque)
    }

    /// Torque in effect just before t = 0.
    pub fn hold_value(&self) -> f64 {
        self.0
            .iter()
            .take_while(|bp| bp.t < 0.0)
            .last()
            .map_or(0.0, |bp| bp.torque)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub id: String,
    pub parent: String,
    pub child: String,
    pub axis_p1: [f64; 3],
    pub axis_p2: [f64; 3],
    /// N·m·rad⁻¹
    #[serde(default)]
    pub stiffness: f64,
    /// N·m·s·rad⁻¹
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub rest_angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_torque: Option<TorqueSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_angle_guess: Option<f64>,
}

impl JointSpec {
    pub fn external_torque_at(&self, t: f64) -> f64 {
        self.external_torque.as_ref().map_or(0.0, |s| s.at(t))
    }

    pub fn hold_torque(&self) -> f64 {
        self.external_torque
            .as_ref()
            .map_or(0.0, TorqueSchedule::hold_value)
    }

    /// Unit hinge direction from `axis_p1` towards `axis_p2`.
    pub fn axis_direction(&self) -> Vector3<f64> {
        (Vector3::from(self.axis_p2) - Vector3::from(self.axis_p1)).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub schema: u32,
    pub gravity: [f64; 3],
    pub materials: Vec<MaterialSpec>,
    pub bodies: Vec<BodySpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
}

impl MechanismSpec {
    pub fn body(&self, id: &str) -> Option<&BodySpec> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn joint(&self, id: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.id == id)
    }

    pub fn newtonian(&self) -> &BodySpec {
        self.bodies
            .iter()
            .find(|b| b.newtonian)
            .expect("validated mechanism has a Newtonian body")
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    /// Number of independent cycles of the body–joint graph.
    pub fn cycle_count(&self) -> usize {
        // connected graph: E - V + 1
        (self.joints.len() + 1).saturating_sub(self.bodies.len())
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("mechanism serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        check_finite("gravity", &self.gravity)?;

        let mut names = BTreeSet::new();
        for m in &self.materials {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Schema(format!("duplicate material '{}'", m.name)));
            }
            for (field, v) in [
                ("density", m.density),
                ("thickness", m.thickness),
                ("youngs_modulus", m.youngs_modulus),
                ("yield_stress", m.yield_stress),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Value(format!(
                        "material '{}': {field} must be positive, got {v}",
                        m.name
                    )));
                }
            }
        }

        let mut ids = BTreeSet::new();
        for b in &self.bodies {
            if !ids.insert(b.id.as_str()) {
                return Err(Error::Schema(format!("duplicate body '{}'", b.id)));
            }
            validate_body(b, &names)?;
        }
        let n_newtonian = self.bodies.iter().filter(|b| b.newtonian).count();
        if n_newtonian != 1 {
            return Err(Error::Schema(format!(
                "exactly one Newtonian body required, found {n_newtonian}"
            )));
        }

        let mut joint_ids = BTreeSet::new();
        for j in &self.joints {
            if !joint_ids.insert(j.id.as_str()) {
                return Err(Error::Schema(format!("duplicate joint '{}'", j.id)));
            }
            validate_joint(j, &ids)?;
        }

        self.check_topology()
    }

    fn check_topology(&self) -> Result<()> {
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for b in &self.bodies {
            adjacency.entry(b.id.as_str()).or_default();
        }
        for j in &self.joints {
            adjacency.entry(&j.parent).or_default().push(&j.child);
            adjacency.entry(&j.child).or_default().push(&j.parent);
        }
        let start = self.newtonian().id.as_str();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(b) = queue.pop_front() {
            for &n in &adjacency[b] {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if seen.len() != self.bodies.len() {
            let missing: Vec<_> = self
                .bodies
                .iter()
                .map(|b| b.id.as_str())
                .filter(|id| !seen.contains(id))
                .collect();
            return Err(Error::Topology(format!(
                "mechanism is disconnected; unreachable bodies: {}",
                missing.join(", ")
            )));
        }
        let cycles = self.cycle_count();
        if cycles > 1 {
            return Err(Error::Topology(format!(
                "mechanism has {cycles} independent loops; at most one is supported"
            )));
        }
        Ok(())
    }
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Value(format!("{what} contains non-finite values")))
    }
}

fn validate_body(b: &BodySpec, materials: &BTreeSet<&str>) -> Result<()> {
    if b.polygon.len() < 3 {
        return Err(Error::Value(format!(
            "body '{}': polygon needs at least 3 vertices",
            b.id
        )));
    }
    for v in &b.polygon {
        check_finite(&format!("body '{}' polygon", b.id), v)?;
    }
    if !polygon_is_simple(&b.polygon) {
        return Err(Error::Value(format!(
            "body '{}': polygon is self-intersecting",
            b.id
        )));
    }
    for layer in &b.layers {
        if !materials.contains(layer.material.as_str()) {
            return Err(Error::Reference(format!(
                "body '{}' references unknown material '{}'",
                b.id, layer.material
            )));
        }
        if let Some(t) = layer.thickness {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Value(format!(
                    "body '{}': layer thickness must be non-negative, got {t}",
                    b.id
                )));
            }
        }
    }
    for pm in &b.point_masses {
        check_finite(&format!("body '{}' point mass", b.id), &pm.position)?;
        if !(pm.mass.is_finite() && pm.mass >= 0.0) {
            return Err(Error::Value(format!(
                "body '{}': point mass must be non-negative, got {}",
                b.id, pm.mass
            )));
        }
    }
    Ok(())
}

fn validate_joint(j: &JointSpec, bodies: &BTreeSet<&str>) -> Result<()> {
    for end in [&j.parent, &j.child] {
        if !bodies.contains(end.as_str()) {
            return Err(Error::Reference(format!(
                "joint '{}' references unknown body '{end}'",
                j.id
            )));
        }
    }
    if j.parent == j.child {
        return Err(Error::Topology(format!(
            "joint '{}' connects body '{}' to itself",
            j.id, j.parent
        )));
    }
    check_finite(&format!("joint '{}' axis", j.id), &j.axis_p1)?;
    check_finite(&format!("joint '{}' axis", j.id), &j.axis_p2)?;
    let d = Vector3::from(j.axis_p2) - Vector3::from(j.axis_p1);
    if d.norm() <= 1e-12 {
        return Err(Error::Value(format!(
            "joint '{}': axis_p1 and axis_p2 coincide",
            j.id
        )));
    }
    for (field, v) in [("stiffness", j.stiffness), ("damping", j.damping)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Value(format!(
                "joint '{}': {field} must be non-negative, got {v}",
                j.id
            )));
        }
    }
    check_finite(&format!("joint '{}' rest_angle", j.id), &[j.rest_angle])?;
    if let Some(g) = j.initial_angle_guess {
        check_finite(&format!("joint '{}' initial_angle_guess", j.id), &[g])?;
    }
    if let Some(schedule) = &j.external_torque {
        for w in schedule.0.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Value(format!(
                    "joint '{}': torque schedule times must be strictly increasing",
                    j.id
                )));
            }
        }
        for bp in &schedule.0 {
            check_finite(&format!("joint '{}' torque schedule", j.id), &[bp.t, bp.torque])?;
        }
    }
    Ok(())
}

/// Parse and validate a mechanism file.
pub fn parse_mechanism(source: &str) -> Result<MechanismSpec> {
    let spec: MechanismSpec =
        serde_yaml::from_str(source).map_err(|e| Error::Schema(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross2(q1, q2, p1);
    let d2 = cross2(q1, q2, p2);
    let d3 = cross2(p1, p2, q1);
    let d4 = cross2(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| {
        p[0] >= a[0].min(b[0])
            && p[0] <= a[0].max(b[0])
            && p[1] >= a[1].min(b[1])
            && p[1] <= a[1].max(b[1])
    };
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent edges of the closed polygon touch.
pub fn polygon_is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        if a1 == a2 {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(a1, a2, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Mass, centre of mass and inertia tensor (about the centre of mass) of a body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

impl MassProperties {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mass: self.mass * factor,
            com: self.com,
            inertia: self.inertia * factor,
        }
    }

    /// Moment of inertia about the line through `point` along unit `axis`.
    pub fn inertia_about_line(&self, point: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
        let u = axis.normalize();
        let d = self.com - point;
        let perp = d - u * d.dot(&u);
        u.dot(&(self.inertia * u)) + self.mass * perp.norm_squared()
    }
}

/// Area moments of a simple polygon about the origin: (A, ∫x, ∫y, ∫x², ∫y², ∫xy).
fn polygon_moments(poly: &[[f64; 2]], origin: [f64; 2]) -> [f64; 6] {
    let n = poly.len();
    let mut m = [0.0; 6];
    for i in 0..n {
        let (x0, y0) = (poly[i][0] - origin[0], poly[i][1] - origin[1]);
        let (x1, y1) = (
            poly[(i + 1) % n][0] - origin[0],
            poly[(i + 1) % n][1] - origin[1],
        );
        let c = x0 * y1 - x1 * y0;
        m[0] += c / 2.0;
        m[1] += (x0 + x1) * c / 6.0;
        m[2] += (y0 + y1) * c / 6.0;
        m[3] += (x0 * x0 + x0 * x1 + x1 * x1) * c / 12.0;
        m[4] += (y0 * y0 + y0 * y1 + y1 * y1) * c / 12.0;
        m[5] += (x0 * y1 + 2.0 * x0 * y0 + 2.0 * x1 * y1 + x1 * y0) * c / 24.0;
    }
    if m[0] < 0.0 {
        m.iter_mut().for_each(|v| *v = -*v);
    }
    m
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    polygon_moments(poly, [0.0, 0.0])[0]
}

fn point_inertia(mass: f64, r: &Vector3<f64>) -> Matrix3<f64> {
    (Matrix3::identity() * r.norm_squared() - r * r.transpose()) * mass
}

/// Mass properties of a laminate body treated as thin plates in the z = 0
/// plane plus point masses.
pub fn compute_mass_properties(
    body: &BodySpec,
    materials: &[MaterialSpec],
) -> Result<MassProperties> {
    let n = body.polygon.len() as f64;
    let origin = [
        body.polygon.iter().map(|v| v[0]).sum::<f64>() / n,
        body.polygon.iter().map(|v| v[1]).sum::<f64>() / n,
    ];
    let [area, sx, sy, sxx, syy, sxy] = polygon_moments(&body.polygon, origin);
    let extent = body
        .polygon
        .iter()
        .map(|v| (v[0] - origin[0]).hypot(v[1] - origin[1]))
        .fold(0.0, f64::max);
    if area <= 1e-12 * extent * extent {
        return Err(Error::Value(format!(
            "body '{}' has zero polygon area",
            body.id
        )));
    }

    let mut areal_density = 0.0;
    for layer in &body.layers {
        let mat = materials
            .iter()
            .find(|m| m.name == layer.material)
            .ok_or_else(|| {
                Error::Reference(format!(
                    "body '{}' references unknown material '{}'",
                    body.id, layer.material
                ))
            })?;
        areal_density += mat.density * layer.thickness.unwrap_or(mat.thickness);
    }

    // everything accumulated about `origin`, shifted to the COM at the end
    let o = Vector3::new(origin[0], origin[1], 0.0);
    let plate_mass = areal_density * area;
    let mut mass = plate_mass;
    let mut first_moment = Vector3::new(sx, sy, 0.0) * areal_density;
    let mut inertia = Matrix3::new(
        syy, -sxy, 0.0, //
        -sxy, sxx, 0.0, //
        0.0, 0.0, sxx + syy,
    ) * areal_density;

    for pm in &body.point_masses {
        let r = Vector3::from(pm.position) - o;
        mass += pm.mass;
        first_moment += r * pm.mass;
        inertia += point_inertia(pm.mass, &r);
    }
    if !(mass > 0.0) {
        return Err(Error::Value(format!("body '{}' has no mass", body.id)));
    }
    let d = first_moment / mass;
    let inertia = inertia - point_inertia(mass, &d);
    let inertia = (inertia + inertia.transpose()) * 0.5;
    Ok(MassProperties {
        mass,
        com: o + d,
        inertia,
    })
}

#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use laminate_core::mechanism::{compute_mass_properties, parse_mechanism, MechanismSpec};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

pub fn fixture_text(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn fixture(name: &str) -> MechanismSpec {
    parse_mechanism(&fixture_text(&format!("{name}.yaml"))).unwrap()
}

const MATERIALS: &str = "materials:
  - { name: board, density: 700.0, thickness: 0.0009, youngs_modulus: 3.0e9, yield_stress: 2.0e7 }
  - { name: film, density: 1390.0, thickness: 0.000127, youngs_modulus: 4.38327e9, yield_stress: 4.284e7 }
";

/// One link of a hanging planar chain.
#[derive(Debug, Clone, Copy)]
pub struct LinkParams {
    pub length: f64,
    pub width: f64,
    /// Point mass (kg) and its offset from the link's top edge along the link.
    pub marker: (f64, f64),
    pub stiffness: f64,
    pub damping: f64,
    pub rest_angle: f64,
}

/// Chain of rectangular laminate links hanging along −y from a frame, with
/// every hinge parallel to x.
pub fn chain_yaml(links: &[LinkParams], gravity: [f64; 3]) -> String {
    let mut out = format!(
        "schema: 1\ngravity: [{}, {}, {}]\n{MATERIALS}bodies:\n  - id: frame\n    newtonian: true\n    polygon: [[-0.03, 0.0], [0.03, 0.0], [0.03, 0.02], [-0.03, 0.02]]\n",
        gravity[0], gravity[1], gravity[2]
    );
    let mut top = 0.0;
    let mut hinges = Vec::new();
    for (i, l) in links.iter().enumerate() {
        let (y0, y1) = (top - 0.002, top - l.length);
        let hw = l.width / 2.0;
        out.push_str(&format!(
            "  - id: link{i}\n    polygon: [[{}, {y0}], [{hw}, {y0}], [{hw}, {y1}], [{}, {y1}]]\n    layers: [{{ material: board }}, {{ material: film }}, {{ material: board }}]\n    point_masses: [{{ position: [{}, {}, 0.0], mass: {} }}]\n",
            -hw,
            -hw,
            0.3 * hw,
            top - l.marker.1,
            l.marker.0
        ));
        hinges.push(top);
        top -= l.length + 0.004;
    }
    out.push_str("joints:\n");
    for (i, l) in links.iter().enumerate() {
        let parent = if i == 0 { "frame".to_string() } else { format!("link{}", i - 1) };
        let y = hinges[i] + if i == 0 { 0.0 } else { 0.002 };
        out.push_str(&format!(
            "  - {{ id: h{i}, parent: {parent}, child: link{i}, axis_p1: [-0.01, {y}, 0.0], axis_p2: [0.01, {y}, 0.0], stiffness: {}, damping: {}, rest_angle: {} }}\n",
            l.stiffness, l.damping, l.rest_angle
        ));
    }
    out
}

pub fn sample_links(n: usize) -> Vec<LinkParams> {
    (0..n)
        .map(|i| {
            let f = i as f64;
            LinkParams {
                length: 0.05 + 0.013 * f,
                width: 0.04 - 0.006 * f,
                marker: (0.0007 + 0.0004 * f, 0.02 + 0.007 * f),
                stiffness: 0.007 + 0.002 * f,
                damping: 4e-5 + 1e-5 * f,
                rest_angle: 0.1 - 0.15 * f,
            }
        })
        .collect()
}

fn rot2(phi: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Joint accelerations of a planar chain (all hinges parallel to +x, joint
/// i joining link i−1 to link i) from Lagrange's equations written in
/// absolute link angles φ = L·q:
///
///   Lᵀ·(M_φ·L·q̈ + S·φ̇² − Q_g) = −k·(q − q₀) − b·q̇
///
/// with M_φ, S and Q_g in closed form over the in-plane (y, z) geometry.
#[allow(clippy::needless_range_loop)]
pub fn planar_chain_qddot(spec: &MechanismSpec, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    let n = spec.joints.len();
    let hinge: Vec<[f64; 2]> = spec.joints.iter().map(|j| [j.axis_p1[1], j.axis_p1[2]]).collect();
    let links: Vec<(f64, [f64; 2], f64)> = spec
        .joints
        .iter()
        .map(|j| {
            let mp = compute_mass_properties(spec.body(&j.child).unwrap(), &spec.materials).unwrap();
            (mp.mass, [mp.com.y, mp.com.z], mp.inertia[(0, 0)])
        })
        .collect();
    let g = [spec.gravity[1], spec.gravity[2]];

    let mut phi = vec![0.0; n];
    let mut phidot = vec![0.0; n];
    let (mut a, mut ad) = (0.0, 0.0);
    for i in 0..n {
        a += q[i];
        ad += qdot[i];
        phi[i] = a;
        phidot[i] = ad;
    }
    // lever of link i's COM with respect to absolute angle j
    let lever = |i: usize, j: usize| -> [f64; 2] {
        if j < i {
            [hinge[j + 1][0] - hinge[j][0], hinge[j + 1][1] - hinge[j][1]]
        } else {
            [links[i].1[0] - hinge[i][0], links[i].1[1] - hinge[i][1]]
        }
    };

    let mut m_phi = DMatrix::<f64>::zeros(n, n);
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut qg = DVector::<f64>::zeros(n);
    for j in 0..n {
        for i in j..n {
            qg[j] += links[i].0 * dot2(g, rot2(phi[j] + FRAC_PI_2, lever(i, j)));
        }
        m_phi[(j, j)] += links[j].2;
        for k in 0..n {
            for i in j.max(k)..n {
                let dj = rot2(phi[j] + FRAC_PI_2, lever(i, j));
                m_phi[(j, k)] += links[i].0 * dot2(dj, rot2(phi[k] + FRAC_PI_2, lever(i, k)));
                s[(j, k)] -= links[i].0 * dot2(dj, rot2(phi[k], lever(i, k)));
            }
        }
    }
    let l = DMatrix::from_fn(n, n, |r, c| if c <= r { 1.0 } else { 0.0 });
    let phidot2 = DVector::from_iterator(n, phidot.iter().map(|v| v * v));
    let tau = DVector::from_iterator(
        n,
        spec.joints
            .iter()
            .enumerate()
            .map(|(c, j)| -j.stiffness * (q[c] - j.rest_angle) - j.damping * qdot[c]),
    );
    let mq = l.transpose() * &m_phi * &l;
    let rhs = tau + l.transpose() * (qg - s * phidot2);
    mq.lu().solve(&rhs).unwrap()
}

/// Rotation by `angle` about unit `axis` (Rodrigues).
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let u = axis.normalize();
    let k = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Homogeneous rotation by `angle` about the line through `p` along `axis`.
pub fn hinge_transform(p: &Vector3<f64>, axis: &Vector3<f64>, angle: f64) -> Matrix4<f64> {
    let r = rodrigues(axis, angle);
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    let shift = p - r * p;
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&shift);
    t
}

pub fn apply(t: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let h = t * p.push(1.0);
    Vector3::new(h.x, h.y, h.z)
}

/// World transforms of every body in a mechanism whose joints form a tree
/// listed parent-before-child, composed from flat-state hinge lines.
pub fn chain_transforms(spec: &MechanismSpec, q: &DVector<f64>) -> Vec<(String, Matrix4<f64>)> {
    let mut out: Vec<(String, Matrix4<f64>)> = vec![(spec.newtonian().id.clone(), Matrix4::identity())];
    for (c, j) in spec.joints.iter().enumerate() {
        let parent = out.iter().find(|(id, _)| *id == j.parent).expect("parent placed first").1;
        let t = parent * hinge_transform(&Vector3::from(j.axis_p1), &j.axis_direction(), q[c]);
        out.push((j.child.clone(), t));
    }
    out
}

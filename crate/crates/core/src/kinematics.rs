//! Kinematic tree, loop cutting and reduced-coordinate kinematics.
//!
//! The body–joint graph is turned into a breadth-first spanning tree rooted at
//! the Newtonian body. If the graph has one loop, the single non-tree joint is
//! the cut joint: the later-discovered of its two bodies is split, a dummy copy
//! of it is attached to the other end through the cut joint, and the original
//! and the dummy each carry half of the mass and inertia. Loop closure is then
//! expressed as coincidence of three points on the two copies (see
//! [`crate::constraints`]).
//!
//! Every body's local frame equals the flat fabricated frame, so at q = 0 all
//! placements are identity. A joint rotates its tree child about the hinge line
//! `axis_p1 → axis_p2` as carried by the tree parent.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DVector, Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::mechanism::{compute_mass_properties, MassProperties, MechanismSpec};

/// Suffix appended to a split body's id to name its dummy copy.
pub const DUMMY_SUFFIX: &str = "#dummy";

#[derive(Debug, Clone, PartialEq)]
pub struct TreeBody {
    pub id: String,
    /// Id of the mechanism body this tree node represents.
    pub source: String,
    pub parent: Option<usize>,
    /// Coordinate of the joint connecting this body to its parent.
    pub coordinate: Option<usize>,
    /// +1 when the joint's declared parent is the tree parent, −1 when reversed.
    pub sign: f64,
    pub mass_scale: f64,
    pub is_dummy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    pub joint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutEdge {
    pub joint: String,
    pub original: String,
    pub dummy: String,
}

/// Three affinely independent body-local points used to glue a split body to
/// its dummy copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConstraintPoints {
    pub points: [Vector3<f64>; 3],
}

impl LoopConstraintPoints {
    pub fn new(points: [Vector3<f64>; 3]) -> Result<Self> {
        let area = triangle_area(&points[0], &points[1], &points[2]);
        if area <= 1e-12 {
            return Err(Error::Value(format!(
                "loop constraint points are co-linear (triangle area {area:.3e} m²)"
            )));
        }
        Ok(Self { points })
    }
}

fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    pub root: String,
    /// Tree nodes in breadth-first order; a dummy, if any, is last.
    pub bodies: Vec<TreeBody>,
    pub edges: Vec<TreeEdge>,
    pub cut_edge: Option<CutEdge>,
    /// Joint id → index into q.
    pub coordinate_index: BTreeMap<String, usize>,
    pub loop_points: Option<LoopConstraintPoints>,
}

impl KinematicTree {
    pub fn n_coordinates(&self) -> usize {
        self.coordinate_index.len()
    }

    pub fn body_index(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.id == id)
    }

    pub fn has_loop(&self) -> bool {
        self.cut_edge.is_some()
    }

    /// Joint ids ordered by coordinate index.
    pub fn joint_ids(&self) -> Vec<&str> {
        let mut ids = vec![""; self.coordinate_index.len()];
        for (id, &i) in &self.coordinate_index {
            ids[i] = id;
        }
        ids
    }
}

/// Build the spanning tree, cutting the loop if there is one.
pub fn build_tree(mech: &MechanismSpec) -> Result<KinematicTree> {
    let cycles = mech.cycle_count();
    if cycles > 1 {
        return Err(Error::Topology(format!(
            "mechanism has {cycles} independent loops; at most one is supported"
        )));
    }
    let coordinate_index: BTreeMap<String, usize> = mech
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j.id.clone(), i))
        .collect();

    let root = mech.newtonian().id.clone();
    let mut bodies = vec![TreeBody {
        id: root.clone(),
        source: root.clone(),
        parent: None,
        coordinate: None,
        sign: 1.0,
        mass_scale: 1.0,
        is_dummy: false,
    }];
    let mut order: BTreeMap<&str, usize> = BTreeMap::from([(root.as_str(), 0)]);
    let mut edges = Vec::new();
    let mut used = BTreeSet::new();
    let mut non_tree = Vec::new();
    let mut queue = VecDeque::from([0usize]);

    while let Some(current) = queue.pop_front() {
        let current_id = bodies[current].id.clone();
        for (ji, joint) in mech.joints.iter().enumerate() {
            let (other, sign) = if joint.parent == current_id {
                (&joint.child, 1.0)
            } else if joint.child == current_id {
                (&joint.parent, -1.0)
            } else {
                continue;
            };
            if used.contains(&ji) {
                continue;
            }
            used.insert(ji);
            if order.contains_key(other.as_str()) {
                non_tree.push(ji);
                continue;
            }
            order.insert(other.as_str(), bodies.len());
            edges.push(TreeEdge {
                parent: current_id.clone(),
                child: other.clone(),
                joint: joint.id.clone(),
            });
            queue.push_back(bodies.len());
            bodies.push(TreeBody {
                id: other.clone(),
                source: other.clone(),
                parent: Some(current),
                coordinate: Some(ji),
                sign,
                mass_scale: 1.0,
                is_dummy: false,
            });
        }
    }

    if bodies.len() != mech.bodies.len() {
        return Err(Error::Topology("mechanism graph is disconnected".into()));
    }

    let mut cut_edge = None;
    let mut loop_points = None;
    match non_tree.as_slice() {
        [] => {}
        [ji] => {
            let joint = &mech.joints[*ji];
            let (p, c) = (order[joint.parent.as_str()], order[joint.child.as_str()]);
            // split the later-discovered body; the dummy hangs off the other one
            let (split, anchor) = if c > p { (c, p) } else { (p, c) };
            let sign = if bodies[split].id == joint.child { 1.0 } else { -1.0 };
            let split_id = bodies[split].id.clone();
            let dummy_id = format!("{split_id}{DUMMY_SUFFIX}");
            bodies[split].mass_scale = 0.5;
            bodies.push(TreeBody {
                id: dummy_id.clone(),
                source: split_id.clone(),
                parent: Some(anchor),
                coordinate: Some(*ji),
                sign,
                mass_scale: 0.5,
                is_dummy: true,
            });
            edges.push(TreeEdge {
                parent: bodies[anchor].id.clone(),
                child: dummy_id.clone(),
                joint: joint.id.clone(),
            });
            let polygon = &mech.body(&split_id).expect("split body exists").polygon;
            loop_points = Some(select_constraint_points(polygon)?);
            cut_edge = Some(CutEdge {
                joint: joint.id.clone(),
                original: split_id,
                dummy: dummy_id,
            });
        }
        _ => {
            return Err(Error::Topology(
                "more than one loop-closing joint".into(),
            ))
        }
    }

    Ok(KinematicTree {
        root,
        bodies,
        edges,
        cut_edge,
        coordinate_index,
        loop_points,
    })
}

/// The polygon vertex triple spanning the largest triangle.
pub fn select_constraint_points(polygon: &[[f64; 2]]) -> Result<LoopConstraintPoints> {
    let pts: Vec<Vector3<f64>> = polygon.iter().map(|v| Vector3::new(v[0], v[1], 0.0)).collect();
    let mut best = (0.0, [0, 1, 2]);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for k in (j + 1)..pts.len() {
                let a = triangle_area(&pts[i], &pts[j], &pts[k]);
                if a > best.0 {
                    best = (a, [i, j, k]);
                }
            }
        }
    }
    let [i, j, k] = best.1;
    LoopConstraintPoints::new([pts[i], pts[j], pts[k]])
}

/// Orientation and origin of a body frame in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePlacement {
    /// Body → world rotation.
    pub rotation: Matrix3<f64>,
    /// World position of the body-local origin.
    pub origin: Vector3<f64>,
}

impl FramePlacement {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            origin: Vector3::zeros(),
        }
    }

    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * local + self.origin
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Link {
    pub parent: Option<usize>,
    pub coordinate: Option<usize>,
    /// Signed unit hinge direction in the parent frame.
    pub axis: Vector3<f64>,
    /// A point on the hinge line in the parent frame.
    pub anchor: Vector3<f64>,
    pub mass: Option<MassProperties>,
    /// Coordinates on the path from the root to this body.
    pub path: Vec<usize>,
}

/// Per-coordinate hinge data used for forces.
#[derive(Debug, Clone)]
pub(crate) struct JointParams {
    pub stiffness: f64,
    pub damping: f64,
    pub rest_angle: f64,
}

/// A mechanism compiled for repeated kinematic and dynamic evaluation.
#[derive(Debug, Clone)]
pub struct Multibody {
    pub tree: KinematicTree,
    pub spec: MechanismSpec,
    pub(crate) links: Vec<Link>,
    pub(crate) joints: Vec<JointParams>,
    pub(crate) gravity: Vector3<f64>,
}

/// Kinematic quantities of every tree body at one (q, q̇).
#[derive(Debug, Clone)]
pub struct KinematicState {
    pub placements: Vec<FramePlacement>,
    /// World angular velocity per body.
    pub omega: Vec<Vector3<f64>>,
    /// World velocity of the body-fixed point at the body origin.
    pub velocity: Vec<Vector3<f64>>,
    /// World hinge direction per coordinate (signed as in the tree).
    pub axes: Vec<Vector3<f64>>,
    /// World point on the hinge line per coordinate.
    pub anchors: Vec<Vector3<f64>>,
}

impl KinematicState {
    pub fn point(&self, body: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.placements[body].transform_point(local)
    }

    pub fn point_velocity(&self, body: usize, local: &Vector3<f64>) -> Vector3<f64> {
        let r = self.placements[body].rotation * local;
        self.velocity[body] + self.omega[body].cross(&r)
    }
}

impl Multibody {
    pub fn new(spec: &MechanismSpec) -> Result<Self> {
        let tree = build_tree(spec)?;
        Self::from_tree(spec, tree)
    }

    pub fn from_tree(spec: &MechanismSpec, tree: KinematicTree) -> Result<Self> {
        let mut links: Vec<Link> = Vec::with_capacity(tree.bodies.len());
        for tb in &tree.bodies {
            let (axis, anchor) = match tb.coordinate {
                Some(c) => {
                    let j = &spec.joints[c];
                    (j.axis_direction() * tb.sign, Vector3::from(j.axis_p1))
                }
                None => (Vector3::zeros(), Vector3::zeros()),
            };
            let mass = match tb.parent {
                None => None,
                Some(_) => {
                    let body = spec.body(&tb.source).expect("tree body exists");
                    Some(compute_mass_properties(body, &spec.materials)?.scaled(tb.mass_scale))
                }
            };
            let mut path = tb
                .parent
                .map(|p| links[p].path.clone())
                .unwrap_or_default();
            if let Some(c) = tb.coordinate {
                path.push(c);
            }
            links.push(Link {
                parent: tb.parent,
                coordinate: tb.coordinate,
                axis,
                anchor,
                mass,
                path,
            });
        }
        let joints = spec
            .joints
            .iter()
            .map(|j| JointParams {
                stiffness: j.stiffness,
                damping: j.damping,
                rest_angle: j.rest_angle,
            })
            .collect();
        Ok(Self {
            gravity: spec.gravity(),
            spec: spec.clone(),
            tree,
            links,
            joints,
        })
    }

    pub fn n_coordinates(&self) -> usize {
        self.tree.n_coordinates()
    }

    pub fn n_bodies(&self) -> usize {
        self.links.len()
    }

    pub fn mass_properties(&self, body: usize) -> Option<&MassProperties> {
        self.links[body].mass.as_ref()
    }

    /// Whether coordinate `c` moves body `body`.
    pub fn moves(&self, body: usize, c: usize) -> bool {
        self.links[body].path.contains(&c)
    }

    pub(crate) fn path(&self, body: usize) -> &[usize] {
        &self.links[body].path
    }

    /// Initial coordinates from the joints' `initial_angle_guess` (zero elsewhere).
    pub fn initial_guess(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_coordinates(),
            self.spec
                .joints
                .iter()
                .map(|j| j.initial_angle_guess.unwrap_or(0.0)),
        )
    }

    pub fn evaluate(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> KinematicState {
        let n = self.n_coordinates();
        assert_eq!(q.len(), n, "coordinate vector has wrong length");
        assert_eq!(qdot.len(), n, "rate vector has wrong length");
        let nb = self.links.len();
        let mut placements = vec![FramePlacement::identity(); nb];
        let mut omega = vec![Vector3::zeros(); nb];
        let mut velocity = vec![Vector3::zeros(); nb];
        let mut axes = vec![Vector3::zeros(); n];
        let mut anchors = vec![Vector3::zeros(); n];

        for (i, link) in self.links.iter().enumerate() {
            let (Some(p), Some(c)) = (link.parent, link.coordinate) else {
                continue;
            };
            let parent = placements[p];
            let rel = Rotation3::from_axis_angle(&Unit::new_unchecked(link.axis), q[c]);
            let rotation = parent.rotation * rel.matrix();
            // hinge point stays fixed: R_c·a + p_c = R_p·a + p_p
            let anchor_w = parent.transform_point(&link.anchor);
            let origin = anchor_w - rotation * link.anchor;
            let axis_w = parent.rotation * link.axis;

            let w = omega[p] + axis_w * qdot[c];
            let v_anchor = velocity[p] + omega[p].cross(&(anchor_w - parent.origin));
            velocity[i] = v_anchor + w.cross(&(origin - anchor_w));
            omega[i] = w;
            placements[i] = FramePlacement { rotation, origin };
            axes[c] = axis_w;
            anchors[c] = anchor_w;
        }
        KinematicState {
            placements,
            omega,
            velocity,
            axes,
            anchors,
        }
    }

    pub fn placements(&self, q: &DVector<f64>) -> Vec<FramePlacement> {
        let zero = DVector::zeros(q.len());
        self.evaluate(q, &zero).placements
    }
}

/// Angular acceleration and the acceleration of the body-fixed point at the
/// origin, per tree body.
#[derive(Debug, Clone)]
pub struct BodyAccelerations {
    pub alpha: Vec<Vector3<f64>>,
    pub accel: Vec<Vector3<f64>>,
}

impl BodyAccelerations {
    pub fn point(&self, ks: &KinematicState, body: usize, local: &Vector3<f64>) -> Vector3<f64> {
        let r = ks.placements[body].rotation * local;
        let w = ks.omega[body];
        self.accel[body] + self.alpha[body].cross(&r) + w.cross(&w.cross(&r))
    }
}

impl Multibody {
    /// Body accelerations for joint accelerations `qddot`; with `qddot = 0`
    /// this is the velocity-product (bias) part.
    pub fn accelerations(
        &self,
        ks: &KinematicState,
        qdot: &DVector<f64>,
        qddot: &DVector<f64>,
    ) -> BodyAccelerations {
        let nb = self.links.len();
        let mut alpha = vec![Vector3::zeros(); nb];
        let mut accel = vec![Vector3::zeros(); nb];
        for (i, link) in self.links.iter().enumerate() {
            let (Some(p), Some(c)) = (link.parent, link.coordinate) else {
                continue;
            };
            let s = ks.axes[c];
            let o = ks.anchors[c];
            let wp = ks.omega[p];
            let wi = ks.omega[i];
            let a_i = alpha[p] + wp.cross(&s) * qdot[c] + s * qddot[c];
            let r_po = o - ks.placements[p].origin;
            let a_o = accel[p] + alpha[p].cross(&r_po) + wp.cross(&wp.cross(&r_po));
            let r_oi = ks.placements[i].origin - o;
            accel[i] = a_o + a_i.cross(&r_oi) + wi.cross(&wi.cross(&r_oi));
            alpha[i] = a_i;
        }
        BodyAccelerations { alpha, accel }
    }
}

/// World placement of every tree body (dummy included) at coordinates `q`.
pub fn forward_kinematics(
    tree: &KinematicTree,
    mech: &MechanismSpec,
    q: &DVector<f64>,
) -> Result<BTreeMap<String, FramePlacement>> {
    let mb = Multibody::from_tree(mech, tree.clone())?;
    Ok(mb
        .placements(q)
        .into_iter()
        .zip(&tree.bodies)
        .map(|(p, b)| (b.id.clone(), p))
        .collect())
}

/// World velocity of a body-local point.
pub fn point_velocity(
    tree: &KinematicTree,
    mech: &MechanismSpec,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    body: &str,
    local: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let idx = tree
        .body_index(body)
        .ok_or_else(|| Error::Reference(format!("unknown body '{body}'")))?;
    let mb = Multibody::from_tree(mech, tree.clone())?;
    Ok(mb.evaluate(q, qdot).point_velocity(idx, local))
}

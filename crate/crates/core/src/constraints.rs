//! Loop-closure constraints between a split body and its dummy copy, and their
//! Baumgarte-stabilized acceleration-level form
//!
//!   A(q)·q̈ = −(J̇q̇) − 2α·Ċ − β²·C,   A = ∂C/∂q.
//!
//! Closure is written as componentwise coincidence of three body-local points
//! (nine scalar rows, at most six independent), which keeps a non-singular
//! Jacobian where the squared-distance form would have a vanishing gradient.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicState, KinematicTree, LoopConstraintPoints, Multibody};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumgarteParams {
    /// 1/s
    pub alpha: f64,
    /// 1/s
    pub beta: f64,
    pub enabled: bool,
}

impl Default for BaumgarteParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 10.0,
            enabled: true,
        }
    }
}

impl BaumgarteParams {
    pub fn disabled(self) -> Self {
        Self {
            enabled: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Value(format!(
                "Baumgarte alpha and beta must be non-negative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    /// Tree index of the split body.
    pub original: usize,
    /// Tree index of its dummy copy.
    pub dummy: usize,
    pub points: LoopConstraintPoints,
}

pub fn build_constraints(
    tree: &KinematicTree,
    points: LoopConstraintPoints,
) -> Result<ConstraintSystem> {
    let cut = tree
        .cut_edge
        .as_ref()
        .ok_or_else(|| Error::Topology("mechanism has no closed loop to constrain".into()))?;
    let original = tree.body_index(&cut.original).expect("split body in tree");
    let dummy = tree.body_index(&cut.dummy).expect("dummy body in tree");
    Ok(ConstraintSystem {
        original,
        dummy,
        points,
    })
}

impl ConstraintSystem {
    /// Constraint system of a compiled mechanism, if it has a loop.
    pub fn for_multibody(mb: &Multibody) -> Option<Self> {
        let points = mb.tree.loop_points?;
        build_constraints(&mb.tree, points).ok()
    }

    pub fn rows(&self) -> usize {
        3 * self.points.points.len()
    }

    pub fn residual_at(&self, ks: &KinematicState) -> DVector<f64> {
        let mut c = DVector::zeros(self.rows());
        for (k, p) in self.points.points.iter().enumerate() {
            let d = ks.point(self.original, p) - ks.point(self.dummy, p);
            c.fixed_rows_mut::<3>(3 * k).copy_from(&d);
        }
        c
    }

    pub fn jacobian_at(&self, mb: &Multibody, ks: &KinematicState) -> DMatrix<f64> {
        let n = mb.n_coordinates();
        let mut jac = DMatrix::zeros(self.rows(), n);
        for (k, p) in self.points.points.iter().enumerate() {
            for (body, sign) in [(self.original, 1.0), (self.dummy, -1.0)] {
                let x = ks.point(body, p);
                for &c in mb.path(body) {
                    let col: Vector3<f64> = ks.axes[c].cross(&(x - ks.anchors[c])) * sign;
                    let mut block = jac.fixed_view_mut::<3, 1>(3 * k, c);
                    block += col;
                }
            }
        }
        jac
    }

    pub fn residual(&self, mb: &Multibody, q: &DVector<f64>) -> DVector<f64> {
        let ks = mb.evaluate(q, &DVector::zeros(q.len()));
        self.residual_at(&ks)
    }

    pub fn jacobian(&self, mb: &Multibody, q: &DVector<f64>) -> DMatrix<f64> {
        let ks = mb.evaluate(q, &DVector::zeros(q.len()));
        self.jacobian_at(mb, &ks)
    }

    /// −J̇q̇: minus the relative acceleration of the constraint points when q̈ = 0.
    pub(crate) fn velocity_product_at(
        &self,
        mb: &Multibody,
        ks: &KinematicState,
        qdot: &DVector<f64>,
    ) -> DVector<f64> {
        let bias = mb.accelerations(ks, qdot, &DVector::zeros(qdot.len()));
        let mut out = DVector::zeros(self.rows());
        for (k, p) in self.points.points.iter().enumerate() {
            let d = bias.point(ks, self.original, p) - bias.point(ks, self.dummy, p);
            out.fixed_rows_mut::<3>(3 * k).copy_from(&(-d));
        }
        out
    }

    pub(crate) fn stabilized_at(
        &self,
        mb: &Multibody,
        ks: &KinematicState,
        params: &BaumgarteParams,
        qdot: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.jacobian_at(mb, ks);
        let mut b = self.velocity_product_at(mb, ks, qdot);
        if params.enabled {
            let c = self.residual_at(ks);
            let cdot = &a * qdot;
            b -= cdot * (2.0 * params.alpha) + c * (params.beta * params.beta);
        }
        (a, b)
    }
}

/// Acceleration-level constraint `A·q̈ = b` at (q, q̇).
pub fn stabilized_acceleration_rhs(
    cs: &ConstraintSystem,
    mb: &Multibody,
    params: &BaumgarteParams,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let ks = mb.evaluate(q, qdot);
    cs.stabilized_at(mb, &ks, params, qdot)
}

/// Baumgarte feedback `−2α·Ċ − β²·C` for given constraint value and rate.
pub fn baumgarte_feedback(params: &BaumgarteParams, c: &DVector<f64>, cdot: &DVector<f64>) -> DVector<f64> {
    if params.enabled {
        -(cdot * (2.0 * params.alpha) + c * (params.beta * params.beta))
    } else {
        DVector::zeros(c.len())
    }
}

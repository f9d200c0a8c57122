//! Equations of motion in joint coordinates and the two-phase simulation run.
//!
//! The mass matrix and right-hand side are assembled numerically from partial
//! velocities: for coordinate j and body B, the partial velocity of the centre
//! of mass is `s_j × (x_B − o_j)` and the partial angular velocity is `s_j`
//! whenever joint j lies on the path from the root to B. Projecting the
//! inertia and applied forces onto these gives `M(q)·q̈ = f(q, q̇)`.
//!
//! With a loop, `A·q̈ = b` from [`crate::constraints`] is imposed through the
//! range-space solution of the saddle-point system. Redundant constraint rows
//! are handled by a truncated pseudo-inverse in the mass-weighted metric.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constraints::{BaumgarteParams, ConstraintSystem};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicState, Multibody};
use crate::mechanism::MechanismSpec;

/// Largest accepted mass-matrix condition number.
pub const MAX_MASS_CONDITION: f64 = 1e12;
/// State entries beyond this magnitude are treated as a blow-up.
pub const BLOWUP_LIMIT: f64 = 1e6;
/// Relative singular-value cut-off for the constraint pseudo-inverse.
pub const CONSTRAINT_RANK_TOL: f64 = 1e-9;
/// Largest relative Tikhonov damping of the constraint solve while Baumgarte
/// stabilization is active. Keeps corrections bounded when the burn-in
/// starts near a singular (flat) configuration.
pub const BURN_IN_REGULARIZATION: f64 = 1e-3;
/// Closure error, as a fraction of the constraint triangle size, at which the
/// burn-in damping reaches its maximum.
pub const REGULARIZATION_ONSET: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl DynamicState {
    pub fn at_rest(t: f64, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            t,
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// Which external torques act on the joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forcing {
    /// No external torques.
    Unforced,
    /// The schedule value just before t = 0, held constant.
    Hold,
    /// The schedule evaluated at the state time.
    Scheduled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Production time step (s).
    pub dt: f64,
    pub burn_in_steps: usize,
    /// Burn-in time step (s); `None` uses `dt`.
    pub burn_in_dt: Option<f64>,
    /// Production duration (s).
    pub production_duration: f64,
    pub baumgarte: BaumgarteParams,
    /// Largest acceptable constraint error after burn-in (m).
    pub constraint_tolerance: f64,
    pub hold_torques_during_burn_in: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            burn_in_steps: 300,
            burn_in_dt: Some(5e-3),
            production_duration: 5.0,
            baumgarte: BaumgarteParams::default(),
            constraint_tolerance: 1e-6,
            hold_torques_during_burn_in: true,
        }
    }
}

impl SimulationConfig {
    pub fn burn_in_step(&self) -> f64 {
        self.burn_in_dt.unwrap_or(self.dt)
    }

    pub fn production_steps(&self) -> usize {
        (self.production_duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Value(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.burn_in_step().is_finite() && self.burn_in_step() > 0.0) {
            return Err(Error::Value("burn-in dt must be positive".into()));
        }
        if !(self.production_duration.is_finite() && self.production_duration >= 0.0) {
            return Err(Error::Value("production duration must be non-negative".into()));
        }
        if !(self.constraint_tolerance.is_finite() && self.constraint_tolerance > 0.0) {
            return Err(Error::Value("constraint tolerance must be positive".into()));
        }
        self.baumgarte.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: DynamicState,
    /// Euclidean norm of the stacked loop residual (m); zero without a loop.
    pub constraint_error: f64,
    pub kinetic: f64,
    pub potential: f64,
}

impl Sample {
    pub fn total_energy(&self) -> f64 {
        self.kinetic + self.potential
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// Joint ids in coordinate order.
    pub joint_ids: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.t).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub burn_in: Trajectory,
    pub production: Trajectory,
}

/// Assembled equations of motion at one state.
#[derive(Debug, Clone)]
pub struct Eom {
    pub mass: DMatrix<f64>,
    /// Applied generalized forces minus velocity-product inertia terms.
    pub rhs: DVector<f64>,
    pub qddot: DVector<f64>,
    /// Minimum-norm constraint multipliers, when a loop is present.
    pub lambda: Option<DVector<f64>>,
}

fn external_torque(mb: &Multibody, c: usize, t: f64, forcing: Forcing) -> f64 {
    let joint = &mb.spec.joints[c];
    match forcing {
        Forcing::Unforced => 0.0,
        Forcing::Hold => joint.hold_torque(),
        Forcing::Scheduled => joint.external_torque_at(t),
    }
}

/// Joint spring, damper and external torques only.
pub fn joint_torques(mb: &Multibody, state: &DynamicState, forcing: Forcing) -> DVector<f64> {
    DVector::from_iterator(
        mb.n_coordinates(),
        mb.joints.iter().enumerate().map(|(c, j)| {
            -j.stiffness * (state.q[c] - j.rest_angle) - j.damping * state.qdot[c]
                + external_torque(mb, c, state.t, forcing)
        }),
    )
}

fn gravity_forces(mb: &Multibody, ks: &KinematicState) -> DVector<f64> {
    let mut f = DVector::zeros(mb.n_coordinates());
    for body in 0..mb.n_bodies() {
        let Some(mp) = mb.mass_properties(body) else {
            continue;
        };
        let com = ks.point(body, &mp.com);
        let weight = mb.gravity * mp.mass;
        for &c in mb.path(body) {
            f[c] += ks.axes[c].cross(&(com - ks.anchors[c])).dot(&weight);
        }
    }
    f
}

/// Generalized forces: joint torques plus gravity projected on the partial
/// velocities of every centre of mass.
pub fn generalized_forces(mb: &Multibody, state: &DynamicState, forcing: Forcing) -> DVector<f64> {
    let ks = mb.evaluate(&state.q, &state.qdot);
    joint_torques(mb, state, forcing) + gravity_forces(mb, &ks)
}

/// Mass matrix and right-hand side `f` such that `M·q̈ = f` for the tree.
pub fn mass_matrix_and_rhs(
    mb: &Multibody,
    ks: &KinematicState,
    state: &DynamicState,
    forcing: Forcing,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = mb.n_coordinates();
    let mut mass = DMatrix::zeros(n, n);
    let mut rhs = joint_torques(mb, state, forcing) + gravity_forces(mb, ks);
    let bias = mb.accelerations(ks, &state.qdot, &DVector::zeros(n));

    for body in 0..mb.n_bodies() {
        let Some(mp) = mb.mass_properties(body) else {
            continue;
        };
        let rot = ks.placements[body].rotation;
        let com = ks.point(body, &mp.com);
        let inertia = rot * mp.inertia * rot.transpose();
        let w = ks.omega[body];
        let a_com = bias.point(ks, body, &mp.com);
        let inertial_force = a_com * mp.mass;
        let inertial_torque = inertia * bias.alpha[body] + w.cross(&(inertia * w));

        let path = mb.path(body);
        let partials: Vec<_> = path
            .iter()
            .map(|&c| (c, ks.axes[c].cross(&(com - ks.anchors[c])), ks.axes[c]))
            .collect();
        for &(j, vj, sj) in &partials {
            rhs[j] -= vj.dot(&inertial_force) + sj.dot(&inertial_torque);
            let isj = inertia * sj;
            for &(k, vk, sk) in &partials {
                mass[(j, k)] += mp.mass * vj.dot(&vk) + sk.dot(&isj);
            }
        }
    }
    (mass, rhs)
}

fn check_mass_matrix(mass: &DMatrix<f64>) -> Result<()> {
    if mass.nrows() == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(mass.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_MASS_CONDITION) {
        return Err(Error::SingularMass { condition });
    }
    Ok(())
}

/// How many directions of the mass-weighted constraint matrix are enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintRank {
    /// Singular values above this fraction of the largest one.
    Tolerance(f64),
    /// Exactly this many leading singular directions.
    Fixed(usize),
}

impl Default for ConstraintRank {
    fn default() -> Self {
        ConstraintRank::Tolerance(CONSTRAINT_RANK_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub rank: ConstraintRank,
    /// Tikhonov damping relative to the largest singular value; zero gives
    /// the exact minimum-norm solution.
    pub regularization: f64,
}

struct ConstraintFactor {
    chol_l: DMatrix<f64>,
    free: DVector<f64>,
    bmat: DMatrix<f64>,
}

fn factor(
    mass: &DMatrix<f64>,
    rhs: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<ConstraintFactor> {
    let chol = mass
        .clone()
        .cholesky()
        .ok_or(Error::SingularMass { condition: f64::INFINITY })?;
    let free = chol.solve(rhs);
    let chol_l = chol.l();
    // B = A·L⁻ᵀ, so that A·q̈ = b reads B·y = b with y = Lᵀ·q̈
    let bt = chol_l
        .solve_lower_triangular(&a.transpose())
        .expect("Cholesky factor is invertible");
    Ok(ConstraintFactor {
        chol_l,
        free,
        bmat: bt.transpose(),
    })
}

/// Singular values sorted in decreasing order, with their original indices.
fn sorted_singular(values: &DVector<f64>) -> Vec<(usize, f64)> {
    let mut idx: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1));
    idx
}

/// Numerical rank of a spectrum: the position of the largest ratio between
/// consecutive singular values, when that ratio exceeds `1e3`; otherwise the
/// count of values above `1e-12` of the largest.
pub fn gap_rank(singular_values: &[f64]) -> usize {
    let mut s: Vec<f64> = singular_values.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let Some(&smax) = s.first() else {
        return 0;
    };
    if !(smax > 0.0) {
        return 0;
    }
    let nonzero = s.iter().take_while(|&&v| v > 1e-12 * smax).count();
    let mut best = (1.0, nonzero);
    for i in 0..nonzero.saturating_sub(1) {
        let ratio = s[i] / s[i + 1];
        if ratio > best.0 {
            best = (ratio, i + 1);
        }
    }
    if best.0 >= 1e3 {
        best.1
    } else {
        nonzero
    }
}

/// Solve `M·q̈ = f + Aᵀλ`, `A·q̈ = b` with a least-squares treatment of
/// redundant rows of `A`.
pub fn solve_constrained(
    mass: &DMatrix<f64>,
    rhs: &DVector<f64>,
    constraint: Option<(&DMatrix<f64>, &DVector<f64>)>,
    options: &SolveOptions,
) -> Result<(DVector<f64>, Option<DVector<f64>>)> {
    check_mass_matrix(mass)?;
    let n = mass.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), None));
    }
    let Some((a, b)) = constraint else {
        let chol = mass
            .clone()
            .cholesky()
            .ok_or(Error::SingularMass { condition: f64::INFINITY })?;
        return Ok((chol.solve(rhs), None));
    };
    let ConstraintFactor { chol_l, free, bmat } = factor(mass, rhs, a)?;
    let y_free = chol_l.transpose() * &free;
    let residual = b - &bmat * &y_free;

    let svd = bmat.svd(true, true);
    let u = svd.u.as_ref().expect("U computed");
    let v_t = svd.v_t.as_ref().expect("Vᵀ computed");
    let order = sorted_singular(&svd.singular_values);
    let smax = order.first().map_or(0.0, |o| o.1);
    let keep = match options.rank {
        ConstraintRank::Tolerance(tol) => order
            .iter()
            .take_while(|o| o.1 > smax * tol && o.1 > 0.0)
            .count(),
        ConstraintRank::Fixed(r) => r.min(order.iter().filter(|o| o.1 > 0.0).count()),
    };
    let mu2 = (smax * options.regularization).powi(2);
    let ut_r = u.transpose() * &residual;
    let k = svd.singular_values.len();
    let mut dy_coeff = DVector::zeros(k);
    let mut lam_coeff = DVector::zeros(k);
    for &(i, s) in &order[..keep] {
        dy_coeff[i] = ut_r[i] * s / (s * s + mu2);
        lam_coeff[i] = ut_r[i] / (s * s + mu2);
    }
    let dy = v_t.transpose() * dy_coeff;
    let lambda = u * lam_coeff;
    let correction = chol_l
        .transpose()
        .solve_upper_triangular(&dy)
        .expect("Cholesky factor is invertible");
    Ok((free + correction, Some(lambda)))
}

/// Rank of the mass-weighted loop constraint matrix at `q`, by [`gap_rank`].
pub fn constraint_rank(mb: &Multibody, cs: &ConstraintSystem, q: &DVector<f64>) -> Result<usize> {
    let qdot = DVector::zeros(q.len());
    let ks = mb.evaluate(q, &qdot);
    let state = DynamicState::at_rest(0.0, q.clone());
    let (mass, rhs) = mass_matrix_and_rhs(mb, &ks, &state, Forcing::Unforced);
    check_mass_matrix(&mass)?;
    let a = cs.jacobian_at(mb, &ks);
    let f = factor(&mass, &rhs, &a)?;
    let sv = f.bmat.singular_values();
    Ok(gap_rank(sv.as_slice()))
}

/// Damping applied while Baumgarte stabilization is active. It scales with
/// the closure error relative to the size of the constraint triangle, so it
/// vanishes as the loop closes.
fn burn_in_regularization(cs: &ConstraintSystem, ks: &KinematicState) -> f64 {
    let p = &cs.points.points;
    let size = [(0, 1), (1, 2), (0, 2)]
        .iter()
        .map(|&(i, j)| (p[i] - p[j]).norm())
        .fold(0.0, f64::max);
    let rel = cs.residual_at(ks).norm() / (REGULARIZATION_ONSET * size);
    BURN_IN_REGULARIZATION * rel.min(1.0)
}

/// Assemble and solve the equations of motion at `state`.
pub fn assemble_eom(
    mb: &Multibody,
    constraints: Option<&ConstraintSystem>,
    params: &BaumgarteParams,
    state: &DynamicState,
    forcing: Forcing,
) -> Result<Eom> {
    assemble_eom_with(mb, constraints, params, state, forcing, ConstraintRank::default())
}

/// As [`assemble_eom`], with an explicit rule for the constraint rank.
pub fn assemble_eom_with(
    mb: &Multibody,
    constraints: Option<&ConstraintSystem>,
    params: &BaumgarteParams,
    state: &DynamicState,
    forcing: Forcing,
    rank: ConstraintRank,
) -> Result<Eom> {
    let ks = mb.evaluate(&state.q, &state.qdot);
    let (mass, rhs) = mass_matrix_and_rhs(mb, &ks, state, forcing);
    let ab = constraints.map(|cs| cs.stabilized_at(mb, &ks, params, &state.qdot));
    let regularization = match constraints {
        Some(cs) if params.enabled => burn_in_regularization(cs, &ks),
        _ => 0.0,
    };
    let options = SolveOptions {
        rank,
        regularization,
    };
    let (qddot, lambda) =
        solve_constrained(&mass, &rhs, ab.as_ref().map(|(a, b)| (a, b)), &options)?;
    Ok(Eom {
        mass,
        rhs,
        qddot,
        lambda,
    })
}

/// Kinetic and potential energy (gravity relative to the flat state's origin
/// plus hinge springs).
pub fn energies(mb: &Multibody, state: &DynamicState) -> (f64, f64) {
    let ks = mb.evaluate(&state.q, &state.qdot);
    energies_at(mb, &ks, state)
}

fn energies_at(mb: &Multibody, ks: &KinematicState, state: &DynamicState) -> (f64, f64) {
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for body in 0..mb.n_bodies() {
        let Some(mp) = mb.mass_properties(body) else {
            continue;
        };
        let rot = ks.placements[body].rotation;
        let w = ks.omega[body];
        let v = ks.point_velocity(body, &mp.com);
        let inertia = rot * mp.inertia * rot.transpose();
        kinetic += 0.5 * (mp.mass * v.norm_squared() + w.dot(&(inertia * w)));
        potential -= mp.mass * mb.gravity.dot(&ks.point(body, &mp.com));
    }
    for (c, j) in mb.joints.iter().enumerate() {
        let dq = state.q[c] - j.rest_angle;
        potential += 0.5 * j.stiffness * dq * dq;
    }
    (kinetic, potential)
}

/// One integrator: evaluates q̈ and advances states with fixed-step RK4.
pub struct Integrator<'a> {
    pub mb: &'a Multibody,
    pub constraints: Option<&'a ConstraintSystem>,
    pub params: BaumgarteParams,
    pub forcing: Forcing,
    pub rank: ConstraintRank,
}

impl<'a> Integrator<'a> {
    pub fn new(mb: &'a Multibody, constraints: Option<&'a ConstraintSystem>) -> Self {
        Self {
            mb,
            constraints,
            params: BaumgarteParams::default(),
            forcing: Forcing::Scheduled,
            rank: ConstraintRank::default(),
        }
    }

    pub fn with_rank(mut self, rank: ConstraintRank) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_params(mut self, params: BaumgarteParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn acceleration(&self, state: &DynamicState) -> Result<DVector<f64>> {
        Ok(assemble_eom_with(
            self.mb,
            self.constraints,
            &self.params,
            state,
            self.forcing,
            self.rank,
        )?
        .qddot)
    }

    /// One RK4 step of size `dt`; the new time is `t_next`.
    pub fn step_to(&self, state: &DynamicState, dt: f64, t_next: f64) -> Result<DynamicState> {
        let at = |t: f64, q: DVector<f64>, qdot: DVector<f64>| DynamicState { t, q, qdot };
        let h = 0.5 * dt;
        let t = state.t;

        let k1v = state.qdot.clone();
        let k1a = self.acceleration(state)?;
        let s2 = at(t + h, &state.q + &k1v * h, &state.qdot + &k1a * h);
        let k2v = s2.qdot.clone();
        let k2a = self.acceleration(&s2)?;
        let s3 = at(t + h, &state.q + &k2v * h, &state.qdot + &k2a * h);
        let k3v = s3.qdot.clone();
        let k3a = self.acceleration(&s3)?;
        let s4 = at(t + dt, &state.q + &k3v * dt, &state.qdot + &k3a * dt);
        let k4v = s4.qdot.clone();
        let k4a = self.acceleration(&s4)?;

        let sixth = dt / 6.0;
        let q = &state.q + (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * sixth;
        let qdot = &state.qdot + (k1a + &k2a * 2.0 + &k3a * 2.0 + k4a) * sixth;
        let next = at(t_next, q, qdot);
        check_blowup(&next)?;
        Ok(next)
    }

    pub fn step(&self, state: &DynamicState, dt: f64) -> Result<DynamicState> {
        self.step_to(state, dt, state.t + dt)
    }

    pub fn sample(&self, state: DynamicState) -> Sample {
        let ks = self.mb.evaluate(&state.q, &state.qdot);
        let constraint_error = self
            .constraints
            .map_or(0.0, |cs| cs.residual_at(&ks).norm());
        let (kinetic, potential) = energies_at(self.mb, &ks, &state);
        Sample {
            state,
            constraint_error,
            kinetic,
            potential,
        }
    }
}

fn check_blowup(state: &DynamicState) -> Result<()> {
    let bad = state
        .q
        .iter()
        .chain(state.qdot.iter())
        .find(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT);
    match bad {
        Some(v) => Err(Error::NumericalBlowup {
            t: state.t,
            detail: format!("state entry {v:e} is non-finite or exceeds {BLOWUP_LIMIT:e}"),
        }),
        None => Ok(()),
    }
}

/// One fixed-step RK4 step under the production forcing and Baumgarte settings.
pub fn step(
    mb: &Multibody,
    constraints: Option<&ConstraintSystem>,
    config: &SimulationConfig,
    state: &DynamicState,
) -> Result<DynamicState> {
    Integrator::new(mb, constraints)
        .with_params(config.baumgarte)
        .step(state, config.dt)
}

/// Integrate `steps` RK4 steps with times `t0 + k·dt`, recording every state.
pub fn integrate(
    integrator: &Integrator<'_>,
    initial: DynamicState,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    let t0 = initial.t;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut state = initial;
    samples.push(integrator.sample(state.clone()));
    for k in 1..=steps {
        state = integrator.step_to(&state, dt, t0 + k as f64 * dt)?;
        samples.push(integrator.sample(state.clone()));
    }
    Ok(Trajectory {
        joint_ids: integrator
            .mb
            .tree
            .joint_ids()
            .into_iter()
            .map(String::from)
            .collect(),
        samples,
    })
}

/// Two-phase run: a Baumgarte-stabilized burn-in from the rough initial
/// guess, then production from the burn-in's terminal angles at rest with
/// acceleration-level constraint enforcement only.
pub fn simulate(mech: &MechanismSpec, config: &SimulationConfig) -> Result<SimulationResult> {
    let mb = Multibody::new(mech)?;
    simulate_multibody(&mb, config)
}

pub fn simulate_multibody(mb: &Multibody, config: &SimulationConfig) -> Result<SimulationResult> {
    config.validate()?;
    let constraints = ConstraintSystem::for_multibody(mb);
    let guess = mb.initial_guess();

    let burn_in = match &constraints {
        Some(cs) => {
            let forcing = if config.hold_torques_during_burn_in {
                Forcing::Hold
            } else {
                Forcing::Unforced
            };
            let integrator = Integrator::new(mb, Some(cs))
                .with_params(BaumgarteParams {
                    enabled: true,
                    ..config.baumgarte
                })
                .with_forcing(forcing);
            let dt = config.burn_in_step();
            let n = config.burn_in_steps;
            let start = DynamicState::at_rest(-(n as f64) * dt, guess.clone());
            let traj = integrate(&integrator, start, dt, n)?;
            let err = traj.last().expect("non-empty").constraint_error;
            if !(err < config.constraint_tolerance) {
                return Err(Error::BurnInFailed {
                    error: err,
                    tolerance: config.constraint_tolerance,
                    steps: n,
                });
            }
            traj
        }
        None => {
            let integrator = Integrator::new(mb, None);
            Trajectory {
                joint_ids: mb.tree.joint_ids().into_iter().map(String::from).collect(),
                samples: vec![integrator.sample(DynamicState::at_rest(0.0, guess.clone()))],
            }
        }
    };

    let q0 = burn_in.last().expect("non-empty").state.q.clone();
    // the closure error left by burn-in makes the mobility directions look
    // like weak constraints; fixing the rank here keeps them free
    let rank = match &constraints {
        Some(cs) => ConstraintRank::Fixed(constraint_rank(mb, cs, &q0)?),
        None => ConstraintRank::default(),
    };
    let integrator = Integrator::new(mb, constraints.as_ref())
        .with_params(config.baumgarte.disabled())
        .with_forcing(Forcing::Scheduled)
        .with_rank(rank);
    let production = integrate(
        &integrator,
        DynamicState::at_rest(0.0, q0),
        config.dt,
        config.production_steps(),
    )?;
    Ok(SimulationResult {
        burn_in,
        production,
    })
}

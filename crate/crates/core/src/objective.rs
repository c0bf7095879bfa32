//! Discrete misfit functional, its linearization, and their gradients, written once
//! against [`DiscreteModel`] and shared by the full-order and reduced models.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{col, dot};
use crate::model::{
    AffineOperatorFamily, LoadTrajectory, ObservationOperator, ParameterBounds, ParameterVector,
};
use crate::timestep::{
    self, build_stepping, Measurements, SolveCounters, SteppingOperator, TimeGrid, Trajectory,
};

/// Common interface of the full-order and reduced discretizations.
pub trait DiscreteModel {
    /// Factorized stepping data for one parameter.
    type Stepper;

    fn n_params(&self) -> usize;
    fn n_state(&self) -> usize;
    fn time(&self) -> TimeGrid;
    fn zeta(&self) -> f64;
    /// `q_circ`, the Tikhonov center.
    fn regularization_center(&self) -> &ParameterVector;
    fn is_admissible(&self, q: &ParameterVector) -> bool;
    /// Projection of `x` onto the admissible set; `anchor` is a known admissible point.
    fn project_admissible(&self, anchor: &ParameterVector, x: &ParameterVector) -> ParameterVector;

    fn stepping(&self, q: &ParameterVector) -> Result<Self::Stepper>;
    fn primal(&self, st: &Self::Stepper) -> Result<Trajectory>;
    fn adjoint(&self, st: &Self::Stepper, state: &Trajectory) -> Result<Trajectory>;
    fn linearized_primal(&self, st: &Self::Stepper, d: &ParameterVector, state: &Trajectory) -> Result<Trajectory>;
    fn linearized_adjoint(&self, st: &Self::Stepper, state: &Trajectory, lin: &Trajectory) -> Result<Trajectory>;

    /// `dt/2 sum_{k>=1} ||C u^k - y^k||^2`, evaluated for `u = state (+ lin)`.
    fn misfit(&self, state: &Trajectory, lin: Option<&Trajectory>) -> f64;
    /// `dt sum_{k>=1} B(zeta u^k + (1-zeta) u^{k-1})^T P^{k-1}`.
    fn adjoint_gradient(&self, st: &Self::Stepper, state: &Trajectory, adjoint: &Trajectory) -> ParameterVector;
}

/// A parameter with its factorized stepping operator, state and misfit value.
pub struct LinearizationPoint<M: DiscreteModel + ?Sized> {
    pub q: ParameterVector,
    pub stepper: M::Stepper,
    pub state: Trajectory,
    pub objective: f64,
}

/// `J(q)` and the state trajectory.
pub fn eval_objective<M: DiscreteModel + ?Sized>(model: &M, q: &ParameterVector) -> Result<LinearizationPoint<M>> {
    check_len("parameter", q.len(), model.n_params())?;
    let stepper = model.stepping(q)?;
    let state = model.primal(&stepper)?;
    let objective = model.misfit(&state, None);
    Ok(LinearizationPoint { q: q.clone(), stepper, state, objective })
}

/// `grad J(q)` via one adjoint solve; also returns the adjoint trajectory.
pub fn eval_gradient<M: DiscreteModel + ?Sized>(
    model: &M,
    point: &LinearizationPoint<M>,
) -> Result<(ParameterVector, Trajectory)> {
    let adjoint = model.adjoint(&point.stepper, &point.state)?;
    let g = model.adjoint_gradient(&point.stepper, &point.state, &adjoint);
    Ok((g, adjoint))
}

/// `J~(d; q, alpha) = 1/2 ||C (u + u~(d)) - y||^2 + alpha/2 ||q + d - q_circ||^2`.
pub fn eval_linearized_objective<M: DiscreteModel + ?Sized>(
    model: &M,
    point: &LinearizationPoint<M>,
    d: &ParameterVector,
    alpha: f64,
) -> Result<(f64, Trajectory)> {
    check_len("direction", d.len(), model.n_params())?;
    let lin = model.linearized_primal(&point.stepper, d, &point.state)?;
    let value = model.misfit(&point.state, Some(&lin)) + 0.5 * alpha * tikhonov_sq(model, point, d);
    Ok((value, lin))
}

/// `grad_d J~` at `d` given the linearized state `u~(d)`.
pub fn eval_linearized_gradient<M: DiscreteModel + ?Sized>(
    model: &M,
    point: &LinearizationPoint<M>,
    d: &ParameterVector,
    alpha: f64,
    lin: &Trajectory,
) -> Result<ParameterVector> {
    let p = model.linearized_adjoint(&point.stepper, &point.state, lin)?;
    let mut g = model.adjoint_gradient(&point.stepper, &point.state, &p);
    if alpha != 0.0 {
        let c = model.regularization_center();
        for i in 0..g.len() {
            g[i] += alpha * (point.q[i] + d[i] - c[i]);
        }
    }
    Ok(g)
}

fn tikhonov_sq<M: DiscreteModel + ?Sized>(model: &M, point: &LinearizationPoint<M>, d: &ParameterVector) -> f64 {
    let c = model.regularization_center();
    (0..d.len()).map(|i| (point.q[i] + d[i] - c[i]).powi(2)).sum()
}

/// Split-form misfit `c1 + dt sum_k (1/2 u^T C_h u - u^T Cy^k)`, shared by both models.
pub(crate) fn split_misfit(
    dt: f64,
    c1: f64,
    cy: &DMatrix<f64>,
    steps: usize,
    mut quad: impl FnMut(&[f64]) -> f64,
    u_at: impl Fn(usize) -> Vec<f64>,
) -> f64 {
    let mut s = 0.0;
    for k in 1..=steps {
        let u = u_at(k);
        s += 0.5 * quad(&u) - dot(&u, col(cy, k));
    }
    c1 + dt * s
}

/// Full-order finite-element model.
#[derive(Debug, Clone)]
pub struct FomModel {
    family: Arc<AffineOperatorFamily>,
    observation: Arc<ObservationOperator>,
    load: LoadTrajectory,
    u0: Vec<f64>,
    v0: Vec<f64>,
    time: TimeGrid,
    zeta: f64,
    data: Measurements,
    bounds: ParameterBounds,
    center: ParameterVector,
    counters: Arc<SolveCounters>,
}

impl FomModel {
    pub fn new(
        family: Arc<AffineOperatorFamily>,
        observation: Arc<ObservationOperator>,
        load: LoadTrajectory,
        time: TimeGrid,
        zeta: f64,
    ) -> Result<Self> {
        let n = family.n_dofs();
        check_len("load", load.spatial().len(), n)?;
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::Config(format!("zeta must lie in (0, 1], got {zeta}")));
        }
        let data = Measurements::zero(&observation, &time);
        let center = ParameterVector::repeat(family.n_params(), 1.0);
        Ok(Self {
            u0: vec![0.0; n],
            v0: vec![0.0; n],
            family,
            observation,
            load,
            time,
            zeta,
            data,
            bounds: ParameterBounds::default(),
            center,
            counters: Arc::new(SolveCounters::default()),
        })
    }

    pub fn with_data(mut self, y: DMatrix<f64>) -> Result<Self> {
        self.data = Measurements::new(&self.observation, y, &self.time)?;
        Ok(self)
    }

    pub fn with_initial_data(mut self, u0: Vec<f64>, v0: Vec<f64>) -> Result<Self> {
        check_len("initial displacement", u0.len(), self.family.n_dofs())?;
        check_len("initial velocity", v0.len(), self.family.n_dofs())?;
        self.u0 = u0;
        self.v0 = v0;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: ParameterBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_center(mut self, center: ParameterVector) -> Result<Self> {
        check_len("regularization center", center.len(), self.family.n_params())?;
        self.center = center;
        Ok(self)
    }

    /// Fresh solve counters (the model is otherwise shared state-free).
    pub fn with_fresh_counters(mut self) -> Self {
        self.counters = Arc::new(SolveCounters::default());
        self
    }

    pub fn family(&self) -> &Arc<AffineOperatorFamily> {
        &self.family
    }
    pub fn observation(&self) -> &Arc<ObservationOperator> {
        &self.observation
    }
    pub fn load(&self) -> &LoadTrajectory {
        &self.load
    }
    pub fn initial_displacement(&self) -> &[f64] {
        &self.u0
    }
    pub fn initial_velocity(&self) -> &[f64] {
        &self.v0
    }
    pub fn data(&self) -> &Measurements {
        &self.data
    }
    pub fn bounds(&self) -> &ParameterBounds {
        &self.bounds
    }
    pub fn counters(&self) -> &SolveCounters {
        &self.counters
    }

    /// Observations `C u^k` of a trajectory, one column per time point.
    pub fn observe(&self, traj: &Trajectory) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.observation.n_obs(), traj.steps() + 1);
        for k in 0..=traj.steps() {
            let c = self.observation.apply(traj.u(k));
            y.column_mut(k).copy_from_slice(&c);
        }
        y
    }
}

impl DiscreteModel for FomModel {
    type Stepper = SteppingOperator;

    fn n_params(&self) -> usize {
        self.family.n_params()
    }
    fn n_state(&self) -> usize {
        self.family.n_dofs()
    }
    fn time(&self) -> TimeGrid {
        self.time
    }
    fn zeta(&self) -> f64 {
        self.zeta
    }
    fn regularization_center(&self) -> &ParameterVector {
        &self.center
    }
    fn is_admissible(&self, q: &ParameterVector) -> bool {
        self.bounds.contains(q)
    }
    fn project_admissible(&self, _anchor: &ParameterVector, x: &ParameterVector) -> ParameterVector {
        self.bounds.project(x)
    }

    fn stepping(&self, q: &ParameterVector) -> Result<SteppingOperator> {
        let st = build_stepping(&self.family, q, self.zeta, &self.time)?;
        self.counters.add_factorization();
        Ok(st)
    }
    fn primal(&self, st: &SteppingOperator) -> Result<Trajectory> {
        self.counters.add_solve();
        timestep::solve_primal(st, &self.load, &self.u0, &self.v0, &self.time)
    }
    fn adjoint(&self, st: &SteppingOperator, state: &Trajectory) -> Result<Trajectory> {
        self.counters.add_solve();
        timestep::solve_adjoint(st, &self.observation, state, &self.data)
    }
    fn linearized_primal(&self, st: &SteppingOperator, d: &ParameterVector, state: &Trajectory) -> Result<Trajectory> {
        self.counters.add_solve();
        timestep::solve_linearized_primal(st, &self.family, d, state)
    }
    fn linearized_adjoint(&self, st: &SteppingOperator, state: &Trajectory, lin: &Trajectory) -> Result<Trajectory> {
        self.counters.add_solve();
        timestep::solve_linearized_adjoint(st, &self.observation, state, lin, &self.data)
    }

    fn misfit(&self, state: &Trajectory, lin: Option<&Trajectory>) -> f64 {
        let c_h = self.observation.c_h();
        split_misfit(
            self.time.dt(),
            self.data.c1(),
            self.data.cy(),
            state.steps(),
            |u| c_h.bilinear(u, u),
            |k| match lin {
                Some(l) => state.u(k).iter().zip(l.u(k)).map(|(a, b)| a + b).collect(),
                None => state.u(k).to_vec(),
            },
        )
    }

    fn adjoint_gradient(&self, _st: &SteppingOperator, state: &Trajectory, adjoint: &Trajectory) -> ParameterVector {
        let mut w = vec![0.0; self.family.a0().nnz()];
        for k in 1..=state.steps() {
            let b = state.blended(k, self.zeta);
            self.family.accumulate_entry_products(&b, adjoint.u(k - 1), &mut w);
        }
        self.family.contract_entries(&w) * self.time.dt()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{
        assemble_observation, assemble_operators, Excitation, Face, Grid, MaterialSpec, SensorLayout, SensorSpec,
        Side,
    };

    /// Small clamped 2D plate with point sensors and data from a perturbed parameter.
    pub(crate) fn small_fom(full_field: bool) -> (FomModel, ParameterVector) {
        let faces: Vec<Face> = (0..2)
            .flat_map(|axis| [Side::Min, Side::Max].map(|side| Face { axis, side }))
            .collect();
        let grid = Grid::new(&[(-3.0, 3.0), (-3.0, 3.0)], &[8, 8], &faces).unwrap();
        let material = MaterialSpec {
            lambda: 2.0,
            mu: 1.0,
            density: 1.0,
            stiffness_scale: 1.0,
            parameter_coarsening: vec![2, 2],
            free_layer: None,
            fixed_value: 1.0,
        };
        let family = Arc::new(assemble_operators(&grid, &material).unwrap());
        let layout = if full_field {
            SensorLayout::Full
        } else {
            SensorLayout::Grid { start: -2.25, stop: 2.25, step: 0.75 }
        };
        let obs = Arc::new(
            assemble_observation(&family, &SensorSpec { layout, component: 0, surface: None }).unwrap(),
        );
        let exc = Excitation {
            amplitude: 1.0,
            frequency: 0.25,
            delay: 1.5,
            width: 1.0,
            axes: vec![0, 1],
            center: vec![0.5, 0.0],
            radius: vec![1.5, 1.5],
            direction: vec![1.0, 0.3],
        };
        let load = LoadTrajectory::new(&family, &exc).unwrap();
        let time = TimeGrid::new(4.0, 16).unwrap();
        let fom = FomModel::new(family.clone(), obs, load, time, 0.5).unwrap();
        let q_true = ParameterVector::from_fn(family.n_params(), |i, _| 1.0 + 0.5 * ((i * 3) % 5) as f64 / 5.0);
        let st = fom.stepping(&q_true).unwrap();
        let y = fom.observe(&fom.primal(&st).unwrap());
        (fom.with_data(y).unwrap(), q_true)
    }

    fn direction(n: usize, seed: usize) -> ParameterVector {
        ParameterVector::from_fn(n, |i, _| (((i + 7 * seed) * 2654435761usize) % 1000) as f64 / 1000.0 - 0.5)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for full in [false, true] {
            let (fom, _) = small_fom(full);
            let q = ParameterVector::repeat(fom.n_params(), 1.0) + direction(fom.n_params(), 1) * 0.2;
            let point = eval_objective(&fom, &q).unwrap();
            let (g, _) = eval_gradient(&fom, &point).unwrap();
            let e = direction(fom.n_params(), 2);
            let h = 1e-4;
            let jp = eval_objective(&fom, &(&q + &e * h)).unwrap().objective;
            let jm = eval_objective(&fom, &(&q - &e * h)).unwrap().objective;
            let fd = (jp - jm) / (2.0 * h);
            let an = g.dot(&e);
            assert!((fd - an).abs() <= 1e-6 * an.abs(), "full={full} fd={fd} an={an}");
        }
    }

    #[test]
    fn linearized_objective_is_quadratic_and_gradient_is_consistent() {
        let (fom, _) = small_fom(false);
        let q = ParameterVector::repeat(fom.n_params(), 1.0);
        let point = eval_objective(&fom, &q).unwrap();
        let alpha = 0.3;
        let (j0, _) = eval_linearized_objective(&fom, &point, &ParameterVector::zeros(fom.n_params()), 0.0).unwrap();
        assert!((j0 - point.objective).abs() <= 1e-12 * point.objective);
        let d = direction(fom.n_params(), 3) * 0.1;
        let e = direction(fom.n_params(), 4);
        let (_, lin) = eval_linearized_objective(&fom, &point, &d, alpha).unwrap();
        let g = eval_linearized_gradient(&fom, &point, &d, alpha, &lin).unwrap();
        let h = 1e-3;
        let jp = eval_linearized_objective(&fom, &point, &(&d + &e * h), alpha).unwrap().0;
        let jm = eval_linearized_objective(&fom, &point, &(&d - &e * h), alpha).unwrap().0;
        let fd = (jp - jm) / (2.0 * h);
        assert!((fd - g.dot(&e)).abs() <= 1e-9 * fd.abs());
        // Linearized state is the directional derivative of the state.
        let eps = 1e-6;
        let sp = eval_objective(&fom, &(&q + &d * eps)).unwrap().state;
        let sm = eval_objective(&fom, &(&q - &d * eps)).unwrap().state;
        let fd_state = (&sp.displacement - &sm.displacement) / (2.0 * eps);
        let (_, lin_d) = eval_linearized_objective(&fom, &point, &d, 0.0).unwrap();
        let err = (&fd_state - &lin_d.displacement).amax();
        assert!(err <= 1e-6 * lin_d.displacement.amax());
    }
}

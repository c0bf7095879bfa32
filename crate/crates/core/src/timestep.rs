//! Zeta-scheme time stepping for the primal, adjoint and linearized systems.
//!
//! The scheme couples `(u^k - u^{k-1})/dt = zeta v^k + (1-zeta) v^{k-1}` with
//! `M (v^k - v^{k-1})/dt + A (zeta u^k + (1-zeta) u^{k-1}) = R^k`. Each step solves
//! `(M + zeta^2 dt^2 A) w = M (u^{k-1} + zeta dt v^{k-1}) + zeta^2 dt^2 R^k` for the
//! blended displacement `w` and recovers `u^k`, `v^k` from it.
//!
//! Adjoint trajectories are indexed like the primal ones: column `j` holds `P^j`,
//! `P^K = 0`, and the backward sweep is the forward scheme in reversed time.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{col, col_mut, BandCholesky, CsrMatrix};
use crate::model::{AffineOperatorFamily, LoadTrajectory, ObservationOperator, ParameterVector};

/// Uniform grid `t^k = k T / K`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 {
            return Err(Error::Config("time grid needs T > 0 and K >= 1".into()));
        }
        Ok(Self { t_end, steps })
    }
    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryRole {
    Primal,
    Adjoint,
    LinearizedPrimal,
    LinearizedAdjoint,
}

/// Displacement and velocity snapshots, one column per time point `0..=K`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub role: TrajectoryRole,
    pub displacement: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.displacement.ncols() - 1
    }
    pub fn dim(&self) -> usize {
        self.displacement.nrows()
    }
    pub fn u(&self, k: usize) -> &[f64] {
        col(&self.displacement, k)
    }
    pub fn v(&self, k: usize) -> &[f64] {
        col(&self.velocity, k)
    }
    /// `zeta u^k + (1 - zeta) u^{k-1}` for `k >= 1`.
    pub fn blended(&self, k: usize, zeta: f64) -> Vec<f64> {
        self.u(k).iter().zip(self.u(k - 1)).map(|(a, b)| zeta * a + (1.0 - zeta) * b).collect()
    }
    /// All blended displacements as columns `1..=K` (stored at `0..K`).
    pub fn blended_matrix(&self, zeta: f64) -> DMatrix<f64> {
        let k = self.steps();
        let u = &self.displacement;
        u.columns(1, k) * zeta + u.columns(0, k) * (1.0 - zeta)
    }
}

/// Mass product and shifted solve of one stepping system.
pub trait StepSystem {
    fn dim(&self) -> usize;
    /// `out = M x`
    fn mass_mul(&self, x: &[f64], out: &mut [f64]);
    /// `rhs <- (M + zeta^2 dt^2 A)^{-1} rhs`
    fn solve(&self, rhs: &mut [f64]);
}

/// Forward zeta-scheme sweep. `source(k, out)` writes `R^k` for `k = 1..=K`.
pub fn march<S: StepSystem + ?Sized>(
    sys: &S,
    zeta: f64,
    dt: f64,
    steps: usize,
    u0: &[f64],
    v0: &[f64],
    mut source: impl FnMut(usize, &mut [f64]),
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.dim();
    let mut u = DMatrix::zeros(n, steps + 1);
    let mut v = DMatrix::zeros(n, steps + 1);
    col_mut(&mut u, 0).copy_from_slice(u0);
    col_mut(&mut v, 0).copy_from_slice(v0);
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut w = vec![0.0; n];
    let c = zeta * zeta * dt * dt;
    for k in 1..=steps {
        r.iter_mut().for_each(|x| *x = 0.0);
        source(k, &mut r);
        {
            let up = col(&u, k - 1);
            let vp = col(&v, k - 1);
            for i in 0..n {
                tmp[i] = up[i] + zeta * dt * vp[i];
            }
        }
        sys.mass_mul(&tmp, &mut w);
        for i in 0..n {
            w[i] += c * r[i];
        }
        sys.solve(&mut w);
        let (uh, ut) = u.as_mut_slice().split_at_mut(k * n);
        let (vh, vt) = v.as_mut_slice().split_at_mut(k * n);
        let (pu, pv) = (&uh[(k - 1) * n..], &vh[(k - 1) * n..]);
        let (uk, vk) = (&mut ut[..n], &mut vt[..n]);
        for i in 0..n {
            uk[i] = (w[i] - (1.0 - zeta) * pu[i]) / zeta;
            vk[i] = ((uk[i] - pu[i]) / dt - (1.0 - zeta) * pv[i]) / zeta;
        }
    }
    (u, v)
}

/// Backward sweep from zero terminal data. `source(j1, out)` writes the right-hand
/// side attached to `P^{j1 - 1}`, `j1 = K..=1`. Returns columns in forward order.
pub fn march_backward<S: StepSystem + ?Sized>(
    sys: &S,
    zeta: f64,
    dt: f64,
    steps: usize,
    mut source: impl FnMut(usize, &mut [f64]),
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.dim();
    let zero = vec![0.0; n];
    let (p, pd) = march(sys, zeta, dt, steps, &zero, &zero, |s, out| source(steps + 1 - s, out));
    (reverse_columns(&p), reverse_columns(&pd))
}

pub fn reverse_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    DMatrix::from_fn(m.nrows(), k, |i, j| m[(i, k - 1 - j)])
}

/// Counts factorizations and full-order trajectory solves.
#[derive(Debug, Default)]
pub struct SolveCounters {
    factorizations: AtomicUsize,
    solves: AtomicUsize,
}

impl SolveCounters {
    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
    pub(crate) fn add_factorization(&self) {
        self.factorizations.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn add_solve(&self) {
        self.solves.fetch_add(1, Ordering::Relaxed);
    }
}

/// Factorized `S(q) = rho M_H + zeta^2 dt^2 A(q)` for one parameter, reused by all
/// four trajectory solves at that parameter.
#[derive(Debug, Clone)]
pub struct SteppingOperator {
    q: ParameterVector,
    a: CsrMatrix,
    mass: Vec<f64>,
    chol: BandCholesky,
    zeta: f64,
    dt: f64,
}

/// Builds and factors the stepping matrix.
pub fn build_stepping(
    family: &AffineOperatorFamily,
    q: &ParameterVector,
    zeta: f64,
    time: &TimeGrid,
) -> Result<SteppingOperator> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Config(format!("zeta must lie in (0, 1], got {zeta}")));
    }
    let dt = time.dt();
    let a = family.operator(q)?;
    let mass: Vec<f64> = family.mass_h().iter().map(|m| m * family.density()).collect();
    let chol = BandCholesky::factor_combination(&a, zeta * zeta * dt * dt, Some(&mass))?;
    Ok(SteppingOperator { q: q.clone(), a, mass, chol, zeta, dt })
}

impl SteppingOperator {
    pub fn q(&self) -> &ParameterVector {
        &self.q
    }
    pub fn operator(&self) -> &CsrMatrix {
        &self.a
    }
    /// Diagonal of `rho M_H`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn zeta(&self) -> f64 {
        self.zeta
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

impl StepSystem for SteppingOperator {
    fn dim(&self) -> usize {
        self.mass.len()
    }
    fn mass_mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = self.mass[i] * x[i];
        }
    }
    fn solve(&self, rhs: &mut [f64]) {
        self.chol.solve_in_place(rhs);
    }
}

/// Observed data `y^k` with the precomputed adjoint source terms `C^T M_C y^k`.
#[derive(Debug, Clone)]
pub struct Measurements {
    y: DMatrix<f64>,
    cy: DMatrix<f64>,
    /// `dt/2 sum_{k>=1} ||y^k||^2_{M_C}`
    c1: f64,
}

impl Measurements {
    pub fn new(obs: &ObservationOperator, y: DMatrix<f64>, time: &TimeGrid) -> Result<Self> {
        check_len("measurement rows", y.nrows(), obs.n_obs())?;
        check_len("measurement columns", y.ncols(), time.steps + 1)?;
        let mut cy = DMatrix::zeros(obs.c_t_mc().nrows(), y.ncols());
        let mut c1 = 0.0;
        for k in 0..y.ncols() {
            obs.c_t_mc().mul_vec(col(&y, k), col_mut(&mut cy, k));
            if k >= 1 {
                c1 += obs.norm_sq(col(&y, k));
            }
        }
        Ok(Self { y, cy, c1: 0.5 * time.dt() * c1 })
    }

    /// No data: the misfit reduces to `||C u||^2 / 2`.
    pub fn zero(obs: &ObservationOperator, time: &TimeGrid) -> Self {
        Self::new(obs, DMatrix::zeros(obs.n_obs(), time.steps + 1), time).expect("shapes match")
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn cy(&self) -> &DMatrix<f64> {
        &self.cy
    }
    pub fn c1(&self) -> f64 {
        self.c1
    }
}

/// `u^{k}` and `v^{k}` for the given load and initial data.
pub fn solve_primal(
    st: &SteppingOperator,
    load: &LoadTrajectory,
    u0: &[f64],
    v0: &[f64],
    time: &TimeGrid,
) -> Result<Trajectory> {
    let n = st.dim();
    check_len("initial displacement", u0.len(), n)?;
    check_len("initial velocity", v0.len(), n)?;
    check_len("load", load.spatial().len(), n)?;
    let z = st.zeta;
    let (u, v) = march(st, z, st.dt, time.steps, u0, v0, |k, out| {
        let f = z * load.temporal(time.time(k)) + (1.0 - z) * load.temporal(time.time(k - 1));
        for (o, s) in out.iter_mut().zip(load.spatial()) {
            *o = f * s;
        }
    });
    finish(TrajectoryRole::Primal, u, v)
}

/// Sweep with explicit blended sources: column `k - 1` of `sources` is `R^k`.
pub fn solve_with_sources(
    st: &SteppingOperator,
    u0: &[f64],
    v0: &[f64],
    sources: &DMatrix<f64>,
) -> Result<Trajectory> {
    check_len("source rows", sources.nrows(), st.dim())?;
    let (u, v) = march(st, st.zeta, st.dt, sources.ncols(), u0, v0, |k, out| {
        out.copy_from_slice(col(sources, k - 1))
    });
    finish(TrajectoryRole::Primal, u, v)
}

/// Discrete adjoint of the primal scheme for the misfit against `data`.
pub fn solve_adjoint(
    st: &SteppingOperator,
    obs: &ObservationOperator,
    state: &Trajectory,
    data: &Measurements,
) -> Result<Trajectory> {
    check_len("state", state.dim(), st.dim())?;
    let c_h = obs.c_h();
    let (p, pd) = march_backward(st, st.zeta, st.dt, state.steps(), |j1, out| {
        c_h.mul_vec(state.u(j1), out);
        for (o, c) in out.iter_mut().zip(col(data.cy(), j1)) {
            *o = c - *o;
        }
    });
    finish(TrajectoryRole::Adjoint, p, pd)
}

/// Sensitivity `u~` of the state in direction `d`, zero initial data.
pub fn solve_linearized_primal(
    st: &SteppingOperator,
    family: &AffineOperatorFamily,
    d: &ParameterVector,
    state: &Trajectory,
) -> Result<Trajectory> {
    let ad = family.direction_operator(d)?;
    let n = st.dim();
    let zero = vec![0.0; n];
    let z = st.zeta;
    let (u, v) = march(st, z, st.dt, state.steps(), &zero, &zero, |k, out| {
        let w = state.blended(k, z);
        ad.mul_vec(&w, out);
        out.iter_mut().for_each(|x| *x = -*x);
    });
    finish(TrajectoryRole::LinearizedPrimal, u, v)
}

/// Adjoint of the linearized misfit `||C (u + u~) - y||^2 / 2`.
pub fn solve_linearized_adjoint(
    st: &SteppingOperator,
    obs: &ObservationOperator,
    state: &Trajectory,
    lin_state: &Trajectory,
    data: &Measurements,
) -> Result<Trajectory> {
    check_len("linearized state", lin_state.dim(), st.dim())?;
    let c_h = obs.c_h();
    let n = st.dim();
    let mut s = vec![0.0; n];
    let (p, pd) = march_backward(st, st.zeta, st.dt, state.steps(), |j1, out| {
        for i in 0..n {
            s[i] = state.u(j1)[i] + lin_state.u(j1)[i];
        }
        c_h.mul_vec(&s, out);
        for (o, c) in out.iter_mut().zip(col(data.cy(), j1)) {
            *o = c - *o;
        }
    });
    finish(TrajectoryRole::LinearizedAdjoint, p, pd)
}

fn finish(role: TrajectoryRole, u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Trajectory> {
    if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Solver(format!("{role:?} trajectory contains non-finite values")));
    }
    Ok(Trajectory { role, displacement: u, velocity: v })
}

/// `1/2 v^T M v + 1/2 u^T A u` at step `k`.
pub fn energy(st: &SteppingOperator, traj: &Trajectory, k: usize) -> f64 {
    let v = traj.v(k);
    let kin: f64 = v.iter().zip(st.mass()).map(|(x, m)| m * x * x).sum();
    0.5 * kin + 0.5 * st.operator().bilinear(traj.u(k), traj.u(k))
}

/// `DVector` view of a trajectory column, for callers working with nalgebra.
pub fn column_vector(m: &DMatrix<f64>, k: usize) -> DVector<f64> {
    DVector::from_column_slice(col(m, k))
}

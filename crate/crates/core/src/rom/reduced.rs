use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut, Dyn};

use super::ReducedBasisPair;
use crate::error::{check_len, Error, Result};
use crate::linalg::{col, col_mut, tr_gemm, CsrMatrix};
use crate::model::{LoadTrajectory, ParameterBounds, ParameterVector};
use crate::objective::{split_misfit, DiscreteModel, FomModel};
use crate::timestep::{march, march_backward, StepSystem, TimeGrid, Trajectory, TrajectoryRole};

/// Galerkin projection of the full-order model onto a basis pair.
///
/// `A_r(q_r) = A_{r,0} + sum_j (q_r)_j A_{r,j}` with `A_{r,j} = Psi_V^T A(Psi_Q e_j) Psi_V - A_{r,0}`,
/// which is the projection of the parameter-linear part in direction `Psi_Q e_j`.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    basis: ReducedBasisPair,
    a0: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    mass: DMatrix<f64>,
    c_h: DMatrix<f64>,
    cy: DMatrix<f64>,
    c1: f64,
    load: Vec<f64>,
    load_time: LoadTrajectory,
    u0: Vec<f64>,
    v0: Vec<f64>,
    center: ParameterVector,
    bounds: ParameterBounds,
    time: TimeGrid,
    zeta: f64,
}

/// `Psi^T A Psi` for a sparse symmetric `A`.
fn galerkin(a: &CsrMatrix, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let y = sparse_times_dense(a, psi);
    let g = tr_gemm(psi, &y);
    (&g + g.transpose()) * 0.5
}

fn sparse_times_dense(a: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    for j in 0..x.ncols() {
        a.mul_vec(col(x, j), col_mut(&mut y, j));
    }
    y
}

/// Grows a projected symmetric operator `Psi_old^T A Psi_old` to the extended basis.
fn galerkin_extend(a: &CsrMatrix, old: &DMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let n_old = old.nrows();
    let n = psi.ncols();
    if n_old == n {
        return old.clone();
    }
    let fresh = psi.columns(n_old, n - n_old).into_owned();
    let y = sparse_times_dense(a, &fresh);
    let cross = tr_gemm(psi, &y);
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (n_old, n_old)).copy_from(old);
    for i in 0..n {
        for j in n_old..n {
            let v = if i >= n_old {
                0.5 * (cross[(i, j - n_old)] + cross[(j, i - n_old)])
            } else {
                cross[(i, j - n_old)]
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

impl ReducedModel {
    /// Projects every operator of `fom` onto `basis`.
    pub fn project(fom: &FomModel, basis: ReducedBasisPair) -> Result<Self> {
        basis.check_shapes(fom)?;
        let psi = &basis.psi_v;
        let fam = fom.family();
        let a0 = galerkin(fam.a0(), psi);
        let a = (0..basis.n_q())
            .map(|j| {
                let dir = ParameterVector::from_column_slice(col(&basis.psi_q, j));
                Ok(galerkin(&fam.direction_operator(&dir)?, psi))
            })
            .collect::<Result<Vec<_>>>()?;
        let mass = galerkin(&mass_matrix(fom), psi);
        let c_h = galerkin(fom.observation().c_h(), psi);
        let mut m = Self {
            a0,
            a,
            mass,
            c_h,
            cy: DMatrix::zeros(0, 0),
            c1: fom.data().c1(),
            load: Vec::new(),
            load_time: fom.load().clone(),
            u0: Vec::new(),
            v0: Vec::new(),
            center: ParameterVector::zeros(0),
            bounds: fom.bounds().clone(),
            time: fom.time(),
            zeta: fom.zeta(),
            basis,
        };
        m.refresh_vectors(fom);
        Ok(m)
    }

    /// Updates the projection after the basis grew by appended columns.
    pub fn extend(&mut self, fom: &FomModel, basis: ReducedBasisPair) -> Result<()> {
        basis.check_shapes(fom)?;
        let (n_old, q_old) = (self.basis.n_v(), self.basis.n_q());
        if basis.n_v() < n_old || basis.n_q() < q_old {
            return Err(Error::Enrichment("extended basis is smaller than the current one".into()));
        }
        let nested = |a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize| {
            k == 0 || (a.columns(0, k) - b.columns(0, k)).amax() == 0.0
        };
        if !nested(&self.basis.psi_v, &basis.psi_v, n_old) || !nested(&self.basis.psi_q, &basis.psi_q, q_old) {
            return Err(Error::Enrichment("extension must append columns to the current basis".into()));
        }
        let psi = &basis.psi_v;
        let fam = fom.family();
        self.a0 = galerkin_extend(fam.a0(), &self.a0, psi);
        for j in 0..q_old {
            let dir = ParameterVector::from_column_slice(col(&basis.psi_q, j));
            self.a[j] = galerkin_extend(&fam.direction_operator(&dir)?, &self.a[j], psi);
        }
        for j in q_old..basis.n_q() {
            let dir = ParameterVector::from_column_slice(col(&basis.psi_q, j));
            self.a.push(galerkin(&fam.direction_operator(&dir)?, psi));
        }
        self.mass = galerkin_extend(&mass_matrix(fom), &self.mass, psi);
        self.c_h = galerkin_extend(fom.observation().c_h(), &self.c_h, psi);
        self.basis = basis;
        self.refresh_vectors(fom);
        Ok(())
    }

    fn refresh_vectors(&mut self, fom: &FomModel) {
        let psi = &self.basis.psi_v;
        self.cy = tr_gemm(psi, fom.data().cy());
        let gram = fom.family().gram_v();
        let proj = |v: &[f64]| -> Vec<f64> {
            let w = gram.apply(v);
            (psi.tr_mul(&DMatrix::from_column_slice(w.len(), 1, &w))).as_slice().to_vec()
        };
        self.u0 = proj(fom.initial_displacement());
        self.v0 = proj(fom.initial_velocity());
        let f = fom.load().spatial();
        self.load = psi.tr_mul(&DMatrix::from_column_slice(f.len(), 1, f)).as_slice().to_vec();
        self.center = self.basis.psi_q.tr_mul(fom.regularization_center());
    }

    pub fn basis(&self) -> &ReducedBasisPair {
        &self.basis
    }

    /// `A_r(q_r)`
    pub fn operator(&self, q_r: &ParameterVector) -> DMatrix<f64> {
        let mut a = self.a0.clone();
        for (j, aj) in self.a.iter().enumerate() {
            a += aj * q_r[j];
        }
        a
    }

    pub fn affine_terms(&self) -> (&DMatrix<f64>, &[DMatrix<f64>]) {
        (&self.a0, &self.a)
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    /// Lifted state trajectory `Psi_V u_r`.
    pub fn lift_trajectory(&self, traj: &Trajectory) -> Trajectory {
        Trajectory {
            role: traj.role,
            displacement: &self.basis.psi_v * &traj.displacement,
            velocity: &self.basis.psi_v * &traj.velocity,
        }
    }

    fn direction_operator(&self, d: &ParameterVector) -> DMatrix<f64> {
        let n = self.basis.n_v();
        let mut a = DMatrix::zeros(n, n);
        for (j, aj) in self.a.iter().enumerate() {
            if d[j] != 0.0 {
                a += aj * d[j];
            }
        }
        a
    }

    fn finish(role: TrajectoryRole, u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Trajectory> {
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Solver(format!("reduced {role:?} trajectory contains non-finite values")));
        }
        Ok(Trajectory { role, displacement: u, velocity: v })
    }

    fn data_source(&self, u: &[f64], out: &mut [f64], j: usize) {
        let n = u.len();
        let mut o = DVectorViewMut::from_slice(out, n);
        o.copy_from(&self.cy.column(j));
        o.gemv(-1.0, &self.c_h, &DVectorView::from_slice(u, n), 1.0);
    }
}

fn mass_matrix(fom: &FomModel) -> CsrMatrix {
    let fam = fom.family();
    let m: Vec<f64> = fam.mass_h().iter().map(|x| x * fam.density()).collect();
    CsrMatrix::diagonal(&m)
}

/// Factorized reduced stepping matrix at one reduced parameter.
#[derive(Debug, Clone)]
pub struct ReducedStepper {
    pub q: ParameterVector,
    pub a: DMatrix<f64>,
    mass: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, Dyn>,
}

impl StepSystem for ReducedStepper {
    fn dim(&self) -> usize {
        self.mass.nrows()
    }
    fn mass_mul(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut o = DVectorViewMut::from_slice(out, n);
        o.gemv(1.0, &self.mass, &DVectorView::from_slice(x, n), 0.0);
    }
    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut r = DVectorViewMut::from_slice(rhs, n);
        self.chol.solve_mut(&mut r);
    }
}

impl DiscreteModel for ReducedModel {
    type Stepper = ReducedStepper;

    fn n_params(&self) -> usize {
        self.basis.n_q()
    }
    fn n_state(&self) -> usize {
        self.basis.n_v()
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
    fn is_admissible(&self, q_r: &ParameterVector) -> bool {
        self.bounds.contains(&self.basis.lift_parameter(q_r))
    }
    fn project_admissible(&self, anchor: &ParameterVector, x: &ParameterVector) -> ParameterVector {
        super::project_reduced(&self.basis.psi_q, &self.bounds, anchor, x)
    }

    fn stepping(&self, q_r: &ParameterVector) -> Result<ReducedStepper> {
        check_len("reduced parameter", q_r.len(), self.n_params())?;
        let a = self.operator(q_r);
        let dt = self.time.dt();
        let s = &self.mass + &a * (self.zeta * self.zeta * dt * dt);
        let chol = nalgebra::Cholesky::new(s)
            .ok_or_else(|| Error::Factorization("reduced stepping matrix is not positive definite".into()))?;
        Ok(ReducedStepper { q: q_r.clone(), a, mass: self.mass.clone(), chol })
    }

    fn primal(&self, st: &ReducedStepper) -> Result<Trajectory> {
        let z = self.zeta;
        let t = self.time;
        let (u, v) = march(st, z, t.dt(), t.steps, &self.u0, &self.v0, |k, out| {
            let f = z * self.load_time.temporal(t.time(k)) + (1.0 - z) * self.load_time.temporal(t.time(k - 1));
            for (o, s) in out.iter_mut().zip(&self.load) {
                *o = f * s;
            }
        });
        Self::finish(TrajectoryRole::Primal, u, v)
    }

    fn adjoint(&self, st: &ReducedStepper, state: &Trajectory) -> Result<Trajectory> {
        let (p, pd) = march_backward(st, self.zeta, self.time.dt(), state.steps(), |j1, out| {
            self.data_source(state.u(j1), out, j1)
        });
        Self::finish(TrajectoryRole::Adjoint, p, pd)
    }

    fn linearized_primal(&self, st: &ReducedStepper, d: &ParameterVector, state: &Trajectory) -> Result<Trajectory> {
        check_len("reduced direction", d.len(), self.n_params())?;
        let ad = self.direction_operator(d);
        // All sources at once: -A_r(d) [blend_1 .. blend_K].
        let src = -(&ad * state.blended_matrix(self.zeta));
        let n = self.n_state();
        let zero = vec![0.0; n];
        let (u, v) = march(st, self.zeta, self.time.dt(), state.steps(), &zero, &zero, |k, out| {
            out.copy_from_slice(col(&src, k - 1))
        });
        Self::finish(TrajectoryRole::LinearizedPrimal, u, v)
    }

    fn linearized_adjoint(&self, st: &ReducedStepper, state: &Trajectory, lin: &Trajectory) -> Result<Trajectory> {
        let sum = &state.displacement + &lin.displacement;
        let (p, pd) = march_backward(st, self.zeta, self.time.dt(), state.steps(), |j1, out| {
            self.data_source(col(&sum, j1), out, j1)
        });
        Self::finish(TrajectoryRole::LinearizedAdjoint, p, pd)
    }

    fn misfit(&self, state: &Trajectory, lin: Option<&Trajectory>) -> f64 {
        let n = self.n_state();
        split_misfit(
            self.time.dt(),
            self.c1,
            &self.cy,
            state.steps(),
            |u| {
                let uv = DVectorView::from_slice(u, n);
                uv.dot(&(&self.c_h * uv))
            },
            |k| match lin {
                Some(l) => state.u(k).iter().zip(l.u(k)).map(|(a, b)| a + b).collect(),
                None => state.u(k).to_vec(),
            },
        )
    }

    fn adjoint_gradient(&self, _st: &ReducedStepper, state: &Trajectory, adjoint: &Trajectory) -> ParameterVector {
        let k = state.steps();
        let w = state.blended_matrix(self.zeta) * adjoint.displacement.columns(0, k).transpose();
        let dt = self.time.dt();
        DVector::from_iterator(self.a.len(), self.a.iter().map(|aj| dt * aj.dot(&w)))
    }
}

//! Residual-based a posteriori bounds for the reduced state and objective.
//!
//! The state bound controls the time-discrete energy error
//! `||e^k||_E^2 = (e^k)'^T rho M_H (e^k)' + (e^k)^T A(q) e^k` of a lifted reduced
//! trajectory, provided its initial data are reproduced exactly.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linalg::{col, dot, BandCholesky, CsrMatrix};
use crate::model::{AffineOperatorFamily, ParameterVector};
use crate::objective::{DiscreteModel, FomModel};
use crate::timestep::Trajectory;

/// Safety factor applied to the computed coercivity constant.
pub const COERCIVITY_SAFETY: f64 = 0.99;

/// Residuals `r^k`, `k = 1..=K`, of the full-order scheme evaluated on `traj`:
/// `R^k - A(q) (zeta u^k + (1 - zeta) u^{k-1}) - rho M_H (v^k - v^{k-1}) / dt`.
pub fn primal_residual(fom: &FomModel, q: &ParameterVector, traj: &Trajectory) -> Result<nalgebra::DMatrix<f64>> {
    let n = fom.n_state();
    check_len("trajectory", traj.dim(), n)?;
    let time = fom.time();
    check_len("trajectory steps", traj.steps(), time.steps)?;
    let fam = fom.family();
    let a = fam.operator(q)?;
    let z = fom.zeta();
    let dt = time.dt();
    let rho = fam.density();
    let load = fom.load();
    let mut r = nalgebra::DMatrix::zeros(n, time.steps);
    let mut tmp = vec![0.0; n];
    for k in 1..=time.steps {
        let b = traj.blended(k, z);
        a.mul_vec(&b, &mut tmp);
        let f = z * load.temporal(time.time(k)) + (1.0 - z) * load.temporal(time.time(k - 1));
        let (v1, v0) = (traj.v(k), traj.v(k - 1));
        let out = crate::linalg::col_mut(&mut r, k - 1);
        for i in 0..n {
            out[i] = f * load.spatial()[i] - tmp[i] - rho * fam.mass_h()[i] * (v1[i] - v0[i]) / dt;
        }
    }
    Ok(r)
}

/// `||r||_{(rho M_H)^{-1}}` for each residual column.
pub fn residual_dual_norms(family: &AffineOperatorFamily, residuals: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let rho = family.density();
    (0..residuals.ncols())
        .map(|k| {
            col(residuals, k)
                .iter()
                .zip(family.mass_h())
                .map(|(r, m)| r * r / (rho * m))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// `2 (sum_k (dt sum_{k' <= k} ||r^{k'}||)^2)^{1/2}` from the dual residual norms.
///
/// # Panics
/// If `zeta < 1/2`; the bound relies on the dissipativity of the scheme there.
pub fn state_error_estimator(dual_norms: &[f64], dt: f64, zeta: f64) -> f64 {
    assert!(zeta >= 0.5, "state error bound needs zeta >= 1/2, got {zeta}");
    let mut partial = 0.0;
    let mut sum = 0.0;
    for &r in dual_norms {
        partial += dt * r;
        sum += partial * partial;
    }
    2.0 * sum.sqrt()
}

/// Stiffness part `(dt sum_k e^T A e)^{1/2}` of the energy bound.
///
/// Every term of the sum is at most `dt ||e^k||_E^2`, so `sqrt(dt)` times the state bound
/// dominates it for any step size.
pub fn stiffness_part(delta_u: f64, dt: f64) -> f64 {
    dt.sqrt() * delta_u
}

/// `||C||^2 / (2 a) dtilde^2 + ||C|| sqrt(2 J_r / a) dtilde`.
pub fn objective_error_estimator(j_r: f64, delta_u_tilde: f64, a_q: f64, c_norm: f64) -> f64 {
    debug_assert!(j_r >= 0.0 && delta_u_tilde >= 0.0 && a_q > 0.0 && c_norm >= 0.0);
    c_norm * c_norm / (2.0 * a_q) * delta_u_tilde * delta_u_tilde + c_norm * (2.0 * j_r.max(0.0) / a_q).sqrt() * delta_u_tilde
}

/// Lower bound for `inf v^T A(q) v / ||v||_{M_V}^2`.
///
/// The stiffness field is a nonnegative combination of the coefficients, so
/// `A(q) >= theta A(1)` with `theta = min_p q_p` (capped at 1 when fixed nodes exist).
/// The constant of `A(1)` is computed once per family by block inverse subspace
/// iteration, certified to 0.1% and scaled by [`COERCIVITY_SAFETY`].
pub fn coercivity_lower_bound(family: &AffineOperatorFamily, q: &ParameterVector) -> Result<f64> {
    check_len("parameter", q.len(), family.n_params())?;
    let mut theta = q.min();
    if family.layout().n_params() < family.layout().n_nodes() {
        theta = theta.min(1.0);
    }
    if !(theta > 0.0) {
        return Err(Error::Solver(format!("no coercivity for a nonpositive coefficient ({theta:e})")));
    }
    Ok(theta * reference_coercivity(family)?)
}

fn reference_coercivity(family: &AffineOperatorFamily) -> Result<f64> {
    if let Some(&a) = family.reference_coercivity().get() {
        return Ok(a);
    }
    let a = family.operator(&ParameterVector::from_element(family.n_params(), 1.0))?;
    let value = COERCIVITY_SAFETY * smallest_generalized_eigenvalue(&a, family.gram_v(), 4, 500, 1e-3)?;
    let _ = family.reference_coercivity().set(value);
    Ok(value)
}

/// Smallest eigenvalue of `A x = lambda M x` for SPD `A`, `M`.
pub fn smallest_generalized_eigenvalue(
    a: &CsrMatrix,
    m: &CsrMatrix,
    block: usize,
    max_iterations: usize,
    rel_tol: f64,
) -> Result<f64> {
    let n = a.nrows();
    let b = block.min(n).max(1);
    let chol_a = BandCholesky::factor(a)?;
    let chol_m = BandCholesky::factor(m)?;
    // Smooth positive start for the lowest mode, oscillating columns for the rest.
    let mut x = nalgebra::DMatrix::from_fn(n, b, |i, j| {
        if j == 0 {
            1.0
        } else {
            ((i + 1) as f64 * (0.61 + 0.37 * j as f64) + j as f64).sin()
        }
    });
    let mut theta = f64::NAN;
    let mut resid = f64::INFINITY;
    for _ in 0..max_iterations {
        let mut y = nalgebra::DMatrix::zeros(n, b);
        let mut ay = nalgebra::DMatrix::zeros(n, b);
        let mut my = nalgebra::DMatrix::zeros(n, b);
        for j in 0..b {
            let rhs = m.apply(col(&x, j));
            let s = chol_a.solve(&rhs);
            crate::linalg::col_mut(&mut y, j).copy_from_slice(&s);
        }
        for j in 0..b {
            a.mul_vec(col(&y, j), crate::linalg::col_mut(&mut ay, j));
            m.mul_vec(col(&y, j), crate::linalg::col_mut(&mut my, j));
        }
        let ka = crate::linalg::tr_gemm(&y, &ay);
        let kb = crate::linalg::tr_gemm(&y, &my);
        let ka = (&ka + ka.transpose()) * 0.5;
        let kb = (&kb + kb.transpose()) * 0.5;
        let lb = nalgebra::Cholesky::new(kb)
            .ok_or_else(|| Error::Solver("subspace iteration lost rank".into()))?
            .l();
        let linv = lb
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Solver("subspace iteration lost rank".into()))?;
        let c = &linv * ka * linv.transpose();
        let (vals, vecs) = crate::linalg::sorted_symmetric_eigen(c);
        // Ascending order: reverse the descending output.
        let coeff = linv.transpose() * vecs;
        let mut xn = nalgebra::DMatrix::zeros(n, b);
        for j in 0..b {
            let src = b - 1 - j;
            xn.set_column(j, &(&y * coeff.column(src)));
        }
        x = xn;
        theta = vals[b - 1];
        let x0 = col(&x, 0);
        let ax = a.apply(x0);
        let mx = m.apply(x0);
        let r: Vec<f64> = ax.iter().zip(&mx).map(|(p, q)| p - theta * q).collect();
        let minv_r = chol_m.solve(&r);
        resid = dot(&r, &minv_r).max(0.0).sqrt() / dot(x0, &mx).sqrt();
        if theta > 0.0 && resid <= rel_tol * theta {
            return Ok(theta);
        }
    }
    Err(Error::Solver(format!(
        "coercivity eigensolver did not converge in {max_iterations} iterations: theta = {theta:e}, residual = {resid:e}"
    )))
}

/// Time-discrete energy error `(sum_{k>=1} ||e^k||_E^2)^{1/2}` between two trajectories.
pub fn energy_error(fom: &FomModel, q: &ParameterVector, truth: &Trajectory, approx: &Trajectory) -> Result<f64> {
    let fam = fom.family();
    let a = fam.operator(q)?;
    let rho = fam.density();
    let mut sum = 0.0;
    let n = truth.dim();
    check_len("trajectory", approx.dim(), n)?;
    let mut e = vec![0.0; n];
    for k in 1..=truth.steps() {
        let mut kin = 0.0;
        for i in 0..n {
            let de = truth.v(k)[i] - approx.v(k)[i];
            kin += rho * fam.mass_h()[i] * de * de;
            e[i] = truth.u(k)[i] - approx.u(k)[i];
        }
        sum += kin + a.bilinear(&e, &e);
    }
    Ok(sum.sqrt())
}

/// Estimator values at one reduced iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub delta_u: f64,
    pub delta_u_tilde: f64,
    pub delta_j: f64,
    pub a_q: f64,
    pub c_norm: f64,
    /// `delta_u` over the true energy error, when the truth was computed.
    pub effectivity: Option<f64>,
}

/// All bounds for the lifted reduced state `lifted` at the full parameter `q` with reduced
/// objective value `j_r`.
pub fn estimate(fom: &FomModel, q: &ParameterVector, lifted: &Trajectory, j_r: f64) -> Result<EstimatorReport> {
    let fam = fom.family();
    let res = primal_residual(fom, q, lifted)?;
    let norms = residual_dual_norms(fam, &res);
    let dt = fom.time().dt();
    let delta_u = state_error_estimator(&norms, dt, fom.zeta());
    let delta_u_tilde = stiffness_part(delta_u, dt);
    let a_q = coercivity_lower_bound(fam, q)?;
    let c_norm = fom.observation().norm_bound();
    let delta_j = objective_error_estimator(j_r, delta_u_tilde, a_q, c_norm);
    Ok(EstimatorReport { delta_u, delta_u_tilde, delta_j, a_q, c_norm, effectivity: None })
}

/// One row of the effectivity table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectivityRow {
    pub q_hash: String,
    pub delta_u: f64,
    pub true_error: f64,
    pub effectivity: f64,
    pub delta_j: f64,
    pub true_j_gap: f64,
}

/// Short stable fingerprint of a parameter vector (FNV-1a over the bit patterns).
pub fn parameter_hash(q: &ParameterVector) -> String {
    crate::io::fingerprint(q.as_slice())
}

pub fn write_effectivity_csv(path: impl AsRef<Path>, rows: &[EffectivityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the effectivity table to any writer, for callers that collect it in memory.
pub fn write_effectivity_to(out: impl Write, rows: &[EffectivityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_operators, Face, Grid, MaterialSpec, Side};
    use crate::objective::{eval_gradient, eval_objective, tests::small_fom};
    use crate::rom::{initial_basis, ReducedModel};

    #[test]
    fn closed_form_single_residual() {
        let mut r = vec![0.0; 7];
        r[0] = 3.0;
        let d = state_error_estimator(&r, 0.25, 0.5);
        assert!((d - 2.0 * 3.0 * 0.25 * 7f64.sqrt()).abs() < 1e-14);
        assert_eq!(state_error_estimator(&[0.0; 4], 0.1, 1.0), 0.0);
    }

    #[test]
    #[should_panic]
    fn zeta_below_one_half_is_a_contract_violation() {
        state_error_estimator(&[1.0], 0.1, 0.4);
    }

    #[test]
    fn objective_bound_special_cases_and_monotonicity() {
        assert_eq!(objective_error_estimator(3.0, 0.0, 0.5, 2.0), 0.0);
        assert!((objective_error_estimator(0.0, 0.3, 0.5, 2.0) - 4.0 / 1.0 * 0.09).abs() < 1e-15);
        let mut last = 0.0;
        for i in 0..20 {
            let v = objective_error_estimator(1.0, 0.01 * i as f64, 0.7, 1.3);
            assert!(v >= last);
            last = v;
        }
    }

    fn unit_element(dim: usize) -> AffineOperatorFamily {
        let grid = Grid::new(&vec![(0.0, 1.0); dim], &vec![1; dim], &[Face { axis: 0, side: Side::Min }]).unwrap();
        let mat = MaterialSpec {
            lambda: 1.5,
            mu: 1.0,
            density: 1.0,
            stiffness_scale: 1.0,
            parameter_coarsening: vec![1; dim],
            free_layer: None,
            fixed_value: 1.0,
        };
        assemble_operators(&grid, &mat).unwrap()
    }

    #[test]
    fn coercivity_matches_dense_eigensolver_and_scales() {
        let fam = unit_element(2);
        let q = ParameterVector::from_element(fam.n_params(), 1.0);
        let a = fam.operator(&q).unwrap();
        let m = fam.gram_v();
        let lm = nalgebra::Cholesky::new(m.to_dense()).unwrap().l();
        let li = lm.try_inverse().unwrap();
        let c = &li * a.to_dense() * li.transpose();
        let exact = nalgebra::SymmetricEigen::new(c).eigenvalues.min();
        let got = smallest_generalized_eigenvalue(&a, m, 4, 500, 1e-9).unwrap();
        assert!((got - exact).abs() <= 1e-6 * exact, "{got} vs {exact}");
        let a1 = coercivity_lower_bound(&fam, &q).unwrap();
        let a2 = coercivity_lower_bound(&fam, &(q * 2.0)).unwrap();
        assert!((a2 - 2.0 * a1).abs() <= 1e-12 * a2);
        let qr = ParameterVector::from_fn(fam.n_params(), |i, _| 0.5 + 0.37 * i as f64);
        let c = &li * fam.operator(&qr).unwrap().to_dense() * li.transpose();
        let exact_r = nalgebra::SymmetricEigen::new(c).eigenvalues.min();
        let bound = coercivity_lower_bound(&fam, &qr).unwrap();
        assert!(bound > 0.0 && bound <= exact_r, "{bound} vs {exact_r}");
    }

    #[test]
    fn residual_of_full_order_trajectory_vanishes_and_bounds_hold() {
        let (fom, q_true) = small_fom(false);
        let p = eval_objective(&fom, &q_true).unwrap();
        let res = primal_residual(&fom, &q_true, &p.state).unwrap();
        let scale = fom.load().spatial().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(res.amax() <= 1e-10 * scale.max(1.0));

        let q0 = ParameterVector::from_element(fom.n_params(), 1.0);
        let p0 = eval_objective(&fom, &q0).unwrap();
        let (g0, a0) = eval_gradient(&fom, &p0).unwrap();
        let basis = initial_basis(&fom, &q0, &g0, &p0.state, &a0, 1e-3).unwrap();
        let rom = ReducedModel::project(&fom, basis.clone()).unwrap();
        for s in 0..5 {
            let q = ParameterVector::from_fn(fom.n_params(), |i, _| 1.0 + 0.3 * (((i + 3 * s) * 7) % 5) as f64 / 5.0);
            let q_r = basis.restrict_parameter(&q);
            let q_lift = basis.lift_parameter(&q_r);
            let pr = eval_objective(&rom, &q_r).unwrap();
            let lifted = rom.lift_trajectory(&pr.state);
            let ph = eval_objective(&fom, &q_lift).unwrap();
            let rep = estimate(&fom, &q_lift, &lifted, pr.objective).unwrap();
            let err = energy_error(&fom, &q_lift, &ph.state, &lifted).unwrap();
            assert!(rep.delta_u >= err, "state bound {} < {}", rep.delta_u, err);
            let gap = (ph.objective - pr.objective).abs();
            assert!(rep.delta_j >= gap, "objective bound {} < {}", rep.delta_j, gap);
        }
    }
}

//! Iteratively regularized Gauss-Newton method with a posteriori choice of the
//! Tikhonov weight and discrepancy-principle stopping.
//!
//! Each outer step minimizes the linearized Tikhonov functional `J~(.; q, alpha)`
//! over admissible directions with a projected Barzilai-Borwein gradient method.
//! `alpha` is adapted until `theta J(q) <= 2 J~(d; q, 0) <= Theta J(q)`.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::objective::{
    eval_gradient, eval_linearized_gradient, eval_linearized_objective, eval_objective, DiscreteModel,
    LinearizationPoint,
};
use crate::timestep::Trajectory;

/// Inner projected-gradient solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerConfig {
    pub max_iterations: usize,
    /// Stop when `|J~_k - J~_{k+1}| <= rel_change |J~_k|`.
    pub rel_change: f64,
    /// Stop when the projected-gradient residual drops below this fraction of its initial value.
    pub first_order_tol: f64,
    /// Window of the nonmonotone acceptance test.
    pub history: usize,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 250,
            rel_change: 1e-4,
            first_order_tol: 1e-6,
            history: 5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrgnmConfig {
    pub theta: f64,
    #[serde(rename = "theta_upper")]
    pub big_theta: f64,
    pub tau: f64,
    pub alpha_init: f64,
    pub alpha_factor: f64,
    pub max_alpha_trials: usize,
    pub max_iterations: usize,
    /// Optional wall-clock cap in seconds.
    pub max_seconds: Option<f64>,
    pub stagnation_tol: f64,
    pub stagnation_count: usize,
    pub inner: InnerConfig,
}

impl Default for IrgnmConfig {
    fn default() -> Self {
        Self {
            theta: 0.4,
            big_theta: 1.95,
            tau: 1.1,
            alpha_init: 1e-5,
            alpha_factor: 3.0,
            max_alpha_trials: 30,
            max_iterations: 100,
            max_seconds: None,
            stagnation_tol: 1e-12,
            stagnation_count: 3,
            inner: InnerConfig::default(),
        }
    }
}

impl IrgnmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.theta && self.theta < self.big_theta && self.big_theta < 2.0) {
            return Err(Error::Config(format!(
                "need 0 < theta < Theta < 2, got theta = {}, Theta = {}",
                self.theta, self.big_theta
            )));
        }
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.alpha_init > 0.0) || !(self.alpha_factor > 1.0) {
            return Err(Error::Config("alpha_init > 0 and alpha_factor > 1 required".into()));
        }
        if self.inner.max_iterations == 0 || self.inner.history == 0 {
            return Err(Error::Config("inner solver needs at least one iteration and history 1".into()));
        }
        Ok(())
    }

    /// Discrepancy level `(tau delta)^2 / 2`.
    pub fn target(&self, delta: f64) -> f64 {
        0.5 * (self.tau * delta).powi(2)
    }
}

/// Why the inner solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerStop {
    FirstOrder,
    RelativeChange,
    MaxIterations,
}

/// Approximate minimizer of the linearized Tikhonov functional.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub d: ParameterVector,
    /// `J~(d; q, alpha)`
    pub value: f64,
    /// `J~(d; q, 0)`
    pub lin_misfit: f64,
    pub lin: Trajectory,
    pub iterations: usize,
    pub stop: InnerStop,
}

fn scaled(t: &Trajectory, s: f64) -> Trajectory {
    Trajectory { role: t.role, displacement: &t.displacement * s, velocity: &t.velocity * s }
}

/// Projected BB gradient method for `min_d J~(d; q, alpha)` s.t. `q + d` admissible.
///
/// `grad_j` is `grad J(q)`; with it the gradient at `d = 0` costs no extra solve.
pub fn solve_subproblem<M: DiscreteModel + ?Sized>(
    model: &M,
    point: &LinearizationPoint<M>,
    grad_j: &ParameterVector,
    alpha: f64,
    cfg: &InnerConfig,
) -> Result<Subproblem> {
    if !(alpha > 0.0) {
        return Err(Error::Solver(format!("subproblem needs alpha > 0, got {alpha}")));
    }
    let q = &point.q;
    let center = model.regularization_center();
    let tik = |d: &ParameterVector| 0.5 * alpha * (q + d - center).norm_squared();
    let project = |x: ParameterVector| model.project_admissible(q, &x) - q;

    let n = q.len();
    let mut d = ParameterVector::zeros(n);
    let mut val = point.objective + tik(&d);
    let mut g = grad_j + (q - center) * alpha;
    let zero_lin = Trajectory {
        role: crate::timestep::TrajectoryRole::LinearizedPrimal,
        displacement: point.state.displacement.map(|_| 0.0),
        velocity: point.state.velocity.map(|_| 0.0),
    };
    let mut lin = zero_lin;
    let fo0 = (project(q - &g)).norm();
    if fo0 == 0.0 {
        let lin_misfit = val - tik(&d);
        return Ok(Subproblem { d, value: val, lin_misfit, lin, iterations: 0, stop: InnerStop::FirstOrder });
    }

    // Cauchy step along -g from the exact curvature g^T H g.
    let (v1, lin_g) = eval_linearized_objective(model, point, &(-&g), alpha)?;
    let gg = g.norm_squared();
    let ghg = 2.0 * (v1 - val + gg);
    let mut t = if ghg > 0.0 { gg / ghg } else { 1.0 };
    let mut reuse = Some(lin_g);

    let mut hist = vec![val];
    let mut use_bb1 = true;
    let mut stop = InnerStop::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let reference = hist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut backtracks = 0;
        let (d_new, val_new, lin_new) = loop {
            let d_new = project(q + &d - &g * t);
            let s = &d_new - &d;
            if s.norm() == 0.0 {
                break (d_new, val, lin.clone());
            }
            // d = 0 and an inactive projection: the linearized state is a scaled copy.
            let cached = match &reuse {
                Some(lg) if d.norm() == 0.0 && (&d_new + &g * t).norm() <= 1e-14 * d_new.norm() => {
                    Some(scaled(lg, t))
                }
                _ => None,
            };
            let (v, l) = match cached {
                Some(l) => (model.misfit(&point.state, Some(&l)) + tik(&d_new), l),
                None => eval_linearized_objective(model, point, &d_new, alpha)?,
            };
            if v <= reference + cfg.sufficient_decrease * g.dot(&s) {
                break (d_new, v, l);
            }
            backtracks += 1;
            if backtracks > cfg.max_backtracks {
                return Err(Error::Solver(format!(
                    "inner solver: no decrease after {backtracks} backtracks (J~ = {val:e}, candidate {v:e}); \
                     gradient inconsistent with objective"
                )));
            }
            t *= 0.5;
        };
        reuse = None;
        let s = &d_new - &d;
        if s.norm() == 0.0 {
            stop = InnerStop::FirstOrder;
            break;
        }
        let g_new = eval_linearized_gradient(model, point, &d_new, alpha, &lin_new)?;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let rel = (val - val_new).abs() / val.abs().max(f64::MIN_POSITIVE);
        d = d_new;
        val = val_new;
        lin = lin_new;
        g = g_new;
        hist.push(val);
        if hist.len() > cfg.history {
            hist.remove(0);
        }
        if sy > 0.0 {
            t = if use_bb1 { s.norm_squared() / sy } else { sy / y.norm_squared() };
            use_bb1 = !use_bb1;
        }
        t = t.clamp(1e-30, 1e30);
        if rel < cfg.rel_change {
            stop = InnerStop::RelativeChange;
            break;
        }
        let fo = (project(q + &d - &g) - &d).norm();
        if fo <= cfg.first_order_tol * fo0 {
            stop = InnerStop::FirstOrder;
            break;
        }
    }
    let lin_misfit = val - tik(&d);
    Ok(Subproblem { d, value: val, lin_misfit, lin, iterations, stop })
}

/// Outcome of the regularization-parameter search.
#[derive(Debug, Clone)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub sub: Subproblem,
    pub trials: usize,
    pub inner_iterations: usize,
    /// Set when decreasing `alpha` no longer lowers the linearized misfit although it is
    /// still above the upper bound; the step is the best one the model offers.
    pub saturated: bool,
}

/// Relative change of the linearized misfit under one `alpha` decrease below which the
/// search counts as saturated.
const SATURATION_TOL: f64 = 1e-3;

/// Adapts `alpha` from `alpha_prev` until the sandwich condition holds.
pub fn select_alpha<M: DiscreteModel + ?Sized>(
    model: &M,
    point: &LinearizationPoint<M>,
    grad_j: &ParameterVector,
    alpha_prev: f64,
    cfg: &IrgnmConfig,
) -> Result<AlphaSelection> {
    let j = point.objective;
    if !(j > 0.0) {
        return Err(Error::Solver("alpha selection needs J(q) > 0".into()));
    }
    let mut alpha = alpha_prev;
    let (mut too_small, mut too_large): (Option<f64>, Option<f64>) = (None, None);
    let mut inner = 0;
    let mut last_high: Option<f64> = None;
    for trial in 1..=cfg.max_alpha_trials {
        let sub = solve_subproblem(model, point, grad_j, alpha, &cfg.inner)?;
        inner += sub.iterations;
        let v = 2.0 * sub.lin_misfit;
        if v > cfg.big_theta * j && too_small.is_none() {
            if let Some(prev) = last_high {
                if prev - v <= SATURATION_TOL * prev {
                    return Ok(AlphaSelection { alpha, sub, trials: trial, inner_iterations: inner, saturated: true });
                }
            }
            last_high = Some(v);
        }
        if v < cfg.theta * j {
            too_small = Some(alpha);
            alpha = match too_large {
                Some(h) => (alpha * h).sqrt(),
                None => alpha * cfg.alpha_factor,
            };
        } else if v > cfg.big_theta * j {
            too_large = Some(alpha);
            alpha = match too_small {
                Some(l) => (alpha * l).sqrt(),
                None => alpha / cfg.alpha_factor,
            };
        } else {
            return Ok(AlphaSelection { alpha, sub, trials: trial, inner_iterations: inner, saturated: false });
        }
    }
    Err(Error::Solver(format!(
        "no alpha satisfying theta J <= 2 J~ <= Theta J within {} trials (last alpha {alpha:e})",
        cfg.max_alpha_trials
    )))
}

/// One outer iteration in the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrgnmRecord {
    pub iteration: usize,
    /// `J(q^(i))` at the linearization point.
    #[serde(rename = "J")]
    pub objective: f64,
    pub alpha: f64,
    pub inner_iters: usize,
    pub step_norm: f64,
    pub seconds: f64,
    /// `J~(d; q, 0)` of the accepted direction, for the sandwich check.
    #[serde(rename = "J_lin")]
    pub lin_misfit: f64,
    /// No `alpha` reached the upper sandwich bound; the least regularized step was taken.
    #[serde(default)]
    pub saturated: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IrgnmLedger {
    pub records: Vec<IrgnmRecord>,
}

impl IrgnmLedger {
    pub fn push(&mut self, r: IrgnmRecord) {
        self.records.push(r);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<IrgnmRecord>, _>>()?;
        Ok(Self { records })
    }

    /// Checks `theta J <= 2 J_lin <= Theta J` for every record.
    pub fn sandwich_holds(&self, theta: f64, big_theta: f64) -> bool {
        self.records.iter().all(|r| {
            let v = 2.0 * r.lin_misfit;
            theta * r.objective <= v && v <= big_theta * r.objective
        })
    }
}

#[derive(Debug, Clone)]
pub struct IrgnmOutcome {
    pub q: ParameterVector,
    pub objective: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
    pub alpha: f64,
    pub ledger: IrgnmLedger,
}

/// Decision of a step controller on a proposed iterate.
pub struct ControlledStep {
    pub q: ParameterVector,
    /// Stop after evaluating this iterate.
    pub stop: bool,
}

/// Plain IRGNM from `q0` until `J <= (tau delta)^2 / 2`.
pub fn irgnm_run<M: DiscreteModel + ?Sized>(
    model: &M,
    q0: &ParameterVector,
    delta: f64,
    cfg: &IrgnmConfig,
) -> Result<IrgnmOutcome> {
    irgnm_run_controlled(model, q0, delta, cfg, cfg.alpha_init, |_, q| ControlledStep { q, stop: false })
}

/// IRGNM whose proposed iterates pass through `control(q_current, q_proposed)`.
pub fn irgnm_run_controlled<M: DiscreteModel + ?Sized>(
    model: &M,
    q0: &ParameterVector,
    delta: f64,
    cfg: &IrgnmConfig,
    alpha0: f64,
    mut control: impl FnMut(&ParameterVector, ParameterVector) -> ControlledStep,
) -> Result<IrgnmOutcome> {
    cfg.validate()?;
    if !model.is_admissible(q0) {
        return Err(Error::Solver("initial parameter is not admissible".into()));
    }
    let start = Instant::now();
    let target = cfg.target(delta);
    let mut point = eval_objective(model, q0)?;
    let mut ledger = IrgnmLedger::default();
    let mut alpha = alpha0;
    let mut stalls = 0;
    let mut inner_total = 0;
    let mut i = 0;
    let (mut converged, mut stagnated) = (false, false);
    loop {
        if point.objective <= target {
            converged = true;
            break;
        }
        if i >= cfg.max_iterations || cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() > s) {
            break;
        }
        let (g, _) = eval_gradient(model, &point)?;
        let sel = select_alpha(model, &point, &g, alpha, cfg)?;
        alpha = sel.alpha;
        inner_total += sel.inner_iterations;
        let proposed = &point.q + &sel.sub.d;
        let step = control(&point.q, proposed);
        if !model.is_admissible(&step.q) {
            return Err(Error::Solver(format!("iterate {} left the admissible set", i + 1)));
        }
        let next = eval_objective(model, &step.q)?;
        ledger.push(IrgnmRecord {
            iteration: i,
            objective: point.objective,
            alpha,
            inner_iters: sel.inner_iterations,
            step_norm: (&step.q - &point.q).norm(),
            seconds: start.elapsed().as_secs_f64(),
            lin_misfit: sel.sub.lin_misfit,
            saturated: sel.saturated,
        });
        let decrease = (point.objective - next.objective) / point.objective;
        stalls = if decrease < cfg.stagnation_tol { stalls + 1 } else { 0 };
        point = next;
        i += 1;
        if stalls >= cfg.stagnation_count {
            stagnated = point.objective > target;
            converged = !stagnated;
            break;
        }
        if step.stop {
            converged = point.objective <= target;
            break;
        }
    }
    Ok(IrgnmOutcome {
        q: point.q,
        objective: point.objective,
        iterations: i,
        inner_iterations: inner_total,
        converged,
        stagnated,
        alpha,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::tests::small_fom;

    #[test]
    fn degenerate_sandwich_bounds_are_rejected() {
        let mut c = IrgnmConfig::default();
        c.big_theta = c.theta;
        assert!(c.validate().is_err());
        c.big_theta = 2.0;
        assert!(c.validate().is_err());
        let c = IrgnmConfig { tau: 1.0, ..IrgnmConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn large_alpha_drives_the_step_to_the_center() {
        let (fom, _) = small_fom(false);
        let q = ParameterVector::repeat(fom.n_params(), 1.3);
        let point = eval_objective(&fom, &q).unwrap();
        let (g, _) = eval_gradient(&fom, &point).unwrap();
        let sub = solve_subproblem(&fom, &point, &g, 1e8, &InnerConfig::default()).unwrap();
        let target = fom.regularization_center() - &q;
        assert!((&sub.d - &target).norm() <= 1e-3 * target.norm());
    }

    #[test]
    fn noise_free_run_decreases_and_converges() {
        let (fom, _) = small_fom(false);
        let q0 = ParameterVector::repeat(fom.n_params(), 1.0);
        let j0 = eval_objective(&fom, &q0).unwrap().objective;
        let delta = (2.0 * j0).sqrt() * 0.05;
        let cfg = IrgnmConfig { tau: 1.5, ..IrgnmConfig::default() };
        let out = irgnm_run(&fom, &q0, delta, &cfg).unwrap();
        assert!(out.converged, "{:?}", out.ledger);
        assert!(out.objective <= cfg.target(delta));
        let j: Vec<f64> = out.ledger.records.iter().map(|r| r.objective).collect();
        assert!(j.windows(2).all(|w| w[1] < w[0]));
        assert!(out.ledger.sandwich_holds(cfg.theta, cfg.big_theta));
    }
}

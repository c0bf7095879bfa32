//! Trust-region reduced-basis IRGNM.
//!
//! The outer loop keeps a reduced model that is exact (value and gradient) at the current
//! iterate, solves the reduced inverse problem inside a ball around it, and accepts the
//! trial point only if the full-order misfit decreases. Bases grow after every accepted
//! step from the full-order primal and adjoint trajectories at the new iterate.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimatorReport};
use crate::irgnm::{irgnm_run_controlled, ControlledStep, IrgnmConfig};
use crate::model::ParameterVector;
use crate::objective::{eval_gradient, eval_objective, DiscreteModel, FomModel};
use crate::rom::{consistency, enrich, initial_basis, Consistency, ReducedModel, CONSISTENCY_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    pub eta0: f64,
    pub eta_max: f64,
    /// Enlarge when the actual/predicted ratio exceeds this.
    pub beta2: f64,
    /// Shrink factor on rejection; its inverse is the enlargement factor.
    pub beta3: f64,
    /// Discrepancy factor of the reduced subproblem; defaults to the full-order one.
    pub tau_reduced: Option<f64>,
    /// Noise level used in the reduced discrepancy, relative to the true one.
    pub delta_reduced_factor: f64,
    /// Subproblems stop once the iterate is this close (relative) to the boundary.
    pub boundary_fraction: f64,
    pub max_halvings: usize,
    /// The reduced IRGNM stops once `J_r` decreases by less than this fraction over
    /// `subproblem_stagnation_count` consecutive iterations.
    pub subproblem_stagnation_tol: f64,
    pub subproblem_stagnation_count: usize,
    pub max_outer_iterations: usize,
    pub max_rejections: usize,
    pub max_seconds: Option<f64>,
    /// POD tolerance for state-basis enrichment.
    pub pod_tolerance: f64,
    /// Evaluate the a posteriori bounds at every trial point (reporting only).
    pub estimators: bool,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            eta0: 0.5,
            eta_max: 2.0,
            beta2: 0.75,
            beta3: 0.5,
            tau_reduced: None,
            delta_reduced_factor: 1.0,
            boundary_fraction: 0.95,
            max_halvings: 20,
            subproblem_stagnation_tol: 1e-3,
            subproblem_stagnation_count: 2,
            max_outer_iterations: 100,
            max_rejections: 15,
            max_seconds: None,
            pod_tolerance: 1e-10,
            estimators: true,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trust region: {m}")));
        if !(self.eta0 > 0.0 && self.eta0 <= self.eta_max) {
            return bad("need 0 < eta0 <= eta_max");
        }
        if !(0.75..1.0).contains(&self.beta2) {
            return bad("beta2 must lie in [0.75, 1)");
        }
        if !(self.beta3 > 0.0 && self.beta3 < 1.0) {
            return bad("beta3 must lie in (0, 1)");
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction <= 1.0) {
            return bad("boundary fraction must lie in (0, 1]");
        }
        if self.tau_reduced.is_some_and(|t| !(t > 1.0)) {
            return bad("reduced discrepancy factor must exceed 1");
        }
        if !(self.delta_reduced_factor >= 1.0) {
            return bad("reduced noise level must not be below the true one");
        }
        if !(self.subproblem_stagnation_tol >= 0.0) || self.subproblem_stagnation_count == 0 {
            return bad("subproblem stagnation needs a nonnegative tolerance and a positive count");
        }
        if !(self.pod_tolerance > 0.0) {
            return bad("POD tolerance must be positive");
        }
        Ok(())
    }
}

/// Why a subproblem ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubproblemStop {
    ReducedDiscrepancy,
    Boundary,
    /// The halving cap was hit; the last feasible iterate is returned.
    BoundaryHalvingCap,
    Converged,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct TrialPoint {
    /// Reduced coordinates.
    pub q_r: ParameterVector,
    pub j_r: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub alpha: f64,
    pub stop: SubproblemStop,
}

/// Reduced IRGNM from `q_start`, restricted to the ball of radius `eta` around it.
///
/// Every proposed update is halved until it lies inside the ball; the run ends at the
/// reduced discrepancy level, near the boundary, or when the reduced IRGNM stops.
pub fn tr_subproblem(
    rom: &ReducedModel,
    q_start: &ParameterVector,
    eta: f64,
    delta: f64,
    alpha0: f64,
    irgnm: &IrgnmConfig,
    tr: &TrustRegionConfig,
) -> Result<TrialPoint> {
    let tau = tr.tau_reduced.unwrap_or(irgnm.tau);
    let cfg = IrgnmConfig {
        tau,
        stagnation_tol: tr.subproblem_stagnation_tol,
        stagnation_count: tr.subproblem_stagnation_count,
        ..irgnm.clone()
    };
    let delta_r = delta * tr.delta_reduced_factor;
    let mut flag = None;
    let out = irgnm_run_controlled(rom, q_start, delta_r, &cfg, alpha0, |q_cur, proposed| {
        let mut step = &proposed - q_cur;
        let mut q = proposed;
        let mut halvings = 0;
        while (&q - q_start).norm() > eta {
            if halvings == tr.max_halvings {
                flag = Some(SubproblemStop::BoundaryHalvingCap);
                return ControlledStep { q: q_cur.clone(), stop: true };
            }
            step *= 0.5;
            q = q_cur + &step;
            halvings += 1;
        }
        let near = (&q - q_start).norm() >= tr.boundary_fraction * eta;
        if near {
            flag = Some(SubproblemStop::Boundary);
        }
        ControlledStep { q, stop: near }
    })?;
    let stop = if let Some(f) = flag {
        f
    } else if out.objective <= cfg.target(delta_r) {
        SubproblemStop::ReducedDiscrepancy
    } else if out.converged || out.stagnated {
        SubproblemStop::Converged
    } else {
        SubproblemStop::IterationLimit
    };
    Ok(TrialPoint {
        q_r: out.q,
        j_r: out.objective,
        iterations: out.iterations,
        inner_iterations: out.inner_iterations,
        alpha: out.alpha,
        stop,
    })
}

/// Acceptance decision for a trial point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub accepted: bool,
    /// Actual over predicted decrease; `+inf` when the prediction is not positive.
    pub rho: Option<f64>,
    /// Set when an accepted step had a non-positive predicted decrease.
    pub flat_surrogate: bool,
}

/// Accepts iff the full-order misfit strictly decreases.
pub fn tr_accept(j_current: f64, j_trial: f64, j_r_drop: f64) -> Acceptance {
    if !(j_trial < j_current) {
        return Acceptance { accepted: false, rho: None, flat_surrogate: false };
    }
    if j_r_drop > 0.0 {
        Acceptance { accepted: true, rho: Some((j_current - j_trial) / j_r_drop), flat_surrogate: false }
    } else {
        Acceptance { accepted: true, rho: Some(f64::INFINITY), flat_surrogate: true }
    }
}

fn finite_or_tag<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        Some(x) if *x > 0.0 => s.serialize_str("inf"),
        Some(_) => s.serialize_str("-inf"),
        None => s.serialize_none(),
    }
}

/// One outer iteration, or the initial state for `i = 0` without a trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrRecord {
    pub i: usize,
    /// Full-order misfit at the iterate after this iteration.
    pub j_h: f64,
    /// Full-order misfit at the trial point.
    pub j_h_trial: Option<f64>,
    /// Reduced misfit at the trial point.
    pub j_r: Option<f64>,
    /// Radius used for the subproblem.
    pub eta: f64,
    #[serde(serialize_with = "finite_or_tag")]
    pub rho: Option<f64>,
    pub accepted: bool,
    pub subproblem_stop: Option<SubproblemStop>,
    pub reduced_iterations: usize,
    pub n_q: usize,
    pub n_v: usize,
    pub fom_solves_cum: usize,
    pub seconds: f64,
    pub estimator: Option<EstimatorReport>,
    /// Relative objective and gradient errors of the surrogate after enrichment.
    pub consistency: Option<Consistency>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrStatus {
    Converged,
    IterationLimit,
    TimeLimit,
    RadiusCollapse,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrLedger {
    pub records: Vec<TrRecord>,
}

impl TrLedger {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Full-order misfit along accepted iterates, starting with the initial one.
    pub fn accepted_objectives(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.i == 0 || r.accepted).map(|r| r.j_h).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrOutcome {
    pub q: ParameterVector,
    pub objective: f64,
    /// Outer iterations (accepted and rejected).
    pub iterations: usize,
    pub accepted: usize,
    /// Reduced IRGNM iterations over all subproblems.
    pub reduced_iterations: usize,
    pub status: TrStatus,
    pub n_q: usize,
    pub n_v: usize,
    /// Full-order factorizations and sweeps spent by this run.
    pub fom_factorizations: usize,
    pub fom_solves: usize,
    pub seconds: f64,
    pub ledger: TrLedger,
}

impl TrOutcome {
    pub fn converged(&self) -> bool {
        self.status == TrStatus::Converged
    }
}

/// Runs the trust-region reduced-basis IRGNM from `q0` for noise level `delta`.
pub fn tr_irgnm(
    fom: &FomModel,
    q0: &ParameterVector,
    delta: f64,
    irgnm: &IrgnmConfig,
    tr: &TrustRegionConfig,
) -> Result<TrOutcome> {
    irgnm.validate()?;
    tr.validate()?;
    if !fom.is_admissible(q0) {
        return Err(Error::Solver("initial parameter is not admissible".into()));
    }
    let start = Instant::now();
    let counters = fom.counters();
    let (f0, s0) = (counters.factorizations(), counters.solves());
    let fom_solves = || counters.solves() - s0;
    let target = irgnm.target(delta);

    let mut point = eval_objective(fom, q0)?;
    let mut ledger = TrLedger::default();
    let mut record0 = TrRecord {
        i: 0,
        j_h: point.objective,
        j_h_trial: None,
        j_r: None,
        eta: tr.eta0,
        rho: None,
        accepted: true,
        subproblem_stop: None,
        reduced_iterations: 0,
        n_q: 0,
        n_v: 0,
        fom_solves_cum: fom_solves(),
        seconds: 0.0,
        estimator: None,
        consistency: None,
        warning: None,
    };
    let finish = |q: ParameterVector, objective, iterations, accepted, reduced, status, nq, nv, ledger| TrOutcome {
        q,
        objective,
        iterations,
        accepted,
        reduced_iterations: reduced,
        status,
        n_q: nq,
        n_v: nv,
        fom_factorizations: counters.factorizations() - f0,
        fom_solves: counters.solves() - s0,
        seconds: start.elapsed().as_secs_f64(),
        ledger,
    };
    if point.objective <= target {
        ledger.records.push(record0);
        return Ok(finish(point.q, point.objective, 0, 0, 0, TrStatus::Converged, 0, 0, ledger));
    }

    let (g0, adj0) = eval_gradient(fom, &point)?;
    let basis = initial_basis(fom, q0, &g0, &point.state, &adj0, tr.pod_tolerance)?;
    let mut rom = ReducedModel::project(fom, basis)?;
    record0.consistency = Some(check_consistency(&rom, &point.q, point.objective, &g0)?);
    record0.n_q = rom.basis().n_q();
    record0.n_v = rom.basis().n_v();
    record0.fom_solves_cum = fom_solves();
    record0.seconds = start.elapsed().as_secs_f64();
    ledger.records.push(record0);

    let mut eta = tr.eta0;
    let mut alpha = irgnm.alpha_init;
    let mut rejections = 0;
    let (mut iterations, mut accepted_count, mut reduced_total) = (0, 0, 0);
    let status = loop {
        if point.objective <= target {
            break TrStatus::Converged;
        }
        if iterations >= tr.max_outer_iterations {
            break TrStatus::IterationLimit;
        }
        if tr.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() > s) {
            break TrStatus::TimeLimit;
        }
        iterations += 1;
        let basis = rom.basis().clone();
        let q_r = basis.restrict_parameter(&point.q);
        let j_r_current = eval_objective(&rom, &q_r)?.objective;
        let trial = tr_subproblem(&rom, &q_r, eta, delta, alpha, irgnm, tr)?;
        reduced_total += trial.iterations;
        let q_trial = basis.lift_parameter(&trial.q_r);
        let trial_point = eval_objective(fom, &q_trial)?;
        let j_trial = trial_point.objective;
        let decision = tr_accept(point.objective, trial_point.objective, j_r_current - trial.j_r);
        let estimator = if tr.estimators {
            let rp = eval_objective(&rom, &trial.q_r)?;
            Some(estimate(fom, &q_trial, &rom.lift_trajectory(&rp.state), rp.objective.max(0.0))?)
        } else {
            None
        };
        let mut warning = None;
        let mut consistency_after = None;
        let eta_used = eta;
        if decision.accepted {
            if decision.flat_surrogate {
                warning = Some("accepted step with non-positive predicted decrease".to_string());
            }
            rejections = 0;
            accepted_count += 1;
            alpha = trial.alpha;
            point = trial_point;
            let (g, adj) = eval_gradient(fom, &point)?;
            let extended = enrich(&basis, fom, &point.q, &g, &point.state, &adj, tr.pod_tolerance)?;
            rom.extend(fom, extended)?;
            consistency_after = Some(check_consistency(&rom, &point.q, point.objective, &g)?);
            if decision.rho.is_some_and(|r| r > tr.beta2) {
                eta = (eta / tr.beta3).min(tr.eta_max);
            }
        } else {
            rejections += 1;
            eta *= tr.beta3;
        }
        ledger.records.push(TrRecord {
            i: iterations,
            j_h: point.objective,
            j_h_trial: Some(j_trial),
            j_r: Some(trial.j_r),
            eta: eta_used,
            rho: decision.rho,
            accepted: decision.accepted,
            subproblem_stop: Some(trial.stop),
            reduced_iterations: trial.iterations,
            n_q: rom.basis().n_q(),
            n_v: rom.basis().n_v(),
            fom_solves_cum: fom_solves(),
            seconds: start.elapsed().as_secs_f64(),
            estimator,
            consistency: consistency_after,
            warning,
        });
        if rejections >= tr.max_rejections {
            break TrStatus::RadiusCollapse;
        }
    };
    let (nq, nv) = (rom.basis().n_q(), rom.basis().n_v());
    Ok(finish(point.q, point.objective, iterations, accepted_count, reduced_total, status, nq, nv, ledger))
}

fn check_consistency(rom: &ReducedModel, q: &ParameterVector, j_h: f64, g_h: &ParameterVector) -> Result<Consistency> {
    let c = consistency(rom, q, j_h, g_h)?;
    if c.holds(CONSISTENCY_TOL) {
        Ok(c)
    } else {
        Err(Error::Enrichment(format!(
            "reduced model is not exact at the enrichment point: objective rel. error {:e}, gradient rel. error {:e}",
            c.objective_rel, c.gradient_rel
        )))
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs with `harness = false` so the report is printed without `--nocapture`.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trirgnm::cli::{generate_data, run_comparison, Experiment, Method, Profile};
use trirgnm::estimator::{energy_error, estimate};
use trirgnm::irgnm::{irgnm_run, IrgnmConfig, IrgnmLedger};
use trirgnm::linalg::col;
use trirgnm::model::{LoadTrajectory, ParameterVector};
use trirgnm::objective::{eval_gradient, eval_objective, DiscreteModel, FomModel};
use trirgnm::rom::{ReducedBasisPair, ReducedModel, CONSISTENCY_TOL};
use trirgnm::timestep::{build_stepping, energy, solve_primal, TimeGrid};
use trirgnm::tr::{tr_irgnm, TrLedger, TrustRegionConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Ledgers collected across criteria for the ledger-based checks.
#[derive(Default)]
struct Ledgers {
    irgnm: Vec<(String, IrgnmLedger)>,
    tr: Vec<(String, TrLedger)>,
}

fn desk2d() -> Experiment {
    Experiment::build(&Profile::Desk2d.config().unwrap()).unwrap()
}

fn random_q(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> ParameterVector {
    ParameterVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

fn gradient_correctness() -> Outcome {
    let exp = desk2d();
    let data = generate_data(&exp.fom, &exp.truth().unwrap(), 0.01, 5).unwrap();
    let fom = exp.model_with_data(data.noisy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = fom.n_params();
    let mut worst = 0.0f64;
    let mut min_slope = f64::INFINITY;
    for _ in 0..10 {
        let q = random_q(&mut rng, n, 0.6, 2.5);
        let e = random_q(&mut rng, n, -1.0, 1.0);
        let e = &e / e.norm();
        let point = eval_objective(&fom, &q).unwrap();
        let g = eval_gradient(&fom, &point).unwrap().0.dot(&e);
        let errs: Vec<f64> = (1..=6)
            .map(|p| {
                let h = 10f64.powi(-p);
                let jp = eval_objective(&fom, &(&q + &e * h)).unwrap().objective;
                let jm = eval_objective(&fom, &(&q - &e * h)).unwrap().objective;
                ((jp - jm) / (2.0 * h) - g).abs() / g.abs()
            })
            .collect();
        worst = worst.max(errs.iter().cloned().fold(f64::INFINITY, f64::min));
        // Truncation regime: the error must fall like h^2 between h = 1e-1 and 1e-2.
        if errs[0] > 1e-7 {
            min_slope = min_slope.min((errs[0] / errs[1]).log10());
        }
    }
    outcome(
        worst <= 1e-5 && min_slope >= 1.8,
        format!("worst best-h rel. err {worst:.2e} (tol 1e-5), min FD slope {min_slope:.2} (O(h^2) = 2)"),
    )
}

fn temporal_order() -> Outcome {
    let exp = desk2d();
    let fam = &exp.family;
    let n = fam.n_dofs();
    let q = exp.truth().unwrap();
    let a = fam.operator(&q).unwrap();
    let phi: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.017).sin()).collect();
    let omega = 2.0 * std::f64::consts::PI / 16.0;
    // u(t) = sin(omega t) phi solves rho M u'' + A u = sin(omega t) (A phi - omega^2 rho M phi).
    let a_phi = a.apply(&phi);
    let spatial: Vec<f64> =
        (0..n).map(|i| a_phi[i] - omega * omega * fam.density() * fam.mass_h()[i] * phi[i]).collect();
    let v0: Vec<f64> = phi.iter().map(|p| omega * p).collect();
    let norm_phi = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut errs = Vec::new();
    for steps in [8, 16, 32, 64, 128] {
        let time = TimeGrid::new(16.0, steps).unwrap();
        let load = LoadTrajectory::separable(spatial.clone(), move |t| (omega * t).sin());
        let st = build_stepping(fam, &q, 0.5, &time).unwrap();
        let traj = solve_primal(&st, &load, &vec![0.0; n], &v0, &time).unwrap();
        let mut e = 0.0f64;
        for k in 0..=steps {
            let s = (omega * time.time(k)).sin();
            let d: f64 = traj.u(k).iter().zip(&phi).map(|(u, p)| (u - s * p).powi(2)).sum::<f64>().sqrt();
            e = e.max(d / norm_phi);
        }
        errs.push(e);
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 1.9,
        format!(
            "errors {:?}, observed orders {:?}",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn energy_conservation() -> Outcome {
    let exp = desk2d();
    let fam = &exp.family;
    let n = fam.n_dofs();
    let q = exp.truth().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let st = build_stepping(fam, &q, 0.5, &exp.time).unwrap();
    let traj = solve_primal(&st, &LoadTrajectory::zero(n), &u0, &v0, &exp.time).unwrap();
    let e0 = energy(&st, &traj, 0);
    let drift = (1..=exp.time.steps).map(|k| (energy(&st, &traj, k) - e0).abs() / e0).fold(0.0, f64::max);
    outcome(drift <= 1e-10, format!("max relative energy drift {drift:.2e} over {} steps", exp.time.steps))
}

/// Both estimator criteria share one suite of 20 random parameters.
fn estimator_validity() -> (Outcome, Outcome) {
    let exp = desk2d();
    let data = generate_data(&exp.fom, &exp.truth().unwrap(), 0.01, 3).unwrap();
    let fom = exp.model_with_data(data.noisy).unwrap();
    let n = fom.n_params();
    let st = fom.stepping(&exp.initial_guess()).unwrap();
    let snaps = fom.primal(&st).unwrap();
    let state: Vec<Vec<f64>> = [6, 12, 18, 24, 30].iter().map(|&k| snaps.u(k).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let qs: Vec<ParameterVector> = (0..20).map(|_| random_q(&mut rng, n, 0.5, 3.0)).collect();
    let params: Vec<Vec<f64>> = qs.iter().map(|q| q.as_slice().to_vec()).collect();
    let basis = ReducedBasisPair::from_vectors(&state, &params, exp.family.gram_v(), fom.n_state(), n);
    let rom = ReducedModel::project(&fom, basis).unwrap();
    let (mut viol_u, mut viol_j) = (0, 0);
    let mut eff = Vec::new();
    let mut eff_j = Vec::new();
    for q in &qs {
        let q_r = rom.basis().restrict_parameter(q);
        let red = eval_objective(&rom, &q_r).unwrap();
        let lifted = rom.lift_trajectory(&red.state);
        let full = eval_objective(&fom, q).unwrap();
        let rep = estimate(&fom, q, &lifted, red.objective).unwrap();
        let err = energy_error(&fom, q, &full.state, &lifted).unwrap();
        let gap = (full.objective - red.objective).abs();
        viol_u += usize::from(rep.delta_u < err);
        viol_j += usize::from(rep.delta_j < gap);
        eff.push(rep.delta_u / err);
        eff_j.push(rep.delta_j / gap);
    }
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(0.0, f64::max);
        format!("[{lo:.2}, {hi:.2}]")
    };
    (
        outcome(
            viol_u == 0,
            format!("n_V {} n_Q {}: {viol_u}/20 violations, effectivity range {}", rom.basis().n_v(), rom.basis().n_q(), range(&eff)),
        ),
        outcome(viol_j == 0, format!("{viol_j}/20 violations, Delta_J / |J_h - J_r| range {}", range(&eff_j))),
    )
}

fn consistency_from_ledgers(ledgers: &Ledgers) -> Outcome {
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (_, l) in &ledgers.tr {
        for r in l.records.iter().filter(|r| r.accepted) {
            match r.consistency {
                Some(c) => {
                    checked += 1;
                    worst = worst.max(c.objective_rel).max(c.gradient_rel);
                }
                None => return outcome(false, format!("accepted iteration {} has no consistency record", r.i)),
            }
        }
    }
    outcome(
        checked > 0 && worst <= CONSISTENCY_TOL,
        format!("{checked} enrichments over {} TR runs, worst rel. error {worst:.2e} (tol 1e-8)", ledgers.tr.len()),
    )
}

fn degenerate_equivalence() -> Outcome {
    let fom = common::toy_fom(16);
    let y = common::observe(&fom, &common::toy_truth());
    let fom = fom.with_data(y * 1.01).unwrap();
    let (n, p) = (fom.n_state(), fom.n_params());
    let unit = |k: usize, i: usize| {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        v
    };
    let state: Vec<Vec<f64>> = (0..n).map(|i| unit(n, i)).collect();
    let params: Vec<Vec<f64>> = (0..p).map(|i| unit(p, i)).collect();
    let basis = ReducedBasisPair::from_vectors(&state, &params, fom.family().gram_v(), n, p);
    if basis.n_v() != n || basis.n_q() != p {
        return outcome(false, "full bases are not square");
    }
    let rom = ReducedModel::project(&fom, basis).unwrap();
    let mut worst = 0.0f64;
    for q in [ParameterVector::from_element(p, 1.0), common::toy_truth(), ParameterVector::from_vec(vec![0.5, 2.0, 1.1, 0.8])] {
        let full = eval_objective(&fom, &q).unwrap();
        let (g_h, _) = eval_gradient(&fom, &full).unwrap();
        let q_r = rom.basis().restrict_parameter(&q);
        let red = eval_objective(&rom, &q_r).unwrap();
        let (g_r, _) = eval_gradient(&rom, &red).unwrap();
        let lifted = rom.lift_trajectory(&red.state);
        let g_lift = rom.basis().lift_parameter(&g_r);
        let rel = |a: f64, b: f64| a / b.max(f64::MIN_POSITIVE);
        let traj_err = rel((&lifted.displacement - &full.state.displacement).amax(), full.state.displacement.amax())
            .max(rel((&lifted.velocity - &full.state.velocity).amax(), full.state.velocity.amax()));
        worst = worst
            .max(rel((red.objective - full.objective).abs(), full.objective))
            .max(rel((&g_lift - &g_h).norm(), g_h.norm()))
            .max(traj_err);
    }
    outcome(worst <= 1e-10, format!("worst rel. deviation of J, grad J, trajectories: {worst:.2e} (tol 1e-10)"))
}

fn sandwich_from_ledgers(ledgers: &Ledgers, cfg: &IrgnmConfig) -> Outcome {
    let dir = std::env::temp_dir().join(format!("trirgnm-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut total = 0;
    let mut bad = Vec::new();
    for (name, ledger) in &ledgers.irgnm {
        // Assert from the ledger as written to disk.
        let path = dir.join(format!("{name}.csv"));
        ledger.write_csv(&path).unwrap();
        let back = IrgnmLedger::read_csv(&path).unwrap();
        for r in &back.records {
            total += 1;
            let v = 2.0 * r.lin_misfit;
            if !(cfg.theta * r.objective <= v && v <= cfg.big_theta * r.objective) {
                bad.push(format!("{name}#{} 2J~/J = {:.3}", r.iteration, v / r.objective));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(
        total > 0 && bad.is_empty(),
        format!("{total} iterations in {} ledgers, violations: {:?}", ledgers.irgnm.len(), bad),
    )
}

fn end_to_end(ledgers: &mut Ledgers) -> Outcome {
    let start = Instant::now();
    let exp = desk2d();
    let cfg = &exp.config;
    let truth = exp.truth().unwrap();
    let data = generate_data(&exp.fom, &truth, cfg.noise.relative, cfg.noise.seed).unwrap();
    let cmp = run_comparison(&exp, &data, Some(&truth), Method::Both).unwrap();
    let (fom, tr) = (cmp.fom.clone().unwrap(), cmp.tr.clone().unwrap());
    if let Some(l) = cmp.fom_ledger {
        ledgers.irgnm.push(("desk2d-fom".into(), l));
    }
    if let Some(l) = cmp.tr_ledger {
        ledgers.tr.push(("desk2d-tr".into(), l));
    }
    if let Some(f) = fom.failure.as_ref().or(tr.failure.as_ref()) {
        return outcome(false, format!("run failed: {f}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let rel = tr.rel_error.unwrap();
    let ratio = tr.fom_solves as f64 / fom.fom_solves as f64;
    let speedup = tr.speedup.unwrap();
    let pass = fom.objective <= fom.target
        && tr.objective <= tr.target
        && rel < 0.05
        && ratio < 0.25
        && speedup > 2.0
        && elapsed < 900.0
        && fom.data_hash == tr.data_hash;
    outcome(
        pass,
        format!(
            "J_FOM {:.3e}, J_TR {:.3e} <= {:.3e}; TR vs FOM rel. err {:.2}%; FOM solves {}/{} = {:.1}%; speed-up {:.2}; {:.0}s",
            fom.objective,
            tr.objective,
            fom.target,
            100.0 * rel,
            tr.fom_solves,
            fom.fom_solves,
            100.0 * ratio,
            speedup,
            elapsed
        ),
    )
}

/// FOM and TR runs on the noisy toy problem, feeding the ledger-based criteria.
fn toy_runs(ledgers: &mut Ledgers) {
    let fom = common::toy_fom(16);
    let y = common::observe(&fom, &common::toy_truth());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = DMatrix::from_fn(y.nrows(), y.ncols(), |_, k| if k == 0 { 0.0 } else { rng.random_range(-1.0..1.0) });
    let dt = fom.time().dt();
    let norm = |m: &DMatrix<f64>| (dt * (1..m.ncols()).map(|k| fom.observation().norm_sq(col(m, k))).sum::<f64>()).sqrt();
    let delta = 0.01 * norm(&y);
    let y_delta = &y + &noise * (delta / norm(&noise));
    let fom: FomModel = fom.with_data(y_delta).unwrap();
    let q0 = ParameterVector::from_element(fom.n_params(), 1.0);
    let cfg = IrgnmConfig { tau: 1.5, ..IrgnmConfig::default() };
    if let Ok(run) = irgnm_run(&fom.clone().with_fresh_counters(), &q0, delta, &cfg) {
        ledgers.irgnm.push(("toy-fom".into(), run.ledger));
    }
    if let Ok(run) = tr_irgnm(&fom.with_fresh_counters(), &q0, delta, &cfg, &TrustRegionConfig::default()) {
        ledgers.tr.push(("toy-tr".into(), run.ledger));
    }
}

fn monotone_acceptance(ledgers: &Ledgers, eta_max: f64) -> Outcome {
    let mut accepted = 0;
    let mut issues = Vec::new();
    for (name, l) in &ledgers.tr {
        let js = l.accepted_objectives();
        accepted += js.len().saturating_sub(1);
        if js.windows(2).any(|w| !(w[1] < w[0])) {
            issues.push(format!("{name}: accepted J_h not strictly decreasing"));
        }
        if l.records.iter().any(|r| r.eta > eta_max) {
            issues.push(format!("{name}: radius above {eta_max}"));
        }
    }
    outcome(
        !ledgers.tr.is_empty() && issues.is_empty(),
        format!("{} TR runs, {accepted} accepted steps; {:?}", ledgers.tr.len(), issues),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut ledgers = Ledgers::default();
    let mut timed = |id, name, f: &mut dyn FnMut() -> Outcome, limit: Option<f64>| {
        let t = Instant::now();
        let mut o = f();
        let s = t.elapsed().as_secs_f64();
        if let Some(l) = limit {
            if s > l {
                o.pass = false;
                o.detail += &format!("; runtime {s:.1}s exceeds {l}s");
            }
        }
        results.push((id, name, o, s));
    };

    timed(1, "gradient correctness", &mut gradient_correctness, Some(120.0));
    timed(2, "temporal order", &mut temporal_order, Some(60.0));
    timed(3, "energy conservation", &mut energy_conservation, Some(10.0));
    let t = Instant::now();
    let (c4, c5) = estimator_validity();
    let s = t.elapsed().as_secs_f64();
    let limit = |mut o: Outcome| {
        if s > 300.0 {
            o.pass = false;
            o.detail += &format!("; runtime {s:.1}s exceeds 300s");
        }
        o
    };
    timed(4, "state estimator validity", &mut || limit(outcome(c4.pass, c4.detail.clone())), None);
    timed(5, "objective estimator validity", &mut || limit(outcome(c5.pass, c5.detail.clone())), None);
    timed(7, "degenerate ROM equivalence", &mut degenerate_equivalence, Some(60.0));
    timed(9, "end-to-end desk2d reconstruction", &mut || end_to_end(&mut ledgers), Some(900.0));
    toy_runs(&mut ledgers);
    let cfg = Profile::Desk2d.config().unwrap().solver;
    timed(6, "first-order consistency", &mut || consistency_from_ledgers(&ledgers), None);
    timed(8, "alpha sandwich", &mut || sandwich_from_ledgers(&ledgers, &cfg.irgnm), None);
    timed(10, "monotone acceptance", &mut || monotone_acceptance(&ledgers, cfg.tr.eta_max), None);

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, o, s) in &results {
        failed += usize::from(!o.pass);
        println!("{} [{id:2}] {name}: {} ({s:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TruthConfig};
use crate::error::{Error, Result};
use crate::io::{fingerprint, write_field};
use crate::irgnm::{irgnm_run, IrgnmLedger};
use crate::linalg::col;
use crate::model::{
    assemble_observation, assemble_operators, AffineOperatorFamily, Grid, LoadTrajectory, ObservationOperator,
    ParameterLayout, ParameterVector,
};
use crate::objective::{eval_objective, DiscreteModel, FomModel};
use crate::timestep::TimeGrid;
use crate::tr::{tr_irgnm, TrLedger};

/// Assembled discrete problem of one configuration, without measurement data.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub family: Arc<AffineOperatorFamily>,
    pub observation: Arc<ObservationOperator>,
    pub time: TimeGrid,
    /// Model with zero data; attach measurements with [`Experiment::model_with_data`].
    pub fom: FomModel,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let p = &config.problem;
        let extents: Vec<(f64, f64)> = p.extents.iter().map(|e| (e[0], e[1])).collect();
        let grid = Grid::new(&extents, &p.cells, &p.dirichlet)?;
        let family = Arc::new(assemble_operators(&grid, &p.material)?);
        let observation = Arc::new(assemble_observation(&family, &p.sensors)?);
        let load = LoadTrajectory::new(&family, &p.excitation)?;
        let time = TimeGrid::new(p.t_end, p.steps)?;
        let center = ParameterVector::from_element(family.n_params(), config.solver.initial);
        let fom = FomModel::new(family.clone(), observation.clone(), load, time, p.zeta)?
            .with_bounds(p.bounds.clone())
            .with_center(center)?;
        Ok(Self { config: config.clone(), family, observation, time, fom })
    }

    pub fn layout(&self) -> &ParameterLayout {
        self.family.layout()
    }

    pub fn initial_guess(&self) -> ParameterVector {
        ParameterVector::from_element(self.family.n_params(), self.config.solver.initial)
    }

    pub fn truth(&self) -> Result<ParameterVector> {
        build_truth(&self.config.truth, self.layout())
    }

    /// Fresh model (own solve counters) with the given measurements.
    pub fn model_with_data(&self, y: DMatrix<f64>) -> Result<FomModel> {
        self.fom.clone().with_fresh_counters().with_data(y)
    }
}

/// Coefficient vector of the configured defects on a background value.
pub fn build_truth(truth: &TruthConfig, layout: &ParameterLayout) -> Result<ParameterVector> {
    let n = layout.n_params();
    let mut q = ParameterVector::from_element(n, truth.background);
    let layer_axis = layout.free_layer().map(|l| l.axis);
    let tol = 1e-9;
    for r in &truth.rectangles {
        let mut hit = 0;
        for p in 0..n {
            let x = layout.param_coord(p);
            let (lo, hi) = layout.param_support(p);
            let inside = (0..x.len()).all(|a| {
                if Some(a) == layer_axis {
                    x[a] >= r.lower[a] - tol && x[a] <= r.upper[a] + tol
                } else {
                    lo[a] >= r.lower[a] - tol && hi[a] <= r.upper[a] + tol
                }
            });
            if inside {
                q[p] = r.value;
                hit += 1;
            }
        }
        if hit == 0 {
            return Err(Error::Config(format!(
                "rectangle {:?}..{:?} contains no free coefficient",
                r.lower, r.upper
            )));
        }
    }
    for d in &truth.points {
        let p = layout
            .param_at(&d.center, tol)
            .ok_or_else(|| Error::Config(format!("point defect at {:?} is not a free coefficient node", d.center)))?;
        let half = 0.5 * (d.value + truth.background);
        for nb in layout.neighbors(p) {
            q[nb] = half;
        }
        q[p] = d.value;
    }
    Ok(q)
}

/// `(dt sum_{k>=1} ||y^k||_{M_C}^2)^{1/2}`
pub fn trajectory_norm(obs: &ObservationOperator, y: &DMatrix<f64>, dt: f64) -> f64 {
    let s: f64 = (1..y.ncols()).map(|k| obs.norm_sq(col(y, k))).sum();
    (dt * s).sqrt()
}

/// Synthetic measurements with their noise level.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub exact: DMatrix<f64>,
    pub noisy: DMatrix<f64>,
    /// Absolute noise level `||noisy - exact||`.
    pub delta: f64,
    pub relative: f64,
    pub seed: u64,
}

impl SyntheticData {
    pub fn fingerprint(&self) -> String {
        fingerprint(self.noisy.as_slice())
    }
}

/// Exact observations of `q_e` plus uniform noise scaled to `relative * ||C u||`.
///
/// The time-zero column is not part of the misfit and stays noise free.
pub fn generate_data(fom: &FomModel, q_e: &ParameterVector, relative: f64, seed: u64) -> Result<SyntheticData> {
    if !(relative >= 0.0) {
        return Err(Error::Config(format!("relative noise level must be nonnegative, got {relative}")));
    }
    let point = eval_objective(fom, q_e)?;
    let exact = fom.observe(&point.state);
    let obs = fom.observation();
    let dt = fom.time().dt();
    let delta = relative * trajectory_norm(obs, &exact, dt);
    let mut noisy = exact.clone();
    if delta > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xi = DMatrix::zeros(exact.nrows(), exact.ncols());
        for k in 1..xi.ncols() {
            for i in 0..xi.nrows() {
                xi[(i, k)] = rng.random_range(-1.0..=1.0);
            }
        }
        let nx = trajectory_norm(obs, &xi, dt);
        if nx > 0.0 {
            noisy += xi * (delta / nx);
        }
    }
    Ok(SyntheticData { exact, noisy, delta, relative, seed })
}

/// Which reconstruction to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fom,
    Tr,
    Both,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub setup: String,
    pub method: String,
    /// Relative Q-norm distance to the reference reconstruction (the full-order one).
    pub rel_error: Option<f64>,
    /// Relative Q-norm distance to the exact coefficients.
    pub rel_error_truth: Option<f64>,
    pub time_s: f64,
    pub speedup: Option<f64>,
    pub fom_solves: usize,
    pub n_q: Option<usize>,
    pub n_v: Option<usize>,
    pub outer_iterations: usize,
    pub total_iterations: usize,
    pub objective: f64,
    pub target: f64,
    pub converged: bool,
    pub failure: Option<String>,
    pub data_hash: String,
    #[serde(skip)]
    pub q: ParameterVector,
}

pub fn relative_error(q: &ParameterVector, reference: &ParameterVector) -> f64 {
    (q - reference).norm() / reference.norm()
}

/// Output of [`run_comparison`] with the run ledgers.
#[derive(Debug, Clone, Default)]
pub struct Comparison {
    pub fom: Option<RunReport>,
    pub tr: Option<RunReport>,
    pub fom_ledger: Option<IrgnmLedger>,
    pub tr_ledger: Option<TrLedger>,
}

impl Comparison {
    pub fn reports(&self) -> Vec<RunReport> {
        self.fom.iter().chain(self.tr.iter()).cloned().collect()
    }
}

fn failed_report(setup: &str, method: &str, data: &SyntheticData, target: f64, e: &Error) -> RunReport {
    RunReport {
        setup: setup.to_string(),
        method: method.to_string(),
        rel_error: None,
        rel_error_truth: None,
        time_s: 0.0,
        speedup: None,
        fom_solves: 0,
        n_q: None,
        n_v: None,
        outer_iterations: 0,
        total_iterations: 0,
        objective: f64::NAN,
        target,
        converged: false,
        failure: Some(e.to_string()),
        data_hash: data.fingerprint(),
        q: ParameterVector::zeros(0),
    }
}

/// Runs the requested reconstructions on the same measurements.
///
/// A failing run yields a report with `failure` set instead of an error.
pub fn run_comparison(
    exp: &Experiment,
    data: &SyntheticData,
    truth: Option<&ParameterVector>,
    method: Method,
) -> Result<Comparison> {
    let cfg = &exp.config.solver;
    let setup = exp.config.name.clone();
    let q0 = exp.initial_guess();
    let target = cfg.irgnm.target(data.delta);
    let hash = data.fingerprint();
    let mut out = Comparison::default();

    if matches!(method, Method::Fom | Method::Both) {
        let fom = exp.model_with_data(data.noisy.clone())?;
        let start = Instant::now();
        match irgnm_run(&fom, &q0, data.delta, &cfg.irgnm) {
            Ok(run) => {
                out.fom = Some(RunReport {
                    setup: setup.clone(),
                    method: "FOM".into(),
                    rel_error: None,
                    rel_error_truth: truth.map(|t| relative_error(&run.q, t)),
                    time_s: start.elapsed().as_secs_f64(),
                    speedup: None,
                    fom_solves: fom.counters().solves(),
                    n_q: None,
                    n_v: None,
                    outer_iterations: run.iterations,
                    total_iterations: run.iterations,
                    objective: run.objective,
                    target,
                    converged: run.converged,
                    failure: None,
                    data_hash: hash.clone(),
                    q: run.q.clone(),
                });
                out.fom_ledger = Some(run.ledger);
            }
            Err(e) => out.fom = Some(failed_report(&setup, "FOM", data, target, &e)),
        }
    }

    if matches!(method, Method::Tr | Method::Both) {
        let fom = exp.model_with_data(data.noisy.clone())?;
        let start = Instant::now();
        match tr_irgnm(&fom, &q0, data.delta, &cfg.irgnm, &cfg.tr) {
            Ok(run) => {
                let time_s = start.elapsed().as_secs_f64();
                let reference = out.fom.as_ref().filter(|r| r.failure.is_none());
                out.tr = Some(RunReport {
                    setup: setup.clone(),
                    method: "TR".into(),
                    rel_error: reference.map(|r| relative_error(&run.q, &r.q)),
                    rel_error_truth: truth.map(|t| relative_error(&run.q, t)),
                    time_s,
                    speedup: reference.map(|r| r.time_s / time_s),
                    fom_solves: fom.counters().solves(),
                    n_q: Some(run.n_q),
                    n_v: Some(run.n_v),
                    outer_iterations: run.iterations,
                    total_iterations: run.reduced_iterations,
                    objective: run.objective,
                    target,
                    converged: run.converged(),
                    failure: None,
                    data_hash: hash.clone(),
                    q: run.q.clone(),
                });
                out.tr_ledger = Some(run.ledger);
            }
            Err(e) => out.tr = Some(failed_report(&setup, "TR", data, target, &e)),
        }
    }
    Ok(out)
}

pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[RunReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const REPORT_COLUMNS: [&str; 16] = [
    "setup",
    "method",
    "rel_error",
    "rel_error_truth",
    "time_s",
    "speedup",
    "fom_solves",
    "n_q",
    "n_v",
    "outer_iterations",
    "total_iterations",
    "objective",
    "target",
    "converged",
    "failure",
    "data_hash",
];

pub fn read_reports_csv(path: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<RunReport>, _>>()?)
}

/// Comparison table as aligned text, one row per report.
pub fn format_table(reports: &[RunReport]) -> String {
    let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map_or("--".to_string(), f);
    let mut s = format!(
        "{:<10} {:<6} {:>11} {:>10} {:>9} {:>10} {:>5} {:>6} {:>7} {:>7} {:>5}\n",
        "setup", "method", "Q rel.err.", "time [s]", "speed-up", "#FOM sol.", "n_Q", "n_V", "o.iter", "t.iter", "conv"
    );
    for r in reports {
        s += &format!(
            "{:<10} {:<6} {:>11} {:>10.2} {:>9} {:>10} {:>5} {:>6} {:>7} {:>7} {:>5}\n",
            r.setup,
            r.method,
            opt(r.rel_error, &|x| format!("{x:.2e}")),
            r.time_s,
            opt(r.speedup, &|x| format!("{x:.2}")),
            r.fom_solves,
            r.n_q.map_or("--".into(), |v| v.to_string()),
            r.n_v.map_or("--".into(), |v| v.to_string()),
            r.outer_iterations,
            r.total_iterations,
            if r.converged { "yes" } else { "no" },
        );
    }
    s
}

/// Coefficients of a layered parameter field as a 2D array over the in-plane axes.
///
/// Rows follow the first in-plane axis. Fails for 3D fields without a free layer.
pub fn coefficient_grid(layout: &ParameterLayout, q: &ParameterVector) -> Result<DMatrix<f64>> {
    let dim = layout.nodes_along().len();
    let plane: Vec<usize> = (0..dim).filter(|&a| layout.free_layer().is_none_or(|l| l.axis != a)).collect();
    if plane.len() != 2 {
        return Err(Error::Config("coefficient grid needs a two-dimensional parameter layer".into()));
    }
    let (ra, ca) = (plane[0], plane[1]);
    let n = layout.nodes_along();
    let mut m = DMatrix::from_element(n[ra], n[ca], f64::NAN);
    for p in 0..layout.n_params() {
        let mi = layout.node_multi(layout.node_of_param(p));
        m[(mi[ra], mi[ca])] = q[p];
    }
    Ok(m)
}

/// Writes `q` as a coefficient grid with its metadata header.
pub fn dump_field(path: impl AsRef<Path>, layout: &ParameterLayout, q: &ParameterVector, label: &str) -> Result<()> {
    let m = coefficient_grid(layout, q)?;
    let header = vec![
        label.to_string(),
        format!("rows {} cols {}", m.nrows(), m.ncols()),
        format!("coarsening {:?} free_layer {:?}", layout.coarsening(), layout.free_layer()),
        format!("first coefficient at {:?}", layout.param_coord(0)),
    ];
    write_field(path, &m, &header)
}

#[cfg(test)]
mod tests {
    use super::super::config::{PointDefect, Profile, RectangleDefect};
    use super::*;

    fn desk() -> Experiment {
        Experiment::build(&Profile::Desk2d.config().unwrap()).unwrap()
    }

    #[test]
    fn truth_rules() {
        let exp = desk();
        let layout = exp.layout();
        let empty = build_truth(&TruthConfig::default(), layout).unwrap();
        assert!(empty.iter().all(|&v| v == 1.0));
        let t = TruthConfig {
            points: vec![PointDefect { center: vec![5.0, 0.0], value: 3.0 }],
            ..TruthConfig::default()
        };
        let q = build_truth(&t, layout).unwrap();
        let p = layout.param_at(&[5.0, 0.0], 1e-9).unwrap();
        assert_eq!(q[p], 3.0);
        let nb = layout.neighbors(p);
        assert_eq!(nb.len(), 8);
        assert!(nb.iter().all(|&i| q[i] == 2.0));
        assert_eq!(q.iter().filter(|&&v| v != 1.0).count(), 9);
        let r = TruthConfig {
            rectangles: vec![RectangleDefect { lower: vec![-10.0, -5.0], upper: vec![10.0, 5.0], value: 2.0 }],
            ..TruthConfig::default()
        };
        let q = build_truth(&r, layout).unwrap();
        for p in 0..layout.n_params() {
            let (lo, hi) = layout.param_support(p);
            let inside = lo[0] >= -10.0 && hi[0] <= 10.0 && lo[1] >= -5.0 && hi[1] <= 5.0;
            assert_eq!(q[p] == 2.0, inside);
        }
        let bad = TruthConfig {
            points: vec![PointDefect { center: vec![5.5, 0.0], value: 3.0 }],
            ..TruthConfig::default()
        };
        assert_eq!(build_truth(&bad, layout).unwrap_err().exit_code(), 2);
    }
}

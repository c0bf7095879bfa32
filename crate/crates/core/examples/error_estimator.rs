//! A posteriori bounds of a small reduced model against the full-order truth at
//! random admissible parameters.
//!
//! `cargo run --release --example error_estimator [effectivity.csv]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trirgnm::cli::{generate_data, Experiment, Profile};
use trirgnm::estimator::{energy_error, estimate, parameter_hash, write_effectivity_csv, EffectivityRow};
use trirgnm::model::ParameterVector;
use trirgnm::objective::{eval_gradient, eval_objective, DiscreteModel};
use trirgnm::rom::{initial_basis, ReducedModel};

fn main() -> anyhow::Result<()> {
    let exp = Experiment::build(&Profile::Desk2d.config()?)?;
    let data = generate_data(&exp.fom, &exp.truth()?, 0.01, 1)?;
    let fom = exp.model_with_data(data.noisy)?;

    let q0 = exp.initial_guess();
    let point = eval_objective(&fom, &q0)?;
    let (g, adj) = eval_gradient(&fom, &point)?;
    let basis = initial_basis(&fom, &q0, &g, &point.state, &adj, 1e-3)?;
    println!("reduced spaces: n_Q {}  n_V {}", basis.n_q(), basis.n_v());
    let rom = ReducedModel::project(&fom, basis)?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = Vec::new();
    for _ in 0..8 {
        let q_r = ParameterVector::from_fn(rom.n_params(), |_, _| rng.random_range(-0.3..0.3));
        let q_r = rom.project_admissible(&rom.basis().restrict_parameter(&q0), &(rom.basis().restrict_parameter(&q0) + q_r));
        let q = rom.basis().lift_parameter(&q_r);
        let red = eval_objective(&rom, &q_r)?;
        let lifted = rom.lift_trajectory(&red.state);
        let full = eval_objective(&fom, &q)?;
        let rep = estimate(&fom, &q, &lifted, red.objective)?;
        let err = energy_error(&fom, &q, &full.state, &lifted)?;
        let gap = (full.objective - red.objective).abs();
        println!(
            "Delta_u {:.3e} >= {:.3e} (eff {:6.2})   Delta_J {:.3e} >= {:.3e}",
            rep.delta_u,
            err,
            rep.delta_u / err,
            rep.delta_j,
            gap
        );
        rows.push(EffectivityRow {
            q_hash: parameter_hash(&q),
            delta_u: rep.delta_u,
            true_error: err,
            effectivity: rep.delta_u / err,
            delta_j: rep.delta_j,
            true_j_gap: gap,
        });
    }
    if let Some(path) = std::env::args().nth(1) {
        write_effectivity_csv(path, &rows)?;
    }
    Ok(())
}

//! Trust-region reduced-basis IRGNM on desk2d, printing the outer-iteration ledger.
//!
//! `cargo run --release --example tr_irgnm_reconstruction [ledger.json]`

use trirgnm::cli::{generate_data, relative_error, Experiment, Profile};
use trirgnm::tr::tr_irgnm;

fn main() -> anyhow::Result<()> {
    let cfg = Profile::Desk2d.config()?;
    let exp = Experiment::build(&cfg)?;
    let truth = exp.truth()?;
    let data = generate_data(&exp.fom, &truth, cfg.noise.relative, cfg.noise.seed)?;
    let fom = exp.model_with_data(data.noisy)?;

    let run = tr_irgnm(&fom, &exp.initial_guess(), data.delta, &cfg.solver.irgnm, &cfg.solver.tr)?;
    for r in &run.ledger.records {
        println!(
            "i {:2}  J_h {:.4e}  trial {:.4e}  J_r {:.4e}  eta {:.3}  rho {}  {}  n_Q {:3}  n_V {:4}  stop {:?}",
            r.i,
            r.j_h,
            r.j_h_trial.unwrap_or(f64::NAN),
            r.j_r.unwrap_or(f64::NAN),
            r.eta,
            r.rho.map_or("--".into(), |v| format!("{v:.3}")),
            if r.accepted { "accept" } else { "reject" },
            r.n_q,
            r.n_v,
            r.subproblem_stop,
        );
    }
    println!(
        "{:?}: J {:.4e}  outer {}  reduced iterations {}  FOM solves {}  {:.1}s",
        run.status,
        run.objective,
        run.iterations,
        run.reduced_iterations,
        run.fom_solves,
        run.seconds
    );
    println!("relative error to the exact field: {:.3}", relative_error(&run.q, &truth));
    if let Some(path) = std::env::args().nth(1) {
        run.ledger.write_json(&path)?;
    }
    Ok(())
}

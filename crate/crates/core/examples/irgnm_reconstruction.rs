//! Full-order IRGNM reconstruction of the desk2d point defects.
//!
//! `cargo run --release --example irgnm_reconstruction [ledger.csv]`

use trirgnm::cli::{coefficient_grid, generate_data, relative_error, Experiment, Profile};
use trirgnm::irgnm::irgnm_run;

fn main() -> anyhow::Result<()> {
    let cfg = Profile::Desk2d.config()?;
    let exp = Experiment::build(&cfg)?;
    let truth = exp.truth()?;
    let data = generate_data(&exp.fom, &truth, cfg.noise.relative, cfg.noise.seed)?;
    let fom = exp.model_with_data(data.noisy.clone())?;

    let run = irgnm_run(&fom, &exp.initial_guess(), data.delta, &cfg.solver.irgnm)?;
    for r in &run.ledger.records {
        println!(
            "it {:3}  J {:.4e}  alpha {:.3e}  inner {:4}  |step| {:.3e}{}",
            r.iteration,
            r.objective,
            r.alpha,
            r.inner_iters,
            r.step_norm,
            if r.saturated { "  (saturated)" } else { "" }
        );
    }
    println!(
        "converged {}  J {:.4e} (target {:.4e})  iterations {}  FOM solves {}",
        run.converged,
        run.objective,
        cfg.solver.irgnm.target(data.delta),
        run.iterations,
        fom.counters().solves()
    );
    println!("relative error to the exact field: {:.3}", relative_error(&run.q, &truth));
    let grid = coefficient_grid(exp.layout(), &run.q)?;
    println!("coefficient range [{:.3}, {:.3}]", grid.min(), grid.max());
    if let Some(path) = std::env::args().nth(1) {
        run.ledger.write_csv(path.as_ref())?;
    }
    Ok(())
}

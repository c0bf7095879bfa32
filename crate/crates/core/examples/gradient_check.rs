//! Compares the adjoint gradient of the misfit with central finite differences along a
//! random direction, for a sweep of step sizes.
//!
//! `cargo run --release --example gradient_check`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trirgnm::cli::{generate_data, Experiment, Profile};
use trirgnm::model::ParameterVector;
use trirgnm::objective::{eval_gradient, eval_objective};

fn main() -> anyhow::Result<()> {
    let exp = Experiment::build(&Profile::Desk2d.config()?)?;
    let data = generate_data(&exp.fom, &exp.truth()?, 0.01, 7)?;
    let fom = exp.model_with_data(data.noisy)?;

    let q = exp.initial_guess();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = ParameterVector::from_fn(q.len(), |_, _| rng.random_range(-1.0..1.0));
    let d = &d / d.norm();

    let point = eval_objective(&fom, &q)?;
    let (g, _) = eval_gradient(&fom, &point)?;
    let exact = g.dot(&d);
    println!("J(q) = {:.6e}   <grad J, d> = {:.10e}", point.objective, exact);
    for e in 1..=7 {
        let h = 10f64.powi(-e);
        let jp = eval_objective(&fom, &(&q + &d * h))?.objective;
        let jm = eval_objective(&fom, &(&q - &d * h))?.objective;
        let fd = (jp - jm) / (2.0 * h);
        println!("h = 1e-{e}  fd = {fd:.10e}  rel. err = {:.3e}", (fd - exact).abs() / exact.abs());
    }
    Ok(())
}

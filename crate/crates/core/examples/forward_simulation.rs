//! Forward wave simulation on the desk2d plate: assembles the problem, marches the
//! exact coefficient field through time and reports sensor signals and energy.
//!
//! `cargo run --release --example forward_simulation [out.bin]`

use trirgnm::cli::{trajectory_norm, Experiment, Profile};
use trirgnm::io::write_trajectory;
use trirgnm::objective::DiscreteModel;
use trirgnm::timestep::energy;

fn main() -> anyhow::Result<()> {
    let exp = Experiment::build(&Profile::Desk2d.config()?)?;
    let q = exp.truth()?;
    println!(
        "dofs {}  coefficients {}  sensors {}  steps {}  dt {}",
        exp.family.n_dofs(),
        exp.family.n_params(),
        exp.observation.n_obs(),
        exp.time.steps,
        exp.time.dt()
    );

    let st = exp.fom.stepping(&q)?;
    let traj = exp.fom.primal(&st)?;
    let y = exp.fom.observe(&traj);
    println!("||C u|| = {:.4e}", trajectory_norm(&exp.observation, &y, exp.time.dt()));
    for k in (0..=exp.time.steps).step_by(4) {
        let peak = y.column(k).amax();
        println!("t = {:5.2}  energy {:.6e}  max sensor |u| {:.3e}", exp.time.time(k), energy(&st, &traj, k), peak);
    }

    if let Some(path) = std::env::args().nth(1) {
        write_trajectory(&path, &traj)?;
        println!("wrote {path}");
    }
    Ok(())
}

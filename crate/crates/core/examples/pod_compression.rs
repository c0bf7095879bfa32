//! POD of primal snapshots in the V-inner product: number of modes and projection
//! error for a range of tolerances.
//!
//! `cargo run --release --example pod_compression`

use trirgnm::cli::{Experiment, Profile};
use trirgnm::linalg::col;
use trirgnm::objective::DiscreteModel;
use trirgnm::rom::pod_compress;

fn main() -> anyhow::Result<()> {
    let exp = Experiment::build(&Profile::Desk2d.config()?)?;
    let fom = &exp.fom;
    let st = fom.stepping(&exp.truth()?)?;
    let snaps = fom.primal(&st)?.displacement;
    let gram = exp.family.gram_v();
    let energy: f64 = (0..snaps.ncols()).map(|j| gram.bilinear(col(&snaps, j), col(&snaps, j))).sum();

    for e in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8] {
        let modes = pod_compress(&snaps, gram, e);
        // Projection error in the V-norm, relative to the snapshot energy.
        let coeff = modes.tr_mul(&gram.mul_dense(&snaps));
        let resid = &snaps - &modes * coeff;
        let err: f64 = (0..resid.ncols()).map(|j| gram.bilinear(col(&resid, j), col(&resid, j))).sum();
        println!("eps {e:.0e}  modes {:3}  relative projection error {:.3e}", modes.ncols(), (err / energy).sqrt());
    }
    Ok(())
}

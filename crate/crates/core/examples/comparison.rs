//! Side-by-side FOM and TR reconstruction on one data set, printed as a comparison table
//! and written to `results.csv` in the given directory.
//!
//! `cargo run --release --example comparison [desk2d|desk3d|paper3d] [out_dir]`

use clap::ValueEnum;
use trirgnm::cli::{format_table, generate_data, run_comparison, write_reports_csv, Experiment, Method, Profile};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let profile = match args.next() {
        Some(p) => Profile::from_str(&p, true).map_err(anyhow::Error::msg)?,
        None => Profile::Desk2d,
    };
    let cfg = profile.config()?;
    let exp = Experiment::build(&cfg)?;
    let truth = exp.truth()?;
    let data = generate_data(&exp.fom, &truth, cfg.noise.relative, cfg.noise.seed)?;
    println!("noise level delta = {:.4e}", data.delta);

    let cmp = run_comparison(&exp, &data, Some(&truth), Method::Both)?;
    print!("{}", format_table(&cmp.reports()));
    if let Some(dir) = args.next() {
        std::fs::create_dir_all(&dir)?;
        write_reports_csv(std::path::Path::new(&dir).join("results.csv"), &cmp.reports())?;
    }
    Ok(())
}

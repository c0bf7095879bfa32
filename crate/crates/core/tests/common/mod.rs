#![allow(dead_code)]

use std::sync::Arc;

use trirgnm::model::{
    assemble_observation, assemble_operators, Face, Grid, LoadTrajectory, MaterialSpec, ParameterVector, SensorLayout,
    SensorSpec, Side,
};
use trirgnm::objective::{eval_objective, FomModel};
use trirgnm::timestep::TimeGrid;

/// 2D toy plate with a 2x2 coefficient grid (4 parameters), clamped on one side,
/// observed in full and driven by a smooth separable load.
pub fn toy_fom(steps: usize) -> FomModel {
    let grid = Grid::new(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3], &[Face { axis: 0, side: Side::Min }]).unwrap();
    let material = MaterialSpec {
        lambda: 2.0,
        mu: 1.0,
        density: 1.0,
        stiffness_scale: 1.0,
        parameter_coarsening: vec![3, 3],
        free_layer: None,
        fixed_value: 1.0,
    };
    let family = Arc::new(assemble_operators(&grid, &material).unwrap());
    let spec = SensorSpec { layout: SensorLayout::Full, component: 0, surface: None };
    let obs = Arc::new(assemble_observation(&family, &spec).unwrap());
    let n = family.n_dofs();
    let spatial: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.73).sin()).collect();
    let load = LoadTrajectory::separable(spatial, |t| (1.3 * t).sin());
    FomModel::new(family, obs, load, TimeGrid::new(4.0, steps).unwrap(), 0.5).unwrap()
}

pub fn toy_truth() -> ParameterVector {
    ParameterVector::from_vec(vec![1.6, 0.7, 1.3, 0.9])
}

/// Exact observations of `q` on `fom`.
pub fn observe(fom: &FomModel, q: &ParameterVector) -> nalgebra::DMatrix<f64> {
    let p = eval_objective(fom, q).unwrap();
    fom.observe(&p.state)
}

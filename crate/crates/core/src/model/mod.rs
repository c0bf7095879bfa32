//! Discrete elastic plate: grid, B-spline parameter field, affine stiffness family,
//! Gram matrices, observation operators and the load.

mod assembly;
mod grid;
mod load;
mod observation;
mod parameter;

pub use assembly::{assemble_operators, AffineOperatorFamily};
pub use grid::{Face, Grid, Side};
pub use load::{Excitation, LoadTrajectory};
pub use observation::{
    assemble_observation, plane_axes, ObservationKind, ObservationOperator, SensorLayout, SensorSpec,
};
pub use parameter::{FreeLayer, MaterialSpec, ParameterBounds, ParameterLayout, ParameterVector};

/// Projection onto the admissible box (the full-order admissible set).
pub fn project_admissible(q: &ParameterVector, bounds: &ParameterBounds) -> ParameterVector {
    bounds.project(q)
}

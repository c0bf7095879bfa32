use serde::{Deserialize, Serialize};

use super::assembly::AffineOperatorFamily;
use super::grid::{Face, Grid, Side};
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, BandCholesky, CsrMatrix};

/// Sensor placement in the in-plane coordinates of the measurement surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum SensorLayout {
    /// Canonical embedding of the whole displacement field.
    Full,
    /// Tensor grid `{start, start+step, .., stop}^2`.
    Grid { start: f64, stop: f64, step: f64 },
    /// The four lines `y = start`, `y = stop`, `z = start`, `z = stop`, sampled with `step`.
    Edge { start: f64, stop: f64, step: f64 },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    #[serde(flatten)]
    pub layout: SensorLayout,
    /// Displacement component read by every sensor.
    #[serde(default)]
    pub component: usize,
    /// Measurement face; `None` uses the whole (2D) domain as the surface.
    #[serde(default)]
    pub surface: Option<Face>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    FullField,
    Sensors,
}

/// `C_h` with its Gram `M_C`, the products used in the adjoint, and `||C||`.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    kind: ObservationKind,
    c: CsrMatrix,
    m_c: CsrMatrix,
    /// `C^T M_C C`
    c_h: CsrMatrix,
    /// `C^T M_C`
    c_t_mc: CsrMatrix,
    norm: f64,
    positions: Vec<Vec<f64>>,
}

/// Axes spanning the measurement surface.
pub fn plane_axes(dim: usize, surface: Option<Face>) -> Vec<usize> {
    (0..dim).filter(|&a| surface.is_none_or(|f| f.axis != a)).collect()
}

fn layout_positions(layout: &SensorLayout) -> Result<Vec<Vec<f64>>> {
    let range = |start: f64, stop: f64, step: f64| -> Result<Vec<f64>> {
        if !(step > 0.0) || stop < start {
            return Err(Error::Config("sensor range needs step > 0 and stop >= start".into()));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    };
    Ok(match layout {
        SensorLayout::Full => Vec::new(),
        SensorLayout::Grid { start, stop, step } => {
            let r = range(*start, *stop, *step)?;
            let mut pts = Vec::new();
            for &z in &r {
                for &y in &r {
                    pts.push(vec![y, z]);
                }
            }
            pts
        }
        SensorLayout::Edge { start, stop, step } => {
            let r = range(*start, *stop, *step)?;
            let mut pts = Vec::new();
            for &s in &r {
                pts.push(vec![*start, s]);
                pts.push(vec![*stop, s]);
                if s != *start && s != *stop {
                    pts.push(vec![s, *start]);
                    pts.push(vec![s, *stop]);
                }
            }
            pts.sort_by(|a, b| (a[1], a[0]).partial_cmp(&(b[1], b[0])).unwrap());
            pts.dedup();
            pts
        }
        SensorLayout::Points { points } => points.clone(),
    })
}

/// Builds the observation operator on `family`'s grid.
///
/// Sensor rows integrate the trace of the FE hat at the sensor node over the
/// measurement surface, so each row weight is the lumped surface measure of that node.
pub fn assemble_observation(family: &AffineOperatorFamily, spec: &SensorSpec) -> Result<ObservationOperator> {
    let grid = family.grid();
    let dim = grid.dim();
    let n = family.n_dofs();
    if let SensorLayout::Full = spec.layout {
        let gram = family.gram_v().clone();
        return Ok(ObservationOperator {
            kind: ObservationKind::FullField,
            c: CsrMatrix::identity(n),
            c_t_mc: gram.clone(),
            c_h: gram.clone(),
            m_c: gram,
            norm: 1.0,
            positions: Vec::new(),
        });
    }
    if spec.component >= dim {
        return Err(Error::Config(format!("sensor component {} out of range", spec.component)));
    }
    let plane = plane_axes(dim, spec.surface);
    if plane.len() != 2 {
        return Err(Error::Config(
            "sensor layouts need a 2D domain or a measurement face of a 3D domain".into(),
        ));
    }
    let positions = layout_positions(&spec.layout)?;
    if positions.is_empty() {
        return Err(Error::Config("sensor layout is empty".into()));
    }
    let mut triplets = Vec::with_capacity(positions.len());
    for (row, pos) in positions.iter().enumerate() {
        if pos.len() != 2 {
            return Err(Error::Config("sensor positions need two in-plane coordinates".into()));
        }
        let mut x = vec![0.0; dim];
        if let Some(f) = spec.surface {
            x[f.axis] = match f.side {
                Side::Min => grid.lo()[f.axis],
                Side::Max => grid.hi()[f.axis],
            };
        }
        x[plane[0]] = pos[0];
        x[plane[1]] = pos[1];
        let tol = 1e-9 * plane.iter().map(|&a| grid.h(a)).fold(0.0, f64::max);
        let node = grid.node_at(&x, tol).ok_or_else(|| {
            Error::Config(format!("sensor at {pos:?} is not a node of the measurement surface"))
        })?;
        let w = surface_measure(grid, &plane, node);
        // Trace of a Dirichlet node vanishes: the row stays empty.
        if let Some(d) = grid.dof(node, spec.component) {
            triplets.push((row, d, w));
        }
    }
    let c = CsrMatrix::from_triplets(positions.len(), n, &triplets);
    let ct = c.transpose();
    let c_h = ct.matmul(&c);
    let norm = observation_norm(family, &c_h)?;
    Ok(ObservationOperator {
        kind: ObservationKind::Sensors,
        m_c: CsrMatrix::identity(positions.len()),
        c_t_mc: ct,
        c_h,
        c,
        norm,
        positions,
    })
}

/// `int_surface phi_node`, exact for the bilinear trace.
fn surface_measure(grid: &Grid, plane: &[usize], node: usize) -> f64 {
    let m = grid.node_multi(node);
    plane
        .iter()
        .map(|&a| {
            let interior = m[a] > 0 && m[a] < grid.cells()[a];
            grid.h(a) * if interior { 1.0 } else { 0.5 }
        })
        .product()
}

/// Largest `sigma` with `C^T M_C C v = sigma^2 M_V v`.
fn observation_norm(family: &AffineOperatorFamily, c_h: &CsrMatrix) -> Result<f64> {
    let gram = family.gram_v();
    let chol = BandCholesky::factor(gram)?;
    let s2 = power_iteration(
        family.n_dofs(),
        |x| c_h.apply(x),
        |x| chol.solve(x),
        |x| gram.apply(x),
        2000,
        1e-10,
    );
    // Power iteration approaches from below; a small margin keeps the bound safe.
    Ok(s2.max(0.0).sqrt() * (1.0 + 1e-6))
}

impl ObservationOperator {
    pub fn kind(&self) -> ObservationKind {
        self.kind
    }
    pub fn n_obs(&self) -> usize {
        self.c.nrows()
    }
    pub fn c(&self) -> &CsrMatrix {
        &self.c
    }
    pub fn m_c(&self) -> &CsrMatrix {
        &self.m_c
    }
    pub fn c_h(&self) -> &CsrMatrix {
        &self.c_h
    }
    pub fn c_t_mc(&self) -> &CsrMatrix {
        &self.c_t_mc
    }
    /// Upper bound for `||C u||_{M_C} / ||u||_{M_V}`.
    pub fn norm_bound(&self) -> f64 {
        self.norm
    }
    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.c.apply(u)
    }
    /// `||y||_{M_C}^2`
    pub fn norm_sq(&self, y: &[f64]) -> f64 {
        self.m_c.bilinear(y, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_operators, MaterialSpec};

    fn material(dim: usize) -> MaterialSpec {
        MaterialSpec {
            lambda: 1.0,
            mu: 1.0,
            density: 1.0,
            stiffness_scale: 1.0,
            parameter_coarsening: vec![1; dim],
            free_layer: None,
            fixed_value: 1.0,
        }
    }

    #[test]
    fn corner_sensors_of_one_face_integrate_a_constant_field() {
        let g = Grid::new(&[(0.0, 0.5), (0.0, 2.0), (1.0, 4.0)], &[1, 1, 1], &[]).unwrap();
        let f = assemble_operators(&g, &material(3)).unwrap();
        let spec = SensorSpec {
            layout: SensorLayout::Points {
                points: vec![vec![0.0, 1.0], vec![2.0, 1.0], vec![0.0, 4.0], vec![2.0, 4.0]],
            },
            component: 2,
            surface: Some(Face { axis: 0, side: Side::Min }),
        };
        let obs = assemble_observation(&f, &spec).unwrap();
        let mut v = vec![0.0; f.n_dofs()];
        for i in (2..v.len()).step_by(3) {
            v[i] = 1.5;
        }
        let total: f64 = obs.apply(&v).iter().sum();
        assert!((total - 2.0 * 3.0 * 1.5).abs() < 1e-14);
    }

    #[test]
    fn grid_and_edge_layout_counts() {
        let r = |s| layout_positions(&s).unwrap().len();
        assert_eq!(r(SensorLayout::Grid { start: -14.0, stop: 14.0, step: 4.0 }), 64);
        assert_eq!(r(SensorLayout::Edge { start: -14.0, stop: 14.0, step: 1.0 }), 4 * 28);
    }

    #[test]
    fn off_surface_sensor_is_a_config_error() {
        let g = Grid::new(&[(0.0, 2.0), (0.0, 2.0)], &[2, 2], &[]).unwrap();
        let f = assemble_operators(&g, &material(2)).unwrap();
        let spec = SensorSpec {
            layout: SensorLayout::Points { points: vec![vec![0.5, 1.0]] },
            component: 0,
            surface: None,
        };
        assert!(matches!(assemble_observation(&f, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn full_field_norm_is_one_and_power_iteration_agrees() {
        let g = Grid::new(&[(0.0, 2.0), (0.0, 2.0)], &[4, 4], &[]).unwrap();
        let f = assemble_operators(&g, &material(2)).unwrap();
        let s = observation_norm(&f, f.gram_v()).unwrap();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

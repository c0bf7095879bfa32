use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::assembly::AffineOperatorFamily;
use crate::error::{Error, Result};

/// Separable excitation `l(t, x) = a * l_t(t) * prod_a l_a(x_a) * direction`.
///
/// `l_t` is a Gaussian-windowed sine burst, each spatial factor a `cos^2` bump of
/// compact support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub amplitude: f64,
    pub frequency: f64,
    pub delay: f64,
    pub width: f64,
    /// Axes carrying a spatial bump; other axes are uniform.
    pub axes: Vec<usize>,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub direction: Vec<f64>,
}

impl Excitation {
    pub fn temporal(&self, t: f64) -> f64 {
        let s = t - self.delay;
        (2.0 * std::f64::consts::PI * self.frequency * s).sin() * (-(s / self.width).powi(2)).exp()
    }

    pub fn spatial(&self, x: &[f64]) -> f64 {
        self.axes
            .iter()
            .zip(self.center.iter().zip(&self.radius))
            .map(|(&a, (&c, &r))| {
                let s = (x[a] - c) / r;
                if s.abs() < 1.0 {
                    (0.5 * std::f64::consts::PI * s).cos().powi(2)
                } else {
                    0.0
                }
            })
            .product()
    }
}

/// Load trajectory `L(t) = l_t(t) * F` with a fixed lumped spatial vector `F`.
#[derive(Clone)]
pub struct LoadTrajectory {
    spatial: Vec<f64>,
    temporal: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for LoadTrajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadTrajectory").field("dofs", &self.spatial.len()).finish()
    }
}

impl LoadTrajectory {
    pub fn new(family: &AffineOperatorFamily, excitation: &Excitation) -> Result<Self> {
        let g = family.grid();
        let dim = g.dim();
        if excitation.direction.len() != dim
            || excitation.center.len() != excitation.axes.len()
            || excitation.radius.len() != excitation.axes.len()
            || excitation.axes.iter().any(|&a| a >= dim)
            || excitation.radius.iter().any(|&r| !(r > 0.0))
        {
            return Err(Error::Config("excitation axes/center/radius/direction are inconsistent".into()));
        }
        let mut spatial = vec![0.0; family.n_dofs()];
        for &id in g.free_nodes() {
            let x = g.node_coord(id);
            let s = excitation.amplitude * excitation.spatial(&x);
            for c in 0..dim {
                let d = g.dof(id, c).unwrap();
                spatial[d] = s * excitation.direction[c] * family.mass_h()[d];
            }
        }
        let e = excitation.clone();
        Ok(Self { spatial, temporal: Arc::new(move |t| e.temporal(t)) })
    }

    pub fn zero(n: usize) -> Self {
        Self::separable(vec![0.0; n], |_| 0.0)
    }

    /// `L(t) = f(t) * spatial`.
    pub fn separable(spatial: Vec<f64>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { spatial, temporal: Arc::new(f) }
    }

    pub fn temporal(&self, t: f64) -> f64 {
        (self.temporal)(t)
    }

    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    pub fn is_zero(&self) -> bool {
        self.spatial.iter().all(|&v| v == 0.0)
    }
}

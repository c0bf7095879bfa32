use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

/// Coefficient vector of the stiffness field in the linear B-spline basis.
pub type ParameterVector = DVector<f64>;

/// Fixed layer of B-spline coefficients: only nodes with `index` along `axis` are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeLayer {
    pub axis: usize,
    pub index: usize,
}

/// Material constants and the layout of the parameter field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub lambda: f64,
    pub mu: f64,
    pub density: f64,
    /// Multiplies both Lamé constants; absorbs the time and length units.
    #[serde(default = "one")]
    pub stiffness_scale: f64,
    /// FE cells per parameter cell along each axis.
    pub parameter_coarsening: Vec<usize>,
    #[serde(default)]
    pub free_layer: Option<FreeLayer>,
    /// Coefficient assigned to B-spline nodes that are not free.
    #[serde(default = "one")]
    pub fixed_value: f64,
}

fn one() -> f64 {
    1.0
}

impl MaterialSpec {
    pub fn lambda_eff(&self) -> f64 {
        self.lambda * self.stiffness_scale
    }
    pub fn mu_eff(&self) -> f64 {
        self.mu * self.stiffness_scale
    }
}

/// Linear tensor-product B-spline nodes over a coarsening of the FE grid.
#[derive(Debug, Clone)]
pub struct ParameterLayout {
    dim: usize,
    coarsening: Vec<usize>,
    nodes_along: Vec<usize>,
    spacing: Vec<f64>,
    lo: Vec<f64>,
    free_layer: Option<FreeLayer>,
    /// Parameter index of each B-spline node, `None` when fixed.
    param_of_node: Vec<Option<usize>>,
    node_of_param: Vec<usize>,
}

impl ParameterLayout {
    pub fn new(grid: &Grid, material: &MaterialSpec) -> Result<Self> {
        let dim = grid.dim();
        let c = &material.parameter_coarsening;
        if c.len() != dim || c.iter().any(|&x| x == 0) {
            return Err(Error::Config("parameter_coarsening needs one positive entry per axis".into()));
        }
        for a in 0..dim {
            if grid.cells()[a] % c[a] != 0 {
                return Err(Error::Config(format!(
                    "axis {a}: {} cells not divisible by coarsening {}",
                    grid.cells()[a],
                    c[a]
                )));
            }
        }
        let nodes_along: Vec<usize> = (0..dim).map(|a| grid.cells()[a] / c[a] + 1).collect();
        if let Some(l) = material.free_layer {
            if l.axis >= dim || l.index >= nodes_along[l.axis] {
                return Err(Error::Config("free parameter layer out of range".into()));
            }
        }
        let total: usize = nodes_along.iter().product();
        let mut param_of_node = vec![None; total];
        let mut node_of_param = Vec::new();
        for id in 0..total {
            let m = multi(id, &nodes_along);
            let free = material.free_layer.is_none_or(|l| m[l.axis] == l.index);
            if free {
                param_of_node[id] = Some(node_of_param.len());
                node_of_param.push(id);
            }
        }
        Ok(Self {
            dim,
            coarsening: c.clone(),
            spacing: (0..dim).map(|a| grid.h(a) * c[a] as f64).collect(),
            lo: grid.lo().to_vec(),
            nodes_along,
            free_layer: material.free_layer,
            param_of_node,
            node_of_param,
        })
    }

    pub fn n_params(&self) -> usize {
        self.node_of_param.len()
    }
    pub fn n_nodes(&self) -> usize {
        self.param_of_node.len()
    }
    pub fn nodes_along(&self) -> &[usize] {
        &self.nodes_along
    }
    pub fn coarsening(&self) -> &[usize] {
        &self.coarsening
    }
    pub fn free_layer(&self) -> Option<FreeLayer> {
        self.free_layer
    }
    pub fn param_of_node(&self, node: usize) -> Option<usize> {
        self.param_of_node[node]
    }
    pub fn node_of_param(&self, p: usize) -> usize {
        self.node_of_param[p]
    }
    pub fn node_multi(&self, node: usize) -> Vec<usize> {
        multi(node, &self.nodes_along)
    }
    pub fn node_id(&self, m: &[usize]) -> usize {
        let mut id = 0;
        for a in (0..self.dim).rev() {
            id = id * self.nodes_along[a] + m[a];
        }
        id
    }

    /// Physical location of the B-spline node carrying parameter `p`.
    pub fn param_coord(&self, p: usize) -> Vec<f64> {
        self.node_multi(self.node_of_param[p])
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + i as f64 * self.spacing[a])
            .collect()
    }

    /// Support box `[lo, hi]` of the hat function of parameter `p`.
    pub fn param_support(&self, p: usize) -> (Vec<f64>, Vec<f64>) {
        let x = self.param_coord(p);
        let lo = (0..self.dim).map(|a| x[a] - self.spacing[a]).collect();
        let hi = (0..self.dim).map(|a| x[a] + self.spacing[a]).collect();
        (lo, hi)
    }

    /// Parameter at the node located within `tol` of `x`.
    pub fn param_at(&self, x: &[f64], tol: f64) -> Option<usize> {
        let mut m = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let s = (x[a] - self.lo[a]) / self.spacing[a];
            let i = s.round();
            if i < 0.0 || i >= self.nodes_along[a] as f64 || (s - i).abs() * self.spacing[a] > tol {
                return None;
            }
            m.push(i as usize);
        }
        self.param_of_node[self.node_id(&m)]
    }

    /// Parameters adjacent to `p` (sharing a B-spline cell), excluding `p`.
    pub fn neighbors(&self, p: usize) -> Vec<usize> {
        let m = self.node_multi(self.node_of_param[p]);
        let mut out = Vec::new();
        let count = 3usize.pow(self.dim as u32);
        for c in 0..count {
            let mut t = c;
            let mut nm = Vec::with_capacity(self.dim);
            let mut ok = true;
            for a in 0..self.dim {
                let off = (t % 3) as isize - 1;
                t /= 3;
                let v = m[a] as isize + off;
                if v < 0 || v >= self.nodes_along[a] as isize {
                    ok = false;
                }
                nm.push(v.max(0) as usize);
            }
            if !ok {
                continue;
            }
            if let Some(q) = self.param_of_node[self.node_id(&nm)] {
                if q != p {
                    out.push(q);
                }
            }
        }
        out
    }

    /// Evaluates the field `sum_p q_p nu_p(x)` with fixed nodes at `fixed`.
    pub fn evaluate(&self, q: &[f64], fixed: f64, x: &[f64]) -> f64 {
        let mut base = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let s = ((x[a] - self.lo[a]) / self.spacing[a]).clamp(0.0, (self.nodes_along[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.nodes_along[a] - 2);
            base.push(i);
            frac.push(s - i as f64);
        }
        let mut v = 0.0;
        for c in 0..1usize << self.dim {
            let mut w = 1.0;
            let mut m = Vec::with_capacity(self.dim);
            for a in 0..self.dim {
                let up = (c >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                m.push(base[a] + up as usize);
            }
            let coef = self.param_of_node[self.node_id(&m)].map_or(fixed, |p| q[p]);
            v += w * coef;
        }
        v
    }
}

fn multi(mut id: usize, n: &[usize]) -> Vec<usize> {
    n.iter()
        .map(|&k| {
            let r = id % k;
            id /= k;
            r
        })
        .collect()
}

/// Componentwise box constraints on the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ParameterBounds {
    fn default() -> Self {
        Self { lower: 1e-20, upper: 1e20 }
    }
}

impl ParameterBounds {
    /// Euclidean projection onto the box.
    pub fn project(&self, q: &ParameterVector) -> ParameterVector {
        q.map(|v| v.clamp(self.lower, self.upper))
    }

    pub fn contains(&self, q: &ParameterVector) -> bool {
        q.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::grid::Grid;

    fn material(c: Vec<usize>, layer: Option<FreeLayer>) -> MaterialSpec {
        MaterialSpec {
            lambda: 1.0,
            mu: 1.0,
            density: 1.0,
            stiffness_scale: 1.0,
            parameter_coarsening: c,
            free_layer: layer,
            fixed_value: 1.0,
        }
    }

    #[test]
    fn coarsened_layout_and_partition_of_unity() {
        let g = Grid::new(&[(-2.0, 2.0), (0.0, 4.0)], &[8, 4], &[]).unwrap();
        let l = ParameterLayout::new(&g, &material(vec![2, 2], None)).unwrap();
        assert_eq!(l.n_params(), 5 * 3);
        assert_eq!(l.param_coord(l.param_at(&[1.0, 2.0], 1e-9).unwrap()), vec![1.0, 2.0]);
        let ones = vec![1.0; l.n_params()];
        for x in [[-1.7, 0.3], [0.0, 0.0], [1.99, 3.5]] {
            assert!((l.evaluate(&ones, 7.0, &x) - 1.0).abs() < 1e-14);
        }
        assert_eq!(l.neighbors(l.param_at(&[0.0, 2.0], 1e-9).unwrap()).len(), 8);
        assert_eq!(l.neighbors(l.param_at(&[-2.0, 0.0], 1e-9).unwrap()).len(), 3);
    }

    #[test]
    fn free_layer_selects_a_slice() {
        let g = Grid::new(&[(0.0, 1.0), (0.0, 2.0), (0.0, 2.0)], &[2, 2, 2], &[]).unwrap();
        let l = ParameterLayout::new(&g, &material(vec![1, 1, 1], Some(FreeLayer { axis: 0, index: 0 })))
            .unwrap();
        assert_eq!(l.n_params(), 9);
        assert!(l.param_coord(4)[0] == 0.0);
        assert!(ParameterLayout::new(&g, &material(vec![1, 3, 1], None)).is_err());
    }
}

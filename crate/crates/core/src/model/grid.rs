use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Min,
    Max,
}

/// A boundary face of the box, `axis` in `0..dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

/// Uniform tensor-product grid of linear (bi/tri) Lagrange elements on a box.
///
/// Nodes are numbered lexicographically with axis 0 fastest. Free (non-Dirichlet)
/// nodes keep that order and carry `dim` interleaved displacement components.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    dirichlet: Vec<Face>,
    free_index: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
}

impl Grid {
    pub fn new(extents: &[(f64, f64)], cells: &[usize], dirichlet: &[Face]) -> Result<Self> {
        let dim = extents.len();
        if !(dim == 2 || dim == 3) || cells.len() != dim {
            return Err(Error::Config(format!(
                "grid must be 2D or 3D with one cell count per axis (got {dim} extents, {} counts)",
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c == 0) || extents.iter().any(|e| !(e.1 > e.0)) {
            return Err(Error::Config("grid needs positive cell counts and extents".into()));
        }
        if dirichlet.iter().any(|f| f.axis >= dim) {
            return Err(Error::Config("Dirichlet face axis out of range".into()));
        }
        let mut g = Self {
            dim,
            lo: extents.iter().map(|e| e.0).collect(),
            hi: extents.iter().map(|e| e.1).collect(),
            cells: cells.to_vec(),
            dirichlet: dirichlet.to_vec(),
            free_index: Vec::new(),
            free_nodes: Vec::new(),
        };
        let n = g.n_nodes();
        g.free_index = vec![None; n];
        for id in 0..n {
            let m = g.node_multi(id);
            let clamped = g.dirichlet.iter().any(|f| match f.side {
                Side::Min => m[f.axis] == 0,
                Side::Max => m[f.axis] == g.cells[f.axis],
            });
            if !clamped {
                g.free_index[id] = Some(g.free_nodes.len());
                g.free_nodes.push(id);
            }
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn dirichlet(&self) -> &[Face] {
        &self.dirichlet
    }
    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }
    pub fn nodes_along(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }
    pub fn n_nodes(&self) -> usize {
        (0..self.dim).map(|a| self.nodes_along(a)).product()
    }
    pub fn n_elements(&self) -> usize {
        self.cells.iter().product()
    }
    pub fn n_dofs(&self) -> usize {
        self.free_nodes.len() * self.dim
    }
    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn node_multi(&self, mut id: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let n = self.nodes_along(a);
            m.push(id % n);
            id /= n;
        }
        m
    }

    pub fn node_id(&self, m: &[usize]) -> usize {
        let mut id = 0;
        for a in (0..self.dim).rev() {
            id = id * self.nodes_along(a) + m[a];
        }
        id
    }

    pub fn node_coord(&self, id: usize) -> Vec<f64> {
        self.node_multi(id)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + i as f64 * self.h(a))
            .collect()
    }

    /// Global DoF of component `comp` at node `id`, `None` on Dirichlet nodes.
    pub fn dof(&self, id: usize, comp: usize) -> Option<usize> {
        self.free_index[id].map(|f| f * self.dim + comp)
    }

    pub fn element_multi(&self, mut e: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            m.push(e % self.cells[a]);
            e /= self.cells[a];
        }
        m
    }

    /// Corner node ids of an element; corner `c` has bit `a` set when it sits on the
    /// upper side along axis `a`.
    pub fn element_nodes(&self, em: &[usize]) -> Vec<usize> {
        (0..1usize << self.dim)
            .map(|c| {
                let m: Vec<usize> = (0..self.dim).map(|a| em[a] + ((c >> a) & 1)).collect();
                self.node_id(&m)
            })
            .collect()
    }

    /// Node closest to `x` if it lies within `tol` in every coordinate.
    pub fn node_at(&self, x: &[f64], tol: f64) -> Option<usize> {
        let mut m = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let s = (x[a] - self.lo[a]) / self.h(a);
            let i = s.round();
            if i < 0.0 || i > self.cells[a] as f64 || (s - i).abs() * self.h(a) > tol {
                return None;
            }
            m.push(i as usize);
        }
        Some(self.node_id(&m))
    }
}

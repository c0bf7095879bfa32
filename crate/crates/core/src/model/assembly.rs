use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::grid::Grid;
use super::parameter::{MaterialSpec, ParameterLayout, ParameterVector};
use crate::error::{check_len, Error, Result};
use crate::linalg::CsrMatrix;

/// `A(q) = A_0 + sum_p q_p A_p` stored on one shared sparsity pattern, together with
/// the parameter-independent mass and inner-product matrices.
#[derive(Debug, Clone)]
pub struct AffineOperatorFamily {
    grid: Grid,
    layout: ParameterLayout,
    material: MaterialSpec,
    /// Pattern of every matrix below; values of `A_0`.
    a0: CsrMatrix,
    /// Nonzero entries of each `A_p` as `(entry index, value)`, sorted by entry.
    terms: Vec<Vec<(u32, f64)>>,
    entry_rows: Vec<usize>,
    /// Lumped mass without density.
    mass_h: Vec<f64>,
    laplacian: CsrMatrix,
    strain: CsrMatrix,
    gram_v: CsrMatrix,
    /// Coercivity constant of `A(1)`, computed on first use.
    reference_coercivity: OnceLock<f64>,
}

const GL3_POINTS: [f64; 3] = [0.0, 0.5, 1.0];
const GL3_WEIGHTS: [f64; 3] = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];

/// Assembles the affine stiffness family, lumped mass and the `V`-inner product.
pub fn assemble_operators(grid: &Grid, material: &MaterialSpec) -> Result<AffineOperatorFamily> {
    if !(material.lambda_eff() >= 0.0 && material.mu_eff() > 0.0 && material.density > 0.0) {
        return Err(Error::Config("material needs lambda >= 0, mu > 0, density > 0".into()));
    }
    let layout = ParameterLayout::new(grid, material)?;
    let dim = grid.dim();
    let n = grid.n_dofs();
    if n == 0 {
        return Err(Error::Assembly("grid has no free degrees of freedom".into()));
    }
    let corners = 1usize << dim;
    let nloc = corners * dim;
    let h: Vec<f64> = (0..dim).map(|a| grid.h(a)).collect();
    let vol: f64 = h.iter().product();

    // Sparsity pattern: all DoF pairs sharing an element.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut elem_dofs = Vec::with_capacity(grid.n_elements());
    for e in 0..grid.n_elements() {
        let em = grid.element_multi(e);
        let nodes = grid.element_nodes(&em);
        let dofs: Vec<Option<usize>> =
            nodes.iter().flat_map(|&id| (0..dim).map(move |c| (id, c))).map(|(id, c)| grid.dof(id, c)).collect();
        for a in dofs.iter().flatten() {
            for b in dofs.iter().flatten() {
                rows[*a].push(*b);
            }
        }
        elem_dofs.push((em, dofs));
    }
    let mut indptr = vec![0usize; n + 1];
    let mut indices = Vec::new();
    for (r, row) in rows.iter_mut().enumerate() {
        row.sort_unstable();
        row.dedup();
        indices.extend_from_slice(row);
        indptr[r + 1] = indices.len();
    }
    drop(rows);
    let nnz = indices.len();
    let pattern = CsrMatrix::new(n, n, indptr, indices, vec![0.0; nnz])?;

    // Quadrature tables on the reference cell [0,1]^dim.
    let nq = 3usize.pow(dim as u32);
    let mut qpts = Vec::with_capacity(nq);
    for i in 0..nq {
        let mut t = i;
        let mut xi = Vec::with_capacity(dim);
        let mut w = vol;
        for _ in 0..dim {
            xi.push(GL3_POINTS[t % 3]);
            w *= GL3_WEIGHTS[t % 3];
            t /= 3;
        }
        qpts.push((xi, w));
    }
    // grads[q][corner][axis]
    let grads: Vec<Vec<Vec<f64>>> = qpts
        .iter()
        .map(|(xi, _)| {
            (0..corners)
                .map(|c| {
                    (0..dim)
                        .map(|d| {
                            let mut g = 1.0;
                            for a in 0..dim {
                                let up = (c >> a) & 1 == 1;
                                g *= if a == d {
                                    if up { 1.0 / h[a] } else { -1.0 / h[a] }
                                } else if up {
                                    xi[a]
                                } else {
                                    1.0 - xi[a]
                                };
                            }
                            g
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    // Element matrices are identical on every element; only the B-spline weights vary.
    // k_point[q] is the weighted stiffness kernel at quadrature point q.
    let lam = material.lambda_eff();
    let mu = material.mu_eff();
    let mut k_point = vec![DMatrix::<f64>::zeros(nloc, nloc); nq];
    let mut lap_loc = DMatrix::<f64>::zeros(nloc, nloc);
    let mut strain_loc = DMatrix::<f64>::zeros(nloc, nloc);
    for (q, (_, w)) in qpts.iter().enumerate() {
        let g = &grads[q];
        for a in 0..corners {
            for i in 0..dim {
                for b in 0..corners {
                    for j in 0..dim {
                        let gg: f64 = (0..dim).map(|d| g[a][d] * g[b][d]).sum();
                        let delta = if i == j { gg } else { 0.0 };
                        let cross = g[a][j] * g[b][i];
                        let r = a * dim + i;
                        let s = b * dim + j;
                        k_point[q][(r, s)] = w * (lam * g[a][i] * g[b][j] + mu * (delta + cross));
                        lap_loc[(r, s)] += w * delta;
                        strain_loc[(r, s)] += w * 0.5 * (delta + cross);
                    }
                }
            }
        }
    }

    let c = layout.coarsening().to_vec();
    let mut a0 = vec![0.0; nnz];
    let mut lap = vec![0.0; nnz];
    let mut strain = vec![0.0; nnz];
    let mut mass_h = vec![0.0; n];
    let mut raw_terms: Vec<Vec<(u32, f64)>> = vec![Vec::new(); layout.n_params()];
    let mut local_entry = vec![usize::MAX; nloc * nloc];
    let mut kp = DMatrix::<f64>::zeros(nloc, nloc);
    for (em, dofs) in &elem_dofs {
        for r in 0..nloc {
            for s in 0..nloc {
                local_entry[r * nloc + s] = match (dofs[r], dofs[s]) {
                    (Some(x), Some(y)) => pattern.find(x, y).expect("pattern covers element"),
                    _ => usize::MAX,
                };
            }
            if let Some(x) = dofs[r] {
                mass_h[x] += vol / corners as f64;
            }
        }
        for r in 0..nloc {
            for s in 0..nloc {
                let ent = local_entry[r * nloc + s];
                if ent != usize::MAX {
                    lap[ent] += lap_loc[(r, s)];
                    strain[ent] += strain_loc[(r, s)];
                }
            }
        }
        // B-spline cell containing this element and local coordinates of its corners.
        let pcell: Vec<usize> = (0..dim).map(|a| em[a] / c[a]).collect();
        let offset: Vec<f64> = (0..dim).map(|a| (em[a] % c[a]) as f64).collect();
        for pc in 0..corners {
            kp.fill(0.0);
            for (q, (xi, _)) in qpts.iter().enumerate() {
                let mut nu = 1.0;
                for a in 0..dim {
                    let t = (offset[a] + xi[a]) / c[a] as f64;
                    nu *= if (pc >> a) & 1 == 1 { t } else { 1.0 - t };
                }
                if nu != 0.0 {
                    kp += &k_point[q] * nu;
                }
            }
            let pm: Vec<usize> = (0..dim).map(|a| pcell[a] + ((pc >> a) & 1)).collect();
            let pnode = layout.node_id(&pm);
            match layout.param_of_node(pnode) {
                Some(p) => {
                    for r in 0..nloc {
                        for s in 0..nloc {
                            let ent = local_entry[r * nloc + s];
                            let v = kp[(r, s)];
                            if ent != usize::MAX && v != 0.0 {
                                raw_terms[p].push((ent as u32, v));
                            }
                        }
                    }
                }
                None => {
                    for r in 0..nloc {
                        for s in 0..nloc {
                            let ent = local_entry[r * nloc + s];
                            if ent != usize::MAX {
                                a0[ent] += material.fixed_value * kp[(r, s)];
                            }
                        }
                    }
                }
            }
        }
    }
    let terms: Vec<Vec<(u32, f64)>> = raw_terms
        .into_iter()
        .map(|mut t| {
            t.sort_unstable_by_key(|x| x.0);
            let mut out: Vec<(u32, f64)> = Vec::with_capacity(t.len());
            for (e, v) in t {
                match out.last_mut() {
                    Some(last) if last.0 == e => last.1 += v,
                    _ => out.push((e, v)),
                }
            }
            out
        })
        .collect();

    let laplacian = pattern.with_values(lap);
    let mut gv = laplacian.values().to_vec();
    for r in 0..n {
        let d = pattern.find(r, r).expect("diagonal in pattern");
        gv[d] += mass_h[r];
    }
    let entry_rows = pattern.entry_rows();
    Ok(AffineOperatorFamily {
        grid: grid.clone(),
        layout,
        material: material.clone(),
        a0: pattern.with_values(a0),
        terms,
        entry_rows,
        mass_h,
        gram_v: pattern.with_values(gv),
        reference_coercivity: OnceLock::new(),
        strain: pattern.with_values(strain),
        laplacian,
    })
}

impl AffineOperatorFamily {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
    pub fn material(&self) -> &MaterialSpec {
        &self.material
    }
    pub fn n_dofs(&self) -> usize {
        self.a0.nrows()
    }
    pub fn n_params(&self) -> usize {
        self.terms.len()
    }
    pub fn density(&self) -> f64 {
        self.material.density
    }
    /// Pattern and values of `A_0`.
    pub fn a0(&self) -> &CsrMatrix {
        &self.a0
    }
    pub fn terms(&self) -> &[Vec<(u32, f64)>] {
        &self.terms
    }
    pub fn entry_rows(&self) -> &[usize] {
        &self.entry_rows
    }
    /// Diagonal of the lumped mass `M_H` (density excluded).
    pub fn mass_h(&self) -> &[f64] {
        &self.mass_h
    }
    /// Gram matrix of the vector Laplacian.
    pub fn laplacian_gram(&self) -> &CsrMatrix {
        &self.laplacian
    }
    /// Gram matrix of the symmetric gradient, `(eps(u), eps(v))`.
    pub fn strain_gram(&self) -> &CsrMatrix {
        &self.strain
    }
    /// `M_V = M_H + laplacian`.
    pub(crate) fn reference_coercivity(&self) -> &OnceLock<f64> {
        &self.reference_coercivity
    }

    pub fn gram_v(&self) -> &CsrMatrix {
        &self.gram_v
    }

    /// `A(q)` as a matrix on the shared pattern.
    pub fn operator(&self, q: &ParameterVector) -> Result<CsrMatrix> {
        check_len("parameter", q.len(), self.n_params())?;
        let mut v = self.a0.values().to_vec();
        for (p, t) in self.terms.iter().enumerate() {
            let qp = q[p];
            for &(e, a) in t {
                v[e as usize] += qp * a;
            }
        }
        Ok(self.a0.with_values(v))
    }

    /// `sum_p d_p A_p` (no `A_0`).
    pub fn direction_operator(&self, d: &ParameterVector) -> Result<CsrMatrix> {
        check_len("direction", d.len(), self.n_params())?;
        let mut v = vec![0.0; self.a0.nnz()];
        for (p, t) in self.terms.iter().enumerate() {
            let dp = d[p];
            if dp == 0.0 {
                continue;
            }
            for &(e, a) in t {
                v[e as usize] += dp * a;
            }
        }
        Ok(self.a0.with_values(v))
    }

    /// Single affine term `A_p`.
    pub fn term(&self, p: usize) -> CsrMatrix {
        let mut v = vec![0.0; self.a0.nnz()];
        for &(e, a) in &self.terms[p] {
            v[e as usize] += a;
        }
        self.a0.with_values(v)
    }

    /// Dense `B(u)` with columns `A_p u`.
    pub fn derivative_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_dofs(), self.n_params());
        let idx = self.a0.indices();
        for (p, t) in self.terms.iter().enumerate() {
            for &(e, a) in t {
                let e = e as usize;
                b[(self.entry_rows[e], p)] += a * u[idx[e]];
            }
        }
        b
    }

    /// `grad_p = sum_e [A_p]_e W_e` for entry weights `W` on the pattern.
    pub fn contract_entries(&self, w: &[f64]) -> ParameterVector {
        ParameterVector::from_iterator(
            self.n_params(),
            self.terms.iter().map(|t| t.iter().map(|&(e, a)| a * w[e as usize]).sum::<f64>()),
        )
    }

    /// Accumulates `W_e += u[row_e] p[col_e]` for every pattern entry.
    pub fn accumulate_entry_products(&self, u: &[f64], p: &[f64], w: &mut [f64]) {
        let idx = self.a0.indices();
        let ptr = self.a0.indptr();
        for r in 0..self.n_dofs() {
            let ur = u[r];
            if ur == 0.0 {
                continue;
            }
            for e in ptr[r]..ptr[r + 1] {
                w[e] += ur * p[idx[e]];
            }
        }
    }
}

//! Reduced-basis surrogate: paired parameter/state bases, Galerkin projection of the
//! affine model, and snapshot enrichment.
//!
//! `Psi_V` is orthonormal in `M_V`, `Psi_Q` in the Euclidean inner product. Enrichment
//! only appends columns, so every basis generation nests the previous one.

mod pod;
mod reduced;

pub use pod::{pod_compress, pod_compress_relative};
pub use reduced::{ReducedModel, ReducedStepper};

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::io::{read_matrix_from, write_matrix_to};
use crate::linalg::{col, gram_schmidt_extend, tr_gemm, CsrMatrix};
use crate::model::{ParameterBounds, ParameterVector};
use crate::objective::{DiscreteModel, FomModel};
use crate::timestep::Trajectory;

/// Relative threshold below which a parameter candidate counts as already spanned.
pub const PARAMETER_DEPENDENCE_TOL: f64 = 1e-10;
/// Relative tolerance of the post-enrichment consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasisPair {
    pub psi_v: DMatrix<f64>,
    pub psi_q: DMatrix<f64>,
    /// Number of enrichments applied since the initial build.
    pub generation: usize,
}

fn to_columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| col(m, j).to_vec()).collect()
}

/// `x -= psi (M psi)^T x`, twice (block classical Gram-Schmidt with reorthogonalization).
fn project_out(psi: &DMatrix<f64>, m_psi: &DMatrix<f64>, x: &mut DMatrix<f64>) {
    if psi.ncols() == 0 {
        return;
    }
    for _ in 0..2 {
        let coeff = tr_gemm(m_psi, x);
        x.gemm(-1.0, psi, &coeff, 1.0);
    }
}

/// Columns of `cands` made `M`-orthonormal to `psi` and to each other; columns that
/// lose all but `PARAMETER_DEPENDENCE_TOL` of their norm to the projection are dropped.
fn orthonormal_complement(psi: &DMatrix<f64>, m_psi: &DMatrix<f64>, mut cands: DMatrix<f64>, gram: &CsrMatrix) -> DMatrix<f64> {
    let norm = |m: &DMatrix<f64>, j: usize| gram.bilinear(col(m, j), col(m, j)).max(0.0).sqrt();
    let before: Vec<f64> = (0..cands.ncols()).map(|j| norm(&cands, j)).collect();
    project_out(psi, m_psi, &mut cands);
    let kept: Vec<Vec<f64>> = (0..cands.ncols())
        .filter(|&j| norm(&cands, j) > PARAMETER_DEPENDENCE_TOL * before[j])
        .map(|j| col(&cands, j).to_vec())
        .collect();
    let clean = gram_schmidt_extend(&[], &kept, Some(gram), PARAMETER_DEPENDENCE_TOL);
    append_columns(&DMatrix::zeros(psi.nrows(), 0), &clean)
}

fn append_matrix(m: &DMatrix<f64>, extra: &DMatrix<f64>) -> DMatrix<f64> {
    let mut data = m.as_slice().to_vec();
    data.extend_from_slice(extra.as_slice());
    DMatrix::from_vec(m.nrows(), m.ncols() + extra.ncols(), data)
}

fn append_columns(m: &DMatrix<f64>, extra: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut data = m.as_slice().to_vec();
    for v in extra {
        debug_assert_eq!(v.len(), n);
        data.extend_from_slice(v);
    }
    DMatrix::from_vec(n, m.ncols() + extra.len(), data)
}

impl ReducedBasisPair {
    /// Orthonormalizes the given columns into a fresh basis pair.
    pub fn from_vectors(
        state: &[Vec<f64>],
        parameter: &[Vec<f64>],
        gram_v: &CsrMatrix,
        n_state: usize,
        n_params: usize,
    ) -> Self {
        let v = gram_schmidt_extend(&[], state, Some(gram_v), PARAMETER_DEPENDENCE_TOL);
        let q = gram_schmidt_extend(&[], parameter, None, PARAMETER_DEPENDENCE_TOL);
        Self {
            psi_v: append_columns(&DMatrix::zeros(n_state, 0), &v),
            psi_q: append_columns(&DMatrix::zeros(n_params, 0), &q),
            generation: 0,
        }
    }

    pub fn n_v(&self) -> usize {
        self.psi_v.ncols()
    }

    pub fn n_q(&self) -> usize {
        self.psi_q.ncols()
    }

    /// `Psi_Q q_r`
    pub fn lift_parameter(&self, q_r: &ParameterVector) -> ParameterVector {
        &self.psi_q * q_r
    }

    /// `Psi_V u_r`
    pub fn lift_state(&self, u_r: &[f64]) -> Vec<f64> {
        (&self.psi_v * nalgebra::DVector::from_column_slice(u_r)).as_slice().to_vec()
    }

    /// Euclidean coordinates `Psi_Q^T q`.
    pub fn restrict_parameter(&self, q: &ParameterVector) -> ParameterVector {
        self.psi_q.tr_mul(q)
    }

    /// `M_V` coordinates `Psi_V^T M_V u`.
    pub fn restrict_state(&self, u: &[f64], gram_v: &CsrMatrix) -> Vec<f64> {
        let w = gram_v.apply(u);
        self.psi_v.tr_mul(&nalgebra::DVector::from_vec(w)).as_slice().to_vec()
    }

    /// Largest entry of `Psi_V^T M_V Psi_V - I` and `Psi_Q^T Psi_Q - I`.
    pub fn orthonormality_defect(&self, gram_v: &CsrMatrix) -> f64 {
        let mut mv = DMatrix::zeros(self.psi_v.nrows(), self.n_v());
        for j in 0..self.n_v() {
            gram_v.mul_vec(col(&self.psi_v, j), crate::linalg::col_mut(&mut mv, j));
        }
        let gv = tr_gemm(&self.psi_v, &mv) - DMatrix::identity(self.n_v(), self.n_v());
        let gq = self.psi_q.tr_mul(&self.psi_q) - DMatrix::identity(self.n_q(), self.n_q());
        gv.amax().max(gq.amax())
    }

    pub(crate) fn check_shapes(&self, fom: &FomModel) -> Result<()> {
        check_len("state basis rows", self.psi_v.nrows(), fom.n_state())?;
        check_len("parameter basis rows", self.psi_q.nrows(), fom.n_params())?;
        if self.n_v() == 0 || self.n_q() == 0 {
            return Err(Error::Dimension("reduced bases must be nonempty".into()));
        }
        Ok(())
    }

    /// Two matrix records, `Psi_V` then `Psi_Q`, in the binary matrix format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_matrix_to(&mut w, &self.psi_v)?;
        write_matrix_to(&mut w, &self.psi_q)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let psi_v = read_matrix_from(&mut r)?;
        let psi_q = read_matrix_from(&mut r)?;
        Ok(Self { psi_v, psi_q, generation: 0 })
    }
}

/// Initial bases from one full-order evaluation at `q0`:
/// `span{q0, q_circ, grad J(q0)}` and the POD of the primal and adjoint snapshots,
/// together with the initial data.
pub fn initial_basis(
    fom: &FomModel,
    q0: &ParameterVector,
    gradient: &ParameterVector,
    primal: &Trajectory,
    adjoint: &Trajectory,
    eps_pod: f64,
) -> Result<ReducedBasisPair> {
    let gram = fom.family().gram_v();
    let mut seed = vec![fom.initial_displacement().to_vec(), fom.initial_velocity().to_vec()];
    seed.retain(|v| v.iter().any(|&x| x != 0.0));
    let n = fom.n_state();
    let seed_basis = gram_schmidt_extend(&[], &seed, Some(gram), PARAMETER_DEPENDENCE_TOL);
    let basis = ReducedBasisPair {
        psi_v: append_columns(&DMatrix::zeros(n, 0), &seed_basis),
        psi_q: DMatrix::zeros(fom.n_params(), 0),
        generation: 0,
    };
    let mut out = enrich(&basis, fom, q0, gradient, primal, adjoint, eps_pod)?;
    out.generation = 0;
    if out.n_v() == 0 {
        return Err(Error::Enrichment("initial snapshots are all zero".into()));
    }
    Ok(out)
}

/// Appends `q_new`, `q_circ` and `gradient` to `Psi_Q` and the POD of the projection
/// defects of the primal and adjoint snapshots to `Psi_V`.
pub fn enrich(
    basis: &ReducedBasisPair,
    fom: &FomModel,
    q_new: &ParameterVector,
    gradient: &ParameterVector,
    primal: &Trajectory,
    adjoint: &Trajectory,
    eps_pod: f64,
) -> Result<ReducedBasisPair> {
    if !(eps_pod > 0.0) {
        return Err(Error::Config(format!("POD tolerance must be positive, got {eps_pod}")));
    }
    check_len("parameter", q_new.len(), fom.n_params())?;
    check_len("gradient", gradient.len(), fom.n_params())?;
    check_len("primal", primal.dim(), fom.n_state())?;
    check_len("adjoint", adjoint.dim(), fom.n_state())?;
    let gram = fom.family().gram_v();

    let old_q = to_columns(&basis.psi_q);
    let cands = [q_new, fom.regularization_center(), gradient].map(|v| v.as_slice().to_vec());
    let new_q = gram_schmidt_extend(&old_q, &cands, None, PARAMETER_DEPENDENCE_TOL);

    let mut current = basis.psi_v.clone();
    let mut m_current = gram.mul_dense(&current);
    // Primal and adjoint snapshots differ in scale, so each group is compressed
    // against its own energy.
    for group in [&primal.displacement, &adjoint.displacement] {
        let energy: f64 = (0..group.ncols()).map(|j| gram.bilinear(col(group, j), col(group, j))).sum();
        if !(energy > 0.0) {
            continue;
        }
        let mut defects = group.clone();
        project_out(&current, &m_current, &mut defects);
        let modes = pod_compress_relative(&defects, gram, eps_pod, Some(energy));
        let accepted = orthonormal_complement(&current, &m_current, modes, gram);
        if accepted.ncols() > 0 {
            m_current = append_matrix(&m_current, &gram.mul_dense(&accepted));
            current = append_matrix(&current, &accepted);
        }
    }

    Ok(ReducedBasisPair {
        psi_v: current,
        psi_q: append_columns(&basis.psi_q, &new_q),
        generation: basis.generation + 1,
    })
}

/// Result of comparing the surrogate with a full-order evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Consistency {
    pub objective_rel: f64,
    pub gradient_rel: f64,
}

impl Consistency {
    pub fn holds(&self, tol: f64) -> bool {
        self.objective_rel <= tol && self.gradient_rel <= tol
    }
}

/// Compares `J_r` and `grad J_r` at the reduced coordinates of `q` with the full-order
/// value and the restricted full-order gradient.
pub fn consistency(
    rom: &ReducedModel,
    q: &ParameterVector,
    objective_h: f64,
    gradient_h: &ParameterVector,
) -> Result<Consistency> {
    let basis = rom.basis();
    let q_r = basis.restrict_parameter(q);
    let point = crate::objective::eval_objective(rom, &q_r)?;
    let (g_r, _) = crate::objective::eval_gradient(rom, &point)?;
    let g_h = basis.restrict_parameter(gradient_h);
    let rel = |e: f64, s: f64| if s > 0.0 { e / s } else { e };
    Ok(Consistency {
        objective_rel: rel((point.objective - objective_h).abs(), objective_h.abs()),
        gradient_rel: rel((&g_r - &g_h).norm(), g_h.norm()),
    })
}

/// Euclidean projection of `x` onto the reduced admissible set
/// `{q_r : Psi_Q q_r in box}`.
///
/// Dykstra's alternating projections between `span(Psi_Q)` and the box; the result is
/// then pulled back along the segment from `anchor` (assumed admissible) until its lift
/// is inside the box, so the returned point is always admissible.
pub fn project_reduced(
    psi_q: &DMatrix<f64>,
    bounds: &ParameterBounds,
    anchor: &ParameterVector,
    x: &ParameterVector,
) -> ParameterVector {
    let lifted = psi_q * x;
    if bounds.contains(&lifted) {
        return x.clone();
    }
    let mut z = lifted.clone();
    let mut p_box = ParameterVector::zeros(z.len());
    let mut p_span = ParameterVector::zeros(z.len());
    for _ in 0..200 {
        let y = bounds.project(&(&z + &p_box));
        p_box = &z + &p_box - &y;
        let w = &y + &p_span;
        let z_new = psi_q * psi_q.tr_mul(&w);
        p_span = &w - &z_new;
        let change = (&z_new - &z).norm();
        z = z_new;
        if change <= 1e-14 * (1.0 + z.norm()) {
            break;
        }
    }
    let target = psi_q.tr_mul(&z);
    let a = psi_q * anchor;
    let t = psi_q * &target;
    // Largest s in [0, 1] with a + s (t - a) inside the box.
    let mut s: f64 = 1.0;
    for i in 0..a.len() {
        let dir = t[i] - a[i];
        if dir < 0.0 && t[i] < bounds.lower {
            s = s.min((a[i] - bounds.lower) / -dir);
        } else if dir > 0.0 && t[i] > bounds.upper {
            s = s.min((bounds.upper - a[i]) / dir);
        }
    }
    let mut out = anchor + (&target - anchor) * s.max(0.0);
    while !bounds.contains(&(psi_q * &out)) && s > 0.0 {
        s *= 0.5;
        out = anchor + (&target - anchor) * s;
    }
    out
}

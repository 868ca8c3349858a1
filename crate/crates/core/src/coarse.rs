//! Galerkin solve in the multiscale space and the relative error norms.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::cem_offline::BasisSet;
use crate::error::{CemError, Result};
use crate::fem::weighted_l2_sq;
use crate::grid::GridHierarchy;
use crate::sparse::CsrMatrix;

/// Pivot threshold of the unit-diagonal Cholesky below which a column is
/// treated as linearly dependent on the previous ones.
pub const RANK_TOL: f64 = 1e-12;

fn boxes_overlap(a: &crate::grid::BlockBox, b: &crate::grid::BlockBox) -> bool {
    (0..3).all(|k| a.lo[k] < b.hi[k] && b.lo[k] < a.hi[k])
}

/// `Rᵀ A R`, extended from a previously computed leading block. Groups
/// before `first_new` must be unchanged since `prev` was computed.
pub fn galerkin_matrix(basis: &BasisSet, a: &CsrMatrix, prev: Option<&Mat<f64>>, first_new: usize) -> Mat<f64> {
    let groups = &basis.groups;
    let mut offsets = Vec::with_capacity(groups.len() + 1);
    offsets.push(0);
    for g in groups {
        offsets.push(offsets.last().unwrap() + g.n_cols());
    }
    let n = *offsets.last().unwrap();
    let mut gram = Mat::<f64>::zeros(n, n);
    if let Some(p) = prev {
        let m = offsets[first_new];
        assert_eq!(p.nrows(), m);
        gram.submatrix_mut(0, 0, m, m).copy_from(p);
    }
    let n_free = basis.n_free();
    let jmax = groups.iter().map(|g| g.n_cols()).max().unwrap_or(0);
    let mut y = vec![0.0; n_free * jmax];
    let mut touched = vec![false; n_free];
    let mut touched_list = Vec::new();
    let mut acc = Vec::new();
    for k in first_new..groups.len() {
        let gk = &groups[k];
        let jk = gk.n_cols();
        for j in 0..jk {
            let col = gk.columns.col(j).try_as_col_major().unwrap().as_slice();
            for (l, &s) in gk.support.iter().enumerate() {
                let r = col[l];
                if r == 0.0 {
                    continue;
                }
                let (cols, vals) = a.row(s);
                for (&c, &v) in cols.iter().zip(vals) {
                    y[c * jk + j] += v * r;
                    if !touched[c] {
                        touched[c] = true;
                        touched_list.push(c);
                    }
                }
            }
        }
        for i in 0..=k {
            let gi = &groups[i];
            if !boxes_overlap(&gi.block_box, &gk.block_box) {
                continue;
            }
            let ji = gi.n_cols();
            acc.clear();
            acc.resize(ji * jk, 0.0);
            for a_ in 0..ji {
                let col = gi.columns.col(a_).try_as_col_major().unwrap().as_slice();
                let row = &mut acc[a_ * jk..(a_ + 1) * jk];
                for (l, &s) in gi.support.iter().enumerate() {
                    if !touched[s] {
                        continue;
                    }
                    let r = col[l];
                    if r == 0.0 {
                        continue;
                    }
                    let yr = &y[s * jk..(s + 1) * jk];
                    for (o, &yv) in row.iter_mut().zip(yr) {
                        *o += r * yv;
                    }
                }
            }
            for a_ in 0..ji {
                for j in 0..jk {
                    let v = acc[a_ * jk + j];
                    gram[(offsets[i] + a_, offsets[k] + j)] = v;
                    gram[(offsets[k] + j, offsets[i] + a_)] = v;
                }
            }
        }
        for &c in &touched_list {
            touched[c] = false;
            y[c * jk..(c + 1) * jk].iter_mut().for_each(|v| *v = 0.0);
        }
        touched_list.clear();
    }
    gram
}

/// Cholesky factor of the unit-diagonal scaling `D G D` of a Galerkin
/// matrix, with `D = diag(G)^{-1/2}`.
pub struct ScaledFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    inv_sqrt_diag: Vec<f64>,
}

impl ScaledFactor {
    /// Factors `gram`; on failure returns the offending column, either a
    /// breakdown index or the first pivot below [`RANK_TOL`].
    pub fn new(gram: &Mat<f64>) -> std::result::Result<Self, Vec<usize>> {
        let n = gram.nrows();
        let diag: Vec<f64> = (0..n).map(|i| gram[(i, i)]).collect();
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(vec![i]);
        }
        let inv: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let scaled = Mat::from_fn(n, n, |i, j| gram[(i, j)] * inv[i] * inv[j]);
        match scaled.llt(Side::Lower) {
            Ok(llt) => {
                let l = llt.L();
                let bad: Vec<usize> = (0..n).filter(|&i| l[(i, i)] * l[(i, i)] < RANK_TOL).collect();
                if bad.is_empty() {
                    Ok(Self { llt, inv_sqrt_diag: inv })
                } else {
                    Err(bad)
                }
            }
            Err(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => Err(vec![index]),
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut c = Mat::from_fn(n, 1, |i, _| rhs[i] * self.inv_sqrt_diag[i]);
        faer::linalg::solvers::SolveCore::solve_in_place_with_conj(&self.llt, faer::Conj::No, c.as_mut());
        (0..n).map(|i| c[(i, 0)] * self.inv_sqrt_diag[i]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct MultiscaleSolution {
    /// Coefficients in the basis.
    pub coeffs: Vec<f64>,
    /// Prolongation to the free fine dofs.
    pub fine: Vec<f64>,
}

/// Galerkin system `Rᵀ A R`, kept for incremental growth.
#[derive(Clone, Debug)]
pub struct CoarseSystem {
    pub gram: Mat<f64>,
}

impl CoarseSystem {
    pub fn new(basis: &BasisSet, a: &CsrMatrix) -> Self {
        Self {
            gram: galerkin_matrix(basis, a, None, 0),
        }
    }

    /// Accounts for groups appended to `basis` from group `first_new` on.
    pub fn extend(&mut self, basis: &BasisSet, a: &CsrMatrix, first_new: usize) {
        self.gram = galerkin_matrix(basis, a, Some(&self.gram), first_new);
    }

    /// Removes rows and columns not marked in `keep`.
    pub fn retain(&mut self, keep: &[bool]) {
        let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        self.gram = Mat::from_fn(idx.len(), idx.len(), |i, j| self.gram[(idx[i], idx[j])]);
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    /// Solves `(RᵀAR) c = Rᵀ f`.
    pub fn solve(&self, basis: &BasisSet, f: &[f64]) -> Result<MultiscaleSolution> {
        let rhs = basis.restrict(f);
        let n = rhs.len();
        if n == 0 {
            return Ok(MultiscaleSolution {
                coeffs: Vec::new(),
                fine: vec![0.0; basis.n_free()],
            });
        }
        let factor = ScaledFactor::new(&self.gram).map_err(|cols| {
            let meta: Vec<_> = basis.meta().collect();
            let mut blocks: Vec<usize> = cols.iter().map(|&c| meta[c].owner).collect();
            blocks.sort_unstable();
            blocks.dedup();
            CemError::RankDeficient { blocks }
        })?;
        let coeffs = factor.solve(&rhs);
        let fine = basis.prolong(&coeffs);
        Ok(MultiscaleSolution { coeffs, fine })
    }
}

/// `u_ms = (RᵀAR)⁻¹ Rᵀ F` and its prolongation.
pub fn coarse_solve(basis: &BasisSet, a: &CsrMatrix, f: &[f64]) -> Result<MultiscaleSolution> {
    CoarseSystem::new(basis, a).solve(basis, f)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Weighting {
    /// `‖(λ+2μ) e‖ / ‖(λ+2μ) u_h‖`.
    #[default]
    Coefficient,
    /// `‖√(λ+2μ) e‖ / ‖√(λ+2μ) u_h‖`.
    SqrtCoefficient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub e_l2: f64,
    pub e_h1: f64,
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den > 0.0 {
        Ok((num / den).sqrt())
    } else if num == 0.0 {
        Ok(0.0)
    } else {
        Err(CemError::InvalidArgument(format!("{what}: reference solution has zero norm")))
    }
}

/// Relative weighted `L²` and energy errors of `u_ms` against `u_h`;
/// `p_modulus` is `λ+2μ` per cell.
pub fn error_norms(
    grid: &GridHierarchy,
    a: &CsrMatrix,
    p_modulus: &[f64],
    u_ms: &[f64],
    u_h: &[f64],
    weighting: L2Weighting,
) -> Result<ErrorNorms> {
    let e: Vec<f64> = u_h.iter().zip(u_ms).map(|(x, y)| x - y).collect();
    let w: Vec<f64> = match weighting {
        L2Weighting::Coefficient => p_modulus.iter().map(|p| p * p).collect(),
        L2Weighting::SqrtCoefficient => p_modulus.to_vec(),
    };
    let e_l2 = ratio(weighted_l2_sq(grid, &w, &e), weighted_l2_sq(grid, &w, u_h), "e_L2")?;
    let e_h1 = ratio(a.bilinear(&e, &e).max(0.0), a.bilinear(u_h, u_h), "e_H1")?;
    Ok(ErrorNorms { e_l2, e_h1 })
}

/// Writes `node,x,y[,z],u_x,u_y[,u_z]` rows for every fine node.
pub fn write_solution_csv(grid: &GridHierarchy, u: &[f64], out: &mut impl std::io::Write) -> std::io::Result<()> {
    let dim = grid.dim();
    let full = grid.to_full(u);
    let axes = ["x", "y", "z"];
    let mut header = vec!["node".to_string()];
    header.extend(axes[..dim].iter().map(|a| a.to_string()));
    header.extend(axes[..dim].iter().map(|a| format!("u_{a}")));
    writeln!(out, "{}", header.join(","))?;
    for node in 0..grid.n_nodes() {
        let x = grid.node_position(node);
        let mut line = node.to_string();
        for xk in x.iter().take(dim) {
            line.push_str(&format!(",{xk}"));
        }
        for c in 0..dim {
            line.push_str(&format!(",{:.12e}", full[node * dim + c]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Writes all node displacements (boundary included) as little-endian `f64`,
/// node-major with interleaved components.
pub fn write_solution_binary(grid: &GridHierarchy, u: &[f64], out: &mut impl std::io::Write) -> std::io::Result<()> {
    for v in grid.to_full(u) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

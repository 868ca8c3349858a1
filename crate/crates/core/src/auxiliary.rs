//! Per-block spectral problems and the auxiliary space they span.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use rayon::prelude::*;

use crate::error::{CemError, Result};
use crate::fem::local_dense_pair;
use crate::grid::GridHierarchy;
use crate::media::CoefficientField;
use crate::sparse::{dot, CsrMatrix};

/// Number of leading eigenvalues kept per block for inspection.
const SPECTRUM_LEN: usize = 24;

/// Eigenpairs of one coarse block, on the free dofs of the block closure.
#[derive(Clone, Debug)]
pub struct AuxBlock {
    pub block: usize,
    /// Free dofs on the closure of the block, ascending.
    pub dofs: Vec<usize>,
    /// Smallest eigenvalues, ascending; at least `count + 1` when the block
    /// has that many dofs.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvectors kept (`J_i`).
    pub count: usize,
    /// `dofs.len() × count`, orthonormal in the block weighted inner product.
    pub vectors: Mat<f64>,
    /// Block weighted mass times `vectors`; the constraint columns.
    pub constraints: Mat<f64>,
    /// Block weighted mass assembled over the block's cells only.
    pub mass: CsrMatrix,
    /// Shift added to the mass matrix when it was singular.
    pub mass_shift: f64,
}

impl AuxBlock {
    /// First discarded eigenvalue, if it was computed.
    pub fn first_discarded(&self) -> Option<f64> {
        self.eigenvalues.get(self.count).copied()
    }
}

#[derive(Clone, Debug)]
pub struct AuxiliarySpace {
    pub blocks: Vec<AuxBlock>,
    n_free: usize,
}

/// Local `(a_i, s_i)` pencil of block `block` as dense matrices.
pub fn block_pencil(grid: &GridHierarchy, coeffs: &CoefficientField, block: usize) -> (Vec<usize>, Mat<f64>, Mat<f64>) {
    let dofs = grid.block_dofs(block);
    let cells = grid.block_cells(block);
    let (a, m) = local_dense_pair(grid, &cells, &dofs, &coeffs.lambda, &coeffs.mu, &coeffs.kappa_corner);
    (dofs, a, m)
}

/// Dense generalized symmetric eigensolver for `A x = λ M x` with `M` SPD.
/// Returns all eigenvalues ascending and `M`-orthonormal eigenvectors, plus
/// the shift that had to be added to `M`.
pub fn dense_generalized_eigen(a: &Mat<f64>, m: &Mat<f64>) -> std::result::Result<(Vec<f64>, Mat<f64>, f64), String> {
    let n = a.nrows();
    let mut shift = 0.0;
    let llt = match m.llt(Side::Lower) {
        Ok(l) => l,
        Err(_) => {
            let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
            shift = 1e-12 * trace;
            let mut ms = m.clone();
            for i in 0..n {
                ms[(i, i)] += shift;
            }
            ms.llt(Side::Lower).map_err(|e| format!("weighted mass not positive definite even after shift: {e:?}"))?
        }
    };
    let l = llt.L();
    // C = L⁻¹ A L⁻ᵀ
    let mut x = a.clone();
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let evd = c.self_adjoint_eigen(Side::Lower).map_err(|e| format!("{e:?}"))?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let mut vecs = evd.U().to_owned();
    solve_upper_triangular_in_place(l.transpose(), vecs.as_mut(), Par::Seq);
    Ok((values, vecs, shift))
}

fn dense_to_csr(m: &Mat<f64>) -> CsrMatrix {
    let n = m.nrows();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if v != 0.0 {
                cols.push(j);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    CsrMatrix::from_parts(n, row_ptr, cols, vals)
}

/// Smallest `count` eigenpairs of block `block`, normalized in `s_i`.
pub fn local_spectral_basis(grid: &GridHierarchy, coeffs: &CoefficientField, block: usize, count: usize) -> Result<AuxBlock> {
    let (dofs, a, m) = block_pencil(grid, coeffs, block);
    let n = dofs.len();
    if count == 0 || count >= n {
        return Err(CemError::InvalidArgument(format!(
            "block {block}: requested {count} eigenfunctions, block has {n} dofs"
        )));
    }
    let (values, vecs, shift) = dense_generalized_eigen(&a, &m).map_err(|reason| CemError::Eigen { block, reason })?;
    let keep = (count + 1).max(SPECTRUM_LEN).min(n);
    let eigenvalues = values[..keep].to_vec();
    let vectors = vecs.subcols(0, count).to_owned();
    let constraints = &m * &vectors;
    Ok(AuxBlock {
        block,
        dofs,
        eigenvalues,
        count,
        vectors,
        constraints,
        mass: dense_to_csr(&m),
        mass_shift: shift,
    })
}

impl AuxiliarySpace {
    /// Solves every block with `counts[i]` eigenfunctions.
    pub fn build(grid: &GridHierarchy, coeffs: &CoefficientField, counts: &[usize]) -> Result<Self> {
        if counts.len() != grid.n_blocks() {
            return Err(CemError::InvalidArgument(format!(
                "{} counts for {} blocks",
                counts.len(),
                grid.n_blocks()
            )));
        }
        let blocks = (0..grid.n_blocks())
            .into_par_iter()
            .map(|b| local_spectral_basis(grid, coeffs, b, counts[b]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            n_free: grid.n_free(),
        })
    }

    /// Uniform count on every block.
    pub fn build_uniform(grid: &GridHierarchy, coeffs: &CoefficientField, count: usize) -> Result<Self> {
        Self::build(grid, coeffs, &vec![count; grid.n_blocks()])
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn total_count(&self) -> usize {
        self.blocks.iter().map(|b| b.count).sum()
    }

    /// Minimum first discarded eigenvalue over all blocks.
    pub fn lambda(&self) -> f64 {
        compute_lambda(self.blocks.iter().map(|b| (b.eigenvalues.as_slice(), b.count)))
    }

    /// Global fine vector of auxiliary function `j` of block `block`.
    pub fn global_vector(&self, block: usize, j: usize) -> Vec<f64> {
        let b = &self.blocks[block];
        let mut out = vec![0.0; self.n_free];
        for (l, &g) in b.dofs.iter().enumerate() {
            out[g] = b.vectors[(l, j)];
        }
        out
    }

    /// Writes `block,k,eigenvalue` rows.
    pub fn write_spectra_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "block,k,eigenvalue")?;
        for b in &self.blocks {
            for (k, v) in b.eigenvalues.iter().enumerate() {
                writeln!(out, "{},{},{:.10e}", b.block, k + 1, v)?;
            }
        }
        Ok(())
    }
}

/// `Λ = min_i λ_{J_i+1}^i` over `(spectrum, J_i)` pairs.
pub fn compute_lambda<'a>(spectra: impl IntoIterator<Item = (&'a [f64], usize)>) -> f64 {
    spectra
        .into_iter()
        .filter_map(|(s, j)| s.get(j).copied())
        .fold(f64::INFINITY, f64::min)
}

/// A field stored block by block on block-closure dofs, so values on block
/// interfaces may differ between neighbours. Auxiliary functions and their
/// combinations live here.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseField {
    pub parts: Vec<Vec<f64>>,
}

impl PiecewiseField {
    pub fn zeros(aux: &AuxiliarySpace) -> Self {
        Self {
            parts: aux.blocks.iter().map(|b| vec![0.0; b.dofs.len()]).collect(),
        }
    }

    /// Restriction of a global fine vector to every block.
    pub fn from_global(aux: &AuxiliarySpace, v: &[f64]) -> Self {
        Self {
            parts: aux
                .blocks
                .iter()
                .map(|b| b.dofs.iter().map(|&g| v[g]).collect())
                .collect(),
        }
    }

    /// Auxiliary function `j` of block `block`.
    pub fn basis(aux: &AuxiliarySpace, block: usize, j: usize) -> Self {
        let mut f = Self::zeros(aux);
        let b = &aux.blocks[block];
        for l in 0..b.dofs.len() {
            f.parts[block][l] = b.vectors[(l, j)];
        }
        f
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            parts: self
                .parts
                .iter()
                .zip(&other.parts)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.parts
            .iter()
            .zip(&other.parts)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.parts.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `s(u, v) = Σ_i s_i(u, v)`.
pub fn s_inner(aux: &AuxiliarySpace, u: &PiecewiseField, v: &PiecewiseField) -> f64 {
    aux.blocks
        .iter()
        .zip(u.parts.iter().zip(&v.parts))
        .map(|(b, (x, y))| b.mass.bilinear(x, y))
        .sum()
}

/// Coefficients `s_i(v, φ_j^i)` for every block, from block-local values.
pub fn aux_coefficients(aux: &AuxiliarySpace, v: &PiecewiseField) -> Vec<Vec<f64>> {
    aux.blocks
        .iter()
        .zip(&v.parts)
        .map(|(b, x)| (0..b.count).map(|j| dot(b.constraints.col(j).try_as_col_major().unwrap().as_slice(), x)).collect())
        .collect()
}

/// `π(v) = Σ_i Σ_j s_i(v, φ_j^i) φ_j^i`.
pub fn pi_project(aux: &AuxiliarySpace, v: &PiecewiseField) -> PiecewiseField {
    let coeffs = aux_coefficients(aux, v);
    PiecewiseField {
        parts: aux
            .blocks
            .iter()
            .zip(&coeffs)
            .map(|(b, c)| {
                let mut out = vec![0.0; b.dofs.len()];
                for (j, &cj) in c.iter().enumerate() {
                    for (l, o) in out.iter_mut().enumerate() {
                        *o += cj * b.vectors[(l, j)];
                    }
                }
                out
            })
            .collect(),
    }
}

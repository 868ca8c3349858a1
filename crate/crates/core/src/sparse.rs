//! Symmetric sparse storage and the sparse solvers built on faer.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::prelude::*;
use faer::sparse::linalg::amd;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, MatMut, Par, Side};

use crate::error::{CemError, Result};

/// Square matrix in compressed-row form. Operators in this crate are
/// symmetric and store both triangles, so the same arrays read as CSC.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(row_ptr.len(), n + 1);
        assert_eq!(col_idx.len(), values.len());
        assert_eq!(*row_ptr.last().unwrap(), col_idx.len());
        Self { n, row_ptr, col_idx, values }
    }

    /// Builds from unsorted `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..n {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|p| (cols[p], vals[p])));
            scratch.sort_unstable_by_key(|e| e.0);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Self { n, row_ptr, col_idx, values }
    }

    /// Identity of size `n`.
    pub fn identity(n: usize) -> Self {
        Self::from_parts(n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Position of entry `(r, c)` in the value array.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (cols, _) = self.row(r);
        cols.binary_search(&c).ok().map(|p| self.row_ptr[r] + p)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |p| self.values[p])
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[p] * y[self.col_idx[p]];
            }
            acc += xr * row;
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Rows and columns `idx` (sorted, distinct) as a new matrix.
    pub fn submatrix(&self, idx: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.n];
        for (l, &g) in idx.iter().enumerate() {
            local[g] = l;
        }
        let mut row_ptr = Vec::with_capacity(idx.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &g in idx {
            let (cols, vals) = self.row(g);
            for (&c, &v) in cols.iter().zip(vals) {
                let l = local[c];
                if l != usize::MAX {
                    col_idx.push(l);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::from_parts(idx.len(), row_ptr, col_idx, values)
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// The same matrix as a faer column matrix (relies on symmetry).
    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let sym = SymbolicSparseColMat::new_checked(self.n, self.n, self.row_ptr.clone(), None, self.col_idx.clone());
        SparseColMat::new(sym, self.values.clone())
    }

    /// Coordinate text, one `i j value` line per stored entry.
    pub fn write_coordinate(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "% {} {} {}", self.n, self.n, self.nnz())?;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(out, "{r} {c} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse Cholesky factor of an SPD matrix.
pub struct Cholesky {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl Cholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let llt = a
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| CemError::Solver(format!("sparse Cholesky of order {} failed: {e:?}", a.n())))?;
        Ok(Self { n: a.n(), llt })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let mut m = MatMut::from_column_major_slice_mut(x, self.n, 1);
        self.llt.solve_in_place(m.as_mut());
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_mat_in_place(&self, b: MatMut<'_, f64>) {
        self.llt.solve_in_place(b);
    }
}

/// Columns of an `n_rows × k` sparse matrix, each with sorted row indices.
#[derive(Clone, Debug, Default)]
pub struct SparseColumns {
    pub n_rows: usize,
    pub cols: Vec<(Vec<usize>, Vec<f64>)>,
}

impl SparseColumns {
    pub fn new(n_rows: usize) -> Self {
        Self { n_rows, cols: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n_rows, self.cols.len());
        for (j, (rows, vals)) in self.cols.iter().enumerate() {
            for (&r, &v) in rows.iter().zip(vals) {
                m[(r, j)] = v;
            }
        }
        m
    }

    /// `Bᵀ x`.
    pub fn tr_mul(&self, x: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|(rows, vals)| rows.iter().zip(vals).map(|(&r, &v)| v * x[r]).sum())
            .collect()
    }

    /// `y += B c`.
    pub fn mul_add(&self, c: &[f64], y: &mut [f64]) {
        for ((rows, vals), &cj) in self.cols.iter().zip(c) {
            if cj == 0.0 {
                continue;
            }
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * cj;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaddleKind {
    /// `[[A, B], [Bᵀ, 0]]`.
    Constrained,
    /// `[[A, B], [Bᵀ, −I]]`, equivalent to `A + B Bᵀ` on the first block.
    Relaxed,
}

/// Factored symmetric saddle-point matrix built from an SPD block `A` and
/// constraint columns `B`.
pub struct SaddleSolver {
    n: usize,
    k: usize,
    kind: SaddleKind,
    matrix: SparseColMat<usize, f64>,
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl SaddleSolver {
    pub fn new(a: &CsrMatrix, b: &SparseColumns, kind: SaddleKind) -> Result<Self> {
        let n = a.n();
        let k = b.k();
        assert_eq!(b.n_rows, n);
        let total = n + k;

        // Rows of B, needed to fill the lower-left block column by column.
        let mut b_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (j, (rows, vals)) in b.cols.iter().enumerate() {
            for (&r, &v) in rows.iter().zip(vals) {
                b_rows[r].push((n + j, v));
            }
        }
        let nnz = a.nnz() + 2 * b.cols.iter().map(|c| c.0.len()).sum::<usize>() + k;
        let mut col_ptr = Vec::with_capacity(total + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        col_ptr.push(0);
        for c in 0..n {
            let (cols, v) = a.row(c);
            row_idx.extend_from_slice(cols);
            vals.extend_from_slice(v);
            for &(r, x) in &b_rows[c] {
                row_idx.push(r);
                vals.push(x);
            }
            col_ptr.push(row_idx.len());
        }
        let diag = match kind {
            SaddleKind::Constrained => 0.0,
            SaddleKind::Relaxed => -1.0,
        };
        for (j, (rows, v)) in b.cols.iter().enumerate() {
            row_idx.extend_from_slice(rows);
            vals.extend_from_slice(v);
            row_idx.push(n + j);
            vals.push(diag);
            col_ptr.push(row_idx.len());
        }
        let matrix = SparseColMat::new(SymbolicSparseColMat::new_checked(total, total, col_ptr, None, row_idx), vals);

        let symbolic = match kind {
            SaddleKind::Relaxed => factorize_symbolic_cholesky(
                matrix.symbolic(),
                Side::Lower,
                SymmetricOrdering::Amd,
                CholeskySymbolicParams::default(),
            ),
            SaddleKind::Constrained => {
                // Multipliers go last so every pivot of the A block stays positive
                // and the trailing Schur complement is negative definite.
                let a_faer = a.to_faer();
                let mut fwd = vec![0usize; n];
                let mut inv = vec![0usize; n];
                let mut mem = MemBuffer::new(amd::order_maybe_unsorted_scratch::<usize>(n, a.nnz()));
                amd::order_maybe_unsorted(
                    &mut fwd,
                    &mut inv,
                    a_faer.symbolic(),
                    amd::Control::default(),
                    MemStack::new(&mut mem),
                )
                .map_err(|e| CemError::Solver(format!("ordering failed: {e:?}")))?;
                fwd.extend(n..total);
                let mut inv_full = vec![0usize; total];
                for (i, &f) in fwd.iter().enumerate() {
                    inv_full[f] = i;
                }
                let perm = faer::perm::PermRef::new_checked(&fwd, &inv_full, total);
                factorize_symbolic_cholesky(
                    matrix.symbolic(),
                    Side::Lower,
                    SymmetricOrdering::Custom(perm),
                    CholeskySymbolicParams::default(),
                )
            }
        }
        .map_err(|e| CemError::Solver(format!("symbolic factorization failed: {e:?}")))?;

        let mut values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                matrix.as_ref(),
                Side::Lower,
                LdltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| CemError::Solver(format!("LDLT factorization failed: {e:?}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CemError::Solver("LDLT factorization produced non-finite values".into()));
        }
        Ok(Self {
            n,
            k,
            kind,
            matrix,
            symbolic,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn kind(&self) -> SaddleKind {
        self.kind
    }

    /// Solves in place for every column of `rhs` (`(n + k) × r`), refining
    /// iteratively while that still helps. Returns the largest relative
    /// residual.
    pub fn solve_in_place(&self, mut rhs: MatMut<'_, f64>) -> f64 {
        let total = self.n + self.k;
        assert_eq!(rhs.nrows(), total);
        let b = rhs.to_owned();
        let ldlt = LdltRef::new(&self.symbolic, &self.values);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(rhs.ncols(), Par::Seq));
        ldlt.solve_in_place_with_conj(Conj::No, rhs.rb_mut(), Par::Seq, MemStack::new(&mut mem));
        let worst_of = |r: &Mat<f64>| {
            let mut worst: f64 = 0.0;
            for j in 0..b.ncols() {
                let bn = b.col(j).norm_l2();
                let rn = r.col(j).norm_l2();
                let rel = if bn > 0.0 { rn / bn } else { rn };
                worst = worst.max(if rel.is_finite() { rel } else { f64::INFINITY });
            }
            worst
        };
        let mut resid = &b - &self.matrix * rhs.rb();
        let mut worst = worst_of(&resid);
        for _ in 0..MAX_REFINEMENT {
            if worst <= REFINED_ENOUGH {
                break;
            }
            let prev = rhs.to_owned();
            ldlt.solve_in_place_with_conj(Conj::No, resid.as_mut(), Par::Seq, MemStack::new(&mut mem));
            rhs += &resid;
            resid = &b - &self.matrix * rhs.rb();
            let next = worst_of(&resid);
            if !(next < worst) {
                rhs.copy_from(&prev);
                break;
            }
            worst = next;
        }
        worst
    }
}

/// Refinement steps allowed per saddle-point solve.
const MAX_REFINEMENT: usize = 5;
/// Relative residual below which refinement stops.
const REFINED_ENOUGH: f64 = 1e-14;

/// Preconditioned conjugate gradients with `block × block` diagonal blocks
/// inverted exactly. Returns `(iterations, relative residual)`.
pub fn block_jacobi_cg(a: &CsrMatrix, b: &[f64], x: &mut [f64], block: usize, tol: f64, max_iter: usize) -> Result<(usize, f64)> {
    let n = a.n();
    assert_eq!(n % block, 0);
    let nb = n / block;
    let mut inv_blocks = vec![0.0; nb * block * block];
    for ib in 0..nb {
        let mut m = Mat::<f64>::zeros(block, block);
        for i in 0..block {
            for j in 0..block {
                m[(i, j)] = a.get(ib * block + i, ib * block + j);
            }
        }
        let llt = m
            .llt(Side::Lower)
            .map_err(|_| CemError::Solver(format!("preconditioner block {ib} is not positive definite")))?;
        let inv = faer::linalg::solvers::DenseSolveCore::inverse(&llt);
        for i in 0..block {
            for j in 0..block {
                inv_blocks[(ib * block + i) * block + j] = inv[(i, j)];
            }
        }
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for ib in 0..nb {
            for i in 0..block {
                let mut acc = 0.0;
                for j in 0..block {
                    acc += inv_blocks[(ib * block + i) * block + j] * r[ib * block + j];
                }
                z[ib * block + i] = acc;
            }
        }
    };
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((0, 0.0));
    }
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok((it, rel));
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(CemError::Solver(format!(
                "CG breakdown at iteration {it}: pᵀAp = {pap:e} (matrix not positive definite)"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm(&r) / bnorm;
    if rel <= tol {
        Ok((max_iter, rel))
    } else {
        Err(CemError::Solver(format!("CG did not converge in {max_iter} iterations (relative residual {rel:e})")))
    }
}

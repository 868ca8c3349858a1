//! Offline multiscale basis: constrained and relaxed energy minimizers on
//! oversampled domains, their whole-domain counterparts, and the basis set.

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxiliary::AuxiliarySpace;
use crate::error::{CemError, Result};
use crate::grid::{BlockBox, GridHierarchy, SubdomainIndexSet, SubdomainOwner};
use crate::sparse::{CsrMatrix, SaddleKind, SaddleSolver, SparseColumns};

/// Largest local system for which the dense null-space method is used as a
/// fallback when the saddle-point factorization fails.
const DENSE_FALLBACK_LIMIT: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Constrained,
    Relaxed,
    Online,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Constrained => "constrained",
            Variant::Relaxed => "relaxed",
            Variant::Online => "online",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = CemError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Variant::Constrained),
            "relaxed" => Ok(Variant::Relaxed),
            "online" => Ok(Variant::Online),
            _ => Err(CemError::Config(format!("unknown variant `{s}`"))),
        }
    }
}

/// Local operator and constraint columns on the interior dofs of a subdomain.
pub struct LocalSystem {
    pub sub: SubdomainIndexSet,
    pub a: CsrMatrix,
    pub b: SparseColumns,
    /// `(block, first column in b)` for every block of the subdomain.
    pub offsets: Vec<(usize, usize)>,
}

impl LocalSystem {
    pub fn new(a_h: &CsrMatrix, aux: &AuxiliarySpace, sub: SubdomainIndexSet) -> Result<Self> {
        if sub.interior.is_empty() {
            return Err(CemError::InvalidArgument(format!("subdomain of {:?} has no interior dofs", sub.owner)));
        }
        let a = a_h.submatrix(&sub.interior);
        let mut b = SparseColumns::new(sub.interior.len());
        let mut offsets = Vec::with_capacity(sub.blocks.len());
        for &l in &sub.blocks {
            let blk = &aux.blocks[l];
            offsets.push((l, b.k()));
            let mut rows = Vec::with_capacity(blk.dofs.len());
            let mut pos = Vec::with_capacity(blk.dofs.len());
            for (p, g) in blk.dofs.iter().enumerate() {
                if let Ok(r) = sub.interior.binary_search(g) {
                    rows.push(r);
                    pos.push(p);
                }
            }
            for j in 0..blk.count {
                let vals = pos.iter().map(|&p| blk.constraints[(p, j)]).collect();
                b.cols.push((rows.clone(), vals));
            }
        }
        Ok(Self { sub, a, b, offsets })
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn offset_of(&self, block: usize) -> Option<usize> {
        self.offsets.iter().find(|(b, _)| *b == block).map(|&(_, o)| o)
    }

    /// Solves the saddle-point system for right-hand sides selecting
    /// constraints `cols` of `b`. Returns the primal parts, one column each.
    pub fn solve_unit(&self, kind: SaddleKind, cols: std::ops::Range<usize>) -> Result<Mat<f64>> {
        let n = self.n();
        let k = self.b.k();
        let block = match self.sub.owner {
            SubdomainOwner::Block(b) | SubdomainOwner::Vertex(b) => b,
        };
        let mut rhs = Mat::<f64>::zeros(n + k, cols.len());
        for (c, j) in cols.clone().enumerate() {
            rhs[(n + j, c)] = 1.0;
        }
        let solved = SaddleSolver::new(&self.a, &self.b, kind).map(|s| {
            let res = s.solve_in_place(rhs.as_mut());
            (res, rhs.subrows(0, n).to_owned())
        });
        match solved {
            Ok((res, psi)) if res <= 1e-8 => Ok(psi),
            other => {
                let condition = match &other {
                    Ok((res, _)) => res / f64::EPSILON,
                    Err(_) => f64::INFINITY,
                };
                if n <= DENSE_FALLBACK_LIMIT && kind == SaddleKind::Constrained {
                    log::warn!("falling back to the dense null-space method on block {block}");
                    let bd = self.b.to_dense();
                    let mut out = Mat::zeros(n, cols.len());
                    for (c, j) in cols.enumerate() {
                        let mut e = vec![0.0; k];
                        e[j] = 1.0;
                        let psi = null_space_solve(&self.a.to_dense(), &bd, &e)
                            .map_err(|_| CemError::SingularKkt { block, condition })?;
                        for i in 0..n {
                            out[(i, c)] = psi[i];
                        }
                    }
                    Ok(out)
                } else {
                    Err(CemError::SingularKkt { block, condition })
                }
            }
        }
    }

    /// Solves the relaxed operator `(A + B Bᵀ) x = rhs` for several columns.
    pub fn solve_relaxed(&self, rhs: &Mat<f64>) -> Result<Mat<f64>> {
        let n = self.n();
        let k = self.b.k();
        let solver = SaddleSolver::new(&self.a, &self.b, SaddleKind::Relaxed)?;
        let mut full = Mat::<f64>::zeros(n + k, rhs.ncols());
        full.subrows_mut(0, n).copy_from(rhs);
        let res = solver.solve_in_place(full.as_mut());
        if res > 1e-8 {
            return Err(CemError::Solver(format!("relaxed local solve residual {res:e}")));
        }
        Ok(full.subrows(0, n).to_owned())
    }
}

/// Dense null-space method for `min ½xᵀAx` subject to `Bᵀx = e`.
pub fn null_space_solve(a: &Mat<f64>, b: &Mat<f64>, e: &[f64]) -> std::result::Result<Vec<f64>, String> {
    let n = a.nrows();
    let k = b.ncols();
    let svd = b.svd().map_err(|e| format!("{e:?}"))?;
    let s = svd.S().column_vector();
    let smax = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    if (0..k).any(|i| s[i] <= 1e-13 * smax) {
        return Err("constraint columns are linearly dependent".into());
    }
    let u = svd.U();
    let v = svd.V();
    // Minimum-norm particular solution x0 = U_1 Σ⁻¹ Vᵀ e.
    let mut x0 = vec![0.0; n];
    for i in 0..k {
        let c: f64 = (0..k).map(|r| v[(r, i)] * e[r]).sum::<f64>() / s[i];
        for r in 0..n {
            x0[r] += u[(r, i)] * c;
        }
    }
    let z = u.subcols(k, n - k);
    let ax0 = a * Mat::from_fn(n, 1, |i, _| x0[i]);
    let reduced = z.transpose() * a * z;
    let rhs = -(z.transpose() * &ax0);
    let llt = reduced.llt(Side::Lower).map_err(|e| format!("{e:?}"))?;
    let y = llt.solve(&rhs);
    let zy = z * &y;
    Ok((0..n).map(|i| x0[i] + zy[(i, 0)]).collect())
}

/// Constrained basis functions of block `block` on `K_{block,m}`, one column
/// per auxiliary function of the block, on the subdomain's interior dofs.
pub fn constrained_basis(grid: &GridHierarchy, a_h: &CsrMatrix, aux: &AuxiliarySpace, block: usize, m: usize) -> Result<(SubdomainIndexSet, Mat<f64>)> {
    local_basis(grid, a_h, aux, block, m, SaddleKind::Constrained)
}

/// Relaxed basis functions of block `block` on `K_{block,m}`.
pub fn relaxed_basis(grid: &GridHierarchy, a_h: &CsrMatrix, aux: &AuxiliarySpace, block: usize, m: usize) -> Result<(SubdomainIndexSet, Mat<f64>)> {
    local_basis(grid, a_h, aux, block, m, SaddleKind::Relaxed)
}

fn local_basis(
    grid: &GridHierarchy,
    a_h: &CsrMatrix,
    aux: &AuxiliarySpace,
    block: usize,
    m: usize,
    kind: SaddleKind,
) -> Result<(SubdomainIndexSet, Mat<f64>)> {
    let sub = grid.oversample_block(block, m)?;
    let sys = LocalSystem::new(a_h, aux, sub)?;
    let off = sys.offset_of(block).expect("block lies in its own oversampled domain");
    let count = aux.blocks[block].count;
    let psi = sys.solve_unit(kind, off..off + count)?;
    Ok((sys.sub, psi))
}

/// Whole-domain basis function `ψ_j^i`, computed by routes independent of
/// the local saddle-point solver: sparse LU of the full constrained system,
/// or sparse Cholesky of the assembled relaxed operator.
pub fn global_basis_oracle(a_h: &CsrMatrix, aux: &AuxiliarySpace, block: usize, j: usize, variant: Variant) -> Result<Vec<f64>> {
    let n = a_h.n();
    let mut col_of = Vec::new();
    let mut k = 0;
    for b in &aux.blocks {
        col_of.push(k);
        k += b.count;
    }
    let target = col_of[block] + j;
    match variant {
        Variant::Constrained => {
            let mut t = Vec::with_capacity(a_h.nnz() + 2 * k * 100);
            for r in 0..n {
                let (cols, vals) = a_h.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    t.push(Triplet::new(r, c, v));
                }
            }
            for (bi, b) in aux.blocks.iter().enumerate() {
                for jj in 0..b.count {
                    let col = n + col_of[bi] + jj;
                    for (p, &g) in b.dofs.iter().enumerate() {
                        let v = b.constraints[(p, jj)];
                        t.push(Triplet::new(g, col, v));
                        t.push(Triplet::new(col, g, v));
                    }
                }
            }
            let kkt = SparseColMat::<usize, f64>::try_new_from_triplets(n + k, n + k, &t)
                .map_err(|e| CemError::Solver(format!("{e:?}")))?;
            let lu = kkt.sp_lu().map_err(|e| CemError::Solver(format!("sparse LU failed: {e:?}")))?;
            let mut rhs = Mat::<f64>::zeros(n + k, 1);
            rhs[(n + target, 0)] = 1.0;
            lu.solve_in_place(rhs.as_mut());
            Ok((0..n).map(|i| rhs[(i, 0)]).collect())
        }
        Variant::Relaxed => {
            let mut t = Vec::with_capacity(a_h.nnz() * 3);
            for r in 0..n {
                let (cols, vals) = a_h.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    t.push(Triplet::new(r, c, v));
                }
            }
            let mut rhs = Mat::<f64>::zeros(n, 1);
            for b in &aux.blocks {
                for jj in 0..b.count {
                    let col = b.constraints.col(jj);
                    for (p, &gp) in b.dofs.iter().enumerate() {
                        if col[p] == 0.0 {
                            continue;
                        }
                        for (q, &gq) in b.dofs.iter().enumerate() {
                            if col[q] != 0.0 {
                                t.push(Triplet::new(gp, gq, col[p] * col[q]));
                            }
                        }
                    }
                }
            }
            let tb = &aux.blocks[block];
            for (p, &g) in tb.dofs.iter().enumerate() {
                rhs[(g, 0)] = tb.constraints[(p, j)];
            }
            let op = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
                .map_err(|e| CemError::Solver(format!("{e:?}")))?;
            let llt = op
                .sp_cholesky(Side::Lower)
                .map_err(|e| CemError::Solver(format!("relaxed global operator: {e:?}")))?;
            llt.solve_in_place(rhs.as_mut());
            Ok((0..n).map(|i| rhs[(i, 0)]).collect())
        }
        Variant::Online => Err(CemError::InvalidArgument("online functions have no global oracle".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    /// Owning block (offline) or coarse vertex (online).
    pub owner: usize,
    /// Auxiliary index within the block; zero for online functions.
    pub index: usize,
    pub variant: Variant,
    /// Oversampling layers of the support.
    pub layers: usize,
    /// Enrichment iteration that added the column; zero for offline ones.
    pub iteration: usize,
}

/// Columns sharing one support, stored densely on that support.
#[derive(Clone, Debug)]
pub struct BasisGroup {
    pub block_box: BlockBox,
    pub support: Arc<[usize]>,
    pub columns: Mat<f64>,
    pub meta: Vec<ColumnMeta>,
}

impl BasisGroup {
    pub fn n_cols(&self) -> usize {
        self.columns.ncols()
    }
}

/// The basis matrix `R`, one column per multiscale function.
#[derive(Clone, Debug)]
pub struct BasisSet {
    n_free: usize,
    pub groups: Vec<BasisGroup>,
}

impl BasisSet {
    pub fn new(n_free: usize) -> Self {
        Self { n_free, groups: Vec::new() }
    }

    /// Every free fine dof as its own column; spans the whole fine space.
    pub fn identity(grid: &GridHierarchy) -> Self {
        let n = grid.n_free();
        let sub = grid.whole_domain(SubdomainOwner::Block(0));
        let group = BasisGroup {
            block_box: sub.block_box,
            support: (0..n).collect::<Vec<_>>().into(),
            columns: Mat::identity(n, n),
            meta: (0..n)
                .map(|i| ColumnMeta {
                    owner: 0,
                    index: i,
                    variant: Variant::Online,
                    layers: usize::MAX,
                    iteration: 0,
                })
                .collect(),
        };
        Self { n_free: n, groups: vec![group] }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_cols(&self) -> usize {
        self.groups.iter().map(|g| g.n_cols()).sum()
    }

    pub fn push(&mut self, group: BasisGroup) {
        assert_eq!(group.support.len(), group.columns.nrows());
        assert_eq!(group.meta.len(), group.columns.ncols());
        if group.n_cols() > 0 {
            self.groups.push(group);
        }
    }

    pub fn meta(&self) -> impl Iterator<Item = &ColumnMeta> {
        self.groups.iter().flat_map(|g| g.meta.iter())
    }

    /// Global fine vector of column `col`.
    pub fn column(&self, mut col: usize) -> Vec<f64> {
        for g in &self.groups {
            if col < g.n_cols() {
                let mut out = vec![0.0; self.n_free];
                for (l, &s) in g.support.iter().enumerate() {
                    out[s] = g.columns[(l, col)];
                }
                return out;
            }
            col -= g.n_cols();
        }
        panic!("column index out of range");
    }

    /// `R c`.
    pub fn prolong(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.n_cols());
        let mut out = vec![0.0; self.n_free];
        let mut off = 0;
        for g in &self.groups {
            for j in 0..g.n_cols() {
                let cj = c[off + j];
                if cj == 0.0 {
                    continue;
                }
                let col = g.columns.col(j);
                for (l, &s) in g.support.iter().enumerate() {
                    out[s] += cj * col[l];
                }
            }
            off += g.n_cols();
        }
        out
    }

    /// `Rᵀ v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_cols());
        for g in &self.groups {
            for j in 0..g.n_cols() {
                let col = g.columns.col(j);
                out.push(g.support.iter().enumerate().map(|(l, &s)| col[l] * v[s]).sum());
            }
        }
        out
    }

    /// Keeps only the columns for which `keep` is true.
    pub fn retain_columns(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.n_cols());
        let mut off = 0;
        let mut groups = Vec::with_capacity(self.groups.len());
        for g in self.groups.drain(..) {
            let nc = g.n_cols();
            let kept: Vec<usize> = (0..nc).filter(|&j| keep[off + j]).collect();
            off += nc;
            if kept.len() == nc {
                groups.push(g);
            } else if !kept.is_empty() {
                let columns = Mat::from_fn(g.support.len(), kept.len(), |i, c| g.columns[(i, kept[c])]);
                let meta = kept.iter().map(|&j| g.meta[j]).collect();
                groups.push(BasisGroup {
                    block_box: g.block_box,
                    support: g.support,
                    columns,
                    meta,
                });
            }
        }
        self.groups = groups;
    }

    /// Writes every column as little-endian `f64` over the free dofs, one
    /// column after another.
    pub fn write_binary(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for c in 0..self.n_cols() {
            for v in self.column(c) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// JSON sidecar describing the binary layout and every column.
    pub fn sidecar(&self) -> serde_json::Value {
        let cols: Vec<_> = self
            .meta()
            .map(|m| {
                serde_json::json!({
                    "block": m.owner,
                    "j": m.index,
                    "variant": m.variant,
                    "m": m.layers,
                    "iteration": m.iteration,
                })
            })
            .collect();
        serde_json::json!({
            "rows": self.n_free,
            "columns": self.n_cols(),
            "dtype": "f64-le",
            "layout": "column-major over free dofs",
            "meta": cols,
        })
    }
}

/// Offline basis for every block: `Σ_i J_i` columns.
pub fn build_basis_matrix(grid: &GridHierarchy, a_h: &CsrMatrix, aux: &AuxiliarySpace, variant: Variant, m: usize) -> Result<BasisSet> {
    let kind = match variant {
        Variant::Constrained => SaddleKind::Constrained,
        Variant::Relaxed => SaddleKind::Relaxed,
        Variant::Online => return Err(CemError::InvalidArgument("offline basis cannot be online".into())),
    };
    let groups = (0..grid.n_blocks())
        .into_par_iter()
        .map(|b| {
            let (sub, psi) = local_basis(grid, a_h, aux, b, m, kind)?;
            let meta = (0..psi.ncols())
                .map(|j| ColumnMeta {
                    owner: b,
                    index: j,
                    variant,
                    layers: m,
                    iteration: 0,
                })
                .collect();
            Ok(BasisGroup {
                block_box: sub.block_box,
                support: sub.interior.into(),
                columns: psi,
                meta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = BasisSet::new(grid.n_free());
    for g in groups {
        set.push(g);
    }
    Ok(set)
}

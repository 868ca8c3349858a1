//! Matched fine/coarse structured grids on the unit box `(0,1)^d`.
//!
//! Fine nodes are numbered lexicographically with `x` fastest. Degrees of
//! freedom are node-major with the `d` displacement components interleaved:
//! full dof `node * d + c`. Nodes on the outer boundary carry homogeneous
//! Dirichlet conditions and are removed from the *free* numbering, which is
//! the index space of every global fine vector in this crate.

use crate::error::{CemError, Result};

const NONE: u32 = u32::MAX;

/// Axis-aligned box of coarse blocks, `lo` inclusive and `hi` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BlockBox {
    pub fn contains_block(&self, b: [usize; 3], dim: usize) -> bool {
        (0..dim).all(|k| b[k] >= self.lo[k] && b[k] < self.hi[k])
    }

    pub fn extent(&self, dim: usize) -> [usize; 3] {
        let mut e = [1; 3];
        for k in 0..dim {
            e[k] = self.hi[k] - self.lo[k];
        }
        e
    }

    fn grow(&self, layers: usize, n_coarse: usize, dim: usize) -> BlockBox {
        let mut out = *self;
        for k in 0..dim {
            out.lo[k] = self.lo[k].saturating_sub(layers);
            out.hi[k] = (self.hi[k] + layers).min(n_coarse);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubdomainOwner {
    Block(usize),
    Vertex(usize),
}

/// Fine cells and free dofs of a union of coarse blocks.
#[derive(Clone, Debug)]
pub struct SubdomainIndexSet {
    pub owner: SubdomainOwner,
    pub layers: usize,
    pub block_box: BlockBox,
    /// Coarse blocks inside the subdomain, ascending.
    pub blocks: Vec<usize>,
    /// Fine cells inside the subdomain, ascending.
    pub cells: Vec<usize>,
    /// Free dofs on the closure of the subdomain, ascending.
    pub dofs: Vec<usize>,
    /// Free dofs strictly inside the subdomain, ascending.
    pub interior: Vec<usize>,
    /// Free dofs on the subdomain boundary, ascending.
    pub boundary: Vec<usize>,
}

impl SubdomainIndexSet {
    /// Embeds a vector given on `interior` into the global free space.
    pub fn embed(&self, local: &[f64], n_free: usize) -> Vec<f64> {
        assert_eq!(local.len(), self.interior.len());
        let mut out = vec![0.0; n_free];
        for (&g, &v) in self.interior.iter().zip(local) {
            out[g] = v;
        }
        out
    }

    /// Gathers the interior entries of a global free vector.
    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&g| global[g]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GridHierarchy {
    dim: usize,
    n_fine: usize,
    n_coarse: usize,
    ratio: usize,
    free_of_full: Vec<u32>,
    full_of_free: Vec<u32>,
}

impl GridHierarchy {
    /// Builds a hierarchy with `n_fine` fine cells and `n_coarse` coarse
    /// blocks per side.
    pub fn new(dim: usize, n_fine: usize, n_coarse: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(CemError::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n_coarse < 2 {
            return Err(CemError::InvalidGrid(format!(
                "need at least 2 coarse blocks per side, got {n_coarse}"
            )));
        }
        if n_fine % n_coarse != 0 {
            return Err(CemError::InvalidGrid(format!(
                "fine resolution {n_fine} is not divisible by coarse resolution {n_coarse}"
            )));
        }
        let np = n_fine + 1;
        let n_nodes = np.pow(dim as u32);
        let mut free_of_full = vec![NONE; n_nodes * dim];
        let mut full_of_free = Vec::new();
        for node in 0..n_nodes {
            let c = unravel(node, np, dim);
            let on_boundary = (0..dim).any(|k| c[k] == 0 || c[k] == n_fine);
            if on_boundary {
                continue;
            }
            for comp in 0..dim {
                let full = node * dim + comp;
                free_of_full[full] = full_of_free.len() as u32;
                full_of_free.push(full as u32);
            }
        }
        Ok(Self {
            dim,
            n_fine,
            n_coarse,
            ratio: n_fine / n_coarse,
            free_of_full,
            full_of_free,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_fine(&self) -> usize {
        self.n_fine
    }
    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }
    /// Fine cells per coarse block per side.
    pub fn ratio(&self) -> usize {
        self.ratio
    }
    pub fn h(&self) -> f64 {
        1.0 / self.n_fine as f64
    }
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }
    pub fn nodes_per_side(&self) -> usize {
        self.n_fine + 1
    }
    pub fn n_nodes(&self) -> usize {
        self.nodes_per_side().pow(self.dim as u32)
    }
    pub fn n_cells(&self) -> usize {
        self.n_fine.pow(self.dim as u32)
    }
    pub fn n_blocks(&self) -> usize {
        self.n_coarse.pow(self.dim as u32)
    }
    pub fn n_vertices(&self) -> usize {
        (self.n_coarse + 1).pow(self.dim as u32)
    }
    pub fn n_full_dofs(&self) -> usize {
        self.n_nodes() * self.dim
    }
    pub fn n_free(&self) -> usize {
        self.full_of_free.len()
    }
    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn free_dof(&self, full: usize) -> Option<usize> {
        match self.free_of_full[full] {
            NONE => None,
            f => Some(f as usize),
        }
    }

    pub fn full_dof(&self, free: usize) -> usize {
        self.full_of_free[free] as usize
    }

    pub fn node_coords(&self, node: usize) -> [usize; 3] {
        unravel(node, self.nodes_per_side(), self.dim)
    }

    pub fn node_index(&self, c: [usize; 3]) -> usize {
        ravel(c, self.nodes_per_side(), self.dim)
    }

    pub fn node_position(&self, node: usize) -> [f64; 3] {
        let c = self.node_coords(node);
        let h = self.h();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = c[k] as f64 * h;
        }
        x
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let c = self.node_coords(node);
        (0..self.dim).any(|k| c[k] == 0 || c[k] == self.n_fine)
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        unravel(cell, self.n_fine, self.dim)
    }

    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        ravel(c, self.n_fine, self.dim)
    }

    /// Corner nodes of a fine cell; corner `a` sits at offset bit `k` of `a`
    /// along axis `k`.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 8] {
        let c = self.cell_coords(cell);
        let mut out = [0; 8];
        for (a, slot) in out.iter_mut().enumerate().take(self.corners_per_cell()) {
            let mut nc = c;
            for (k, v) in nc.iter_mut().enumerate().take(self.dim) {
                *v += (a >> k) & 1;
            }
            *slot = self.node_index(nc);
        }
        out
    }

    /// Cells having `node` as a corner.
    pub fn node_cells(&self, node: usize) -> Vec<usize> {
        let c = self.node_coords(node);
        let mut out = Vec::with_capacity(self.corners_per_cell());
        for a in 0..self.corners_per_cell() {
            let mut cc = [0usize; 3];
            let mut ok = true;
            for k in 0..self.dim {
                let off = (a >> k) & 1;
                if c[k] < off || c[k] - off >= self.n_fine {
                    ok = false;
                    break;
                }
                cc[k] = c[k] - off;
            }
            if ok {
                out.push(self.cell_index(cc));
            }
        }
        out
    }

    pub fn block_coords(&self, block: usize) -> [usize; 3] {
        unravel(block, self.n_coarse, self.dim)
    }

    pub fn block_index(&self, c: [usize; 3]) -> usize {
        ravel(c, self.n_coarse, self.dim)
    }

    pub fn block_of_cell(&self, cell: usize) -> usize {
        let mut c = self.cell_coords(cell);
        for v in c.iter_mut().take(self.dim) {
            *v /= self.ratio;
        }
        self.block_index(c)
    }

    pub fn vertex_coords(&self, vertex: usize) -> [usize; 3] {
        unravel(vertex, self.n_coarse + 1, self.dim)
    }

    pub fn vertex_index(&self, c: [usize; 3]) -> usize {
        ravel(c, self.n_coarse + 1, self.dim)
    }

    pub fn vertex_position(&self, vertex: usize) -> [f64; 3] {
        let c = self.vertex_coords(vertex);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = c[k] as f64 * self.coarse_h();
        }
        x
    }

    pub fn vertex_node(&self, vertex: usize) -> usize {
        let mut c = self.vertex_coords(vertex);
        for v in c.iter_mut().take(self.dim) {
            *v *= self.ratio;
        }
        self.node_index(c)
    }

    pub fn is_interior_vertex(&self, vertex: usize) -> bool {
        let c = self.vertex_coords(vertex);
        (0..self.dim).all(|k| c[k] > 0 && c[k] < self.n_coarse)
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&v| self.is_interior_vertex(v))
            .collect()
    }

    /// Fine cells of a coarse block, ascending.
    pub fn block_cells(&self, block: usize) -> Vec<usize> {
        let bb = self.single_block_box(block);
        self.box_cells(&bb)
    }

    pub fn single_block_box(&self, block: usize) -> BlockBox {
        let b = self.block_coords(block);
        let mut hi = [1; 3];
        for k in 0..self.dim {
            hi[k] = b[k] + 1;
        }
        BlockBox { lo: b, hi }
    }

    pub fn whole_domain_box(&self) -> BlockBox {
        let mut hi = [1; 3];
        for v in hi.iter_mut().take(self.dim) {
            *v = self.n_coarse;
        }
        BlockBox { lo: [0; 3], hi }
    }

    /// Oversampled domain `K_{i,m}`: every block within Chebyshev distance
    /// `layers` of block `block`, clipped to the domain.
    pub fn oversample_block(&self, block: usize, layers: usize) -> Result<SubdomainIndexSet> {
        if block >= self.n_blocks() {
            return Err(CemError::InvalidArgument(format!("block {block} out of range")));
        }
        let bb = self.single_block_box(block).grow(layers, self.n_coarse, self.dim);
        Ok(self.subdomain(SubdomainOwner::Block(block), layers, bb))
    }

    /// Neighborhood `ω_i` of a coarse vertex, optionally extended by `extra`
    /// coarse layers (`ω_i^+`).
    pub fn neighborhood(&self, vertex: usize, extra: usize) -> Result<SubdomainIndexSet> {
        if vertex >= self.n_vertices() {
            return Err(CemError::InvalidArgument(format!("vertex {vertex} out of range")));
        }
        let v = self.vertex_coords(vertex);
        let mut bb = BlockBox { lo: [0; 3], hi: [1; 3] };
        for k in 0..self.dim {
            bb.lo[k] = v[k].saturating_sub(1);
            bb.hi[k] = (v[k] + 1).min(self.n_coarse);
        }
        let bb = bb.grow(extra, self.n_coarse, self.dim);
        Ok(self.subdomain(SubdomainOwner::Vertex(vertex), extra, bb))
    }

    /// The whole domain as a subdomain owned by `owner`.
    pub fn whole_domain(&self, owner: SubdomainOwner) -> SubdomainIndexSet {
        self.subdomain(owner, usize::MAX, self.whole_domain_box())
    }

    pub fn subdomain(&self, owner: SubdomainOwner, layers: usize, bb: BlockBox) -> SubdomainIndexSet {
        let dim = self.dim;
        let r = self.ratio;
        let mut blocks = Vec::new();
        for_each_in_box(bb.lo, bb.hi, dim, |b| blocks.push(self.block_index(b)));
        blocks.sort_unstable();
        let cells = self.box_cells(&bb);

        let mut node_lo = [0; 3];
        let mut node_hi = [0; 3];
        for k in 0..dim {
            node_lo[k] = bb.lo[k] * r;
            node_hi[k] = bb.hi[k] * r + 1;
        }
        let mut dofs = Vec::new();
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for_each_in_box(node_lo, node_hi, dim, |nc| {
            let node = self.node_index(nc);
            let inside = (0..dim).all(|k| nc[k] > node_lo[k] && nc[k] + 1 < node_hi[k]);
            for comp in 0..dim {
                if let Some(f) = self.free_dof(node * dim + comp) {
                    dofs.push(f);
                    if inside {
                        interior.push(f);
                    } else {
                        boundary.push(f);
                    }
                }
            }
        });
        dofs.sort_unstable();
        interior.sort_unstable();
        boundary.sort_unstable();
        SubdomainIndexSet {
            owner,
            layers,
            block_box: bb,
            blocks,
            cells,
            dofs,
            interior,
            boundary,
        }
    }

    fn box_cells(&self, bb: &BlockBox) -> Vec<usize> {
        let r = self.ratio;
        let mut lo = [0; 3];
        let mut hi = [1; 3];
        for k in 0..self.dim {
            lo[k] = bb.lo[k] * r;
            hi[k] = bb.hi[k] * r;
        }
        let mut cells = Vec::new();
        for_each_in_box(lo, hi, self.dim, |c| cells.push(self.cell_index(c)));
        cells.sort_unstable();
        cells
    }

    /// Free dofs on the closure of a single coarse block.
    pub fn block_dofs(&self, block: usize) -> Vec<usize> {
        self.subdomain(SubdomainOwner::Block(block), 0, self.single_block_box(block))
            .dofs
    }

    /// Expands a free vector to all nodes (boundary entries zero).
    pub fn to_full(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_full_dofs()];
        for (i, &v) in free.iter().enumerate() {
            out[self.full_of_free[i] as usize] = v;
        }
        out
    }
}

/// Partition of unity made of the multilinear coarse hat functions, sampled
/// at fine nodes.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    dim: usize,
    ratio: usize,
    n_fine: usize,
    n_coarse: usize,
}

impl PartitionOfUnity {
    pub fn new(grid: &GridHierarchy) -> Self {
        Self {
            dim: grid.dim(),
            ratio: grid.ratio(),
            n_fine: grid.n_fine(),
            n_coarse: grid.n_coarse(),
        }
    }

    /// `χ_vertex` at a fine node given by integer node coordinates.
    pub fn value_at(&self, vertex: [usize; 3], node: [usize; 3]) -> f64 {
        let r = self.ratio as i64;
        let mut v = 1.0;
        for k in 0..self.dim {
            let t = (node[k] as i64 - (vertex[k] as i64) * r).abs();
            if t >= r {
                return 0.0;
            }
            v *= (r - t) as f64 / r as f64;
        }
        v
    }

    /// `χ_vertex` at fine node `node`.
    pub fn value(&self, grid: &GridHierarchy, vertex: usize, node: usize) -> f64 {
        self.value_at(grid.vertex_coords(vertex), grid.node_coords(node))
    }

    /// Nodal values of `χ_vertex` over all fine nodes.
    pub fn nodal_values(&self, grid: &GridHierarchy, vertex: usize) -> Vec<f64> {
        let vc = grid.vertex_coords(vertex);
        (0..grid.n_nodes())
            .map(|n| self.value_at(vc, grid.node_coords(n)))
            .collect()
    }

    /// Vertices whose hat is nonzero at the node.
    pub fn covering_vertices(&self, node: [usize; 3]) -> Vec<[usize; 3]> {
        let r = self.ratio;
        let mut ranges = [(0usize, 0usize); 3];
        for k in 0..self.dim {
            let q = node[k] / r;
            if node[k] % r == 0 {
                ranges[k] = (q, q);
            } else {
                ranges[k] = (q, (q + 1).min(self.n_coarse));
            }
        }
        let mut out = Vec::new();
        let hi: [usize; 3] = std::array::from_fn(|k| if k < self.dim { ranges[k].1 + 1 } else { 1 });
        let lo: [usize; 3] = std::array::from_fn(|k| if k < self.dim { ranges[k].0 } else { 0 });
        for_each_in_box(lo, hi, self.dim, |v| out.push(v));
        out
    }

    /// `Σ_i |∇χ_i|²` at block-local fine offsets `t` (each in `0..=ratio`) of
    /// any coarse block, evaluated from inside that block.
    pub fn grad_sq_sum(&self, t: [usize; 3]) -> f64 {
        let big_h = 1.0 / self.n_coarse as f64;
        let r = self.ratio as f64;
        let xi: [f64; 3] = std::array::from_fn(|k| t[k] as f64 / r);
        let mut total = 0.0;
        for k in 0..self.dim {
            let mut prod = 2.0;
            for (l, &x) in xi.iter().enumerate().take(self.dim) {
                if l != k {
                    prod *= x * x + (1.0 - x) * (1.0 - x);
                }
            }
            total += prod;
        }
        let _ = self.n_fine;
        total / (big_h * big_h)
    }
}

pub fn build_pou(grid: &GridHierarchy) -> PartitionOfUnity {
    PartitionOfUnity::new(grid)
}

pub(crate) fn unravel(mut idx: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut c = [0; 3];
    for v in c.iter_mut().take(dim) {
        *v = idx % n;
        idx /= n;
    }
    c
}

pub(crate) fn ravel(c: [usize; 3], n: usize, dim: usize) -> usize {
    let mut idx = 0;
    for k in (0..dim).rev() {
        idx = idx * n + c[k];
    }
    idx
}

/// Visits every integer point of `[lo, hi)` in lexicographic order, `x`
/// fastest.
pub(crate) fn for_each_in_box(lo: [usize; 3], hi: [usize; 3], dim: usize, mut f: impl FnMut([usize; 3])) {
    let (z0, z1) = if dim == 3 { (lo[2], hi[2]) } else { (0, 1) };
    for z in z0..z1 {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                f([x, y, z]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_counts() {
        let g = GridHierarchy::new(2, 256, 8).unwrap();
        assert_eq!(g.n_blocks(), 64);
        assert!((0..g.n_blocks()).all(|b| g.block_cells(b).len() == 32 * 32));
    }

    #[test]
    fn small_counts() {
        let g = GridHierarchy::new(2, 8, 2).unwrap();
        assert_eq!(g.n_blocks(), 4);
        assert_eq!(g.n_vertices(), 9);
        assert_eq!(g.interior_vertices().len(), 1);

        let g = GridHierarchy::new(3, 16, 4).unwrap();
        assert_eq!(g.n_blocks(), 64);
        assert!((0..g.n_blocks()).all(|b| g.block_cells(b).len() == 64));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GridHierarchy::new(2, 10, 4).is_err());
        assert!(GridHierarchy::new(1, 8, 2).is_err());
        assert!(GridHierarchy::new(4, 8, 2).is_err());
        assert!(GridHierarchy::new(2, 8, 1).is_err());
    }

    #[test]
    fn blocks_tile_domain() {
        for (d, nf, nc) in [(2, 24, 4), (3, 8, 2)] {
            let g = GridHierarchy::new(d, nf, nc).unwrap();
            let mut owner = vec![usize::MAX; g.n_cells()];
            for b in 0..g.n_blocks() {
                for c in g.block_cells(b) {
                    assert_eq!(owner[c], usize::MAX);
                    owner[c] = b;
                    assert_eq!(g.block_of_cell(c), b);
                }
            }
            assert!(owner.iter().all(|&o| o != usize::MAX));
        }
    }

    #[test]
    fn oversampling_shapes() {
        let g = GridHierarchy::new(2, 64, 8).unwrap();
        let center = g.block_index([4, 4, 0]);
        let s = g.oversample_block(center, 1).unwrap();
        assert_eq!(s.blocks.len(), 9);
        assert_eq!(s.block_box.extent(2), [3, 3, 1]);

        let s0 = g.oversample_block(center, 0).unwrap();
        assert_eq!(s0.blocks, vec![center]);
        assert_eq!(s0.cells, g.block_cells(center));

        let corner = g.block_index([0, 0, 0]);
        let s = g.oversample_block(corner, 1).unwrap();
        assert_eq!(s.blocks.len(), 4);
    }

    #[test]
    fn neighborhoods() {
        let g = GridHierarchy::new(2, 48, 6).unwrap();
        let v = g.vertex_index([3, 3, 0]);
        assert_eq!(g.neighborhood(v, 0).unwrap().blocks.len(), 4);
        let edge = g.vertex_index([0, 3, 0]);
        assert_eq!(g.neighborhood(edge, 0).unwrap().blocks.len(), 2);
        let plus = g.neighborhood(v, 1).unwrap();
        assert_eq!(plus.block_box.extent(2), [4, 4, 1]);

        let g3 = GridHierarchy::new(3, 8, 4).unwrap();
        let v3 = g3.vertex_index([2, 2, 2]);
        assert_eq!(g3.neighborhood(v3, 0).unwrap().blocks.len(), 8);
    }

    #[test]
    fn interior_and_boundary_partition_members() {
        let g = GridHierarchy::new(2, 32, 8).unwrap();
        for b in [0, 9, 27, 63] {
            for m in 0..3 {
                let s = g.oversample_block(b, m).unwrap();
                let mut all: Vec<usize> = s.interior.iter().chain(&s.boundary).copied().collect();
                all.sort_unstable();
                assert_eq!(all, s.dofs);
                assert!(s.interior.iter().all(|d| s.boundary.binary_search(d).is_err()));
            }
        }
    }

    #[test]
    fn monotone_oversampling() {
        let g = GridHierarchy::new(2, 32, 8).unwrap();
        for b in [0, 10, 36] {
            let mut prev = g.oversample_block(b, 0).unwrap().dofs;
            for m in 1..9 {
                let cur = g.oversample_block(b, m).unwrap().dofs;
                assert!(prev.iter().all(|d| cur.binary_search(d).is_ok()));
                prev = cur;
            }
            assert_eq!(prev.len(), g.n_free());
        }
    }

    #[test]
    fn pou_sums_to_one_and_interpolates() {
        for (d, nf, nc) in [(2, 16, 4), (3, 8, 2)] {
            let g = GridHierarchy::new(d, nf, nc).unwrap();
            let pou = build_pou(&g);
            for node in 0..g.n_nodes() {
                let s: f64 = (0..g.n_vertices()).map(|v| pou.value(&g, v, node)).sum();
                assert!((s - 1.0).abs() <= 1e-14);
            }
            for v in 0..g.n_vertices() {
                for w in 0..g.n_vertices() {
                    let val = pou.value(&g, v, g.vertex_node(w));
                    assert_eq!(val, if v == w { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn pou_block_center_quarter() {
        let g = GridHierarchy::new(2, 64, 8).unwrap();
        let pou = build_pou(&g);
        let node = g.node_index([8 * 3 + 4, 8 * 5 + 4, 0]);
        let covering: Vec<f64> = (0..g.n_vertices())
            .map(|v| pou.value(&g, v, node))
            .filter(|&x| x > 0.0)
            .collect();
        assert_eq!(covering, vec![0.25; 4]);
    }

    #[test]
    fn pou_reproduces_linears() {
        let g = GridHierarchy::new(2, 24, 4).unwrap();
        let pou = build_pou(&g);
        for node in 0..g.n_nodes() {
            let x = g.node_position(node);
            let mut acc = [0.0; 2];
            for v in 0..g.n_vertices() {
                let c = pou.value(&g, v, node);
                let xv = g.vertex_position(v);
                acc[0] += c * xv[0];
                acc[1] += c * xv[1];
            }
            assert!((acc[0] - x[0]).abs() < 1e-12 && (acc[1] - x[1]).abs() < 1e-12);
        }
    }
}

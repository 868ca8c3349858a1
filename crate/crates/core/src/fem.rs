//! Q1 finite elements for isotropic linear elasticity on the fine grid.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{CemError, Result};
use crate::grid::{for_each_in_box, GridHierarchy};
use crate::sparse::{block_jacobi_cg, dot, norm, Cholesky, CsrMatrix};

const GAUSS2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];

fn gauss3() -> [(f64, f64); 3] {
    let o = 0.5 * (0.6f64).sqrt();
    [(0.5 - o, 5.0 / 18.0), (0.5, 4.0 / 9.0), (0.5 + o, 5.0 / 18.0)]
}

/// Tensor Gauss points on the unit cell: `(ξ, weight)`.
fn tensor_points(rule: &[(f64, f64)], dim: usize) -> Vec<([f64; 3], f64)> {
    let q = rule.len();
    let mut out = Vec::new();
    let hi = [q, q, if dim == 3 { q } else { 1 }];
    for_each_in_box([0; 3], hi, dim, |i| {
        let mut xi = [0.0; 3];
        let mut w = 1.0;
        for k in 0..dim {
            xi[k] = rule[i[k]].0;
            w *= rule[i[k]].1;
        }
        out.push((xi, w));
    });
    out
}

fn shape(a: usize, xi: [f64; 3], dim: usize) -> f64 {
    (0..dim)
        .map(|k| if (a >> k) & 1 == 1 { xi[k] } else { 1.0 - xi[k] })
        .product()
}

/// Gradient of shape function `a` on the unit cell.
fn shape_grad(a: usize, xi: [f64; 3], dim: usize) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (k, gk) in g.iter_mut().enumerate().take(dim) {
        let mut v = if (a >> k) & 1 == 1 { 1.0 } else { -1.0 };
        for l in 0..dim {
            if l != k {
                v *= if (a >> l) & 1 == 1 { xi[l] } else { 1.0 - xi[l] };
            }
        }
        *gk = v;
    }
    g
}

/// Element matrices on a cell of width `h`, with dof `a * dim + c` for corner
/// `a` and component `c`.
#[derive(Clone, Debug)]
pub struct ElementKernels {
    pub dim: usize,
    pub corners: usize,
    pub h: f64,
    /// Stiffness per unit `μ`.
    pub k_mu: Vec<f64>,
    /// Stiffness per unit `λ`.
    pub k_lambda: Vec<f64>,
    /// Scalar mass `∫ N_a N_b`.
    pub mass: Vec<f64>,
}

impl ElementKernels {
    pub fn new(dim: usize, h: f64) -> Self {
        let nc = 1 << dim;
        let nd = nc * dim;
        let pts = tensor_points(&GAUSS2, dim);
        let scale_d = h.powi(dim as i32 - 2);
        let vol = h.powi(dim as i32);
        // dmat[p][q][a][b] = ∫ ∂_p N_a ∂_q N_b
        let mut dmat = vec![0.0; 9 * nc * nc];
        let mut mass = vec![0.0; nc * nc];
        for &(xi, w) in &pts {
            let grads: Vec<[f64; 3]> = (0..nc).map(|a| shape_grad(a, xi, dim)).collect();
            let vals: Vec<f64> = (0..nc).map(|a| shape(a, xi, dim)).collect();
            for p in 0..dim {
                for q in 0..dim {
                    for a in 0..nc {
                        for b in 0..nc {
                            dmat[((p * 3 + q) * nc + a) * nc + b] += w * grads[a][p] * grads[b][q] * scale_d;
                        }
                    }
                }
            }
            for a in 0..nc {
                for b in 0..nc {
                    mass[a * nc + b] += w * vals[a] * vals[b] * vol;
                }
            }
        }
        let d = |p: usize, q: usize, a: usize, b: usize| dmat[((p * 3 + q) * nc + a) * nc + b];
        let mut k_mu = vec![0.0; nd * nd];
        let mut k_lambda = vec![0.0; nd * nd];
        for a in 0..nc {
            for c in 0..dim {
                for b in 0..nc {
                    for e in 0..dim {
                        let row = a * dim + c;
                        let col = b * dim + e;
                        let mut v = d(e, c, a, b);
                        if c == e {
                            v += (0..dim).map(|p| d(p, p, a, b)).sum::<f64>();
                        }
                        k_mu[row * nd + col] = v;
                        k_lambda[row * nd + col] = d(c, e, a, b);
                    }
                }
            }
        }
        Self {
            dim,
            corners: nc,
            h,
            k_mu,
            k_lambda,
            mass,
        }
    }

    pub fn ndofs(&self) -> usize {
        self.corners * self.dim
    }

    pub fn stiffness(&self, lambda: f64, mu: f64, out: &mut [f64]) {
        for ((o, m), l) in out.iter_mut().zip(&self.k_mu).zip(&self.k_lambda) {
            *o = mu * m + lambda * l;
        }
    }

    /// Scalar weighted mass for nodal weights `kappa` at the corners,
    /// integrated with the nodal (vertex) rule, so the result is diagonal.
    pub fn weighted_mass(&self, kappa: &[f64], out: &mut [f64]) {
        let nc = self.corners;
        let share = self.h.powi(self.dim as i32) / nc as f64;
        out[..nc * nc].iter_mut().for_each(|v| *v = 0.0);
        for (a, &k) in kappa.iter().enumerate().take(nc) {
            out[a * nc + a] = k * share;
        }
    }
}

/// Sparsity pattern of Q1 operators over the dofs selected by `map`.
fn pattern(grid: &GridHierarchy, map: &dyn Fn(usize) -> Option<usize>, n: usize) -> CsrMatrix {
    let dim = grid.dim();
    let np = grid.nodes_per_side();
    let mut row_ptr = vec![0usize; n + 1];
    let mut col_idx = Vec::with_capacity(n * 9usize.pow(dim as u32 - 1) * 3 * dim);
    let mut rows_seen = 0;
    for node in 0..grid.n_nodes() {
        let c = grid.node_coords(node);
        let mut lo = [0; 3];
        let mut hi = [1; 3];
        for k in 0..dim {
            lo[k] = c[k].saturating_sub(1);
            hi[k] = (c[k] + 2).min(np);
        }
        for comp in 0..dim {
            let Some(row) = map(node * dim + comp) else { continue };
            debug_assert_eq!(row, rows_seen);
            for_each_in_box(lo, hi, dim, |nc| {
                let other = grid.node_index(nc);
                for c2 in 0..dim {
                    if let Some(col) = map(other * dim + c2) {
                        col_idx.push(col);
                    }
                }
            });
            rows_seen += 1;
            row_ptr[rows_seen] = col_idx.len();
        }
    }
    let values = vec![0.0; col_idx.len()];
    CsrMatrix::from_parts(n, row_ptr, col_idx, values)
}

fn scatter(a: &mut CsrMatrix, local: &[Option<usize>], elem: &[f64]) {
    let nd = local.len();
    for (i, gi) in local.iter().enumerate() {
        let Some(gi) = *gi else { continue };
        for (j, gj) in local.iter().enumerate() {
            let Some(gj) = *gj else { continue };
            let v = elem[i * nd + j];
            if v != 0.0 {
                let p = a.position(gi, gj).expect("entry outside the Q1 pattern");
                a.values_mut()[p] += v;
            }
        }
    }
}

fn check_coefficients(lambda: &[f64], mu: &[f64], n_cells: usize) -> Result<()> {
    if lambda.len() != n_cells || mu.len() != n_cells {
        return Err(CemError::InvalidArgument(format!(
            "coefficient fields have {} / {} cells, grid has {n_cells}",
            lambda.len(),
            mu.len()
        )));
    }
    for (cell, (&l, &m)) in lambda.iter().zip(mu).enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(CemError::NonPositiveCoefficient { cell, what: "lambda", value: l });
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(CemError::NonPositiveCoefficient { cell, what: "mu", value: m });
        }
    }
    Ok(())
}

fn cell_dofs(grid: &GridHierarchy, cell: usize, map: &dyn Fn(usize) -> Option<usize>, out: &mut Vec<Option<usize>>) {
    let dim = grid.dim();
    out.clear();
    let nodes = grid.cell_nodes(cell);
    for &node in nodes.iter().take(grid.corners_per_cell()) {
        for c in 0..dim {
            out.push(map(node * dim + c));
        }
    }
}

fn assemble_stiffness_with(
    grid: &GridHierarchy,
    lambda: &[f64],
    mu: &[f64],
    map: &dyn Fn(usize) -> Option<usize>,
    n: usize,
) -> Result<CsrMatrix> {
    check_coefficients(lambda, mu, grid.n_cells())?;
    let kern = ElementKernels::new(grid.dim(), grid.h());
    let mut a = pattern(grid, map, n);
    let mut elem = vec![0.0; kern.ndofs() * kern.ndofs()];
    let mut local = Vec::with_capacity(kern.ndofs());
    for cell in 0..grid.n_cells() {
        kern.stiffness(lambda[cell], mu[cell], &mut elem);
        cell_dofs(grid, cell, map, &mut local);
        scatter(&mut a, &local, &elem);
    }
    Ok(a)
}

/// Stiffness matrix `A_h` over free dofs (boundary rows and columns removed).
pub fn assemble_stiffness(grid: &GridHierarchy, lambda: &[f64], mu: &[f64]) -> Result<CsrMatrix> {
    assemble_stiffness_with(grid, lambda, mu, &|d| grid.free_dof(d), grid.n_free())
}

/// Stiffness matrix over every node, before any boundary condition.
pub fn assemble_stiffness_unconstrained(grid: &GridHierarchy, lambda: &[f64], mu: &[f64]) -> Result<CsrMatrix> {
    assemble_stiffness_with(grid, lambda, mu, &|d| Some(d), grid.n_full_dofs())
}

/// Weighted mass `M_h` over free dofs. `kappa` holds the weight seen by
/// each cell at each of its corners, `kappa[cell * corners + a]`.
pub fn assemble_weighted_mass(grid: &GridHierarchy, kappa: &[f64]) -> Result<CsrMatrix> {
    let nc = grid.corners_per_cell();
    if kappa.len() != grid.n_cells() * nc {
        return Err(CemError::InvalidArgument(format!(
            "weight has {} entries, grid needs {} per cell corner",
            kappa.len(),
            grid.n_cells() * nc
        )));
    }
    if let Some((i, v)) = kappa.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(CemError::InvalidArgument(format!("negative weight {v} at corner {} of cell {}", i % nc, i / nc)));
    }
    let dim = grid.dim();
    let map = |d: usize| grid.free_dof(d);
    let kern = ElementKernels::new(dim, grid.h());
    let nd = kern.ndofs();
    let mut m = pattern(grid, &map, grid.n_free());
    let mut scalar = vec![0.0; nc * nc];
    let mut elem = vec![0.0; nd * nd];
    let mut local = Vec::with_capacity(nd);
    for cell in 0..grid.n_cells() {
        kern.weighted_mass(&kappa[cell * nc..(cell + 1) * nc], &mut scalar);
        expand_scalar(&scalar, nc, dim, &mut elem);
        cell_dofs(grid, cell, &map, &mut local);
        scatter(&mut m, &local, &elem);
    }
    Ok(m)
}

/// Expands a scalar corner matrix to the component-interleaved layout.
fn expand_scalar(scalar: &[f64], nc: usize, dim: usize, out: &mut [f64]) {
    let nd = nc * dim;
    out.iter_mut().for_each(|v| *v = 0.0);
    for a in 0..nc {
        for b in 0..nc {
            for c in 0..dim {
                out[(a * dim + c) * nd + b * dim + c] = scalar[a * nc + b];
            }
        }
    }
}

/// Load vector for a constant body force.
pub fn assemble_load(grid: &GridHierarchy, force: &[f64]) -> Result<Vec<f64>> {
    let dim = grid.dim();
    if force.len() != dim {
        return Err(CemError::InvalidArgument(format!("force has {} components, need {dim}", force.len())));
    }
    let share = grid.h().powi(dim as i32) / grid.corners_per_cell() as f64;
    let mut f = vec![0.0; grid.n_free()];
    for cell in 0..grid.n_cells() {
        let nodes = grid.cell_nodes(cell);
        for &node in nodes.iter().take(grid.corners_per_cell()) {
            for c in 0..dim {
                if let Some(i) = grid.free_dof(node * dim + c) {
                    f[i] += force[c] * share;
                }
            }
        }
    }
    Ok(f)
}

/// Load vector for a body force given as a function of position, integrated
/// with 3-point Gauss rules.
pub fn assemble_load_fn(grid: &GridHierarchy, force: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f64> {
    let dim = grid.dim();
    let h = grid.h();
    let vol = h.powi(dim as i32);
    let pts = tensor_points(&gauss3(), dim);
    let nc = grid.corners_per_cell();
    let mut f = vec![0.0; grid.n_free()];
    for cell in 0..grid.n_cells() {
        let nodes = grid.cell_nodes(cell);
        let origin = grid.node_position(nodes[0]);
        for &(xi, w) in &pts {
            let mut x = [0.0; 3];
            for k in 0..dim {
                x[k] = origin[k] + h * xi[k];
            }
            let fx = force(x);
            for (a, &node) in nodes.iter().enumerate().take(nc) {
                let na = shape(a, xi, dim) * w * vol;
                for c in 0..dim {
                    if let Some(i) = grid.free_dof(node * dim + c) {
                        f[i] += fx[c] * na;
                    }
                }
            }
        }
    }
    f
}

/// Energy `a(u, u)` by a cell loop, for a free-dof vector.
pub fn energy_by_cells(grid: &GridHierarchy, lambda: &[f64], mu: &[f64], u: &[f64]) -> f64 {
    let kern = ElementKernels::new(grid.dim(), grid.h());
    let nd = kern.ndofs();
    let full = grid.to_full(u);
    let dim = grid.dim();
    let mut elem = vec![0.0; nd * nd];
    let mut ue = vec![0.0; nd];
    let mut total = 0.0;
    for cell in 0..grid.n_cells() {
        let nodes = grid.cell_nodes(cell);
        for a in 0..kern.corners {
            for c in 0..dim {
                ue[a * dim + c] = full[nodes[a] * dim + c];
            }
        }
        kern.stiffness(lambda[cell], mu[cell], &mut elem);
        for i in 0..nd {
            total += ue[i] * dot(&elem[i * nd..(i + 1) * nd], &ue);
        }
    }
    total
}

/// `Σ_cells w_cell ∫_cell |u|²` for a free-dof vector.
pub fn weighted_l2_sq(grid: &GridHierarchy, cell_weight: &[f64], u: &[f64]) -> f64 {
    let kern = ElementKernels::new(grid.dim(), grid.h());
    let nc = kern.corners;
    let dim = grid.dim();
    let full = grid.to_full(u);
    let mut total = 0.0;
    let mut ue = vec![0.0; nc];
    for (cell, &w) in cell_weight.iter().enumerate() {
        let nodes = grid.cell_nodes(cell);
        let mut cell_sum = 0.0;
        for c in 0..dim {
            for a in 0..nc {
                ue[a] = full[nodes[a] * dim + c];
            }
            for a in 0..nc {
                if ue[a] == 0.0 {
                    continue;
                }
                cell_sum += ue[a] * dot(&kern.mass[a * nc..(a + 1) * nc], &ue);
            }
        }
        total += w * cell_sum;
    }
    total
}

/// Energy-norm error `a(u − u_h, u − u_h)` against a smooth displacement
/// given through its gradient `grad[i][j] = ∂_j u_i`; homogeneous coefficients.
pub fn energy_error_vs_exact(
    grid: &GridHierarchy,
    lambda: f64,
    mu: f64,
    u_h: &[f64],
    grad: impl Fn([f64; 3]) -> [[f64; 3]; 3],
) -> f64 {
    let dim = grid.dim();
    let h = grid.h();
    let vol = h.powi(dim as i32);
    let pts = tensor_points(&gauss3(), dim);
    let full = grid.to_full(u_h);
    let nc = grid.corners_per_cell();
    let mut total = 0.0;
    for cell in 0..grid.n_cells() {
        let nodes = grid.cell_nodes(cell);
        let origin = grid.node_position(nodes[0]);
        for &(xi, w) in &pts {
            let mut x = [0.0; 3];
            for k in 0..dim {
                x[k] = origin[k] + h * xi[k];
            }
            let mut e = grad(x);
            for (a, &node) in nodes.iter().enumerate().take(nc) {
                let g = shape_grad(a, xi, dim);
                for i in 0..dim {
                    let ui = full[node * dim + i];
                    for j in 0..dim {
                        e[i][j] -= ui * g[j] / h;
                    }
                }
            }
            let mut eps_sq = 0.0;
            let mut div = 0.0;
            for i in 0..dim {
                div += e[i][i];
                for j in 0..dim {
                    let s = 0.5 * (e[i][j] + e[j][i]);
                    eps_sq += s * s;
                }
            }
            total += w * vol * (2.0 * mu * eps_sq + lambda * div * div);
        }
    }
    total
}

/// Dense stiffness and weighted mass assembled over `cells` only, on the
/// sorted free dofs `dofs` (natural condition on the cell union boundary).
/// `kappa` is laid out as in [`assemble_weighted_mass`].
pub fn local_dense_pair(
    grid: &GridHierarchy,
    cells: &[usize],
    dofs: &[usize],
    lambda: &[f64],
    mu: &[f64],
    kappa: &[f64],
) -> (Mat<f64>, Mat<f64>) {
    let dim = grid.dim();
    let kern = ElementKernels::new(dim, grid.h());
    let nc = kern.corners;
    let nd = kern.ndofs();
    let n = dofs.len();
    let mut a = Mat::<f64>::zeros(n, n);
    let mut m = Mat::<f64>::zeros(n, n);
    let mut ke = vec![0.0; nd * nd];
    let mut scalar = vec![0.0; nc * nc];
    let mut me = vec![0.0; nd * nd];
    let mut local = vec![None; nd];
    for &cell in cells {
        let nodes = grid.cell_nodes(cell);
        for a_ in 0..nc {
            for c in 0..dim {
                local[a_ * dim + c] = grid
                    .free_dof(nodes[a_] * dim + c)
                    .and_then(|g| dofs.binary_search(&g).ok());
            }
        }
        kern.stiffness(lambda[cell], mu[cell], &mut ke);
        kern.weighted_mass(&kappa[cell * nc..(cell + 1) * nc], &mut scalar);
        expand_scalar(&scalar, nc, dim, &mut me);
        for i in 0..nd {
            let Some(li) = local[i] else { continue };
            for j in 0..nd {
                let Some(lj) = local[j] else { continue };
                a[(li, lj)] += ke[i * nd + j];
                m[(li, lj)] += me[i * nd + j];
            }
        }
    }
    (a, m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineSolver {
    /// Direct below a size threshold, CG above it.
    #[default]
    Auto,
    Direct,
    Cg,
}

#[derive(Clone, Debug)]
pub struct FineSolution {
    pub u: Vec<f64>,
    pub relative_residual: f64,
    pub method: FineSolver,
    pub iterations: usize,
}

/// Largest free-dof count solved directly under [`FineSolver::Auto`].
pub fn direct_threshold(dim: usize) -> usize {
    if dim == 2 {
        300_000
    } else {
        60_000
    }
}

/// Solves `A u = F` to a relative residual of at most `1e-10`.
pub fn solve_fine(a: &CsrMatrix, f: &[f64], dim: usize, choice: FineSolver) -> Result<FineSolution> {
    let method = match choice {
        FineSolver::Auto if a.n() <= direct_threshold(dim) => FineSolver::Direct,
        FineSolver::Auto => FineSolver::Cg,
        other => other,
    };
    let fnorm = norm(f);
    let (u, iterations) = match method {
        FineSolver::Direct => {
            let chol = Cholesky::new(a).map_err(|e| {
                CemError::Solver(format!("{e}; the stiffness matrix is not positive definite after elimination"))
            })?;
            let mut u = chol.solve(f);
            // One refinement step keeps the residual well under the target.
            let r: Vec<f64> = f.iter().zip(a.mul_vec(&u)).map(|(x, y)| x - y).collect();
            let du = chol.solve(&r);
            u.iter_mut().zip(du).for_each(|(x, d)| *x += d);
            (u, 0)
        }
        _ => {
            let mut u = vec![0.0; a.n()];
            let (it, _) = block_jacobi_cg(a, f, &mut u, dim, 1e-10, 20 * a.n())?;
            (u, it)
        }
    };
    let r: Vec<f64> = f.iter().zip(a.mul_vec(&u)).map(|(x, y)| x - y).collect();
    let relative_residual = if fnorm > 0.0 { norm(&r) / fnorm } else { norm(&r) };
    Ok(FineSolution {
        u,
        relative_residual,
        method,
        iterations,
    })
}

/// Writes a vector as `i value` lines.
pub fn write_vector_coordinate(out: &mut impl std::io::Write, v: &[f64]) -> std::io::Result<()> {
    writeln!(out, "% {}", v.len())?;
    for (i, x) in v.iter().enumerate() {
        writeln!(out, "{i} {x:.17e}")?;
    }
    Ok(())
}

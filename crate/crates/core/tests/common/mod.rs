#![allow(dead_code)]

use cemgms::auxiliary::{local_spectral_basis, pi_project, s_inner, AuxiliarySpace, PiecewiseField};
use cemgms::cem_offline::{
    build_basis_matrix, constrained_basis, global_basis_oracle, null_space_solve, relaxed_basis, LocalSystem, Variant,
};
use cemgms::coarse::coarse_solve;
use cemgms::fem::{assemble_load_fn, assemble_stiffness, energy_error_vs_exact, solve_fine, FineSolver};
use cemgms::grid::{build_pou, GridHierarchy};
use cemgms::media::{generate_medium, lame_pair, CoefficientField, LameConvention, MediumSpec, Preset};
use cemgms::online::{local_residual_norm, residual_vector, ResidualEstimator};
use cemgms::problem::FineProblem;
use cemgms::sparse::{dot, norm, CsrMatrix};
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub const NU: f64 = 0.2;

pub fn preset_problem(n: usize, n_coarse: usize, contrast: f64) -> FineProblem {
    let grid = GridHierarchy::new(2, n, n_coarse).unwrap();
    let young = generate_medium(&MediumSpec::preset(Preset::Model1Like, n, contrast)).unwrap();
    FineProblem::new(grid, young, NU, LameConvention::Paper, &[1.0, 1.0], FineSolver::Auto).unwrap()
}

pub fn uniform_coefficients(dim: usize, n: usize, n_coarse: usize) -> (GridHierarchy, CoefficientField) {
    let grid = GridHierarchy::new(dim, n, n_coarse).unwrap();
    let pou = build_pou(&grid);
    let young = vec![1.0; grid.n_cells()];
    let coeffs = CoefficientField::new(&grid, young, NU, LameConvention::Paper, &pou).unwrap();
    (grid, coeffs)
}

pub fn energy(a: &CsrMatrix, v: &[f64]) -> f64 {
    a.bilinear(v, v).max(0.0).sqrt()
}

pub fn col(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Largest deviation of the summed hat functions from one over every node.
pub fn pou_defect(dim: usize, n: usize, n_coarse: usize) -> f64 {
    let grid = GridHierarchy::new(dim, n, n_coarse).unwrap();
    let pou = build_pou(&grid);
    (0..grid.n_nodes())
        .map(|node| {
            let s: f64 = (0..grid.n_vertices()).map(|v| pou.value(&grid, v, node)).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Number of eigenvalues below `1e-10 λ_{J+1}` on a homogeneous interior
/// block, with `J` the rigid-motion count of the dimension.
pub fn rigid_kernel(dim: usize, n: usize, n_coarse: usize) -> (usize, usize) {
    let (grid, coeffs) = uniform_coefficients(dim, n, n_coarse);
    let mid = n_coarse / 2;
    let block = grid.block_index([mid, mid, if dim == 3 { mid } else { 0 }]);
    let rigid = if dim == 2 { 3 } else { 6 };
    let aux = local_spectral_basis(&grid, &coeffs, block, rigid).unwrap();
    let next = aux.eigenvalues[rigid];
    let small = aux.eigenvalues.iter().filter(|&&l| l.abs() <= 1e-10 * next).count();
    (small, rigid)
}

/// Largest `|s(ψ_j^i, φ_k^l) − δ_ik δ_jl|` over every constrained column.
pub fn phi_orthogonality(problem: &FineProblem, n_basis: usize, m: usize) -> f64 {
    let grid = &problem.grid;
    let aux = AuxiliarySpace::build_uniform(grid, &problem.coeffs, n_basis).unwrap();
    let n_free = grid.n_free();
    let mut worst: f64 = 0.0;
    for i in 0..grid.n_blocks() {
        let (sub, psi) = constrained_basis(grid, &problem.a, &aux, i, m).unwrap();
        for j in 0..psi.ncols() {
            let global = sub.embed(&col(&psi, j), n_free);
            for (l, blk) in aux.blocks.iter().enumerate() {
                let local: Vec<f64> = blk.dofs.iter().map(|&d| global[d]).collect();
                let m_psi = blk.mass.mul_vec(&local);
                for k in 0..blk.count {
                    let s = dot(&m_psi, &col(&blk.vectors, k));
                    let target = if l == i && k == j { 1.0 } else { 0.0 };
                    worst = worst.max((s - target).abs());
                }
            }
        }
    }
    worst
}

/// Largest relative energy-norm gap between the sparse saddle-point columns
/// and the dense null-space method.
pub fn kkt_vs_null_space(problem: &FineProblem, n_basis: usize, m: usize) -> f64 {
    let grid = &problem.grid;
    let aux = AuxiliarySpace::build_uniform(grid, &problem.coeffs, n_basis).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..grid.n_blocks() {
        let (sub, psi) = constrained_basis(grid, &problem.a, &aux, i, m).unwrap();
        let sys = LocalSystem::new(&problem.a, &aux, sub).unwrap();
        let a = sys.a.to_dense();
        let b = sys.b.to_dense();
        let off = sys.offset_of(i).unwrap();
        for j in 0..psi.ncols() {
            let mut e = vec![0.0; b.ncols()];
            e[off + j] = 1.0;
            let dense = null_space_solve(&a, &b, &e).unwrap();
            let sparse = col(&psi, j);
            let gap = energy(&sys.a, &sub_vec(&sparse, &dense)) / energy(&sys.a, &dense);
            worst = worst.max(gap);
        }
    }
    worst
}

/// Largest relative defect of the relaxed variational equation
/// `a(ψ, v) + s(πψ, πv) = s(φ, v)` over `tests` random local test functions.
pub fn relaxed_weak_form(problem: &FineProblem, n_basis: usize, m: usize, tests: usize, seed: u64) -> f64 {
    let grid = &problem.grid;
    let aux = AuxiliarySpace::build_uniform(grid, &problem.coeffs, n_basis).unwrap();
    let n_free = grid.n_free();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..tests {
        let i = rng.random_range(0..grid.n_blocks());
        let (sub, psi) = relaxed_basis(grid, &problem.a, &aux, i, m).unwrap();
        let j = t % psi.ncols();
        let psi_g = sub.embed(&col(&psi, j), n_free);
        let v_local: Vec<f64> = (0..sub.interior.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = sub.embed(&v_local, n_free);
        let a_term = problem.a.bilinear(&psi_g, &v);
        let pi_psi = pi_project(&aux, &PiecewiseField::from_global(&aux, &psi_g));
        let v_field = PiecewiseField::from_global(&aux, &v);
        let pi_v = pi_project(&aux, &v_field);
        let s_term = s_inner(&aux, &pi_psi, &pi_v);
        let rhs = s_inner(&aux, &PiecewiseField::basis(&aux, i, j), &v_field);
        let scale = a_term.abs() + s_term.abs() + rhs.abs();
        worst = worst.max((a_term + s_term - rhs).abs() / scale);
    }
    worst
}

/// Galerkin residual `‖Rᵀ(F − A u_ms)‖ / ‖F‖` and the relative defect of
/// `‖u_h‖² = ‖u_ms‖² + ‖u_h − u_ms‖²` in the energy norm.
pub fn galerkin_checks(problem: &FineProblem, variant: Variant, n_basis: usize, m: usize) -> (f64, f64) {
    let aux = AuxiliarySpace::build_uniform(&problem.grid, &problem.coeffs, n_basis).unwrap();
    let basis = build_basis_matrix(&problem.grid, &problem.a, &aux, variant, m).unwrap();
    let sol = coarse_solve(&basis, &problem.a, &problem.f).unwrap();
    let r = residual_vector(&problem.a, &problem.f, &sol.fine);
    let orth = norm(&basis.restrict(&r)) / norm(&problem.f);
    let u_h = problem.u_h();
    let e = sub_vec(u_h, &sol.fine);
    let total = problem.a.bilinear(u_h, u_h);
    let pyth = (total - problem.a.bilinear(&sol.fine, &sol.fine) - problem.a.bilinear(&e, &e)).abs() / total;
    (orth, pyth)
}

/// Largest relative energy gap between localized columns on a subdomain
/// covering the whole domain and the global oracle.
pub fn localization_limit(problem: &FineProblem, variant: Variant, n_basis: usize) -> f64 {
    let grid = &problem.grid;
    let aux = AuxiliarySpace::build_uniform(grid, &problem.coeffs, n_basis).unwrap();
    let m = grid.n_coarse();
    let mut worst: f64 = 0.0;
    for i in 0..grid.n_blocks() {
        let (sub, psi) = match variant {
            Variant::Constrained => constrained_basis(grid, &problem.a, &aux, i, m).unwrap(),
            _ => relaxed_basis(grid, &problem.a, &aux, i, m).unwrap(),
        };
        assert_eq!(sub.interior.len(), grid.n_free());
        for j in 0..psi.ncols() {
            let local = sub.embed(&col(&psi, j), grid.n_free());
            let oracle = global_basis_oracle(&problem.a, &aux, i, j, variant).unwrap();
            worst = worst.max(energy(&problem.a, &sub_vec(&local, &oracle)) / energy(&problem.a, &oracle));
        }
    }
    worst
}

/// Dense `√(gᵀ A_ω⁻¹ g)` with `g = χ_v r` on the interior dofs of `ω_v`.
pub fn dense_delta(problem: &FineProblem, vertex: usize, r: &[f64]) -> f64 {
    let grid = &problem.grid;
    let dim = grid.dim();
    let sub = grid.neighborhood(vertex, 0).unwrap();
    let idx = &sub.interior;
    let a = Mat::<f64>::from_fn(idx.len(), idx.len(), |p, q| problem.a.get(idx[p], idx[q]));
    let g = Mat::<f64>::from_fn(idx.len(), 1, |p, _| {
        let node = grid.full_dof(idx[p]) / dim;
        problem.pou.value(grid, vertex, node) * r[idx[p]]
    });
    let x = a.llt(Side::Lower).unwrap().solve(&g);
    (0..idx.len()).map(|p| g[(p, 0)] * x[(p, 0)]).sum::<f64>().max(0.0).sqrt()
}

/// Largest relative gap between the residual estimator, the single-vertex
/// routine and the dense oracle, for the residual of a relaxed solve.
pub fn delta_vs_dense(problem: &FineProblem, n_basis: usize, m: usize) -> f64 {
    let grid = &problem.grid;
    let aux = AuxiliarySpace::build_uniform(grid, &problem.coeffs, n_basis).unwrap();
    let basis = build_basis_matrix(grid, &problem.a, &aux, Variant::Relaxed, m).unwrap();
    let sol = coarse_solve(&basis, &problem.a, &problem.f).unwrap();
    let r = residual_vector(&problem.a, &problem.f, &sol.fine);
    let vertices = grid.interior_vertices();
    let estimator = ResidualEstimator::new(grid, &problem.a, vertices.clone()).unwrap();
    let deltas = estimator.estimate(grid, &problem.pou, &r);
    let mut worst: f64 = 0.0;
    for (k, &v) in vertices.iter().enumerate() {
        let oracle = dense_delta(problem, v, &r);
        let single = local_residual_norm(grid, &problem.a, &problem.pou, v, &r).unwrap();
        worst = worst.max((deltas[k] - oracle).abs() / oracle);
        worst = worst.max((single - oracle).abs() / oracle);
    }
    worst
}

/// Energy error of the fine solver against
/// `u = (sin πx sin πy, sin πx sin πy)` on a homogeneous unit square.
pub fn manufactured_error(n: usize) -> f64 {
    let grid = GridHierarchy::new(2, n, 2).unwrap();
    let (lambda, mu) = lame_pair(1.0, NU, LameConvention::Paper);
    let lam = vec![lambda; grid.n_cells()];
    let mus = vec![mu; grid.n_cells()];
    let a = assemble_stiffness(&grid, &lam, &mus).unwrap();
    let f = assemble_load_fn(&grid, |x| {
        let ss = (PI * x[0]).sin() * (PI * x[1]).sin();
        let cc = (PI * x[0]).cos() * (PI * x[1]).cos();
        let v = 2.0 * mu * PI * PI * ss + (lambda + mu) * PI * PI * (ss - cc);
        [v, v, 0.0]
    });
    let u = solve_fine(&a, &f, 2, FineSolver::Direct).unwrap().u;
    energy_error_vs_exact(&grid, lambda, mu, &u, |x| {
        let dx = PI * (PI * x[0]).cos() * (PI * x[1]).sin();
        let dy = PI * (PI * x[0]).sin() * (PI * x[1]).cos();
        [[dx, dy, 0.0], [dx, dy, 0.0], [0.0; 3]]
    })
    .sqrt()
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(hs: &[f64], es: &[f64]) -> f64 {
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = es.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

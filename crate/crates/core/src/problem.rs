//! A fully assembled fine-scale problem with its reference solution.

use crate::coarse::{error_norms, ErrorNorms, L2Weighting};
use crate::error::Result;
use crate::fem::{assemble_load, assemble_stiffness, solve_fine, FineSolution, FineSolver};
use crate::grid::{build_pou, GridHierarchy, PartitionOfUnity};
use crate::media::{kappa_corners, kappa_tilde, CoefficientField, LameConvention};
use crate::sparse::{dot, CsrMatrix};

pub struct FineProblem {
    pub grid: GridHierarchy,
    pub pou: PartitionOfUnity,
    pub coeffs: CoefficientField,
    pub a: CsrMatrix,
    pub f: Vec<f64>,
    pub reference: FineSolution,
    pub weighting: L2Weighting,
    p_modulus: Vec<f64>,
}

impl FineProblem {
    /// Assembles and solves the fine problem for a Young's modulus field.
    pub fn new(
        grid: GridHierarchy,
        young: Vec<f64>,
        nu: f64,
        convention: LameConvention,
        force: &[f64],
        solver: FineSolver,
    ) -> Result<Self> {
        let pou = build_pou(&grid);
        let coeffs = CoefficientField::new(&grid, young, nu, convention, &pou)?;
        let a = assemble_stiffness(&grid, &coeffs.lambda, &coeffs.mu)?;
        let f = assemble_load(&grid, force)?;
        let reference = solve_fine(&a, &f, grid.dim(), solver)?;
        let p_modulus = coeffs.p_modulus();
        Ok(Self {
            grid,
            pou,
            coeffs,
            a,
            f,
            reference,
            weighting: L2Weighting::default(),
            p_modulus,
        })
    }

    /// Same fine problem on another coarse partition; reuses the fine solve.
    pub fn regrid(&self, n_coarse: usize) -> Result<Self> {
        let grid = GridHierarchy::new(self.grid.dim(), self.grid.n_fine(), n_coarse)?;
        let pou = build_pou(&grid);
        let kappa = kappa_tilde(&grid, &self.coeffs.lambda, &self.coeffs.mu, &pou);
        let kappa_corner = kappa_corners(&grid, &self.coeffs.lambda, &self.coeffs.mu, &pou);
        let coeffs = CoefficientField {
            kappa,
            kappa_corner,
            ..self.coeffs.clone()
        };
        Ok(Self {
            grid,
            pou,
            coeffs,
            a: self.a.clone(),
            f: self.f.clone(),
            reference: self.reference.clone(),
            weighting: self.weighting,
            p_modulus: self.p_modulus.clone(),
        })
    }

    pub fn u_h(&self) -> &[f64] {
        &self.reference.u
    }

    /// `‖u_h‖_a`.
    pub fn reference_energy_norm(&self) -> f64 {
        dot(&self.f, &self.reference.u).max(0.0).sqrt()
    }

    pub fn errors(&self, u_ms: &[f64]) -> Result<ErrorNorms> {
        error_norms(&self.grid, &self.a, &self.p_modulus, u_ms, &self.reference.u, self.weighting)
    }
}

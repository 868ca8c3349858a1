//! Residual-driven online enrichment.

use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxiliary::AuxiliarySpace;
use crate::cem_offline::{BasisGroup, BasisSet, ColumnMeta, LocalSystem, Variant};
use crate::coarse::{CoarseSystem, MultiscaleSolution, ScaledFactor};
use crate::error::{CemError, Result};
use crate::grid::{GridHierarchy, PartitionOfUnity, SubdomainIndexSet};
use crate::problem::FineProblem;
use crate::sparse::{dot, Cholesky, CsrMatrix};

/// `r = F − A u`.
pub fn residual_vector(a: &CsrMatrix, f: &[f64], u: &[f64]) -> Vec<f64> {
    f.iter().zip(a.mul_vec(u)).map(|(x, y)| x - y).collect()
}

/// Entries `r(χ_i v)` for nodal test functions `v` on the interior of `sub`.
pub fn local_functional(grid: &GridHierarchy, pou: &PartitionOfUnity, vertex: usize, r: &[f64], sub: &SubdomainIndexSet) -> Vec<f64> {
    let vc = grid.vertex_coords(vertex);
    let dim = grid.dim();
    sub.interior
        .iter()
        .map(|&g| {
            let node = grid.full_dof(g) / dim;
            pou.value_at(vc, grid.node_coords(node)) * r[g]
        })
        .collect()
}

/// Local Dirichlet problems on every `ω_i`, factored once.
pub struct ResidualEstimator {
    pub vertices: Vec<usize>,
    subs: Vec<SubdomainIndexSet>,
    factors: Vec<Option<Cholesky>>,
}

impl ResidualEstimator {
    pub fn new(grid: &GridHierarchy, a: &CsrMatrix, vertices: Vec<usize>) -> Result<Self> {
        let built = vertices
            .par_iter()
            .map(|&v| {
                let sub = grid.neighborhood(v, 0)?;
                let factor = if sub.interior.is_empty() {
                    None
                } else {
                    Some(Cholesky::new(&a.submatrix(&sub.interior))?)
                };
                Ok((sub, factor))
            })
            .collect::<Result<Vec<_>>>()?;
        let (subs, factors) = built.into_iter().unzip();
        Ok(Self { vertices, subs, factors })
    }

    /// `δ_i = ‖r_i‖_{a*}` for every vertex, in the order of `vertices`.
    pub fn estimate(&self, grid: &GridHierarchy, pou: &PartitionOfUnity, r: &[f64]) -> Vec<f64> {
        self.vertices
            .par_iter()
            .enumerate()
            .map(|(k, &v)| match &self.factors[k] {
                None => 0.0,
                Some(chol) => {
                    let ri = local_functional(grid, pou, v, r, &self.subs[k]);
                    let e = chol.solve(&ri);
                    dot(&ri, &e).max(0.0).sqrt()
                }
            })
            .collect()
    }
}

/// `δ_i` for one vertex.
pub fn local_residual_norm(grid: &GridHierarchy, a: &CsrMatrix, pou: &PartitionOfUnity, vertex: usize, r: &[f64]) -> Result<f64> {
    let est = ResidualEstimator::new(grid, a, vec![vertex])?;
    Ok(est.estimate(grid, pou, r)[0])
}

/// Bulk selection: sorts `deltas` descending (ties by lower index) and keeps
/// the shortest prefix whose complement satisfies
/// `Σ_{i>k} δ_i² ≤ θ² Σ_i δ_i²`. Returns positions into `deltas`.
pub fn select_neighborhoods(deltas: &[f64], theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]).then(a.cmp(&b)));
    let total: f64 = deltas.iter().map(|d| d * d).sum();
    let target = theta * theta * total;
    let mut tail = total;
    let mut k = 0;
    while k < order.len() && tail > target {
        tail -= deltas[order[k]] * deltas[order[k]];
        k += 1;
        if tail < 0.0 {
            tail = 0.0;
        }
    }
    // Residual round-off in the running tail must not pull in zero entries.
    while k > 0 && deltas[order[k - 1]] == 0.0 {
        k -= 1;
    }
    order.truncate(k);
    order
}

/// Online function `β` on `ω_i^+`: `(A + B Bᵀ) β = r_i` on the interior.
pub fn online_basis(
    grid: &GridHierarchy,
    a: &CsrMatrix,
    aux: &AuxiliarySpace,
    pou: &PartitionOfUnity,
    vertex: usize,
    r: &[f64],
    layers: usize,
) -> Result<(SubdomainIndexSet, Vec<f64>)> {
    let sub = grid.neighborhood(vertex, layers)?;
    let rhs = local_functional(grid, pou, vertex, r, &sub);
    if rhs.iter().all(|&v| v == 0.0) {
        let n = sub.interior.len();
        return Ok((sub, vec![0.0; n]));
    }
    let sys = LocalSystem::new(a, aux, sub)?;
    let n = sys.n();
    let beta = sys.solve_relaxed(&Mat::from_fn(n, 1, |i, _| rhs[i]))?;
    let out = (0..n).map(|i| beta[(i, 0)]).collect();
    Ok((sys.sub, out))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnrichMode {
    Uniform,
    #[default]
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineSettings {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub mode: EnrichMode,
    /// Stop once `√Σδ² ≤ tol · √Σδ₀²`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Extra coarse layers of `ω_i^+`; `None` uses the offline oversampling.
    #[serde(default)]
    pub layers: Option<usize>,
}

fn default_theta() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    3
}

impl Default for OnlineSettings {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            mode: EnrichMode::default(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            layers: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub dof: usize,
    pub e_l2: f64,
    pub e_h1: f64,
    pub sum_delta_sq: f64,
    /// Neighborhoods enriched after this row (zero on the last one).
    pub selected: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    ZeroResidual,
    MaxIterations,
    Stagnated,
}

pub struct EnrichmentState {
    pub basis: BasisSet,
    pub solution: MultiscaleSolution,
    pub deltas: Vec<f64>,
    pub history: Vec<HistoryRow>,
    pub stop: StopReason,
    /// Online columns dropped by the rank guard.
    pub dropped: usize,
}

impl EnrichmentState {
    pub fn stagnated(&self) -> bool {
        self.stop == StopReason::Stagnated
    }
}

/// Writes `iteration,dof,e_l2,e_h1,sum_delta_sq,k` rows.
pub fn write_history_csv(history: &[HistoryRow], out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "iteration,dof,e_l2,e_h1,sum_delta_sq,k")?;
    for h in history {
        writeln!(
            out,
            "{},{},{:.6e},{:.6e},{:.6e},{}",
            h.iteration, h.dof, h.e_l2, h.e_h1, h.sum_delta_sq, h.selected
        )?;
    }
    Ok(())
}

/// Absolute floor on `√Σδ²` relative to `‖u_h‖_a`: below it the residual is
/// round-off.
const RESIDUAL_FLOOR: f64 = 1e-11;

/// Adaptive or uniform enrichment starting from `basis`. `offline_layers`
/// is the default extension of `ω_i^+`.
pub fn enrich_loop(
    problem: &FineProblem,
    aux: &AuxiliarySpace,
    basis: BasisSet,
    settings: &OnlineSettings,
    offline_layers: usize,
) -> Result<EnrichmentState> {
    if !(0.0..=1.0).contains(&settings.theta) {
        return Err(CemError::InvalidArgument(format!("theta must lie in [0, 1], got {}", settings.theta)));
    }
    let grid = &problem.grid;
    let a = &problem.a;
    let layers = settings.layers.unwrap_or(offline_layers);
    let estimator = ResidualEstimator::new(grid, a, grid.interior_vertices())?;
    let floor = RESIDUAL_FLOOR * problem.reference_energy_norm();

    let mut basis = basis;
    let mut system = CoarseSystem::new(&basis, a);
    let mut history: Vec<HistoryRow> = Vec::new();
    let mut initial = None;
    let mut small_steps = 0;
    let mut dropped = 0;
    let mut iteration = 0;
    loop {
        let solution = system.solve(&basis, &problem.f)?;
        let errors = problem.errors(&solution.fine)?;
        let r = residual_vector(a, &problem.f, &solution.fine);
        let deltas = estimator.estimate(grid, &problem.pou, &r);
        let sum_sq: f64 = deltas.iter().map(|d| d * d).sum();
        let init = *initial.get_or_insert(sum_sq);
        history.push(HistoryRow {
            iteration,
            dof: basis.n_cols(),
            e_l2: errors.e_l2,
            e_h1: errors.e_h1,
            sum_delta_sq: sum_sq,
            selected: 0,
        });
        if history.len() >= 2 {
            let prev = history[history.len() - 2].e_h1;
            if prev - errors.e_h1 < 1e-12 {
                small_steps += 1;
            } else {
                small_steps = 0;
            }
        }
        let stop = if sum_sq == 0.0 {
            Some(StopReason::ZeroResidual)
        } else if sum_sq.sqrt() <= floor || (iteration > 0 && sum_sq.sqrt() <= settings.tol * init.sqrt()) {
            Some(StopReason::Converged)
        } else if small_steps >= 2 {
            Some(StopReason::Stagnated)
        } else if iteration >= settings.max_iter {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(stop) = stop {
            return Ok(EnrichmentState {
                basis,
                solution,
                deltas,
                history,
                stop,
                dropped,
            });
        }

        let picked: Vec<usize> = match settings.mode {
            EnrichMode::Uniform => (0..deltas.len()).filter(|&k| deltas[k] > 0.0).collect(),
            EnrichMode::Adaptive => select_neighborhoods(&deltas, settings.theta),
        };
        history.last_mut().unwrap().selected = picked.len();
        iteration += 1;
        let new_groups = picked
            .par_iter()
            .map(|&k| {
                let v = estimator.vertices[k];
                let (sub, beta) = online_basis(grid, a, aux, &problem.pou, v, &r, layers)?;
                Ok(BasisGroup {
                    block_box: sub.block_box,
                    support: Arc::from(sub.interior),
                    columns: Mat::from_fn(beta.len(), 1, |i, _| beta[i]),
                    meta: vec![ColumnMeta {
                        owner: v,
                        index: 0,
                        variant: Variant::Online,
                        layers,
                        iteration,
                    }],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let first_new = basis.groups.len();
        for g in new_groups {
            basis.push(g);
        }
        system.extend(&basis, a, first_new);
        let first_new_col: usize = basis.groups[..first_new].iter().map(|g| g.n_cols()).sum();
        // Drop online columns that are numerically dependent on the rest.
        loop {
            match ScaledFactor::new(&system.gram) {
                Ok(_) => break,
                Err(cols) => {
                    let meta: Vec<ColumnMeta> = basis.meta().copied().collect();
                    let offline: Vec<usize> = cols
                        .iter()
                        .filter(|&&c| meta[c].variant != Variant::Online)
                        .map(|&c| meta[c].owner)
                        .collect();
                    if !offline.is_empty() {
                        return Err(CemError::RankDeficient { blocks: offline });
                    }
                    let mut keep = vec![true; basis.n_cols()];
                    for &c in &cols {
                        keep[c] = false;
                    }
                    log::debug!("dropping {} dependent online columns", cols.len());
                    dropped += cols.len();
                    basis.retain_columns(&keep);
                    system.retain(&keep);
                    if cols.iter().any(|&c| c < first_new_col) {
                        log::debug!("dropped a column from an earlier iteration");
                    }
                }
            }
        }
    }
}

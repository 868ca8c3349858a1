//! Configuration-driven sweeps over coarse size, basis count, oversampling
//! and contrast.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::auxiliary::AuxiliarySpace;
use crate::cem_offline::{build_basis_matrix, BasisSet, Variant};
use crate::coarse::{coarse_solve, write_solution_binary, write_solution_csv, L2Weighting};
use crate::error::{CemError, Result};
use crate::fem::{FineSolver, FineSolution};
use crate::grid::GridHierarchy;
use crate::media::{generate_medium, load_raster, LameConvention, MediumSpec, Preset};
use crate::online::{enrich_loop, write_history_csv, HistoryRow, OnlineSettings, StopReason};
use crate::problem::FineProblem;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "CEMGMS_WORKERS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumSource {
    Preset(Preset),
    Spec(MediumSpec),
    Raster(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AutoKeyword {
    Auto,
}

/// Oversampling layers: a fixed count or the `auto` recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LayersRepr", into = "LayersRepr")]
pub enum Oversampling {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum LayersRepr {
    Fixed(usize),
    Auto(AutoKeyword),
}

impl From<LayersRepr> for Oversampling {
    fn from(r: LayersRepr) -> Self {
        match r {
            LayersRepr::Fixed(m) => Oversampling::Fixed(m),
            LayersRepr::Auto(_) => Oversampling::Auto,
        }
    }
}

impl From<Oversampling> for LayersRepr {
    fn from(o: Oversampling) -> Self {
        match o {
            Oversampling::Fixed(m) => LayersRepr::Fixed(m),
            Oversampling::Auto => LayersRepr::Auto(AutoKeyword::Auto),
        }
    }
}

impl std::str::FromStr for Oversampling {
    type Err = CemError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Oversampling::Auto);
        }
        s.parse()
            .map(Oversampling::Fixed)
            .map_err(|_| CemError::Config(format!("oversampling must be `auto` or a layer count, got `{s}`")))
    }
}

impl std::fmt::Display for Oversampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Oversampling::Auto => f.write_str("auto"),
            Oversampling::Fixed(m) => write!(f, "{m}"),
        }
    }
}

/// Default layer count for a variant at coarse size `h`.
pub fn auto_layers(variant: Variant, dim: usize, h: f64) -> usize {
    let factor = match (dim, variant) {
        (3, _) => 2.0,
        (_, Variant::Constrained) => 4.0,
        _ => 3.0,
    };
    let m = (factor * (1.0 / h).ln() / 8f64.ln()).round();
    (m as usize).max(1)
}

impl Oversampling {
    pub fn resolve(self, variant: Variant, dim: usize, h: f64) -> usize {
        match self {
            Oversampling::Auto => auto_layers(variant, dim, h),
            Oversampling::Fixed(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub medium: MediumSource,
    pub dim: usize,
    pub n_fine: usize,
    pub n_coarse: Vec<usize>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    pub n_basis: Vec<usize>,
    #[serde(default = "default_oversampling")]
    pub oversampling: Vec<Oversampling>,
    /// High-phase Young's modulus values; the background is 1.
    #[serde(default = "default_contrast")]
    pub contrast: Vec<f64>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Constant body force; all ones when absent.
    #[serde(default)]
    pub force: Option<Vec<f64>>,
    #[serde(default)]
    pub online: Option<OnlineSettings>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Overrides the medium seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub lame_convention: LameConvention,
    #[serde(default)]
    pub l2_weighting: L2Weighting,
    #[serde(default)]
    pub fine_solver: FineSolver,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Relaxed]
}
fn default_oversampling() -> Vec<Oversampling> {
    vec![Oversampling::Auto]
}
fn default_contrast() -> Vec<f64> {
    vec![1e4]
}
fn default_nu() -> f64 {
    0.2
}

impl ExperimentConfig {
    /// A single-case configuration on a shipped preset.
    pub fn for_preset(preset: Preset, n_coarse: usize, variant: Variant, n_basis: usize) -> Self {
        Self {
            medium: MediumSource::Preset(preset),
            dim: preset.dim(),
            n_fine: preset.default_resolution(),
            n_coarse: vec![n_coarse],
            variants: vec![variant],
            n_basis: vec![n_basis],
            oversampling: default_oversampling(),
            contrast: default_contrast(),
            nu: default_nu(),
            force: None,
            online: None,
            output: None,
            seed: None,
            lame_convention: LameConvention::default(),
            l2_weighting: L2Weighting::default(),
            fine_solver: FineSolver::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CemError::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CemError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn force_vector(&self) -> Vec<f64> {
        self.force.clone().unwrap_or_else(|| vec![1.0; self.dim])
    }

    /// Cross-field checks run before any solve.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CemError::Config(m));
        if self.dim != 2 && self.dim != 3 {
            return err(format!("dim must be 2 or 3, got {}", self.dim));
        }
        for (name, empty) in [
            ("n_coarse", self.n_coarse.is_empty()),
            ("variants", self.variants.is_empty()),
            ("n_basis", self.n_basis.is_empty()),
            ("oversampling", self.oversampling.is_empty()),
            ("contrast", self.contrast.is_empty()),
        ] {
            if empty {
                return err(format!("`{name}` must list at least one value"));
            }
        }
        for &nc in &self.n_coarse {
            GridHierarchy::new(self.dim, self.n_fine, nc).map_err(|e| CemError::Config(format!("n_coarse = {nc}: {e}")))?;
        }
        if let Some(v) = self.variants.iter().find(|v| **v == Variant::Online) {
            return err(format!("`variants` accepts constrained or relaxed, got {v}; use the `online` block for enrichment"));
        }
        if let Some(nb) = self.n_basis.iter().find(|&&nb| nb == 0) {
            return err(format!("n_basis must be positive, got {nb}"));
        }
        if let Some(c) = self.contrast.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return err(format!("contrast values must be positive and finite, got {c}"));
        }
        if !(self.nu > -1.0 && self.nu < 0.5) {
            return err(format!("nu must lie in (-1, 0.5), got {}", self.nu));
        }
        if let Some(f) = &self.force {
            if f.len() != self.dim {
                return err(format!("force has {} components, dim is {}", f.len(), self.dim));
            }
        }
        match &self.medium {
            MediumSource::Preset(p) if p.dim() != self.dim => {
                return err(format!("preset {} is {}-dimensional, dim is {}", p.name(), p.dim(), self.dim));
            }
            MediumSource::Spec(s) if s.dim != self.dim || s.n_fine != self.n_fine => {
                return err(format!(
                    "medium spec is {}D with {} cells per side, config says {}D with {}",
                    s.dim, s.n_fine, self.dim, self.n_fine
                ));
            }
            _ => {}
        }
        if let Some(o) = &self.online {
            if !(0.0..=1.0).contains(&o.theta) {
                return err(format!("online theta must lie in [0, 1], got {}", o.theta));
            }
            if !(o.tol >= 0.0) {
                return err(format!("online tol must be non-negative, got {}", o.tol));
            }
        }
        Ok(())
    }

    /// Young's modulus field for one contrast value.
    pub fn medium_field(&self, contrast: f64) -> Result<Vec<f64>> {
        match &self.medium {
            MediumSource::Raster(path) => load_raster(path, self.dim, self.n_fine),
            MediumSource::Preset(p) => {
                let mut spec = MediumSpec::preset(*p, self.n_fine, contrast);
                if let Some(seed) = self.seed {
                    spec.seed = seed;
                }
                generate_medium(&spec)
            }
            MediumSource::Spec(s) => {
                let mut spec = s.clone();
                spec.e_high = contrast;
                if let Some(seed) = self.seed {
                    spec.seed = seed;
                }
                generate_medium(&spec)
            }
        }
    }

    /// All `(contrast, n_coarse, n_basis, oversampling, variant)` cases in
    /// report order.
    pub fn cases(&self) -> Vec<CaseSpec> {
        let mut out = Vec::new();
        for &contrast in &self.contrast {
            for &n_coarse in &self.n_coarse {
                for &n_basis in &self.n_basis {
                    for &oversampling in &self.oversampling {
                        for &variant in &self.variants {
                            let h = 1.0 / n_coarse as f64;
                            out.push(CaseSpec {
                                contrast,
                                n_coarse,
                                n_basis,
                                layers: oversampling.resolve(variant, self.dim, h),
                                variant,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub contrast: f64,
    pub n_coarse: usize,
    pub n_basis: usize,
    pub layers: usize,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub variant: Variant,
    pub coarse_h: f64,
    pub n_basis: usize,
    pub layers: usize,
    pub contrast: f64,
    pub dof: usize,
    pub e_l2: f64,
    pub e_h1: f64,
    /// Smallest first-discarded eigenvalue over blocks.
    pub lambda: f64,
    pub wall_time_s: f64,
    /// `None` on success, the error message otherwise.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineHistory {
    pub case: usize,
    pub stop: StopReason,
    pub dropped: usize,
    pub rows: Vec<HistoryRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineDiagnostics {
    pub contrast: f64,
    pub n_free: usize,
    pub method: FineSolver,
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub rows: Vec<CaseRow>,
    pub fine: Vec<FineDiagnostics>,
    pub online: Vec<OnlineHistory>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    /// Rows as CSV; wall time is left out so reruns compare byte for byte.
    pub fn write_rows_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "variant,H,n_basis,m,contrast,dof,e_l2,e_h1,lambda,status")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},1/{},{},{},{:e},{},{:.6e},{:.6e},{:.6e},{}",
                r.variant,
                (1.0 / r.coarse_h).round(),
                r.n_basis,
                r.layers,
                r.contrast,
                r.dof,
                r.e_l2,
                r.e_h1,
                r.lambda,
                if r.failure.is_some() { "failed" } else { "ok" }
            )?;
        }
        Ok(())
    }

    /// Constrained/relaxed pairs from the same oversampling entry of a sweep
    /// (adjacent rows, since the variant varies fastest). With automatic
    /// oversampling the two variants may use different `m`.
    pub fn comparisons(&self) -> Vec<Comparison> {
        self.rows
            .windows(2)
            .filter(|w| {
                let (c, r) = (&w[0], &w[1]);
                c.variant == Variant::Constrained
                    && r.variant == Variant::Relaxed
                    && c.failure.is_none()
                    && r.failure.is_none()
                    && c.coarse_h == r.coarse_h
                    && c.n_basis == r.n_basis
                    && c.contrast == r.contrast
            })
            .map(|w| Comparison {
                coarse_h: w[0].coarse_h,
                n_basis: w[0].n_basis,
                constrained_layers: w[0].layers,
                relaxed_layers: w[1].layers,
                contrast: w[0].contrast,
                constrained_e_h1: w[0].e_h1,
                relaxed_e_h1: w[1].e_h1,
                relaxed_better: w[1].e_h1 <= w[0].e_h1,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub coarse_h: f64,
    pub n_basis: usize,
    pub constrained_layers: usize,
    pub relaxed_layers: usize,
    pub contrast: f64,
    pub constrained_e_h1: f64,
    pub relaxed_e_h1: f64,
    pub relaxed_better: bool,
}

pub fn write_comparison_csv(rows: &[Comparison], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "H,n_basis,m_constrained,m_relaxed,contrast,constrained_e_h1,relaxed_e_h1,relaxed_better")?;
    for c in rows {
        writeln!(
            out,
            "1/{},{},{},{},{:e},{:.6e},{:.6e},{}",
            (1.0 / c.coarse_h).round(),
            c.n_basis,
            c.constrained_layers,
            c.relaxed_layers,
            c.contrast,
            c.constrained_e_h1,
            c.relaxed_e_h1,
            c.relaxed_better
        )?;
    }
    Ok(())
}

/// Everything produced by one offline case, kept for export.
pub struct CaseOutcome {
    pub spec: CaseSpec,
    pub basis: BasisSet,
    pub u_ms: Vec<f64>,
}

/// Builds fine problems lazily, one per contrast and coarse size.
pub struct ProblemCache<'a> {
    config: &'a ExperimentConfig,
    base: Vec<(f64, FineProblem)>,
}

impl<'a> ProblemCache<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Self {
        Self { config, base: Vec::new() }
    }

    pub fn get(&mut self, contrast: f64, n_coarse: usize) -> Result<FineProblem> {
        let cfg = self.config;
        let idx = match self.base.iter().position(|(c, _)| *c == contrast) {
            Some(i) => i,
            None => {
                let grid = GridHierarchy::new(cfg.dim, cfg.n_fine, n_coarse)?;
                let young = cfg.medium_field(contrast)?;
                let mut p = FineProblem::new(grid, young, cfg.nu, cfg.lame_convention, &cfg.force_vector(), cfg.fine_solver)?;
                p.weighting = cfg.l2_weighting;
                log::info!(
                    "fine solve for contrast {contrast:e}: {} dofs, {:?}, residual {:.2e}",
                    p.a.n(),
                    p.reference.method,
                    p.reference.relative_residual
                );
                self.base.push((contrast, p));
                self.base.len() - 1
            }
        };
        self.base[idx].1.regrid(n_coarse)
    }

    pub fn diagnostics(&self) -> Vec<FineDiagnostics> {
        self.base
            .iter()
            .map(|(c, p)| diag(*c, p.a.n(), &p.reference))
            .collect()
    }
}

fn diag(contrast: f64, n_free: usize, s: &FineSolution) -> FineDiagnostics {
    FineDiagnostics {
        contrast,
        n_free,
        method: s.method,
        iterations: s.iterations,
        relative_residual: s.relative_residual,
    }
}

/// Offline stage and coarse solve for one case.
pub fn run_case(problem: &FineProblem, spec: &CaseSpec) -> Result<(CaseRow, CaseOutcome, AuxiliarySpace)> {
    let start = Instant::now();
    let aux = AuxiliarySpace::build_uniform(&problem.grid, &problem.coeffs, spec.n_basis)?;
    let basis = build_basis_matrix(&problem.grid, &problem.a, &aux, spec.variant, spec.layers)?;
    let sol = coarse_solve(&basis, &problem.a, &problem.f)?;
    let err = problem.errors(&sol.fine)?;
    let row = CaseRow {
        variant: spec.variant,
        coarse_h: problem.grid.coarse_h(),
        n_basis: spec.n_basis,
        layers: spec.layers,
        contrast: spec.contrast,
        dof: basis.n_cols(),
        e_l2: err.e_l2,
        e_h1: err.e_h1,
        lambda: aux.lambda(),
        wall_time_s: start.elapsed().as_secs_f64(),
        failure: None,
    };
    Ok((row, CaseOutcome { spec: *spec, basis, u_ms: sol.fine }, aux))
}

fn failed_row(spec: &CaseSpec, e: &CemError, start: Instant) -> CaseRow {
    CaseRow {
        variant: spec.variant,
        coarse_h: 1.0 / spec.n_coarse as f64,
        n_basis: spec.n_basis,
        layers: spec.layers,
        contrast: spec.contrast,
        dof: 0,
        e_l2: f64::NAN,
        e_h1: f64::NAN,
        lambda: f64::NAN,
        wall_time_s: start.elapsed().as_secs_f64(),
        failure: Some(e.to_string()),
    }
}

/// Runs every case of the sweep, with online enrichment when configured.
/// Case failures are recorded in the report; configuration errors abort.
/// `keep` receives each successful offline outcome.
pub fn run_with(config: &ExperimentConfig, mut keep: impl FnMut(&CaseOutcome, &FineProblem)) -> Result<RunReport> {
    config.validate()?;
    let mut cache = ProblemCache::new(config);
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    for (idx, spec) in config.cases().iter().enumerate() {
        let start = Instant::now();
        log::info!(
            "case {idx}: {} H=1/{} N_b={} m={} contrast={:e}",
            spec.variant,
            spec.n_coarse,
            spec.n_basis,
            spec.layers,
            spec.contrast
        );
        let problem = match cache.get(spec.contrast, spec.n_coarse) {
            Ok(p) => p,
            Err(e @ (CemError::InvalidMedium(_) | CemError::Io(_) | CemError::Config(_))) => return Err(e),
            Err(e) => {
                rows.push(failed_row(spec, &e, start));
                continue;
            }
        };
        match run_case(&problem, spec) {
            Ok((row, outcome, aux)) => {
                keep(&outcome, &problem);
                rows.push(row);
                if let Some(settings) = &config.online {
                    match enrich_loop(&problem, &aux, outcome.basis, settings, spec.layers) {
                        Ok(state) => histories.push(OnlineHistory {
                            case: idx,
                            stop: state.stop,
                            dropped: state.dropped,
                            rows: state.history,
                        }),
                        Err(e) => {
                            log::warn!("online enrichment of case {idx} failed: {e}");
                            rows.last_mut().unwrap().failure = Some(format!("online: {e}"));
                        }
                    }
                }
            }
            Err(e) => {
                log::warn!("case {idx} failed: {e}");
                rows.push(failed_row(spec, &e, start));
            }
        }
    }
    Ok(RunReport {
        version: VERSION.to_string(),
        config: config.clone(),
        rows,
        fine: cache.diagnostics(),
        online: histories,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    run_with(config, |_, _| {})
}

/// Runs both offline variants on every case and pairs the results.
pub fn compare_variants(config: &ExperimentConfig) -> Result<(RunReport, Vec<Comparison>)> {
    let mut cfg = config.clone();
    cfg.variants = vec![Variant::Constrained, Variant::Relaxed];
    let report = run(&cfg)?;
    let cmp = report.comparisons();
    Ok((report, cmp))
}

/// Writes `cases.csv`, `report.json`, one history CSV per online case and,
/// when present, `compare.csv` into `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport, comparisons: Option<&[Comparison]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    report.write_rows_csv(&mut buf)?;
    fs::write(dir.join("cases.csv"), buf)?;
    for h in &report.online {
        let mut buf = Vec::new();
        write_history_csv(&h.rows, &mut buf)?;
        fs::write(dir.join(format!("history_{}.csv", h.case)), buf)?;
    }
    if let Some(c) = comparisons {
        let mut buf = Vec::new();
        write_comparison_csv(c, &mut buf)?;
        fs::write(dir.join("compare.csv"), buf)?;
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Writes the basis of `outcome` as `basis.bin` plus `basis.json`.
pub fn export_basis(dir: &Path, outcome: &CaseOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("basis.bin"))?);
    outcome.basis.write_binary(&mut f)?;
    f.flush()?;
    let mut side = outcome.basis.sidecar();
    side["case"] = serde_json::to_value(outcome.spec)?;
    fs::write(dir.join("basis.json"), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Writes the multiscale and reference solutions, nodal CSV and raw binary.
pub fn export_solution(dir: &Path, outcome: &CaseOutcome, problem: &FineProblem) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, u) in [("u_ms", &outcome.u_ms), ("u_h", &problem.reference.u)] {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("{name}.csv")))?);
        write_solution_csv(&problem.grid, u, &mut f)?;
        f.flush()?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("{name}.bin")))?);
        write_solution_binary(&problem.grid, u, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

/// Worker count from the environment, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CemError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Installs the global thread pool once; later calls are ignored.
pub fn init_workers(n: Option<usize>) {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    if b.build_global().is_err() {
        log::debug!("thread pool already initialised");
    }
}

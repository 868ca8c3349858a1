use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cemgms::cem_offline::Variant;
use cemgms::coarse::L2Weighting;
use cemgms::experiment::{
    compare_variants, export_basis, export_solution, init_workers, run_with, workers_from_env, write_outputs, ExperimentConfig,
    MediumSource, Oversampling, RunReport, WORKERS_ENV,
};
use cemgms::fem::FineSolver;
use cemgms::media::{LameConvention, Preset};
use cemgms::online::EnrichMode;

#[derive(Parser)]
#[command(name = "cemgms", version, about = "Multiscale solver for high-contrast linear elasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single case.
    Run(CaseArgs),
    /// Solve every combination of the listed parameters.
    Sweep(CaseArgs),
    /// Offline solve followed by online enrichment.
    Online(OnlineArgs),
    /// Solve with both offline variants and pair the errors.
    Compare(CaseArgs),
    /// Write the basis matrix of the first case.
    ExportBasis(CaseArgs),
    /// Write the multiscale and reference solutions of the first case.
    ExportSolution(CaseArgs),
}

#[derive(Args, Clone)]
struct CaseArgs {
    /// JSON configuration; flags below override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Shipped medium preset (model1-like, model2-like).
    #[arg(long)]
    preset: Option<Preset>,
    /// Cell-value raster file for the medium.
    #[arg(long, conflicts_with = "preset")]
    raster: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Fine cells per side.
    #[arg(long)]
    n_fine: Option<usize>,
    /// Coarse blocks per side.
    #[arg(long, value_delimiter = ',')]
    n_coarse: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<Variant>>,
    /// Auxiliary functions per block.
    #[arg(long, value_delimiter = ',')]
    n_basis: Option<Vec<usize>>,
    /// Oversampling layers, or `auto`.
    #[arg(long, value_delimiter = ',')]
    oversampling: Option<Vec<Oversampling>>,
    #[arg(long, value_delimiter = ',')]
    contrast: Option<Vec<f64>>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    force: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_lame)]
    lame_convention: Option<LameConvention>,
    #[arg(long, value_parser = parse_weighting)]
    l2_weighting: Option<L2Weighting>,
    #[arg(long, value_parser = parse_fine)]
    fine_solver: Option<FineSolver>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to the environment variable, then all cores.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct OnlineArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EnrichMode>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Extra layers of the online neighborhoods; defaults to the offline oversampling.
    #[arg(long)]
    online_layers: Option<usize>,
}

macro_rules! json_parser {
    ($($name:ident => $t:ty),*) => {$(
        fn $name(s: &str) -> std::result::Result<$t, String> {
            serde_json::from_value::<$t>(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
        }
    )*};
}

json_parser!(parse_lame => LameConvention, parse_weighting => L2Weighting, parse_fine => FineSolver, parse_mode => EnrichMode);

impl CaseArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => {
                let preset = self.preset.unwrap_or(if self.dim == Some(3) { Preset::Model2Like } else { Preset::Model1Like });
                ExperimentConfig::for_preset(preset, if preset.dim() == 3 { 4 } else { 16 }, Variant::Relaxed, 4)
            }
        };
        if let Some(p) = self.preset {
            cfg.medium = MediumSource::Preset(p);
            cfg.dim = p.dim();
            cfg.n_fine = p.default_resolution();
        }
        if let Some(r) = &self.raster {
            cfg.medium = MediumSource::Raster(r.clone());
        }
        macro_rules! set {
            ($($f:ident => $t:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$t = v.clone();
                }
            )*};
        }
        set!(dim => dim, n_fine => n_fine, n_coarse => n_coarse, variant => variants, n_basis => n_basis,
             oversampling => oversampling, contrast => contrast, nu => nu);
        if let Some(v) = &self.force {
            cfg.force = Some(v.clone());
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(v) = self.lame_convention {
            cfg.lame_convention = v;
        }
        if let Some(v) = self.l2_weighting {
            cfg.l2_weighting = v;
        }
        if let Some(v) = self.fine_solver {
            cfg.fine_solver = v;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("cemgms-out"))
}

fn summarize(report: &RunReport) {
    for r in &report.rows {
        match &r.failure {
            None => println!(
                "{:<11} H=1/{:<3} N_b={} m={} E1={:<6e} dof={:<6} e_L2={:.3e} e_H1={:.3e}",
                r.variant.as_str(),
                (1.0 / r.coarse_h).round(),
                r.n_basis,
                r.layers,
                r.contrast,
                r.dof,
                r.e_l2,
                r.e_h1
            ),
            Some(msg) => println!(
                "{:<11} H=1/{:<3} N_b={} m={} E1={:<6e} FAILED: {msg}",
                r.variant.as_str(),
                (1.0 / r.coarse_h).round(),
                r.n_basis,
                r.layers,
                r.contrast
            ),
        }
    }
    for h in &report.online {
        println!("online history of case {} ({:?})", h.case, h.stop);
        for row in &h.rows {
            println!(
                "  iter {:<2} dof={:<6} e_L2={:.3e} e_H1={:.3e} sum_delta_sq={:.3e} k={}",
                row.iteration, row.dof, row.e_l2, row.e_h1, row.sum_delta_sq, row.selected
            );
        }
    }
}

fn single_case(cfg: &ExperimentConfig) -> Result<()> {
    let n = cfg.cases().len();
    if n != 1 {
        bail!("this command takes exactly one case, the parameters describe {n}; use `sweep`");
    }
    Ok(())
}

fn finish(report: &RunReport) -> ExitCode {
    summarize(report);
    if report.failures() > 0 {
        eprintln!("{} case(s) failed", report.failures());
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    let args = match &command {
        Command::Online(o) => o.case.clone(),
        Command::Run(a) | Command::Sweep(a) | Command::Compare(a) | Command::ExportBasis(a) | Command::ExportSolution(a) => a.clone(),
    };
    let workers = match args.workers {
        Some(0) => bail!("--workers must be positive"),
        Some(n) => Some(n),
        None => workers_from_env()?,
    };
    init_workers(workers);
    let mut cfg = args.config()?;
    let dir = output_dir(&cfg);
    match command {
        Command::Run(_) | Command::Sweep(_) => {
            if matches!(command, Command::Run(_)) {
                single_case(&cfg)?;
            }
            let report = run_with(&cfg, |_, _| {})?;
            write_outputs(&dir, &report, None)?;
            Ok(finish(&report))
        }
        Command::Online(o) => {
            let mut s = cfg.online.unwrap_or_default();
            if let Some(v) = o.theta {
                s.theta = v;
            }
            if let Some(v) = o.mode {
                s.mode = v;
            }
            if let Some(v) = o.tol {
                s.tol = v;
            }
            if let Some(v) = o.max_iter {
                s.max_iter = v;
            }
            if o.online_layers.is_some() {
                s.layers = o.online_layers;
            }
            cfg.online = Some(s);
            cfg.validate()?;
            let report = run_with(&cfg, |_, _| {})?;
            write_outputs(&dir, &report, None)?;
            Ok(finish(&report))
        }
        Command::Compare(_) => {
            let (report, cmp) = compare_variants(&cfg)?;
            write_outputs(&dir, &report, Some(&cmp))?;
            for c in &cmp {
                println!(
                    "H=1/{} N_b={} E1={:e}: constrained (m={}) {:.3e}, relaxed (m={}) {:.3e}, relaxed better: {}",
                    (1.0 / c.coarse_h).round(),
                    c.n_basis,
                    c.contrast,
                    c.constrained_layers,
                    c.constrained_e_h1,
                    c.relaxed_layers,
                    c.relaxed_e_h1,
                    c.relaxed_better
                );
            }
            Ok(finish(&report))
        }
        Command::ExportBasis(_) | Command::ExportSolution(_) => {
            single_case(&cfg)?;
            let basis = matches!(command, Command::ExportBasis(_));
            let mut written: Option<anyhow::Error> = None;
            let mut done = false;
            let report = run_with(&cfg, |outcome, problem| {
                let r = if basis { export_basis(&dir, outcome) } else { export_solution(&dir, outcome, problem) };
                match r {
                    Ok(()) => done = true,
                    Err(e) => written = Some(e.into()),
                }
            })?;
            if let Some(e) = written {
                return Err(e);
            }
            write_outputs(&dir, &report, None)?;
            let code = finish(&report);
            if done {
                println!("wrote {}", dir.display());
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

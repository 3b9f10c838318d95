//! Command-line interface for convolution-t distributions.
//!
//! Subcommands: `sample`, `density`, `marginal`, `fit`, `har`, `approx`,
//! `simulate`, `rates`. Config files are flat `key = value` text; all numeric
//! output is CSV at 17 significant digits so reruns are byte-identical.
//!
//! Exit codes: 0 on success, 1 on a domain error (invalid specification,
//! failed precondition, non-convergence), 2 on I/O, parse, or usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use convot::config::{
    format_g17, parse_spec, parse_structure, read_csv_matrix, spec_to_key_values,
    write_csv_matrix, KeyValues,
};
use convot::estimation::{fit_mle, FitOptions, FitResult};
use convot::har::{build_har_features, fit_har_two_stage};
use convot::marginal::marginal_of;
use convot::simharness::{run_mc_study, run_rate_study, MCConfig, MCStudyReport};
use convot::{approximation, CTSpec, Error, QuadratureConfig, Result};

#[derive(Parser)]
#[command(
    name = "convot",
    version,
    about = "Convolution-t distributions: sampling, density and marginal evaluation, \
             maximum-likelihood fitting, risk approximation, Monte Carlo studies, \
             and the two-stage HAR realized-volatility pipeline."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw i.i.d. samples from a spec and write them as CSV (one row per draw).
    Sample(SampleArgs),
    /// Evaluate the joint log-density at each row of a data CSV.
    Density(DensityArgs),
    /// Evaluate a univariate marginal pdf or cdf on a grid, emitting CSV (y, value).
    Marginal(MarginalArgs),
    /// Fit a convolution-t model to a data CSV by maximum likelihood.
    Fit(FitArgs),
    /// Two-stage HAR pipeline: per-series HAR regressions, then a convolution-t
    /// fit to the residual panel.
    Har(HarArgs),
    /// Approximate a marginal by a univariate t (KL-optimal), with a VaR/ES table.
    Approx(ApproxArgs),
    /// Run a seeded Monte Carlo study and emit the summary report as CSV.
    Simulate(SimulateArgs),
    /// Convergence-rate study: standard-deviation ratios between T/2 and T.
    Rates(SimulateArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Spec file (keys: clusters, dof, mu, xi, standardized).
    #[arg(long)]
    spec: PathBuf,
    /// Number of draws.
    #[arg(long)]
    count: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    /// Spec file (keys: clusters, dof, mu, xi, standardized).
    #[arg(long)]
    spec: PathBuf,
    /// Data CSV with one observation per row (n columns).
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MarginalArgs {
    /// Spec file (keys: clusters, dof, mu, xi, standardized).
    #[arg(long)]
    spec: PathBuf,
    /// Coordinate to marginalize onto (1-based).
    #[arg(long, default_value_t = 1)]
    coord: usize,
    /// Evaluation grid as start:stop:step.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Evaluate the cdf instead of the pdf.
    #[arg(long)]
    cdf: bool,
    /// Absolute quadrature tolerance.
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    /// Relative quadrature tolerance.
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Data CSV with one observation per row (n columns).
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated cluster sizes, e.g. 1,2.
    #[arg(long)]
    clusters: String,
    /// Identification structure.
    #[arg(long, default_value = "just", value_parser = ["just", "sym", "block", "block-asym"])]
    structure: String,
    /// Comma-separated block partition for block structures (defaults to clusters).
    #[arg(long)]
    partition: Option<String>,
    /// Fit the standardized parameterization (unit-variance t factors).
    #[arg(long)]
    standardized: bool,
    /// Initial degrees of freedom per cluster; `inf` marks a Gaussian cluster.
    #[arg(long)]
    dof_init: Option<String>,
    /// Fix the location vector at zero instead of estimating it.
    #[arg(long)]
    zero_location: bool,
    /// Number of multistart attempts.
    #[arg(long, default_value_t = 3)]
    multistart: usize,
    /// Seed for multistart perturbations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also report the marginal/copula log-likelihood decomposition.
    #[arg(long)]
    decompose: bool,
    /// Output path for the fitted spec and diagnostics (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HarArgs {
    /// Realized-measure panel CSV (one column per series, chronological rows).
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated cluster sizes for the residual model.
    #[arg(long)]
    clusters: String,
    /// Identification structure for the residual model.
    #[arg(long, default_value = "just", value_parser = ["just", "sym", "block", "block-asym"])]
    structure: String,
    /// Comma-separated block partition for block structures (defaults to clusters).
    #[arg(long)]
    partition: Option<String>,
    /// Fit the standardized parameterization in stage two.
    #[arg(long)]
    standardized: bool,
    /// Initial degrees of freedom per cluster; `inf` marks a Gaussian cluster.
    #[arg(long)]
    dof_init: Option<String>,
    /// Report heteroskedasticity-robust (HC0) regression standard errors.
    #[arg(long)]
    robust: bool,
    /// Number of multistart attempts for stage two.
    #[arg(long, default_value_t = 3)]
    multistart: usize,
    /// Seed for multistart perturbations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for regression coefficients and the stage-two fit
    /// (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ApproxArgs {
    /// Spec file (keys: clusters, dof, mu, xi, standardized).
    #[arg(long)]
    spec: PathBuf,
    /// Coordinate to approximate (1-based).
    #[arg(long, default_value_t = 1)]
    coord: usize,
    /// Comma-separated tail probabilities for the VaR/ES table.
    #[arg(long, default_value = "0.01,0.025,0.05")]
    alphas: String,
    /// Absolute quadrature tolerance.
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    /// Relative quadrature tolerance.
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study config file (spec keys plus sample_sizes, replications, seed,
    /// structure, partition, workers, dof_init, multistart).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (overrides config and the CONVOT_WORKERS env var).
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Sample(a) => cmd_sample(a),
        Command::Density(a) => cmd_density(a),
        Command::Marginal(a) => cmd_marginal(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Har(a) => cmd_har(a),
        Command::Approx(a) => cmd_approx(a),
        Command::Simulate(a) => cmd_simulate(a, false),
        Command::Rates(a) => cmd_simulate(a, true),
    }
}

fn read_text(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::Io)
}

fn load_spec(path: &PathBuf) -> Result<CTSpec> {
    parse_spec(&KeyValues::parse(&read_text(path)?)?)
}

fn load_matrix(path: &PathBuf) -> Result<DMatrix<f64>> {
    let (_, m) = read_csv_matrix(&read_text(path)?)?;
    Ok(m)
}

fn write_out(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::Io),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parse `start:stop:step` into an inclusive grid.
fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("grid must be start:stop:step, got {raw:?}")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("grid: bad number {s:?}")))
        })
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start {
        return Err(Error::Parse("grid requires stop >= start and step > 0".into()));
    }
    let count = ((stop - start) / step + 1.0 + 1e-9).floor() as usize;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

fn parse_list_arg(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            let s = s.trim();
            if s.eq_ignore_ascii_case("inf") {
                Ok(f64::INFINITY)
            } else {
                s.parse()
                    .map_err(|_| Error::Parse(format!("{what}: bad number {s:?}")))
            }
        })
        .collect()
}

fn structure_from_args(
    clusters: &str,
    structure: &str,
    partition: &Option<String>,
) -> Result<convot::ClusterStructure> {
    let mut kv = KeyValues::default();
    kv.set("clusters", clusters);
    kv.set("structure", structure);
    if let Some(p) = partition {
        kv.set("partition", p.as_str());
    }
    parse_structure(&kv)
}

/// 1-based coordinate → basis vector.
fn coord_basis(n: usize, coord: usize) -> Result<DVector<f64>> {
    if coord == 0 || coord > n {
        return Err(Error::InvalidArgument(format!(
            "coordinate must be in 1..={n}, got {coord}"
        )));
    }
    let mut beta = DVector::zeros(n);
    beta[coord - 1] = 1.0;
    Ok(beta)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let draws = spec.sample(a.count, a.seed);
    let headers: Vec<String> = (1..=spec.n()).map(|i| format!("y{i}")).collect();
    write_out(&a.out, &write_csv_matrix(&headers, &draws)?)
}

fn cmd_density(a: DensityArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let data = load_matrix(&a.data)?;
    if data.ncols() != spec.n() {
        return Err(Error::InvalidArgument(format!(
            "data has {} columns, spec dimension {}",
            data.ncols(),
            spec.n()
        )));
    }
    let mut vals = DMatrix::zeros(data.nrows(), 1);
    for t in 0..data.nrows() {
        vals[(t, 0)] = spec.log_density(&data.row(t).transpose())?;
    }
    write_out(&a.out, &write_csv_matrix(&["log_density".into()], &vals)?)
}

fn cmd_marginal(a: MarginalArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let beta = coord_basis(spec.n(), a.coord)?;
    let marginal = marginal_of(&spec, &beta)?;
    let q = QuadratureConfig { atol: a.atol, rtol: a.rtol, ..QuadratureConfig::default() }
        .validated()?;
    let grid = parse_grid(&a.grid)?;
    let mut table = DMatrix::zeros(grid.len(), 2);
    for (i, &y) in grid.iter().enumerate() {
        table[(i, 0)] = y;
        table[(i, 1)] = if a.cdf { marginal.cdf(y, &q)? } else { marginal.pdf(y, &q)? };
    }
    let value = if a.cdf { "cdf" } else { "pdf" };
    write_out(&a.out, &write_csv_matrix(&["y".into(), value.into()], &table)?)
}

fn fit_report(fit: &FitResult) -> KeyValues {
    let mut kv = spec_to_key_values(&fit.spec);
    let join = |v: &DVector<f64>| {
        v.iter().map(|&x| format_g17(x)).collect::<Vec<_>>().join(",")
    };
    kv.set("loglik", format_g17(fit.loglik));
    kv.set("bic", format_g17(fit.bic));
    kv.set("param_count", fit.param_count.to_string());
    kv.set("converged", fit.diagnostics.converged.to_string());
    kv.set("iterations", fit.diagnostics.iterations.to_string());
    kv.set("grad_norm", format_g17(fit.diagnostics.grad_norm));
    kv.set("estimates", join(&fit.estimates));
    kv.set("se_fisher", join(&fit.se_fisher));
    kv.set("se_sandwich", join(&fit.se_sandwich));
    if let (Some(lm), Some(lc)) = (fit.loglik_marginal, fit.loglik_copula) {
        kv.set("loglik_marginal", format_g17(lm));
        kv.set("loglik_copula", format_g17(lc));
    }
    for (k, (inv, se_f, se_s)) in fit.inv_dof_reports().into_iter().enumerate() {
        kv.set(
            &format!("inv_dof{}", k + 1),
            format!("{},{},{}", format_g17(inv), format_g17(se_f), format_g17(se_s)),
        );
    }
    kv
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let data = load_matrix(&a.data)?;
    let structure = structure_from_args(&a.clusters, &a.structure, &a.partition)?;
    let dof_init = match &a.dof_init {
        Some(raw) => Some(parse_list_arg(raw, "dof-init")?),
        None => None,
    };
    let opts = FitOptions {
        standardized: a.standardized,
        multistart: a.multistart,
        seed: a.seed,
        decompose: a.decompose,
        fix_location: a.zero_location.then(|| DVector::zeros(structure.n())),
        ..FitOptions::default()
    };
    let fit = fit_mle(&data, &structure, dof_init.as_deref(), &opts)?;
    write_out(&a.out, &fit_report(&fit).to_text())
}

fn cmd_har(a: HarArgs) -> Result<()> {
    let panel = load_matrix(&a.data)?;
    let dataset = build_har_features(&panel)?;
    let structure = structure_from_args(&a.clusters, &a.structure, &a.partition)?;
    let dof_init = match &a.dof_init {
        Some(raw) => Some(parse_list_arg(raw, "dof-init")?),
        None => None,
    };
    let opts = FitOptions {
        standardized: a.standardized,
        multistart: a.multistart,
        seed: a.seed,
        ..FitOptions::default()
    };
    let two = fit_har_two_stage(&dataset, &structure, dof_init.as_deref(), &opts, a.robust)?;
    let mut kv = fit_report(&two.stage2);
    for (j, ols) in two.ols.iter().enumerate() {
        let row = |v: &DVector<f64>| {
            v.iter().map(|&x| format_g17(x)).collect::<Vec<_>>().join(",")
        };
        kv.set(&format!("series{}_coef", j + 1), row(&ols.coef));
        kv.set(&format!("series{}_se", j + 1), row(&ols.se));
        if let Some(se) = &ols.se_robust {
            kv.set(&format!("series{}_se_robust", j + 1), row(se));
        }
        kv.set(&format!("series{}_persistence", j + 1), format_g17(ols.persistence));
        kv.set(&format!("series{}_implied_mean", j + 1), format_g17(ols.implied_mean));
        kv.set(&format!("series{}_residual_std", j + 1), format_g17(ols.residual_std));
    }
    write_out(&a.out, &kv.to_text())
}

fn cmd_approx(a: ApproxArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let beta = coord_basis(spec.n(), a.coord)?;
    let marginal = marginal_of(&spec, &beta)?;
    let q = QuadratureConfig { atol: a.atol, rtol: a.rtol, ..QuadratureConfig::default() }
        .validated()?;
    let alphas = parse_list_arg(&a.alphas, "alphas")?;
    let (best, klic) = approximation::kl_best_t(&marginal, &q)?;
    let mut table = DMatrix::zeros(alphas.len(), 7);
    for (i, &alpha) in alphas.iter().enumerate() {
        let (var, es) = approximation::var_es(&best, alpha)?;
        table[(i, 0)] = best.location;
        table[(i, 1)] = best.sigma2;
        table[(i, 2)] = best.dof;
        table[(i, 3)] = klic;
        table[(i, 4)] = alpha;
        table[(i, 5)] = var;
        table[(i, 6)] = es;
    }
    let headers: Vec<String> = ["mu", "sigma2", "dof", "klic", "alpha", "var", "es"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_out(&a.out, &write_csv_matrix(&headers, &table)?)
}

fn resolve_workers(flag: Option<usize>, kv: &KeyValues) -> Result<usize> {
    if let Some(w) = flag {
        return Ok(w);
    }
    if let Ok(raw) = std::env::var("CONVOT_WORKERS") {
        return raw
            .parse()
            .map_err(|_| Error::Parse(format!("CONVOT_WORKERS: bad integer {raw:?}")));
    }
    match kv.get("workers") {
        Some(_) => kv.parse_value("workers"),
        None => Ok(1),
    }
}

fn study_config(a: &SimulateArgs) -> Result<MCConfig> {
    let kv = KeyValues::parse(&read_text(&a.config)?)?;
    let spec = parse_spec(&kv)?;
    let structure = parse_structure(&kv)?;
    let dof_init = match kv.get("dof_init") {
        Some(_) => kv.parse_f64_list("dof_init")?,
        None => spec.dof().to_vec(),
    };
    let mut fit = FitOptions { standardized: spec.standardized(), ..FitOptions::default() };
    if kv.get("multistart").is_some() {
        fit.multistart = kv.parse_value("multistart")?;
    }
    Ok(MCConfig {
        spec,
        structure,
        sample_sizes: kv.parse_usize_list("sample_sizes")?,
        replications: kv.parse_value("replications")?,
        base_seed: kv.parse_value("seed")?,
        workers: resolve_workers(a.workers, &kv)?,
        dof_init,
        fit,
    })
}

fn report_csv(report: &MCStudyReport, rates: bool) -> String {
    let mut headers = vec!["name", "t", "truth", "mean", "std", "astd", "alpha_l", "alpha_r"];
    if rates {
        headers.push("r_sigma");
    }
    let mut out = headers.join(",");
    out.push('\n');
    let opt = |v: Option<f64>| format_g17(v.unwrap_or(f64::NAN));
    for row in &report.rows {
        let mut fields = vec![
            row.name.clone(),
            row.t.to_string(),
            format_g17(row.truth),
            format_g17(row.mean),
            format_g17(row.std),
            opt(row.astd),
            opt(row.alpha_l),
            opt(row.alpha_r),
        ];
        if rates {
            fields.push(opt(row.r_sigma));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn cmd_simulate(a: SimulateArgs, rates: bool) -> Result<()> {
    let cfg = study_config(&a)?;
    let report = if rates { run_rate_study(&cfg)? } else { run_mc_study(&cfg)? };
    eprintln!(
        "{} replications, {} failed",
        report.total, report.failures
    );
    write_out(&a.out, &report_csv(&report, rates))
}

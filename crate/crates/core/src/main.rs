use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rater_capability::capability::{
    default_theta_grid, delta_for, kappa_bar_with, kappa_curve, verify_appendix_properties, KappaMethod,
};
use rater_capability::estimation::FitConfig;
use rater_capability::io::{
    ingest, run_empirical_pipeline, write_csv, write_json, CapabilityInput, CurveRow, IngestOptions, PipelineMode,
    PipelineOptions, RunConfig, SweepRow,
};
use rater_capability::model::{LinkFunction, ModelFamily, ModelSpec};
use rater_capability::simulation::{
    eta_grid, run_recovery, run_severity_sweep, study1_design, study2_design, FamilyRecovery, SweepConfig,
};
use rater_capability::{Error, Result};

const EXIT_INPUT: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "rater-capability", version, about = "Rater severity, discrimination and capability estimation")]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a rating file and score every rater.
    Fit(FitArgs),
    /// Score raters from given parameters.
    Capability(CapabilityArgs),
    /// Parameter recovery for the complete 50 x 20 x 40 design.
    #[command(name = "simulate-study1")]
    SimulateStudy1(Study1Args),
    /// Severity sweep on the empirical-like incomplete design.
    #[command(name = "simulate-study2")]
    SimulateStudy2(Study2Args),
    /// Check the supremum properties behind each normalizing constant.
    #[command(name = "verify-appendix")]
    VerifyAppendix(OutArgs),
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    family: Option<ModelFamily>,
    #[arg(long, value_parser = parse_link)]
    link: Option<LinkFunction>,
    /// Scores at or above this value become 1.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    group_by: Option<String>,
    /// Field delimiter; detected from the header when omitted.
    #[arg(long)]
    delimiter: Option<char>,
    /// Fit all groups jointly instead of one fit per group.
    #[arg(long)]
    fused: bool,
    #[arg(long, value_parser = parse_method)]
    kappa_method: Option<KappaMethod>,
    #[arg(long)]
    no_covariance: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CapabilityArgs {
    #[arg(long)]
    params: Option<PathBuf>,
    /// Require every rater to belong to this family.
    #[arg(long, value_parser = parse_family)]
    family: Option<ModelFamily>,
    #[arg(long, value_parser = parse_method)]
    kappa_method: Option<KappaMethod>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Study1Args {
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Study2Args {
    #[arg(long, allow_negative_numbers = true)]
    eta_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eta_max: Option<f64>,
    #[arg(long)]
    eta_step: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Zero-based rater indices to sweep; all raters when omitted.
    #[arg(long, value_delimiter = ',')]
    raters: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_family(s: &str) -> std::result::Result<ModelFamily, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown family '{s}' (expected tfm, gmf, probit or hrm)"))
}

fn parse_link(s: &str) -> std::result::Result<LinkFunction, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown link '{s}'"))
}

fn parse_method(s: &str) -> std::result::Result<KappaMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_").to_ascii_lowercase()))
        .map_err(|_| format!("unknown method '{s}' (expected quadrature or closed-form)"))
}

/// Outcome of a command whose results were written.
enum Status {
    Ok,
    NotConverged(String),
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidInput(format!("--{flag} is required")))
}

fn fit_config(config: &RunConfig, seed: Option<u64>) -> FitConfig {
    let mut fit = config.fit.clone();
    if let Some(s) = seed.or(config.seed) {
        fit.seed = s;
    }
    fit
}

fn run_fit(args: FitArgs, config: &RunConfig) -> Result<Status> {
    let input = required(args.input.or(config.input.clone()), "input")?;
    let out = required(args.out.or(config.out.clone()), "out")?;
    let threshold = required(args.threshold.or(config.threshold), "threshold")?;
    let family = args.family.or(config.family).unwrap_or(ModelFamily::Gmf);
    if !matches!(family, ModelFamily::Gmf | ModelFamily::Tfm) {
        return Err(Error::InvalidInput(format!("fit supports gmf and tfm, got {}", family.name())));
    }
    let mut spec = ModelSpec::new(family);
    if let Some(link) = args.link.or(config.link) {
        spec = spec.with_link(link);
    }
    let delimiter = match args.delimiter.or(config.delimiter) {
        Some(c) if c.is_ascii() => Some(c as u8),
        Some(c) => return Err(Error::InvalidInput(format!("delimiter '{c}' is not ASCII"))),
        None => None,
    };
    let ingest_options = IngestOptions { threshold, group_by: args.group_by.or(config.group_by.clone()), delimiter };
    let groups = ingest(&input, &ingest_options)?;

    let mut fit = fit_config(config, args.seed);
    if args.no_covariance {
        fit.compute_covariance = false;
    }
    let mode = if args.fused { PipelineMode::Fused } else { config.mode.unwrap_or_default() };
    let options = PipelineOptions {
        spec,
        fit,
        kappa_method: args.kappa_method.or(config.kappa_method).unwrap_or_default(),
        mode,
        curve_grid: default_theta_grid(),
    };
    let output = run_empirical_pipeline(&groups, &options)?;
    output.write(&out)?;
    for o in &output.outcomes {
        match (&o.table, &o.error) {
            (Some(t), _) => eprintln!(
                "{}: sigma {:.3}, mean kappa_bar {:.3}{}",
                o.label,
                t.sigma,
                t.mean_kappa_bar,
                if t.converged { "" } else { " (not converged)" }
            ),
            (None, Some(e)) => eprintln!("{}: failed: {e}", o.label),
            (None, None) => {}
        }
    }
    if output.all_converged() {
        Ok(Status::Ok)
    } else {
        Ok(Status::NotConverged("one or more groups failed or did not converge".into()))
    }
}

#[derive(Debug, Serialize)]
struct CapabilityRow {
    rater: String,
    family: ModelFamily,
    kappa_bar: f64,
    delta: f64,
}

fn run_capability(args: CapabilityArgs, config: &RunConfig) -> Result<Status> {
    let params = required(args.params.or(config.params.clone()), "params")?;
    let out = required(args.out.or(config.out.clone()), "out")?;
    let input = CapabilityInput::load(&params)?;
    let method = args.kappa_method.or(config.kappa_method).unwrap_or_default();
    if let Some(family) = args.family.or(config.family) {
        if let Some(r) = input.raters.iter().find(|r| r.model.family() != family) {
            return Err(Error::InvalidInput(format!(
                "rater '{}' is {}, expected {}",
                r.id,
                r.model.family().name(),
                family.name()
            )));
        }
    }
    let grid = default_theta_grid();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for r in &input.raters {
        let kb = kappa_bar_with(&r.model, input.sigma, method)?;
        rows.push(CapabilityRow {
            rater: r.id.clone(),
            family: r.model.family(),
            kappa_bar: kb.value,
            delta: delta_for(&r.model, input.sigma)?.value,
        });
        curves.extend(kappa_curve(&r.model, input.sigma, &grid)?.into_iter().map(|(theta, kappa)| CurveRow {
            rater: r.id.clone(),
            theta,
            kappa,
        }));
    }
    write_csv(&out.join("capability.csv"), &rows)?;
    write_csv(&out.join("curves.csv"), &curves)?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({ "sigma": input.sigma, "method": method, "raters": rows }),
    )?;
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct RecoveryRaterRow {
    family: ModelFamily,
    rater: String,
    rho_true: f64,
    rho_bias: Option<f64>,
    rho_rmse: Option<f64>,
    eta_true: f64,
    eta_bias: f64,
    eta_rmse: f64,
    kappa_bar_true: f64,
    kappa_bar_bias: f64,
    kappa_bar_rmse: f64,
}

#[derive(Debug, Serialize)]
struct RecoveryItemRow {
    family: ModelFamily,
    item: String,
    delta_true: f64,
    delta_bias: f64,
    delta_rmse: f64,
}

fn recovery_rows(f: &FamilyRecovery, raters: &[String], rho_true: &[f64]) -> Vec<RecoveryRaterRow> {
    raters
        .iter()
        .enumerate()
        .map(|(r, id)| RecoveryRaterRow {
            family: f.family,
            rater: id.clone(),
            rho_true: rho_true[r],
            rho_bias: f.rho.as_ref().map(|p| p.bias[r]),
            rho_rmse: f.rho.as_ref().map(|p| p.rmse[r]),
            eta_true: f.eta.truth[r],
            eta_bias: f.eta.bias[r],
            eta_rmse: f.eta.rmse[r],
            kappa_bar_true: f.kappa_bar.truth[r],
            kappa_bar_bias: f.kappa_bar.bias[r],
            kappa_bar_rmse: f.kappa_bar.rmse[r],
        })
        .collect()
}

fn run_study1(args: Study1Args, config: &RunConfig) -> Result<Status> {
    let out = required(args.out.or(config.out.clone()), "out")?;
    let reps = args.reps.or(config.replications).unwrap_or(200);
    let seed = args.seed.or(config.seed).unwrap_or(1);
    let design = study1_design(reps, seed);
    let metrics = run_recovery(&design, &fit_config(config, Some(seed)))?;
    let mut raters = Vec::new();
    let mut items = Vec::new();
    for f in &metrics.families {
        raters.extend(recovery_rows(f, &design.rater_ids, &design.truth.rho));
        items.extend(design.item_ids.iter().enumerate().map(|(i, id)| RecoveryItemRow {
            family: f.family,
            item: id.clone(),
            delta_true: f.delta.truth[i],
            delta_bias: f.delta.bias[i],
            delta_rmse: f.delta.rmse[i],
        }));
        eprintln!(
            "{}: sigma bias {:+.3}, kappa_bar Spearman (medians) {:.3}, ability slope {:.3}, {} of {} fits succeeded",
            f.family.name(),
            f.sigma.bias[0],
            f.kappa_spearman_of_medians,
            f.ability_slope,
            f.successes,
            reps
        );
    }
    write_csv(&out.join("recovery_raters.csv"), &raters)?;
    write_csv(&out.join("recovery_items.csv"), &items)?;
    write_json(&out.join("summary.json"), &metrics)?;
    let failed: usize = metrics.families.iter().map(|f| f.failures.len()).sum();
    if failed > 0 {
        return Ok(Status::NotConverged(format!("{failed} replication fits failed")));
    }
    Ok(Status::Ok)
}

fn run_study2(args: Study2Args, config: &RunConfig) -> Result<Status> {
    let out = required(args.out.or(config.out.clone()), "out")?;
    let reps = args.reps.or(config.replications).unwrap_or(200);
    let seed = args.seed.or(config.seed).unwrap_or(1);
    let grid = eta_grid(
        args.eta_min.or(config.eta_min).unwrap_or(-2.5),
        args.eta_max.or(config.eta_max).unwrap_or(2.5),
        args.eta_step.or(config.eta_step).unwrap_or(0.1),
    )?;
    let design = study2_design(reps, seed)?;
    let sweep =
        SweepConfig { eta_grid: grid, replications: reps, seed, raters: args.raters.or(config.sweep_raters.clone()) };
    let points = run_severity_sweep(&design, &sweep, &fit_config(config, Some(seed)))?;
    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| SweepRow {
            rater: p.rater_id.clone(),
            eta: p.eta,
            kappa_bar_median: p.kappa_bar_median,
            q25: p.kappa_bar_q25,
            q75: p.kappa_bar_q75,
            true_kappa_bar: p.true_kappa_bar,
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &rows)?;
    write_json(&out.join("summary.json"), &serde_json::json!({ "design": design, "sweep": sweep, "points": points }))?;
    let failed: usize = points.iter().map(|p| p.failures).sum();
    if failed > 0 {
        return Ok(Status::NotConverged(format!("{failed} replication fits failed")));
    }
    Ok(Status::Ok)
}

fn run_appendix(args: OutArgs, config: &RunConfig) -> Result<Status> {
    let out = required(args.out.or(config.out.clone()), "out")?;
    let report = verify_appendix_properties();
    for c in &report.checks {
        println!("{} {}: margin {:.3e}; {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.margin, c.detail);
    }
    write_json(&out.join("appendix.json"), &report)?;
    if report.all_passed() {
        Ok(Status::Ok)
    } else {
        Ok(Status::NotConverged("appendix checks failed".into()))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<Status> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Fit(a) => run_fit(a, &config),
        Command::Capability(a) => run_capability(a, &config),
        Command::SimulateStudy1(a) => run_study1(a, &config),
        Command::SimulateStudy2(a) => run_study2(a, &config),
        Command::VerifyAppendix(a) => run_appendix(a, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged(m)) => {
            eprintln!("warning: {m}; results written");
            ExitCode::from(EXIT_NONCONVERGENCE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_INPUT })
        }
    }
}

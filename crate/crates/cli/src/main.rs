#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod data;
mod grid;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ellipkit::exec::ExecMode;
use ellipkit::kernels::KernelFamily;
use ellipkit::nulldist::{run_test, TestConfig};
use ellipkit::simharness::{boxcox_apply, boxcox_fit, run_experiment, Scenario, ScenarioKind};
use ellipkit::standardize::{SampleMatrix, DEFAULT_RIDGE};
use serde_json::json;

use data::{default_header, read_table, write_json, write_table};

/// Number of leading null-distribution weights kept in the JSON report.
const REPORTED_EIGENVALUES: usize = 200;
/// Share of replicates that must succeed in every simulation cell.
const MIN_SUCCESS_SHARE: f64 = 0.9;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ellipkit::Error> for CliError {
    fn from(e: ellipkit::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "ellipkit", version, about = "Kernel-embedding test for elliptical symmetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test whether the rows of a CSV file come from an elliptical law.
    Test(TestArgs),
    /// Write a synthetic null or alternative sample.
    Gen(GenArgs),
    /// Estimate rejection rates over a grid of scenarios.
    Simulate(SimulateArgs),
    /// Fit and apply a per-column Box-Cox transform.
    Boxcox(BoxcoxArgs),
}

#[derive(Args, Debug, Clone)]
struct KernelArgs {
    #[arg(long, default_value = "gaussian", value_parser = parse_kernel)]
    kernel: KernelFamily,
    /// Radius bandwidth; the mean pairwise distance when omitted.
    #[arg(long)]
    gamma_u: Option<f64>,
    /// Angle bandwidth; the mean pairwise distance when omitted.
    #[arg(long)]
    gamma_theta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

impl KernelArgs {
    fn config(&self) -> Result<TestConfig, CliError> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(CliError::Usage(format!(
                "--ridge must be finite and >= 0, got {}",
                self.ridge
            )));
        }
        for (name, g) in [("--gamma-u", self.gamma_u), ("--gamma-theta", self.gamma_theta)] {
            if let Some(g) = g {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(CliError::Usage(format!("{name} must be positive, got {g}")));
                }
            }
        }
        Ok(TestConfig {
            kernel: self.kernel,
            gamma_u: self.gamma_u,
            gamma_theta: self.gamma_theta,
            ridge: self.ridge,
            exec: if self.sequential {
                ExecMode::Sequential
            } else {
                ExecMode::Parallel
            },
            ..TestConfig::default()
        })
    }
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON report destination.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GenKind {
    Null,
    Alt,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Chi-square degrees of freedom of the alternative.
    #[arg(long)]
    df: Option<u32>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// For example `n=200,500:d=3,5:kind=null,alt2,alt4`.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args, Debug)]
struct BoxcoxArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON file for the fitted lambdas; printed to stdout when omitted.
    #[arg(long)]
    lambdas: Option<PathBuf>,
}

fn parse_kernel(s: &str) -> Result<KernelFamily, String> {
    s.parse::<KernelFamily>().map_err(|e| e.to_string())
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn cmd_test(args: &TestArgs) -> Result<(), CliError> {
    check_alpha(args.alpha)?;
    let config = args.kernel.config()?;
    let table = read_table(&args.input)?;
    let x = SampleMatrix::from_rows(&table.rows)?;
    let result = run_test(&x, &config).map_err(|e| match e.root() {
        ellipkit::Error::ZeroRadius { row } => CliError::Data(format!(
            "{}: line {} (data row {}) equals the sample mean, so its direction is undefined",
            args.input.display(),
            table.lines[*row],
            row + 1
        )),
        _ => CliError::from(e),
    })?;

    let top = result.n.min(REPORTED_EIGENVALUES);
    let lambdas = result.eigenvalues.lambdas();
    let reject = result.rejects_at(args.alpha);
    let report = json!({
        "statistic": result.statistic,
        "p_value": result.p_value,
        "n": result.n,
        "d": result.d,
        "gamma_u": result.gamma_u,
        "gamma_theta": result.gamma_theta,
        "ridge": result.ridge,
        "kernel": result.kernel_family.to_string(),
        "eigenvalues": &lambdas[..top.min(lambdas.len())],
        "alpha": args.alpha,
        "reject_at_alpha": reject,
    });
    write_json(&args.output, &report)?;
    println!(
        "n={} d={} statistic={:.4} p-value={:.4}: {} at alpha={}",
        result.n,
        result.d,
        result.statistic,
        result.p_value,
        if reject { "reject ellipticity" } else { "do not reject" },
        args.alpha
    );
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let kind = match (args.kind, args.df) {
        (GenKind::Null, _) => ScenarioKind::NullGaussian,
        (GenKind::Alt, Some(df)) if df > 0 => ScenarioKind::AltChisq { df },
        (GenKind::Alt, _) => return Err(CliError::Usage("--kind alt needs --df >= 1".into())),
    };
    let scenario = Scenario {
        kind,
        n: args.n,
        d: args.d,
        master_seed: args.seed,
    };
    let x = scenario
        .generate_replicate(0)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let m = x.matrix();
    let rows = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect());
    write_table(&args.output, &default_header(args.d), rows)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    check_alpha(args.alpha)?;
    let config = args.kernel.config()?;
    let grid = grid::parse_grid(&args.grid).map_err(CliError::Usage)?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be >= 1".into()));
    }
    let cells = grid.cells();
    if let Some((n, d, _)) = cells.iter().find(|(n, d, _)| *d < 2 || n <= d) {
        return Err(CliError::Usage(format!("grid cell n={n}, d={d} needs n > d >= 2")));
    }
    std::fs::create_dir_all(&args.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.output_dir.display())))?;

    let mut summary = Vec::new();
    let mut long_rows = Vec::new();
    let mut short_cells = Vec::new();
    for (n, d, kind) in cells {
        let scenario = Scenario {
            kind,
            n,
            d,
            master_seed: args.seed,
        };
        let start = Instant::now();
        let report = run_experiment(&scenario, args.reps, args.alpha, &config)?;
        let label = kind.label();
        let df = kind.df().map(|v| v.to_string()).unwrap_or_default();
        eprintln!(
            "n={n} d={d} {label}: rejection rate {:.4} ({}/{} succeeded, {:.1}s)",
            report.rejection_rate,
            report.succeeded(),
            args.reps,
            start.elapsed().as_secs_f64()
        );
        for (replicate, p) in report.replicates.iter().zip(&report.p_values) {
            long_rows.push(vec![
                n.to_string(),
                d.to_string(),
                label.clone(),
                df.clone(),
                replicate.to_string(),
                p.to_string(),
            ]);
        }
        if (report.succeeded() as f64) < MIN_SUCCESS_SHARE * args.reps as f64 {
            short_cells.push(format!("n={n} d={d} {label}"));
        }
        summary.push(json!({
            "n": n,
            "d": d,
            "kind": label,
            "df": kind.df(),
            "reps": args.reps,
            "succeeded": report.succeeded(),
            "rejection_rate": report.rejection_rate,
            "failures": report.failures,
        }));
    }

    let json_path = args.output_dir.join("summary.json");
    write_json(
        &json_path,
        &json!({ "alpha": args.alpha, "seed": args.seed, "cells": summary }),
    )?;
    write_long_csv(&args.output_dir.join("pvalues.csv"), &long_rows)?;
    if short_cells.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "fewer than {:.0}% of replicates succeeded in: {}",
            100.0 * MIN_SUCCESS_SHARE,
            short_cells.join(", ")
        )))
    }
}

fn write_long_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), CliError> {
    let fail = |e: csv::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["n", "d", "kind", "df", "replicate", "p_value"])
        .map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush()
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_boxcox(args: &BoxcoxArgs) -> Result<(), CliError> {
    let table = read_table(&args.input)?;
    let header = table.header.clone().unwrap_or_else(|| default_header(table.columns()));
    let mut lambdas = Vec::with_capacity(table.columns());
    let mut columns = Vec::with_capacity(table.columns());
    for (j, name) in header.iter().enumerate() {
        let column = table.column(j);
        if let Some(i) = column.iter().position(|v| !(*v > 0.0)) {
            return Err(CliError::Data(format!(
                "column {} ({}): row {} is {}, Box-Cox needs positive values",
                j + 1,
                name,
                i + 1,
                column[i]
            )));
        }
        let fit = |e: ellipkit::Error| CliError::Data(format!("column {} ({name}): {e}", j + 1));
        let lambda = boxcox_fit(&column).map_err(fit)?;
        columns.push(boxcox_apply(&column, lambda).map_err(fit)?);
        lambdas.push(lambda);
    }
    let rows = (0..table.rows.len()).map(|i| columns.iter().map(|c| c[i]).collect());
    write_table(&args.output, &header, rows)?;

    let report = json!({ "columns": header, "lambdas": lambdas });
    match &args.lambdas {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("lambdas serialize"));
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Boxcox(a) => cmd_boxcox(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command-line front end: `fit` and `simulate` subcommands.

use crate::data::{build_dataset, detect_model_kind, Table};
use crate::error::{Error, ErrorClass, Result};
use crate::estimators::fit_all;
use crate::inference::{homogeneity_test, symmetry_test, CovariateSel, SymmetryMode, WaldResult};
use crate::model::{normalize_tau, tau_label, CoefStat, FitResult, ModelSpec, ScaleSource, DEFAULT_REPS};
use crate::predict::{predict, PredictRequest, PredictionSet};
use crate::simulate::{generate, run_benchmark, BenchConfig, BenchTable, Dgp};
use crate::smoothing::Bandwidth;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ldvqr", version, about = "Quantile regression for censored and binary outcomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit quantile regressions to a CSV file.
    Fit(FitArgs),
    /// Simulate the benchmark designs and compare naive and corrected fits.
    Simulate(SimArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV (header row; "NA" or empty cells are missing).
    pub input: PathBuf,
    /// Dependent variable.
    #[arg(long)]
    pub dep: String,
    /// Covariates; an intercept is always added.
    #[arg(long, num_args = 1..)]
    pub cov: Vec<String>,
    /// Quantiles, as fractions or percentages.
    #[arg(long, num_args = 1.., default_values_t = [50.0], allow_negative_numbers = true)]
    pub tau: Vec<f64>,
    /// Lower censoring limit.
    #[arg(long, allow_negative_numbers = true)]
    pub ll: Option<f64>,
    /// Upper censoring limit.
    #[arg(long, allow_negative_numbers = true)]
    pub ul: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    /// Smoothing bandwidth of the objective (default: rule of thumb).
    #[arg(long)]
    pub bwidth: Option<f64>,
    /// Smoothing bandwidth of the probability predictions (default: bwidth).
    #[arg(long)]
    pub pbwidth: Option<f64>,
    /// Prefix for censored-quantile prediction columns.
    #[arg(long)]
    pub qcen: Option<String>,
    /// Prefix for censoring-probability columns.
    #[arg(long)]
    pub pcen: Option<String>,
    /// Prefix for P(y=1|x) columns.
    #[arg(long)]
    pub p1: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the input rows plus prediction columns.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Test equality of a covariate's coefficient across quantiles ("ALL" for every covariate).
    #[arg(long)]
    pub homogeneity: Option<String>,
    /// Symmetry test distances delta around the median.
    #[arg(long, num_args = 1..)]
    pub symmetry: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SymMode::Averaged)]
    pub symmetry_mode: SymMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SymMode {
    PerDelta,
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DgpName {
    Censored,
    Binary,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, value_enum)]
    pub dgp: DgpName,
    /// Heteroscedastic censored design.
    #[arg(long)]
    pub heter: bool,
    /// Censored design pooling homoscedastic and heteroscedastic halves.
    #[arg(long, conflicts_with = "heter")]
    pub pooled: bool,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, alias = "tau", num_args = 1.., default_values_t = [20.0, 50.0, 80.0])]
    pub taus: Vec<f64>,
    /// Monte Carlo repetitions.
    #[arg(long, default_value_t = 20)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Benchmark table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Benchmark summary as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write one simulated dataset (x, y, observed outcome) as CSV.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Caps rayon's global pool from `LDVQR_THREADS` (0 or unset: automatic).
pub fn init_threads() {
    if let Some(n) = std::env::var("LDVQR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Parses `argv` and runs the requested subcommand; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{}", text.lines().next().unwrap_or("usage error")).and_then(|_| writeln!(err))
            };
            return code;
        }
    };
    let res = match &cli.command {
        Command::Fit(a) => run_fit(a, out, err),
        Command::Simulate(a) => run_simulate(a, out, err),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Seven significant digits; "." for undefined values.
pub fn sig7(v: f64) -> String {
    if v.is_nan() {
        return ".".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-5..=9).contains(&mag) {
        return format!("{v:.6e}");
    }
    let decimals = (6 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

struct RawCsv {
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

fn read_csv(path: &Path) -> Result<RawCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.iter().map(str::to_string).collect();
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(RawCsv { headers, records })
}

fn parse_cell(s: &str) -> Option<f64> {
    if s.is_empty() || s == "NA" || s == "." {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

fn numeric_table(raw: &RawCsv, wanted: &[&str]) -> Result<Table> {
    let mut t = Table::new();
    for &name in wanted {
        let j = raw
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        let mut col = Vec::with_capacity(raw.records.len());
        for (i, rec) in raw.records.iter().enumerate() {
            let cell = rec.get(j).unwrap_or("");
            col.push(parse_cell(cell).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "column {name}, row {}: '{cell}' is not numeric",
                    i + 1
                ))
            })?);
        }
        t.push(name, col)?;
    }
    Ok(t)
}

fn parse_taus(raw: &[f64]) -> Result<Vec<f64>> {
    let mut taus = raw.iter().map(|&v| normalize_tau(v)).collect::<Result<Vec<_>>>()?;
    taus.sort_by(f64::total_cmp);
    if taus.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-12) {
        return Err(Error::InvalidSpec("duplicate quantiles".into()));
    }
    Ok(taus)
}

/// Translates parsed flags into a validated model specification.
pub fn build_spec(args: &FitArgs, y: &[f64]) -> Result<ModelSpec> {
    let taus = parse_taus(&args.tau)?;
    if let (Some(lo), Some(hi)) = (args.ll, args.ul) {
        if lo >= hi {
            return Err(Error::InvalidSpec(format!("ll ({lo}) must be below ul ({hi})")));
        }
    }
    let kind = detect_model_kind(y, args.ll, args.ul)?;
    let mut spec = ModelSpec::new(kind, taus).with_reps(args.reps).with_seed(args.seed);
    spec.lower = args.ll.unwrap_or(f64::NEG_INFINITY);
    spec.upper = args.ul.unwrap_or(f64::INFINITY);
    spec.bwidth = args.bwidth;
    spec.pbwidth = args.pbwidth;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Serialize)]
pub struct TauReport {
    pub tau: f64,
    pub converged: bool,
    pub objective: f64,
    pub coef: Vec<CoefStat>,
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub test: &'static str,
    pub target: String,
    #[serde(flatten)]
    pub result: WaldResult,
}

#[derive(Debug, Serialize)]
pub struct PredictionReport {
    pub columns: Vec<String>,
    pub m: usize,
    pub pbw: f64,
    pub crossing_fraction: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub title: &'static str,
    pub spec: ModelSpec,
    pub depvar: String,
    pub n: usize,
    pub sigma_hat: f64,
    pub scale_source: ScaleSource,
    pub bandwidth: Bandwidth,
    pub reps_completed: usize,
    pub reps_failed: usize,
    pub per_tau: Vec<TauReport>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub tests: Vec<TestReport>,
    pub predictions: Option<PredictionReport>,
    pub diagnostics: Vec<String>,
}

impl FitReport {
    pub fn new(fit: &FitResult, tests: Vec<TestReport>, preds: Option<&PredictionSet>) -> Self {
        let per_tau = fit
            .stats()
            .into_iter()
            .enumerate()
            .map(|(t, coef)| TauReport {
                tau: fit.coefs[t].tau,
                converged: fit.converged[t],
                objective: fit.objectives[t],
                coef,
            })
            .collect();
        FitReport {
            title: fit.spec.kind.title(),
            spec: fit.spec.clone(),
            depvar: fit.depvar.clone(),
            n: fit.n,
            sigma_hat: fit.sigma_hat,
            scale_source: fit.scale_source,
            bandwidth: fit.bandwidth,
            reps_completed: fit.reps_completed,
            reps_failed: fit.reps_failed,
            per_tau,
            v: fit.v.row_iter().map(|r| r.iter().copied().collect()).collect(),
            tests,
            predictions: preds.map(|p| PredictionReport {
                columns: p.columns.iter().map(|(n, _)| n.clone()).collect(),
                m: p.m,
                pbw: p.pbw,
                crossing_fraction: p.crossing_fraction,
            }),
            diagnostics: fit.diagnostics.clone(),
        }
    }
}

const RULE: &str = "------------------------------------------------------------------------------";

/// Coefficient table rendered from the report, so printed numbers match the JSON.
pub fn render_table(rep: &FitReport, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w)?;
    writeln!(w, "{:<48}Number of obs     = {:>10}", rep.title, rep.n)?;
    writeln!(w, "{:<48}Replications      = {:>10}", "", rep.reps_completed)?;
    writeln!(w, "{:<48}Bandwidth         = {:>10}", "", sig7(rep.bandwidth.get()))?;
    writeln!(w)?;
    writeln!(w, "{RULE}")?;
    writeln!(w, "{:>12} |   Observed   Bootstrap                         Normal-based", "")?;
    writeln!(
        w,
        "{:>12} | {:>10} {:>10} {:>8} {:>8} {:>12} {:>10}",
        rep.depvar, "Coef.", "Std. Err.", "z", "P>|z|", "[95% Conf.", "Interval]"
    )?;
    writeln!(w, "-------------+----------------------------------------------------------------")?;
    for t in &rep.per_tau {
        writeln!(w, "{:<12} |", tau_label(t.tau))?;
        for c in &t.coef {
            writeln!(
                w,
                "{:>12} | {:>10} {:>10} {:>8} {:>8} {:>12} {:>10}",
                c.name,
                sig7(c.est),
                sig7(c.se),
                sig7(c.z),
                sig7(c.p),
                sig7(c.ci_lo),
                sig7(c.ci_hi)
            )?;
        }
    }
    writeln!(w, "{RULE}")?;
    for t in &rep.tests {
        writeln!(w)?;
        writeln!(w, "Test of {} ({})", t.test, t.target)?;
        for (i, c) in t.result.constraints.iter().enumerate() {
            writeln!(w, " ({:>2})  {c}", i + 1)?;
        }
        writeln!(w, "{:>18} = {:>10}", format!("chi2({:>3})", t.result.df), sig7(t.result.statistic))?;
        writeln!(w, "{:>18} = {:>10}", "Prob > chi2", sig7(t.result.p_value))?;
        for warn in &t.result.warnings {
            writeln!(w, "note: {warn}")?;
        }
    }
    if let Some(p) = &rep.predictions {
        if let Some(f) = p.crossing_fraction {
            writeln!(w)?;
            writeln!(w, "Share of observations with crossed quantiles: {}", sig7(f))?;
        }
    }
    Ok(())
}

fn pre_check_tests(args: &FitArgs, spec: &ModelSpec) -> Result<()> {
    if let Some(h) = &args.homogeneity {
        if spec.taus.len() < 2 {
            return Err(Error::InvalidSpec("homogeneity test needs at least two quantiles".into()));
        }
        if h != "ALL" && !args.cov.contains(h) {
            return Err(Error::UnknownCovariate(h.clone()));
        }
    }
    let has = |t: f64| spec.taus.iter().any(|&s| (s - t).abs() < 1e-9);
    for &d in &args.symmetry {
        if !(d > 0.0 && d < 0.5) {
            return Err(Error::InvalidSpec(format!("symmetry delta {d} outside (0, 0.5)")));
        }
        for t in [0.5, 0.5 - d, 0.5 + d] {
            if !has(t) {
                return Err(Error::TauNotFitted(t));
            }
        }
    }
    if (args.qcen.is_some() || args.pcen.is_some() || args.p1.is_some()) && args.out_csv.is_none() {
        return Err(Error::InvalidSpec("prediction prefixes need --out-csv".into()));
    }
    Ok(())
}

fn write_predictions(path: &Path, raw: &RawCsv, rows: &[usize], set: &PredictionSet) -> Result<()> {
    let mut at = vec![None; raw.records.len()];
    for (r, &i) in rows.iter().enumerate() {
        at[i] = Some(r);
    }
    let mut wr = csv::Writer::from_path(path)?;
    let mut header = raw.headers.clone();
    header.extend(set.columns.iter().map(|(n, _)| n.clone()));
    wr.write_record(&header)?;
    for (i, rec) in raw.records.iter().enumerate() {
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        row.extend(set.columns.iter().map(|(_, v)| match at[i] {
            Some(r) => v[r].to_string(),
            None => "NA".into(),
        }));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn run_fit(args: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let raw = read_csv(&args.input)?;
    let mut wanted: Vec<&str> = vec![args.dep.as_str()];
    wanted.extend(args.cov.iter().map(String::as_str));
    let table = numeric_table(&raw, &wanted)?;
    let data = build_dataset(&table, &args.dep, &args.cov, true)?;
    let spec = build_spec(args, data.y().as_slice())?;
    pre_check_tests(args, &spec)?;

    let fit = fit_all(&data, &spec)?;

    let mut tests = Vec::new();
    if let Some(h) = &args.homogeneity {
        let sel = if h == "ALL" { CovariateSel::All } else { CovariateSel::Named(h.clone()) };
        tests.push(TestReport {
            test: "homogeneity",
            target: h.clone(),
            result: homogeneity_test(&fit, &sel)?,
        });
    }
    if !args.symmetry.is_empty() {
        let mode = match args.symmetry_mode {
            SymMode::PerDelta => SymmetryMode::PerDelta,
            SymMode::Averaged => SymmetryMode::Averaged,
        };
        let target = args.symmetry.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
        tests.push(TestReport {
            test: "symmetry",
            target,
            result: symmetry_test(&fit, &args.symmetry, mode)?,
        });
    }

    let req = PredictRequest {
        qcen: args.qcen.clone(),
        pcen: args.pcen.clone(),
        p1: args.p1.clone(),
        pbw: None,
    };
    let preds = if req.is_empty() {
        None
    } else {
        Some(predict(&fit, data.x(), &req)?)
    };

    let report = FitReport::new(&fit, tests, preds.as_ref());
    render_table(&report, out)?;
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    if let (Some(path), Some(set)) = (&args.out_csv, &preds) {
        write_predictions(path, &raw, data.rows(), set)?;
    }
    for d in &fit.diagnostics {
        writeln!(err, "note: {d}")?;
    }
    if !fit.all_converged() {
        writeln!(err, "error: not every quantile fit converged")?;
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}

#[derive(Serialize)]
struct SimReport<'a> {
    dgp: &'static str,
    n: usize,
    mc: usize,
    seed: u64,
    #[serde(flatten)]
    table: &'a BenchTable,
}

fn render_bench(t: &BenchTable, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<16} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "dgp", "tau", "estimator", "truth", "mean", "bias", "mc_se"
    )?;
    for r in &t.rows {
        writeln!(
            w,
            "{:<16} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            r.dgp,
            sig7(r.tau),
            r.estimator,
            sig7(r.truth),
            sig7(r.mean_estimate),
            sig7(r.bias),
            sig7(r.mc_se)
        )?;
    }
    Ok(())
}

pub fn run_simulate(args: &SimArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let dgp = match args.dgp {
        DgpName::Binary if args.heter || args.pooled => {
            return Err(Error::InvalidSpec("--heter/--pooled apply to the censored design".into()))
        }
        DgpName::Binary => Dgp::Binary,
        DgpName::Censored if args.pooled => Dgp::CensoredPooled,
        DgpName::Censored => Dgp::Censored { heter: args.heter },
    };
    let taus = parse_taus(&args.taus)?;
    if let Some(path) = &args.data_out {
        generate(dgp, args.n, args.seed).write_csv(File::create(path)?)?;
    }
    let cfg = BenchConfig {
        dgp,
        n: args.n,
        mc: args.mc,
        taus,
        seed: args.seed,
    };
    let table = run_benchmark(&cfg)?;
    render_bench(&table, out)?;
    if let Some(path) = &args.out {
        table.write_csv(File::create(path)?)?;
    }
    if let Some(path) = &args.json {
        write_json(
            path,
            &SimReport {
                dgp: dgp.label(),
                n: args.n,
                mc: args.mc,
                seed: args.seed,
                table: &table,
            },
        )?;
    }
    for d in &table.diagnostics {
        writeln!(err, "note: {d}")?;
    }
    Ok(0)
}

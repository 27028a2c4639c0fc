//! Command-line front end.
//!
//! Exit codes: 0 success, 1 comparison failed, 2 bad flags, 3 scenario or file
//! error, 4 engine error. Machine output goes to stdout (or `--out`), human
//! diagnostics to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::engines::{EngineConfig, EngineKind, SampleSet};
use crate::scenarios::{self, Scenario};
use crate::stats::{self, EquivalenceReport, HistogramBin, SummaryReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_EQUIVALENT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_ENGINE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "mcve",
    version,
    about = "Monte Carlo uncertainty evaluation with virtual experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Jcgm101,
    #[value(name = "mc-ve")]
    McVe,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Jcgm101 => EngineKind::Jcgm101,
            EngineArg::McVe => EngineKind::McVe,
        }
    }
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Built-in scenario id or path to a scenario JSON file
    #[arg(long)]
    scenario: String,
    #[arg(long, value_enum)]
    engine: EngineArg,
    /// Number of Monte Carlo runs
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Hypothetical measurand for mc-ve (defaults to the scenario's value)
    #[arg(long, allow_hyphen_values = true)]
    y0: Option<f64>,
    #[arg(long, default_value_t = stats::DEFAULT_COVERAGE)]
    coverage: f64,
    #[arg(long, default_value_t = stats::DEFAULT_BINS)]
    bins: usize,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram CSV output
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Raw samples, one per line
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Draw the mean of the m simulated observations directly
    #[arg(long)]
    fast_inner_loop: bool,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = stats::DEFAULT_KS_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = stats::DEFAULT_NSIGMA)]
    nsigma: f64,
}

#[derive(Debug, Subcommand)]
enum ScenariosCmd {
    /// List built-in scenarios
    List,
    /// Print a scenario as JSON
    Show { id: String },
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an engine on a scenario
    Run(RunArgs),
    /// Compare two sample files for statistical equivalence
    Compare(CompareArgs),
    /// Inspect built-in scenarios
    #[command(subcommand)]
    Scenarios(ScenariosCmd),
}

/// Report written by `run`. Field order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub scenario_id: String,
    pub engine: EngineKind,
    pub n: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    pub summary: SummaryReport,
    pub wall_time_seconds: f64,
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// Parse `args` (including the program name) and execute.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, stdout, stderr),
        Command::Compare(a) => cmd_compare(&a, stdout),
        Command::Scenarios(c) => cmd_scenarios(&c, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))
}

fn io_fail(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display()))
}

fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<(), Failure> {
    let mut w = create(path)?;
    let mut body = String::from("bin_low,bin_high,count\n");
    for b in bins {
        body.push_str(&format!("{},{},{}\n", b.bin_low, b.bin_high, b.count));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_fail(path))
}

/// One value per line with 17 significant digits.
pub fn format_samples(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for v in values {
        out.push_str(&format!("{v:.16e}\n"));
    }
    out
}

fn write_samples(path: &Path, set: &SampleSet) -> Result<(), Failure> {
    let mut w = create(path)?;
    w.write_all(format_samples(&set.values).as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_fail(path))
}

fn cmd_run(a: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    if a.n < 2 {
        return Err(fail(EXIT_USAGE, "--n must be at least 2"));
    }
    if !(a.coverage > 0.0 && a.coverage < 1.0) {
        return Err(fail(EXIT_USAGE, "--coverage must lie in (0, 1)"));
    }
    if a.bins == 0 {
        return Err(fail(EXIT_USAGE, "--bins must be at least 1"));
    }
    if a.workers == Some(0) {
        return Err(fail(EXIT_USAGE, "--workers must be at least 1"));
    }
    if a.y0.is_some_and(|v| !v.is_finite()) {
        return Err(fail(EXIT_USAGE, "--y0 must be finite"));
    }
    let scenario: Scenario =
        scenarios::resolve(&a.scenario).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    let engine = EngineKind::from(a.engine);
    let y0 = a.y0.unwrap_or(scenario.default_y0());
    let mut cfg = EngineConfig::new(a.n, a.seed)
        .y0(y0)
        .literal_inner_loop(!a.fast_inner_loop);
    cfg.workers = a.workers;

    let start = Instant::now();
    let set = scenario
        .run(engine, &cfg)
        .map_err(|e| fail(EXIT_ENGINE, e.to_string()))?;
    let summary =
        stats::summarize(&set, a.coverage, a.bins).map_err(|e| fail(EXIT_ENGINE, e.to_string()))?;
    let wall_time_seconds = start.elapsed().as_secs_f64();

    let report = RunResult {
        scenario_id: set.scenario_id.clone(),
        engine,
        n: set.n,
        master_seed: set.master_seed,
        y0: set.y0,
        summary,
        wall_time_seconds,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(json.as_bytes())
                .and_then(|_| w.flush())
                .map_err(io_fail(path))?;
        }
        None => stdout
            .write_all(json.as_bytes())
            .map_err(|e| fail(EXIT_INPUT, e.to_string()))?,
    }
    if let Some(path) = &a.hist {
        write_histogram(path, &report.summary.histogram)?;
    }
    if let Some(path) = &a.samples {
        write_samples(path, &set)?;
    }
    let _ = writeln!(
        stderr,
        "{} {} n={} mean={:.6} std={:.6} ci=[{:.6}, {:.6}] in {:.2}s",
        report.scenario_id,
        engine,
        report.n,
        report.summary.mean,
        report.summary.std,
        report.summary.ci_low,
        report.summary.ci_high,
        wall_time_seconds
    );
    Ok(EXIT_OK)
}

/// Read a newline-delimited sample file; blank lines are skipped.
pub fn read_samples(path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| format!("{}:{}: not a number: {line:?}", path.display(), i + 1))?;
        if !v.is_finite() {
            return Err(format!("{}:{}: non-finite value", path.display(), i + 1));
        }
        values.push(v);
    }
    if values.len() < 2 {
        return Err(format!(
            "{}: need at least 2 samples, found {}",
            path.display(),
            values.len()
        ));
    }
    Ok(values)
}

fn cmd_compare(a: &CompareArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(fail(EXIT_USAGE, "--alpha must lie in (0, 1)"));
    }
    if !(a.nsigma > 0.0) {
        return Err(fail(EXIT_USAGE, "--nsigma must be positive"));
    }
    let xs = read_samples(&a.a).map_err(|e| fail(EXIT_INPUT, e))?;
    let ys = read_samples(&a.b).map_err(|e| fail(EXIT_INPUT, e))?;
    let report: EquivalenceReport = stats::equivalence(&xs, &ys, a.alpha, a.nsigma)
        .map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    stdout
        .write_all(json.as_bytes())
        .map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    Ok(if report.pass {
        EXIT_OK
    } else {
        EXIT_NOT_EQUIVALENT
    })
}

fn cmd_scenarios(c: &ScenariosCmd, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let out = match c {
        ScenariosCmd::List => {
            let mut s = String::new();
            for id in scenarios::builtin_ids() {
                let sc = scenarios::builtin(id).expect("built-in id");
                let desc = sc.description().unwrap_or("");
                let first = desc.split(". ").next().unwrap_or(desc);
                s.push_str(&format!("{id}\t{first}\n"));
            }
            s
        }
        ScenariosCmd::Show { id } => {
            let sc = scenarios::builtin(id)
                .ok_or_else(|| fail(EXIT_INPUT, format!("unknown scenario `{id}`")))?;
            let mut s = sc.to_json_pretty();
            s.push('\n');
            s
        }
    };
    stdout
        .write_all(out.as_bytes())
        .map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("mcve").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn bad_flags_exit_2() {
        assert_eq!(call(&["run", "--scenario", "generic"]).0, EXIT_USAGE);
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        let (code, _, _) = call(&[
            "run",
            "--scenario",
            "generic",
            "--engine",
            "mc-ve",
            "--n",
            "1",
            "--seed",
            "0",
        ]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = call(&[
            "run",
            "--scenario",
            "generic",
            "--engine",
            "bogus",
            "--n",
            "10",
            "--seed",
            "0",
        ]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn negative_y0_accepted() {
        let (code, out, _) = call(&[
            "run",
            "--scenario",
            "generic",
            "--engine",
            "mc-ve",
            "--n",
            "10",
            "--seed",
            "7",
            "--y0",
            "-100",
        ]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["y0"], -100.0);
        assert_eq!(v["engine"], "mc_ve");
    }

    #[test]
    fn json_key_order_is_fixed() {
        let (_, out, _) = call(&[
            "run",
            "--scenario",
            "generic",
            "--engine",
            "jcgm101",
            "--n",
            "10",
            "--seed",
            "1",
        ]);
        let keys = [
            "scenario_id",
            "engine",
            "n",
            "master_seed",
            "summary",
            "wall_time_seconds",
        ];
        let pos: Vec<usize> = keys
            .iter()
            .map(|k| out.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{out}");
        assert!(!out.contains("\"y0\""));
    }

    #[test]
    fn scenario_listing() {
        let (code, out, _) = call(&["scenarios", "list"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("generic") && out.contains("mass_calibration"));
        let (code, out, _) = call(&["scenarios", "show", "generic"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("\"kernel\": \"(1+z)*y\""));
        assert_eq!(call(&["scenarios", "show", "nope"]).0, EXIT_INPUT);
    }

    #[test]
    fn samples_format_round_trips() {
        let vals = [
            6.061358035703155,
            -1e-300,
            1.0 / 3.0,
            123_456_789.123_456_79,
        ];
        let text = format_samples(&vals);
        let back: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, vals);
        assert!(text.lines().all(|l| l
            .trim_start_matches('-')
            .starts_with(|c: char| c.is_ascii_digit())));
    }
}

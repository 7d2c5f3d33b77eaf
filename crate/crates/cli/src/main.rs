//! `dpgs` command-line front end.
//!
//! Exit codes: 0 success (or every audit passed), 1 an audit failed,
//! 2 invalid parameters, unreadable input or any other usage error.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dpgs::audit::{run_check, AuditReport, to_json_lines, AuditMode, Check, SuiteConfig, FORMAT_VERSION};
use dpgs::data::Dataset;
use dpgs::linalg::{spectral_decomp, Matrix};
use dpgs::privacy::{lambda0_for, plan_with, LogBase, PlanConfig, PlanMode, PrivacyParams, SamplerPlan};
use dpgs::rng::RngStream;
use dpgs::samplers::{cov_aware_mean_with, sample_unbounded, CovAwareOptions, RunTrace, SampleResult};

/// `k` used by `--mode relaxed`.
const RELAXED_K: usize = 5;

#[derive(Parser)]
#[command(name = "dpgs", version, about = "Private sampling from Gaussians with unknown mean and covariance")]
struct Cli {
    /// Cap on worker threads for parallel audits.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the sample sizes and parameters for a privacy budget.
    Plan(PlanCmd),
    /// Write a synthetic Gaussian dataset as CSV.
    Gen(GenCmd),
    /// Draw one private sample from a dataset's fitted Gaussian.
    Sample(SampleCmd),
    /// Release a private estimate of a dataset's mean.
    Mean(MeanCmd),
    /// Run audit checks and write JSON-lines reports.
    Audit(AuditCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Strict,
    Relaxed,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogBaseArg {
    Natural,
    Two,
}

#[derive(Args, Clone)]
struct SeedArgs {
    /// Falls back to `DPGS_SEED`, then 0.
    #[arg(long, env = "DPGS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

#[derive(Args, Clone)]
struct PlanArgs {
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, value_enum, default_value = "natural")]
    log_base: LogBaseArg,
    #[arg(long, value_enum, default_value = "standard")]
    mode: ModeArg,
}

#[derive(Args)]
struct PlanCmd {
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenCmd {
    /// Number of rows.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Comma-separated mean (default zero).
    #[arg(long, allow_hyphen_values = true)]
    mean: Option<String>,
    /// Comma-separated covariance, row-major `d×d` (default identity).
    #[arg(long, allow_hyphen_values = true)]
    cov: Option<String>,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleCmd {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeanCmd {
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, value_enum, default_value = "natural")]
    log_base: LogBaseArg,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditCmd {
    /// Check id (repeatable); all checks when omitted.
    #[arg(long)]
    check: Vec<String>,
    /// Overrides every check's default trial count.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, default_value = "relaxed")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, env = "DPGS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a CSV summary (one row per check).
    #[arg(long)]
    summary: Option<PathBuf>,
}

/// Usage-level failure: reported on stderr with exit code 2.
struct UsageError(String);

impl<E: std::fmt::Display> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, UsageError>;

/// Validated parameters shared by the plan-driven commands.
struct RunConfig {
    cfg: PlanConfig,
}

impl RunConfig {
    fn from_args(a: &PlanArgs) -> CliResult<Self> {
        let params = PrivacyParams::new(a.epsilon, a.delta)?;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(UsageError(format!("alpha must lie in (0, 1), got {}", a.alpha)));
        }
        if a.dim == 0 {
            return Err(UsageError("dim must be >= 1".into()));
        }
        let mode = match a.mode {
            ModeArg::Standard => PlanMode::Standard,
            ModeArg::Strict => PlanMode::Strict,
            ModeArg::Relaxed => PlanMode::Relaxed { k: RELAXED_K },
        };
        let cfg = PlanConfig::new(a.alpha, params, a.dim)
            .with_constants(a.c1, a.c2)
            .with_log_base(log_base(a.log_base))
            .with_mode(mode);
        Ok(RunConfig { cfg })
    }

    fn plan(&self) -> CliResult<SamplerPlan> {
        Ok(plan_with(&self.cfg)?)
    }
}

fn log_base(a: LogBaseArg) -> LogBase {
    match a {
        LogBaseArg::Natural => LogBase::Natural,
        LogBaseArg::Two => LogBase::Two,
    }
}

fn write_output(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| UsageError(format!("{}: {e}", p.display()))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn plan_table(p: &SamplerPlan) -> String {
    let rows = [
        ("lambda0", format!("{:.6}", p.lambda0)),
        ("n1", p.n1.to_string()),
        ("n2", p.n2.to_string()),
        ("n", p.n.to_string()),
        ("k", p.k.to_string()),
        ("M", p.m.to_string()),
    ];
    rows.iter().map(|(k, v)| format!("{k:<8} {v}\n")).collect()
}

fn cmd_plan(c: &PlanCmd) -> CliResult<()> {
    let plan = RunConfig::from_args(&c.plan)?.plan()?;
    let doc = json!({ "format_version": FORMAT_VERSION, "plan": plan });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    write_output(&c.out, &text)?;
    // The table goes wherever the JSON does not.
    let table = plan_table(&plan);
    if c.out.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    Ok(())
}

fn parse_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| UsageError(format!("{what}: cannot parse '{t}' as a number")))
        })
        .collect()
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn dataset_csv(x: &Dataset) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((1..=x.d()).map(|j| format!("x{j}")))?;
    for i in 0..x.n() {
        w.write_record(x.row(i).iter().map(|&v| fmt_f64(v)))?;
    }
    let bytes = w.into_inner().map_err(|e| UsageError(e.to_string()))?;
    Ok(String::from_utf8(bytes)?)
}

fn cmd_gen(c: &GenCmd) -> CliResult<()> {
    let d = c.dim;
    if d == 0 {
        return Err(UsageError("dim must be >= 1".into()));
    }
    let mean = match &c.mean {
        Some(s) => parse_list(s, "mean")?,
        None => vec![0.0; d],
    };
    if mean.len() != d {
        return Err(UsageError(format!("mean has {} entries, dim is {d}", mean.len())));
    }
    let cov = match &c.cov {
        Some(s) => {
            let v = parse_list(s, "cov")?;
            if v.len() != d * d {
                return Err(UsageError(format!("cov has {} entries, needs {}", v.len(), d * d)));
            }
            Matrix::from_row_slice(d, d, &v)
        }
        None => Matrix::identity(d, d),
    };
    let dec = spectral_decomp(&cov)?;
    if dec.min_eig() <= 0.0 {
        return Err(dpgs::Error::NotPd(dec.min_eig()).into());
    }
    let mut rng = RngStream::new(c.seed.seed, c.seed.stream);
    let x = Dataset::gaussian(&mut rng, c.n, &mean, &cov)?;
    write_output(&c.out, &dataset_csv(&x)?)
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let d = r.headers()?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return Err(UsageError(format!("row {} has {} fields, header has {d}", i + 1, rec.len())));
        }
        for f in rec.iter() {
            // The offending value is not echoed: rows are private data.
            let v = f
                .trim()
                .parse::<f64>()
                .map_err(|_| UsageError(format!("row {}: non-numeric field", i + 1)))?;
            values.push(v);
        }
        n += 1;
    }
    Ok(Dataset::new(n, d, values)?)
}

fn result_json(result: &SampleResult, trace: &RunTrace) -> CliResult<String> {
    let mut doc = serde_json::to_value(result)?;
    if let Value::Object(m) = &mut doc {
        m.insert("format_version".into(), json!(FORMAT_VERSION));
        m.insert("trace".into(), serde_json::to_value(trace)?);
    }
    Ok(serde_json::to_string(&doc)? + "\n")
}

fn cmd_sample(c: &SampleCmd) -> CliResult<()> {
    let plan = RunConfig::from_args(&c.plan)?.plan()?;
    let x = read_dataset(&c.input)?;
    if x.d() != plan.d {
        return Err(UsageError(format!("dataset has {} columns, dim is {}", x.d(), plan.d)));
    }
    let mut rng = RngStream::new(c.seed.seed, c.seed.stream);
    let (result, trace) = sample_unbounded(&x, &plan, &mut rng)?;
    write_output(&c.out, &result_json(&result, &trace)?)
}

fn cmd_mean(c: &MeanCmd) -> CliResult<()> {
    let params = PrivacyParams::new(c.epsilon, c.delta)?;
    if !(c.alpha > 0.0 && c.alpha < 1.0) {
        return Err(UsageError(format!("alpha must lie in (0, 1), got {}", c.alpha)));
    }
    let x = read_dataset(&c.input)?;
    let lambda0 = lambda0_for(x.d(), x.n(), c.alpha);
    let mut rng = RngStream::new(c.seed.seed, c.seed.stream);
    let opts = CovAwareOptions {
        log_base: log_base(c.log_base),
        ..Default::default()
    };
    let (result, trace) = cov_aware_mean_with(&x, &params, lambda0, &opts, &mut rng)?;
    write_output(&c.out, &result_json(&result, &trace)?)
}

fn summary_csv(reports: &[AuditReport]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["format_version", "check_id", "verdict", "trials", "failures", "seed", "mode"])?;
    for r in reports {
        w.write_record([
            r.format_version.to_string(),
            r.check_id.clone(),
            if r.passed() { "pass".into() } else { "fail".into() },
            r.trials.to_string(),
            r.failures.to_string(),
            r.seed.to_string(),
            r.mode.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| UsageError(e.to_string()))?;
    Ok(String::from_utf8(bytes)?)
}

fn cmd_audit(c: &AuditCmd) -> CliResult<bool> {
    let checks: Vec<Check> = if c.check.is_empty() || c.check.iter().any(|s| s == "all") {
        Check::ALL.to_vec()
    } else {
        c.check.iter().map(|s| s.parse::<Check>()).collect::<Result<_, _>>()?
    };
    let mode = match c.mode {
        ModeArg::Relaxed => AuditMode::Relaxed,
        ModeArg::Strict => AuditMode::Strict,
        ModeArg::Standard => return Err(UsageError("audit mode must be relaxed or strict".into())),
    };
    if !(c.alpha > 0.0 && c.alpha < 1.0) {
        return Err(UsageError(format!("alpha must lie in (0, 1), got {}", c.alpha)));
    }
    if c.trials == Some(0) {
        return Err(UsageError("trials must be >= 1".into()));
    }
    let mut cfg = SuiteConfig::new(c.seed);
    cfg.trials = c.trials;
    cfg.mode = mode;
    cfg.alpha = c.alpha;
    cfg.params = PrivacyParams::new(c.epsilon, c.delta)?;
    let reports = checks
        .iter()
        .map(|&ch| run_check(ch, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    write_output(&c.out, &to_json_lines(&reports))?;
    if let Some(p) = &c.summary {
        std::fs::write(p, summary_csv(&reports)?).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
    }
    for r in &reports {
        eprintln!("{:<20} {}", r.check_id, if r.passed() { "pass" } else { "FAIL" });
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn run(cli: &Cli) -> CliResult<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(UsageError("threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Plan(c) => cmd_plan(c).map(|_| true),
        Command::Gen(c) => cmd_gen(c).map(|_| true),
        Command::Sample(c) => cmd_sample(c).map(|_| true),
        Command::Mean(c) => cmd_mean(c).map(|_| true),
        Command::Audit(c) => cmd_audit(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

//! `ipc-bench`: generate synthetic campaigns, write transformed training
//! sets and run cross-validated profit Qini benchmarks.
//!
//! Exit status: 0 success, 1 usage/config/IO error, 2 invalid data,
//! 3 every benchmarked method failed.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipc_uplift::data_model::{validate, write_csv};
use ipc_uplift::evaluation::mean_std;
use ipc_uplift::{
    crvtw_transform, generate_campaign, ipc_transform, load_csv, rdt_targets, run_benchmark, BenchMethod, BenchReport,
    GroundTruth, Method, UpliftDataset, UpliftError,
};
use serde::Serialize;

use crate::config::RunConfig;

const THREADS_ENV: &str = "IPC_THREADS";

#[derive(Parser)]
#[command(name = "ipc-bench", version, about = "Profit uplift modeling benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a discount coupon campaign and write it as CSV.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `campaign.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-row ground truth CSV path.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Cross-validated Qini benchmark of the selected methods.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, conflicts_with = "holdout")]
        folds: Option<usize>,
        /// Test fraction of a single stratified split.
        #[arg(long)]
        holdout: Option<f64>,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Qini curve CSV path (first fold).
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Ground truth CSV from `gen`; enables the `oracle` method.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Write the transformed regression set of ipc, crvtw or rdt.
    Transform {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    AllMethodsFailed,
}

impl From<UpliftError> for Failure {
    fn from(e: UpliftError) -> Self {
        match e {
            UpliftError::Csv(_)
            | UpliftError::MalformedCell { .. }
            | UpliftError::MissingColumn(_)
            | UpliftError::MissingPropensity
            | UpliftError::ColumnCount { .. }
            | UpliftError::InvalidData(_)
            | UpliftError::TooFewRows { .. }
            | UpliftError::EmptyArm(_)
            | UpliftError::StratumTooSmall { .. } => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Gen {
            config,
            seed,
            out,
            truth,
        } => cmd_gen(config.as_deref(), seed, out, truth),
        Command::Bench {
            data,
            config,
            seed,
            methods,
            folds,
            holdout,
            out,
            curves,
            truth,
        } => {
            let overrides = BenchOverrides {
                seed,
                methods,
                folds,
                holdout,
                out,
                curves,
                truth,
            };
            cmd_bench(&data, config.as_deref(), overrides)
        }
        Command::Transform { data, method, out } => cmd_transform(&data, &method, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::AllMethodsFailed) => {
            eprintln!("error: every method failed");
            ExitCode::from(3)
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed write leaves nothing behind.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), UpliftError>) -> CmdResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| Failure::Usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn cmd_gen(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>, truth: Option<PathBuf>) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.campaign.seed = s;
    }
    let out = out
        .or(cfg.output.data.clone())
        .ok_or_else(|| Failure::Usage("no output path (--out or output.data)".into()))?;
    let truth_path = truth.or(cfg.output.truth.clone());
    cfg.campaign.validate()?;

    let (dataset, gt) = generate_campaign(&cfg.campaign, None)?;
    if dataset.is_empty() {
        eprintln!("warning: n = 0, writing a header-only file");
    }
    write_atomic(&out, |w| write_csv(&dataset, w))?;
    if let Some(p) = &truth_path {
        write_atomic(p, |w| gt.write_csv(w))?;
    }

    let rate = |t| {
        dataset
            .conversion_rate(t)
            .map_or_else(|| "n/a".to_string(), |r| format!("{:.4}%", 100.0 * r))
    };
    println!(
        "wrote {} rows to {} (seed {})",
        dataset.len(),
        out.display(),
        cfg.campaign.seed
    );
    println!(
        "conversion rate: control {} ({} rows), treated {} ({} rows)",
        rate(0),
        dataset.count_arm(0),
        rate(1),
        dataset.count_arm(1)
    );
    Ok(())
}

struct BenchOverrides {
    seed: Option<u64>,
    methods: Option<Vec<String>>,
    folds: Option<usize>,
    holdout: Option<f64>,
    out: Option<PathBuf>,
    curves: Option<PathBuf>,
    truth: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a RunConfig,
    data: String,
    #[serde(flatten)]
    report: &'a BenchReport,
}

fn load_checked(data: &Path, default_propensity: Option<f64>) -> Result<UpliftDataset, Failure> {
    let dataset = load_csv(data, default_propensity)?;
    let violations = validate(&dataset);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Err(Failure::Data(format!(
            "{} has {} validation violation(s)",
            data.display(),
            violations.len()
        )));
    }
    Ok(dataset)
}

fn cmd_bench(data: &Path, config: Option<&Path>, o: BenchOverrides) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.methods {
        cfg.methods = m;
    }
    if let Some(k) = o.folds {
        cfg.folds = k;
        cfg.holdout = None;
    }
    if o.holdout.is_some() {
        cfg.holdout = o.holdout;
    }
    cfg.output.report = o.out.or(cfg.output.report);
    cfg.output.curves = o.curves.or(cfg.output.curves);
    cfg.output.truth = o.truth.or(cfg.output.truth);
    let methods = cfg.bench_methods()?;
    cfg.gbm.validate()?;

    let dataset = load_checked(data, None)?;
    let truth = match &cfg.output.truth {
        Some(p) => {
            let f = File::open(p).map_err(|source| UpliftError::Io { path: p.clone(), source })?;
            Some(GroundTruth::read_csv(BufReader::new(f), cfg.campaign.propensity)?)
        }
        None => None,
    };

    let report = run_benchmark(&dataset, &methods, cfg.split(), cfg.seed, &cfg.gbm, truth.as_ref())?;
    print_summary(&report);

    if let Some(p) = &cfg.output.report {
        let file = ReportFile {
            config: &cfg,
            data: data.display().to_string(),
            report: &report,
        };
        let text = serde_json::to_string_pretty(&file).expect("report serializes");
        write_atomic(p, |w| {
            writeln!(w, "{text}").map_err(|source| UpliftError::Io { path: p.clone(), source })
        })?;
    }
    if let Some(p) = &cfg.output.curves {
        write_atomic(p, |w| report.write_curves_csv(w))?;
    }

    for m in &report.methods {
        for f in &m.folds {
            if let Some(e) = &f.error {
                eprintln!("warning: {} fold {}: {e}", m.method, f.fold);
            }
        }
    }
    // the random and oracle baselines do not count as methods that succeeded
    let baseline = |m: BenchMethod| matches!(m, BenchMethod::Random | BenchMethod::Oracle);
    let any_ok = report
        .methods
        .iter()
        .filter(|m| !baseline(m.method))
        .any(|m| m.succeeded());
    let only_baselines = methods.iter().all(|&m| baseline(m));
    if any_ok || only_baselines {
        Ok(())
    } else {
        Err(Failure::AllMethodsFailed)
    }
}

fn print_summary(report: &BenchReport) {
    let ipc_time = report
        .method(BenchMethod::Fitted(Method::Ipc))
        .map(|m| mean_std(&m.runtimes()).0);
    println!(
        "{:<12} {:>22} {:>12} {:>10}",
        "method", "qini (mean ± std)", "seconds", "vs ipc"
    );
    for m in &report.methods {
        let (q, sd) = mean_std(&m.coefficients());
        let (t, _) = mean_std(&m.runtimes());
        let rel = ipc_time.map_or_else(|| "-".to_string(), |base| format!("{:.2}x", t / base));
        let failed = m.folds.iter().filter(|f| f.error.is_some()).count();
        let note = if failed > 0 {
            format!("  ({failed} fold(s) failed)")
        } else {
            String::new()
        };
        println!(
            "{:<12} {:>22} {:>12.3} {:>10}{note}",
            m.method.name(),
            format!("{q:.4} ± {sd:.4}"),
            t,
            rel
        );
    }
}

fn cmd_transform(data: &Path, method: &str, out: &Path) -> CmdResult {
    let method: Method = method.parse()?;
    let transform = match method {
        Method::Ipc => ipc_transform,
        Method::Crvtw => crvtw_transform,
        Method::Rdt => rdt_targets,
        other => {
            return Err(Failure::Usage(format!(
                "transform supports ipc, crvtw and rdt, not {other}"
            )))
        }
    };
    let dataset = load_checked(data, None)?;
    let set = transform(&dataset)?;
    if set.is_empty() {
        eprintln!("warning: {method} transform produced no rows");
    }
    write_atomic(out, |w| set.write_csv(w))?;
    println!("wrote {} rows to {}", set.len(), out.display());
    Ok(())
}

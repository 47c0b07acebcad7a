use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use multistop::dual::{write_snell_csv, write_theta_csv};
use multistop::experiment::{run_table, run_with, write_rows};
use multistop::{ContinuationTable, ExperimentConfig, PresetKind, VolumeKind};

/// Prices multiple-exercise options with primal-dual Monte Carlo and writes
/// one CSV row per (delta, L).
#[derive(Parser, Debug)]
#[command(name = "multistop", version)]
struct Args {
    /// Flat TOML file of `key = value` settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Refraction periods, comma separated.
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<usize>>,
    /// Numbers of rights, comma separated.
    #[arg(long, value_delimiter = ',')]
    rights: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    volume: Option<Volume>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    n3: Option<usize>,
    #[arg(long)]
    n4: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    meanrev: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    impact_a: Option<f64>,
    #[arg(long)]
    impact_b: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Write 0 in the `seconds` column.
    #[arg(long)]
    no_timing: bool,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the exact-solver checks on random small trees and exit.
    #[arg(long)]
    oracle_check: bool,
    /// Number of random instances for --oracle-check.
    #[arg(long, default_value_t = 200)]
    oracle_instances: usize,
    /// Save the fitted regression table (single-row runs only).
    #[arg(long)]
    table_out: Option<PathBuf>,
    /// Reuse a saved regression table instead of fitting (single-row runs only).
    #[arg(long)]
    table_in: Option<PathBuf>,
    /// Write per-path theta values (single-row runs only).
    #[arg(long)]
    dump_theta: Option<PathBuf>,
    /// Write value-process samples of the first 20 outer paths (single-row runs only).
    #[arg(long)]
    dump_snell: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Preset {
    Swing,
    Exputil,
    Liquidation,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Volume {
    Unit,
    Offpeak,
}

/// Settings read from a config file. `delta` and `rights` may be lists.
struct FileSettings {
    config: ExperimentConfig,
    n1_given: bool,
    deltas: Option<Vec<usize>>,
    rights: Option<Vec<usize>>,
    workers: Option<usize>,
    out: Option<PathBuf>,
}

fn take_list(table: &mut toml::Table, key: &str) -> Result<Option<Vec<usize>>> {
    let Some(value) = table.remove(key) else {
        return Ok(None);
    };
    let to_usize = |v: &toml::Value| -> Result<usize> {
        v.as_integer()
            .and_then(|i| usize::try_from(i).ok())
            .with_context(|| format!("`{key}` must be a non-negative integer or a list of them"))
    };
    let list = match &value {
        toml::Value::Array(items) => items.iter().map(to_usize).collect::<Result<Vec<_>>>()?,
        other => vec![to_usize(other)?],
    };
    Ok(Some(list))
}

fn read_config(path: &Path) -> Result<FileSettings> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let deltas = take_list(&mut table, "delta")?;
    let rights = take_list(&mut table, "rights")?;
    let workers = take_list(&mut table, "workers")?.and_then(|w| w.first().copied());
    let out = match table.remove("out") {
        Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => bail!("`out` must be a string"),
        None => None,
    };
    let n1_given = table.contains_key("n1");
    let config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid settings in {}", path.display()))?;
    Ok(FileSettings {
        config,
        n1_given,
        deltas,
        rights,
        workers,
        out,
    })
}

struct Plan {
    config: ExperimentConfig,
    deltas: Vec<usize>,
    rights: Vec<usize>,
    workers: usize,
    out: Option<PathBuf>,
}

fn plan(args: &Args) -> Result<Plan> {
    let file = match &args.config {
        Some(path) => Some(read_config(path)?),
        None => None,
    };
    let mut config = file.as_ref().map(|f| f.config.clone()).unwrap_or_default();
    let mut n1_given = file.as_ref().is_some_and(|f| f.n1_given);
    if let Some(p) = args.preset {
        config.preset = match p {
            Preset::Swing => PresetKind::Swing,
            Preset::Exputil => PresetKind::Exputil,
            Preset::Liquidation => PresetKind::Liquidation,
        };
    }
    if let Some(v) = args.volume {
        config.volume = match v {
            Volume::Unit => VolumeKind::Unit,
            Volume::Offpeak => VolumeKind::Offpeak,
        };
    }
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { config.$field = v; })*
        };
    }
    set!(n2, n3, n4, seed, sigma, meanrev, mu, s0, horizon, strike, alpha, impact_a, impact_b);
    if let Some(n1) = args.n1 {
        config.n1 = n1;
        n1_given = true;
    }
    if !n1_given {
        config.n1 = ExperimentConfig::default_n1(config.volume);
    }
    if args.no_timing {
        config.timing = false;
    }
    let deltas = args
        .delta
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.deltas.clone()))
        .unwrap_or(vec![config.delta]);
    let rights = args
        .rights
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.rights.clone()))
        .unwrap_or(vec![config.rights]);
    let workers = args
        .workers
        .or_else(|| file.as_ref().and_then(|f| f.workers))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = args.out.clone().or_else(|| file.and_then(|f| f.out));
    Ok(Plan {
        config,
        deltas,
        rights,
        workers,
        out,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn oracle_check(instances: usize, seed: u64) -> Result<bool> {
    let report = multistop::oracle::oracle_suite(instances, seed)?;
    println!("instances                   {}", report.instances);
    println!("exact vs enumeration        {:.3e}", report.cross_validation);
    println!("theta vs exact value        {:.3e}", report.theta_deviation);
    println!("gap bound, exact envelopes  {:.3e}", report.gap);
    println!("corollary, exact envelopes  {:.3e}", report.corollary);
    println!("policy vs exact value       {:.3e}", report.policy_deviation);
    let ok = report.passes(1e-10, 1e-12);
    println!("{}", if ok { "oracle check passed" } else { "oracle check FAILED" });
    Ok(ok)
}

/// Single-row run with table reuse and diagnostic dumps.
fn run_single(args: &Args, plan: &Plan) -> Result<bool> {
    let config = ExperimentConfig {
        delta: plan.deltas[0],
        rights: plan.rights[0],
        ..plan.config.clone()
    };
    let table = match &args.table_in {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(ContinuationTable::read_csv(BufReader::new(f))?)
        }
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.workers.max(1)).build()?;
    let start = std::time::Instant::now();
    let run = pool.install(|| run_with(&config, table))?;
    let spec = config.contract()?;
    if let Some(p) = &args.table_out {
        run.table.write_csv(output(Some(p))?)?;
    }
    if let Some(p) = &args.dump_theta {
        write_theta_csv(&spec, &run.outer, &run.snell, output(Some(p))?)?;
    }
    if let Some(p) = &args.dump_snell {
        write_snell_csv(&run.snell, 20, output(Some(p))?)?;
    }
    let row = multistop::ResultRow {
        delta: config.delta,
        rights: config.rights,
        lower: run.lower.mean,
        upper: run.upper.mean,
        ci_low: run.interval.low,
        ci_high: run.interval.high,
        std_lower: run.lower.std,
        std_upper: run.upper.std,
        seconds: if config.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    let mut out = output(plan.out.as_deref())?;
    write_rows(&[row], &mut out)?;
    out.flush()?;
    Ok(true)
}

fn run(args: Args) -> Result<bool> {
    let plan = plan(&args)?;
    if args.oracle_check {
        return oracle_check(args.oracle_instances, plan.config.seed);
    }
    let single = args.table_in.is_some()
        || args.table_out.is_some()
        || args.dump_theta.is_some()
        || args.dump_snell.is_some();
    if single {
        if plan.deltas.len() != 1 || plan.rights.len() != 1 {
            bail!("--table-in, --table-out and the dump options need a single delta and a single L");
        }
        return run_single(&args, &plan);
    }
    let results = run_table(&plan.config, &plan.deltas, &plan.rights, plan.workers)?;
    let mut rows = Vec::new();
    let mut ok = true;
    for (i, r) in results.into_iter().enumerate() {
        let delta = plan.deltas[i / plan.rights.len()];
        let l = plan.rights[i % plan.rights.len()];
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                ok = false;
                eprintln!("row delta={delta} L={l} failed: {e}");
            }
        }
    }
    let mut out = output(plan.out.as_deref())?;
    write_rows(&rows, &mut out)?;
    out.flush()?;
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

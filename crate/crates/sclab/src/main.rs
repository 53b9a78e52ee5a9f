use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sclab::checks::{self, Profile};
use sclab::config::{BoundKind, BoundSchedule, BoundsSpec, MAX_SEED};
use sclab::output::{error_record, write_atomic, CsvTable};
use sclab::scenario::bound_rows;
use sclab::{parse_config, run_scenario, EXIT_CONFIG, EXIT_RUNTIME};

#[derive(Parser)]
#[command(name = "sclab", version, about = "Self-consuming training loop experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; overrides `base_seed` in the config.
        #[arg(long, env = "SCLAB_SEED", value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
        seed: Option<u64>,
        /// Replicates (seed count for kde_rate).
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Print the coefficient table and bound terms for one generation as CSV.
    Bounds {
        #[arg(long, value_parser = BoundSchedule::NAMES)]
        schedule: String,
        #[arg(long)]
        i: usize,
        #[arg(long, value_parser = ["diffusion", "kde", "flow"], default_value = "diffusion")]
        bound: String,
        /// Per-generation sample count.
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        kl: f64,
        #[arg(long, default_value_t = 2)]
        smoothness: u32,
        #[arg(long, default_value_t = 1.0)]
        flow_norm: f64,
        /// Real-data share for real_each_gen.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Real count per generation for fixed_ratio.
        #[arg(long, default_value_t = 1000)]
        n_real: u64,
        /// Synthetic count per generation for fixed_ratio.
        #[arg(long, default_value_t = 1000)]
        m_synth: u64,
    },
    /// Run the oracle suites and print one line per check.
    Selftest {
        /// Include the statistical and long-running checks.
        #[arg(long)]
        full: bool,
    },
}

struct Failure {
    kind: &'static str,
    code: i32,
    messages: Vec<String>,
    out_dir: Option<PathBuf>,
}

impl Failure {
    fn config(messages: Vec<String>, out_dir: Option<PathBuf>) -> Self {
        Self { kind: "config", code: EXIT_CONFIG, messages, out_dir }
    }

    fn runtime(message: String, out_dir: Option<PathBuf>) -> Self {
        Self { kind: "runtime", code: EXIT_RUNTIME, messages: vec![message], out_dir }
    }

    fn report(self) -> ExitCode {
        let record = error_record(self.kind, self.code, &self.messages);
        eprintln!("{record}");
        if let Some(dir) = &self.out_dir {
            if std::fs::create_dir_all(dir).is_ok() {
                if let Err(e) = write_atomic(dir, "error.json", record.as_bytes()) {
                    log::warn!("could not write error.json: {e}");
                }
            }
        }
        ExitCode::from(self.code as u8)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, replicates } => run(&config, out, seed, replicates),
        Command::Bounds { schedule, i, bound, n, dim, delta, kl, smoothness, flow_norm, alpha, n_real, m_synth } => {
            let spec = BoundsSpec {
                bound: BoundKind::parse(&bound).expect("clap restricts the bound names"),
                n,
                dim,
                delta,
                kl,
                smoothness,
                flow_norm,
                alpha,
                n_real,
                m_synth,
            };
            let schedule = BoundSchedule::parse(&schedule).expect("clap restricts the schedule names");
            bounds(schedule, &spec, i)
        }
        Command::Selftest { full } => selftest(if full { Profile::Full } else { Profile::Quick }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>, replicates: Option<usize>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(vec![format!("{}: {e}", path.display())], out.clone()))?;
    let mut cfg = parse_config(&text).map_err(|e| Failure::config(e.0, out.clone()))?;
    let mut errs = Vec::new();
    if let Some(s) = seed {
        cfg.set_seed(s).unwrap_or_else(|e| errs.extend(e.0));
    }
    if let Some(k) = replicates {
        cfg.set_replicates(k).unwrap_or_else(|e| errs.extend(e.0));
    }
    let out_dir = out.or_else(|| cfg.out_dir.clone());
    let Some(out_dir) = out_dir else {
        errs.push("no output directory: pass --out or set out_dir".into());
        return Err(Failure::config(errs, None));
    };
    if !errs.is_empty() {
        return Err(Failure::config(errs, Some(out_dir)));
    }
    cfg.set_out_dir(out_dir.clone());
    log::info!("running {} with base seed {} into {}", cfg.scenario, cfg.base_seed, out_dir.display());
    let (output, files) =
        run_scenario(&cfg, &out_dir).map_err(|e| Failure::runtime(e.to_string(), Some(out_dir.clone())))?;
    // a stale record from an earlier failed run would contradict this one
    let _ = std::fs::remove_file(out_dir.join("error.json"));
    for line in &output.summary {
        println!("{line}");
    }
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn bounds(schedule: BoundSchedule, spec: &BoundsSpec, i: usize) -> Result<(), Failure> {
    let rows = bound_rows(schedule, spec, i).map_err(|e| Failure::config(vec![e.to_string()], None))?;
    let csv = CsvTable::bounds(&rows).to_csv().map_err(|e| Failure::runtime(e.to_string(), None))?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn selftest(profile: Profile) -> Result<(), Failure> {
    let results = checks::run(profile, |c| println!("{c}"));
    let failed: Vec<String> = results.iter().filter(|c| c.failed()).map(|c| format!("check {} failed: {}", c.id, c.detail)).collect();
    println!("{} checks, {} failed", results.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(failed.join("; "), None))
    }
}

//! `prefdrive` command-line tool.
//!
//! Exit status: 0 on success, 1 for bad arguments, configuration or input
//! files, 2 when a computation fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use prefdrive_core::cache::PlanCache;
use prefdrive_core::driver::{
    build_sim_dataset, fit_driver_model, generate_logs, read_logs_file, write_logs_file, DriverModel, GridConfig,
    SynthConfig,
};
use prefdrive_core::pbo::ParamSpace;
use prefdrive_core::planner::{Planner, PlannerConfig, SolverConfig};
use prefdrive_core::Track;
use prefdrive_experiment::{run_experiment, ExperimentConfig, Method, RunError};
use prefdrive_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "prefdrive", version, about = "Preference-based tuning of a trajectory planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic driving logs (CSV `lap_id,style,s,v`).
    GenLogs {
        #[arg(long)]
        out: PathBuf,
        /// Track CSV; the built-in desk track when omitted.
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        laps_per_style: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a heteroscedastic driver model to logs and write it as JSON.
    FitDriver {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        track: Option<PathBuf>,
        /// Use only these styles (repeatable).
        #[arg(long = "style")]
        styles: Vec<String>,
        /// Leave out these styles (repeatable).
        #[arg(long = "exclude-style")]
        exclude: Vec<String>,
    },
    /// Plan a parameter grid, score it with a driver model and write the
    /// prior comparison dataset.
    BuildPrior {
        /// Driver model JSON from `fit-driver`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the utility table to this CSV.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Space::Desk)]
        space: Space,
        #[arg(long, default_value_t = 5)]
        per_dim: usize,
        /// Number of selected pairs; 3^dim when omitted.
        #[arg(long)]
        pairs: Option<usize>,
        /// Plan cache; disabled when omitted.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Run the simulated study of prior-informed against standard PBO.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        /// Overrides `output_dir` of the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the default experiment configuration as TOML.
    DefaultConfig,
    /// Serve the HTTP/JSON elicitation API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Session journals; sessions are kept in memory only when omitted.
        #[arg(long)]
        journal_dir: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    /// The three acceleration weights in [-2, 2].
    Desk,
    /// All five weights in [-2, 2].
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Prior,
    Standard,
    Both,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load_track(path: Option<&Path>) -> Result<Track, Failure> {
    match path {
        Some(p) => Track::read_csv(p).map_err(|e| Failure::config(format!("{}: {e}", p.display()))),
        None => Ok(Track::desk_scale()),
    }
}

fn coarse_planner() -> Planner {
    Planner::new(PlannerConfig {
        solver: SolverConfig::coarse(),
        ..PlannerConfig::default()
    })
}

fn gen_logs(out: &Path, track: Option<&Path>, laps_per_style: usize, seed: u64) -> Outcome {
    let track = load_track(track)?;
    let cfg = SynthConfig {
        laps_per_style,
        seed,
        ..SynthConfig::default()
    };
    let logs = generate_logs(&track, &cfg).map_err(Failure::config)?;
    write_logs_file(out, &logs).map_err(Failure::runtime)?;
    println!("wrote {} laps to {}", logs.len(), out.display());
    Ok(())
}

fn fit_driver(logs: &Path, out: &Path, track: Option<&Path>, styles: &[String], exclude: &[String]) -> Outcome {
    let track = load_track(track)?;
    let logs = read_logs_file(logs).map_err(|e| Failure::config(format!("{}: {e}", logs.display())))?;
    let selected: Vec<_> = logs
        .into_iter()
        .filter(|l| styles.is_empty() || styles.contains(&l.style))
        .filter(|l| !exclude.contains(&l.style))
        .collect();
    let model = fit_driver_model(&selected, &track).map_err(Failure::config)?;
    model.write_json(out).map_err(Failure::runtime)?;
    println!("fitted {} laps of styles {:?}; wrote {}", model.laps.len(), model.styles, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_prior(
    model: &Path,
    out: &Path,
    table: Option<&Path>,
    track: Option<&Path>,
    space: Space,
    per_dim: usize,
    pairs: Option<usize>,
    cache_dir: Option<&Path>,
) -> Outcome {
    let track = load_track(track)?;
    let model = DriverModel::read_json(model).map_err(|e| Failure::config(format!("{}: {e}", model.display())))?;
    if per_dim < 2 {
        return Err(Failure::config("--per-dim must be at least 2"));
    }
    let space = match space {
        Space::Desk => ParamSpace::desk(),
        Space::Full => ParamSpace::full(),
    };
    let cache = cache_dir.map(PlanCache::new).unwrap_or_default();
    let grid = GridConfig { per_dim, pairs };
    let sim = build_sim_dataset(&coarse_planner(), &track, &model, &space, &grid, &cache).map_err(|e| match e {
        prefdrive_core::Error::GridMismatch(_) => Failure::config(e),
        _ => Failure::runtime(e),
    })?;
    sim.dataset.write_file(out).map_err(Failure::runtime)?;
    if let Some(t) = table {
        sim.table.write_csv(t).map_err(Failure::runtime)?;
    }
    println!(
        "grid points {}, candidate pairs {}, selected pairs {}, excluded {}",
        sim.grid_points, sim.candidate_pairs, sim.selected_pairs, sim.excluded
    );
    Ok(())
}

fn run(config: &Path, method: MethodArg, output_dir: Option<PathBuf>) -> Outcome {
    let mut cfg = ExperimentConfig::load(config).map_err(Failure::config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let methods = match method {
        MethodArg::Prior => vec![Method::Prior],
        MethodArg::Standard => vec![Method::Standard],
        MethodArg::Both => vec![Method::Prior, Method::Standard],
    };
    let outcome = run_experiment(&cfg, &methods).map_err(|e| match e {
        RunError::Config(_) => Failure::config(e),
        _ => Failure::runtime(e),
    })?;
    let s = &outcome.summary;
    println!("oracle utility {:.3} at theta {:?}", s.oracle_utility, s.oracle_theta);
    for m in &s.methods {
        let last = m.regret.last();
        println!(
            "{:<8} trials ok {} failed {}  final mean simple regret {}  bottom-quartile fraction {:.3}",
            m.method.name(),
            m.successful_trials.len(),
            m.failed_trials.len(),
            last.map_or("-".into(), |r| format!("{:.3}", r.mean)),
            m.bottom_quartile_fraction
        );
    }
    println!("results in {}", cfg.output_dir.display());
    if s.methods.iter().any(|m| !m.failed_trials.is_empty()) {
        return Err(Failure::runtime("some trials failed, see summary.json"));
    }
    Ok(())
}

fn default_config() -> Outcome {
    let text = toml::to_string_pretty(&ExperimentConfig::default()).map_err(Failure::runtime)?;
    print!("{text}");
    Ok(())
}

fn serve(addr: std::net::SocketAddr, journal_dir: Option<PathBuf>, cache_dir: Option<PathBuf>) -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    rt.block_on(prefdrive_service::serve(
        addr,
        ServiceConfig {
            journal_dir,
            cache_dir,
        },
    ))
    .map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse | std::io::ErrorKind::AddrNotAvailable => Failure::config(e),
        _ => Failure::runtime(e),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenLogs {
            out,
            track,
            laps_per_style,
            seed,
        } => gen_logs(&out, track.as_deref(), laps_per_style, seed),
        Command::FitDriver {
            logs,
            out,
            track,
            styles,
            exclude,
        } => fit_driver(&logs, &out, track.as_deref(), &styles, &exclude),
        Command::BuildPrior {
            model,
            out,
            table,
            track,
            space,
            per_dim,
            pairs,
            cache_dir,
        } => build_prior(
            &model,
            &out,
            table.as_deref(),
            track.as_deref(),
            space,
            per_dim,
            pairs,
            cache_dir.as_deref(),
        ),
        Command::Run {
            config,
            method,
            output_dir,
        } => run(&config, method, output_dir),
        Command::DefaultConfig => default_config(),
        Command::Serve {
            addr,
            journal_dir,
            cache_dir,
        } => serve(addr, journal_dir, cache_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

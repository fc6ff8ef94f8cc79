use clap::{Args, Parser, Subcommand};
use kc_cli::{aggregate, run_experiment, validate, ConfigError, ExperimentConfig, RawConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kc", version, about = "Rayleigh gas experiments: sampling, kinetic solvers, large deviations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; the KC_WORKERS environment variable takes precedence.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    Sample(RunArgs),
    Evolve(RunArgs),
    Lln(RunArgs),
    Fluct(RunArgs),
    Cgf(RunArgs),
    Cycles(RunArgs),
    SolvePde(RunArgs),
    TreeMc(RunArgs),
    Bhj(RunArgs),
    Rate(RunArgs),
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize result tables sharing one header.
    Aggregate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "mean")]
        stat: String,
    },
}

fn load(path: &PathBuf, experiment: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    if let Some(name) = experiment {
        match raw.get("experiment") {
            None => raw.set("experiment", name),
            Some(other) if other != name => return Err(ConfigError::Invalid(format!("config is for `{other}`, not `{name}`"))),
            _ => {}
        }
    }
    ExperimentConfig::from_raw(&raw)
}

fn workers(flag: Option<usize>) -> Result<usize, ConfigError> {
    match std::env::var("KC_WORKERS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|w| *w > 0).ok_or_else(|| ConfigError::Invalid(format!("KC_WORKERS = `{v}` is not a positive integer"))),
        Err(_) => Ok(flag.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1)),
    }
}

fn run(name: &str, args: &RunArgs) -> ExitCode {
    let setup = load(&args.config, Some(name)).and_then(|mut cfg| {
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        Ok((cfg, workers(args.workers)?))
    });
    let (cfg, workers) = match setup {
        Ok(x) => x,
        Err(e) => {
            eprintln!("kc: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg, workers) {
        Ok(m) => {
            println!("{}: {} outputs in {} ({:.2} s)", m.experiment, m.outputs.len(), cfg.out.display(), m.wall_clock_seconds);
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("kc: {}", f.error);
            ExitCode::from(f.error.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.cmd {
        Cmd::Sample(a) => ("sample", a),
        Cmd::Evolve(a) => ("evolve", a),
        Cmd::Lln(a) => ("lln", a),
        Cmd::Fluct(a) => ("fluct", a),
        Cmd::Cgf(a) => ("cgf", a),
        Cmd::Cycles(a) => ("cycles", a),
        Cmd::SolvePde(a) => ("solve-pde", a),
        Cmd::TreeMc(a) => ("tree-mc", a),
        Cmd::Bhj(a) => ("bhj", a),
        Cmd::Rate(a) => ("rate", a),
        Cmd::Validate { config } => {
            return match load(config, None) {
                Ok(cfg) => {
                    let report = validate(&cfg);
                    if report.is_empty() {
                        println!("ok");
                        ExitCode::SUCCESS
                    } else {
                        print!("{report}");
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("kc: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Cmd::Aggregate { files, stat } => {
            return match aggregate(files, stat) {
                Ok(s) => {
                    print!("{}", s.to_csv());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("kc: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    run(name.0, name.1)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harness::config::{self, Experiment};
use harness::error::RunError;
use harness::runner::{self, Halt, RunOptions};

#[derive(Parser)]
#[command(name = "torus-mix", version, about = "Stochastic Galerkin fluids: Lagrangian chaos and scalar mixing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one velocity path, with optional tracers.
    Simulate(RunArgs),
    /// Top Lyapunov exponent over an ensemble of paths.
    Lyapunov(RunArgs),
    /// Moment Lyapunov exponent on a grid of p.
    MomentCurve(RunArgs),
    /// Quenched correlation and negative Sobolev decay of passive scalars.
    Mixing(RunArgs),
    /// Separation of nearby tracer pairs.
    TwoPoint(RunArgs),
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Continue an interrupted run.
    Resume {
        /// Run directory (containing manifest.json) or the manifest itself.
        #[arg(long, conflicts_with = "manifest")]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        halt: HaltArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to $TORUS_MIX_OUT, then `output.dir`.
    #[arg(long, env = "TORUS_MIX_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    halt: HaltArgs,
}

/// Stop early after writing resume state; used to test resume.
#[derive(Args)]
struct HaltArgs {
    #[arg(long, hide = true)]
    halt_after_steps: Option<u64>,
    #[arg(long, hide = true)]
    halt_after_paths: Option<usize>,
}

impl HaltArgs {
    fn halt(&self) -> Halt {
        Halt {
            after_steps: self.halt_after_steps,
            after_paths: self.halt_after_paths,
        }
    }
}

fn start(verb: Experiment, args: RunArgs) -> Result<(), RunError> {
    let loaded = config::load(&args.config)?;
    let out_dir = args.out.unwrap_or_else(|| loaded.config.output.dir.clone());
    let opts = RunOptions {
        out_dir,
        seed: args.seed,
        halt: args.halt.halt(),
    };
    let m = runner::run(&loaded, verb, &opts)?;
    log::info!("{} finished with status {:?} in {}", m.experiment, m.status, opts.out_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Simulate(a) => start(Experiment::Simulate, a),
        Command::Lyapunov(a) => start(Experiment::Lyapunov, a),
        Command::MomentCurve(a) => start(Experiment::MomentCurve, a),
        Command::Mixing(a) => start(Experiment::Mixing, a),
        Command::TwoPoint(a) => start(Experiment::TwoPoint, a),
        Command::Validate { config } => {
            let loaded = config::load(&config)?;
            let base = loaded.path.parent().unwrap_or(std::path::Path::new("."));
            loaded.config.flow(base)?;
            println!("ok: {} ({})", loaded.config.experiment.name(), loaded.hash);
            Ok(())
        }
        Command::Resume { out, manifest, halt } => {
            let path = match (manifest, out) {
                (Some(m), _) => m,
                (None, Some(d)) if d.is_dir() => runner::manifest_in(&d),
                (None, Some(f)) => f,
                (None, None) => return Err(RunError::Config("resume needs --out DIR or --manifest FILE".into())),
            };
            let m = runner::resume(&path, &halt.halt())?;
            log::info!("{} status {:?}", m.experiment, m.status);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("torus-mix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

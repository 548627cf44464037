use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sislab::env::PointEnv;
use sislab::safety_index::{IndexPreset, SafetyIndexParams};
use sislab::verify::{self, ActionGrid, GridSpec};
use sislab::{Checkpoint, Error, Result, RunConfig};

mod artifacts;

#[derive(Parser)]
#[command(name = "sislab", version, about = "Safety index synthesis lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy, multiplier and (optionally) the safety index.
    Train(TrainArgs),
    /// Score a checkpoint's greedy policy over fresh trajectories.
    Eval(EvalArgs),
    /// Run the exhaustive one-step feasibility oracle.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Environment steps; defaults to `trainer.total_steps`.
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory; defaults to `runs/<config hash>-seed<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial safety index preset, overriding the config.
    #[arg(long)]
    index: Option<IndexPreset>,
    /// Keep the safety index fixed.
    #[arg(long)]
    no_sis: bool,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(short = 'n', long = "trajectories", default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the CSV and JSON reports; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Preset to verify; `learned` requires `--checkpoint`.
    #[arg(long)]
    index: Option<IndexPreset>,
    /// Checkpoint providing the learned index (and the run config).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict the count to cells visited by this checkpoint's greedy policy.
    #[arg(long)]
    envelope: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    envelope_trajectories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    d_cells: Option<usize>,
    #[arg(long)]
    heading_cells: Option<usize>,
    #[arg(long)]
    speed_cells: Option<usize>,
    #[arg(long)]
    rotation_actions: Option<usize>,
    #[arg(long)]
    acceleration_actions: Option<usize>,
    #[arg(long, default_value = "verify")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Io(_) | Error::Checkpoint { .. } => 3,
        Error::Numerical(_) | Error::Degenerate(_) | Error::Dimension { .. } => 4,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(p) = args.index {
        cfg.safety_index.preset = p;
    }
    if args.no_sis {
        cfg.trainer.sis_enabled = false;
    }
    if let Some(s) = args.steps {
        cfg.trainer.total_steps = s;
    }
    cfg.validate()?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.hash(), args.seed)));
    artifacts::train_run(&cfg, args.seed, &out)
}

fn eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let out = args
        .out
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let report = artifacts::eval_run(&ck, args.n, args.seed, &out)?;
    println!("{}", report.summary());
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Result<()> {
    let ck = args.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg = match (&args.config, &ck) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(c)) => c.config.clone(),
        (None, None) => RunConfig::default(),
    };
    let grid: &mut GridSpec = &mut cfg.verify.grid;
    for (slot, v) in [
        (&mut grid.d_cells, args.d_cells),
        (&mut grid.heading_cells, args.heading_cells),
        (&mut grid.speed_cells, args.speed_cells),
        (&mut grid.rotation_actions, args.rotation_actions),
        (&mut grid.acceleration_actions, args.acceleration_actions),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.validate()?;
    let zeta: SafetyIndexParams = match (args.index, &ck) {
        (Some(IndexPreset::Learned) | None, Some(c)) => c.zeta,
        (Some(IndexPreset::Learned) | None, None) => {
            return Err(Error::Usage("verify needs --index or --checkpoint".into()))
        }
        (Some(p), _) => p.params(cfg.env.d_min).expect("closed-form preset").with_eta(cfg.safety_index.eta_d),
    };
    let envelope = match &args.envelope {
        Some(p) => {
            let e = Checkpoint::load(p)?;
            let env = PointEnv::new(e.config.env.clone())?;
            let nets = e.nets.clone();
            let out = verify::eval_trajectories(
                |o| nets.greedy_action(o),
                &e.zeta,
                &env,
                args.envelope_trajectories,
                args.seed,
                &ActionGrid::new(2, 2),
            )?;
            Some(out.visited)
        }
        None => None,
    };
    let summary = artifacts::verify_run(&cfg, &zeta, envelope.as_deref(), args.seed, &args.out)?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use curio_core::harness::{
    analyze, eval_variance_study, variance_csv, ActorPolicy, Arm, Checkpoint, CheckpointPolicy, DialoguePolicy,
    EmptyPolicy, OraclePolicy, RandomPolicy, RunConfig, Trainer,
};
use curio_core::{Ontology, VectorLayout};

#[derive(Parser)]
#[command(name = "curio", version, about = "Dialogue-policy PPO with RND and curiosity intrinsic rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one arm and write metrics.csv, manifest.json and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a scripted policy) on fresh goals.
    Evaluate(EvaluateArgs),
    /// Success-rate spread over repeated evaluations of several sizes.
    VarianceStudy(VarianceArgs),
    /// Print the state/action vector layout as JSON.
    DumpLayout {
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    arm: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long, value_enum)]
    checkpoints: Option<Checkpoints>,
    #[arg(long)]
    log_episodes: bool,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long, conflicts_with_all = ["arm", "steps", "seed", "config", "ontology"])]
    resume: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Checkpoints {
    All,
    Last,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scripted {
    Oracle,
    Empty,
    Random,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "policy")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a scripted policy on the default world instead.
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    policy: Option<Scripted>,
    #[arg(long, default_value_t = 1000)]
    n_eval: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct VarianceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,500,1000,2000")]
    n_eval: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut trainer = if let Some(path) = &args.resume {
        Trainer::resume(path, args.out.clone()).with_context(|| format!("resuming from {}", path.display()))?
    } else {
        let mut config = match &args.config {
            Some(p) => RunConfig::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => RunConfig::default(),
        };
        if let Some(arm) = &args.arm {
            config.arm = arm.parse::<Arm>()?;
        }
        if let Some(v) = args.steps {
            config.steps = v;
        }
        if let Some(v) = args.seed {
            config.seed = v;
        }
        if let Some(v) = &args.out {
            config.out_dir = v.clone();
        }
        if let Some(v) = &args.ontology {
            config.ontology = Some(v.clone());
        }
        if let Some(v) = args.eval_interval {
            config.eval_interval = v;
        }
        if let Some(v) = args.n_eval {
            config.n_eval = v;
        }
        if let Some(v) = args.checkpoints {
            config.checkpoints = match v {
                Checkpoints::All => CheckpointPolicy::All,
                Checkpoints::Last => CheckpointPolicy::Last,
                Checkpoints::None => CheckpointPolicy::None,
            };
        }
        config.log_episodes |= args.log_episodes;
        Trainer::new(config)?
    };
    let quiet = args.quiet;
    let summary = trainer.run(&mut |row| {
        if !quiet {
            eprintln!(
                "step {:>8}  success {:.3}  complete {:.3}  turns {:.2}  r_int {:.4}",
                row.step, row.metrics.success_rate, row.metrics.complete_rate, row.metrics.avg_turns, row.batch.mean_intrinsic
            );
        }
    })?;
    println!("{}", summary.out_dir.join("metrics.csv").display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let metrics = match (&args.checkpoint, args.policy) {
        (Some(path), _) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let world = ck.config.build_world()?;
            analyze(&mut ActorPolicy { actor: &ck.model.actor }, &world, args.n_eval, args.seed)?
        }
        (None, Some(kind)) => {
            let world = RunConfig::default().build_world()?;
            let mut policy: Box<dyn DialoguePolicy> = match kind {
                Scripted::Oracle => Box::new(OraclePolicy),
                Scripted::Empty => Box::new(EmptyPolicy),
                Scripted::Random => Box::new(RandomPolicy::new(args.seed)),
            };
            analyze(policy.as_mut(), &world, args.n_eval, args.seed)?
        }
        (None, None) => bail!("either --checkpoint or --policy is required"),
    };
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn variance_study(args: VarianceArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let world = ck.config.build_world()?;
    let rows =
        eval_variance_study(&mut ActorPolicy { actor: &ck.model.actor }, &world, &args.n_eval, args.repeats, args.seed)?;
    let csv = variance_csv(&rows);
    if let Some(out) = &args.out {
        fs::write(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::VarianceStudy(args) => variance_study(args),
        Command::DumpLayout { ontology } => {
            let ontology = match ontology {
                Some(p) => Ontology::load(&p)?,
                None => Ontology::default_multi_domain(),
            };
            let env = curio_core::EnvConfig::default();
            let user = curio_core::user::UserConfig::default();
            let layout = VectorLayout::new(&ontology, env.max_turns, user.max_acts_per_turn)?;
            println!("{}", layout.to_json());
            Ok(())
        }
    }
}

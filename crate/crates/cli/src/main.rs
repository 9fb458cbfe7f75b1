use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bimanip::dynamics::{LatentMode, ModelBank};
use bimanip::metrics::{write_breakdown_csv, write_reports_csv, EvalReport};
use bimanip::pipeline::{
    attention_edges, build_bank, build_planner, closed_loop_rollout, evaluate, fit_bank, fit_planner,
    held_out_spawns, run_ablation, training_dataset, write_ablation_csv, write_attention_csv, write_losses_csv,
    write_trace, BankPredictor, Overrides, Profile, RolloutOptions, RunConfig, Variant,
};
use bimanip::planning::PlannerModel;
use bimanip::tasks::{demo_rng, load_dataset, sample_spawn, save_dataset, Dataset, TaskKind, TaskSpec};
use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error(transparent)]
    Core(#[from] bimanip::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::MissingCheckpoint(_) | Self::MissingInput(_) => 2,
            Self::Core(bimanip::Error::Config(_)) => 3,
            Self::Core(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "bimanip", version, about = "Hierarchical imitation learning for two-arm manipulation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated features: graph, res, multi, relational (or none).
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    task: Option<TaskKind>,
    #[arg(long, global = true)]
    latent_mode: Option<LatentMode>,
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scripted demonstrations.
    GenDemos,
    /// Train the primitive planner.
    TrainPlanner {
        /// Demonstration CSV; generated from the config when omitted.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Train the primitive dynamics models.
    TrainDynamics {
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Run one closed-loop rollout from a held-out spawn.
    Rollout {
        #[command(flatten)]
        checkpoints: Checkpoints,
        /// Index into the held-out spawn stream.
        #[arg(long, default_value_t = 0)]
        spawn: u64,
    },
    /// Evaluate on the held-out spawns.
    Eval {
        #[command(flatten)]
        checkpoints: Checkpoints,
    },
    /// Train and evaluate all eight (graph, residual, multi) combinations.
    Ablate {
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Planner checkpoint; trained first when omitted.
        #[arg(long)]
        planner: Option<PathBuf>,
    },
    /// Write encoder attention weights of a trained dynamics checkpoint.
    ExportAttention {
        #[arg(long)]
        dynamics: Option<PathBuf>,
        /// Edges above this weight are marked visible.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 0)]
        spawn: u64,
    },
}

#[derive(clap::Args, Debug)]
struct Checkpoints {
    /// Planner checkpoint [default: <out>/planner.ckpt].
    #[arg(long)]
    planner: Option<PathBuf>,
    /// Dynamics checkpoint [default: <out>/dynamics.ckpt].
    #[arg(long)]
    dynamics: Option<PathBuf>,
}

struct Run {
    config: RunConfig,
    task: TaskSpec,
    out: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name)).map_err(bimanip::Error::from)?))
    }

    fn dataset(&self, demos: Option<&Path>) -> CliResult<Dataset> {
        match demos {
            Some(p) if !p.exists() => Err(CliError::MissingInput(p.to_path_buf())),
            Some(p) => Ok(load_dataset(p, &self.task)?),
            None => Ok(training_dataset(&self.config, &self.task)?),
        }
    }

    fn checkpoint(&self, given: Option<&Path>, default: &str) -> CliResult<PathBuf> {
        let path = given.map_or_else(|| self.path(default), Path::to_path_buf);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingCheckpoint(path))
        }
    }

    fn load_planner(&self, given: Option<&Path>) -> CliResult<PlannerModel> {
        let path = self.checkpoint(given, "planner.ckpt")?;
        let mut planner = build_planner(&self.config, &self.task)?;
        planner.load(&path)?;
        Ok(planner)
    }

    fn load_bank(&self, given: Option<&Path>) -> CliResult<ModelBank> {
        let path = self.checkpoint(given, "dynamics.ckpt")?;
        let mut bank = build_bank(&self.config, &self.task)?;
        bank.load(&path)?;
        Ok(bank)
    }

    fn spawn(&self, index: u64) -> Vec<[f64; 2]> {
        sample_spawn(&self.task, &mut demo_rng(self.config.seeds().eval_spawns, index))
    }
}

fn progress(label: &'static str, total: usize) -> impl FnMut(usize, f64) {
    let every = (total / 20).max(1);
    move |epoch, loss| {
        if (epoch + 1) % every == 0 || epoch + 1 == total {
            eprintln!("{label} epoch {}/{total}: loss {loss:.6e}", epoch + 1);
        }
    }
}

fn write_reports(run: &Run, reports: &[EvalReport], stem: &str) -> CliResult<()> {
    write_reports_csv(reports, run.create(&format!("{stem}.csv"))?)?;
    write_breakdown_csv(reports, run.create(&format!("{stem}_breakdown.csv"))?)?;
    let table = EvalReport::table(reports);
    fs::write(run.path(&format!("{stem}.txt")), &table).map_err(bimanip::Error::from)?;
    print!("{table}");
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let overrides = Overrides {
        task: cli.task,
        profile: cli.profile,
        seed: cli.seed,
        variant: cli.variant,
        latent_mode: cli.latent_mode,
    };
    if let Some(p) = &cli.config {
        if !p.is_file() {
            return Err(bimanip::Error::Config(format!("config file {} not found", p.display())).into());
        }
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    fs::create_dir_all(&cli.out).map_err(bimanip::Error::from)?;
    let run = Run {
        task: config.task_spec(),
        config,
        out: cli.out,
    };
    fs::write(run.path("config.toml"), run.config.to_toml()?).map_err(bimanip::Error::from)?;
    let c = &run.config;
    match cli.command {
        Command::GenDemos => {
            let data = training_dataset(c, &run.task)?;
            save_dataset(&data, &run.task, &run.path("demos.csv"))?;
            eprintln!("wrote {} demonstrations", data.len());
        }
        Command::TrainPlanner { demos } => {
            let data = run.dataset(demos.as_deref())?;
            let (planner, losses) = fit_planner(c, &run.task, &data, progress("planner", c.planner.epochs))?;
            planner.save(&run.path("planner.ckpt"))?;
            write_losses_csv(&losses, run.create("planner_loss.csv")?)?;
        }
        Command::TrainDynamics { demos } => {
            let data = run.dataset(demos.as_deref())?;
            let (bank, losses) = fit_bank(c, &run.task, &data, progress("dynamics", c.dynamics.epochs))?;
            bank.save(&run.path("dynamics.ckpt"))?;
            write_losses_csv(&losses, run.create("dynamics_loss.csv")?)?;
        }
        Command::Rollout { checkpoints, spawn } => {
            let planner = run.load_planner(checkpoints.planner.as_deref())?;
            let bank = run.load_bank(checkpoints.dynamics.as_deref())?;
            let world = run.task.initial_world(&run.spawn(spawn))?;
            let predictor = BankPredictor {
                bank: &bank,
                mode: c.rollout.latent_mode,
                relational: c.variant.relational,
            };
            let options = RolloutOptions {
                cadence: c.planner.cadence,
                seed_source: c.rollout.seed_source,
            };
            let mut rng = demo_rng(c.seeds().rollout, spawn);
            let trace = closed_loop_rollout(&run.task, &planner, &predictor, &world, options, &mut rng)?;
            write_trace(&trace, &run.task, run.create("rollout.csv")?)?;
            match &trace.failure {
                Some(f) => println!("rollout failed: {f}"),
                None => println!("rollout success: {}", trace.success),
            }
        }
        Command::Eval { checkpoints } => {
            let planner = run.load_planner(checkpoints.planner.as_deref())?;
            let bank = run.load_bank(checkpoints.dynamics.as_deref())?;
            let spawns = held_out_spawns(c, &run.task);
            let (report, _) = evaluate(c, &run.task, &planner, &bank, &spawns)?;
            write_reports(&run, &[report], "eval")?;
        }
        Command::Ablate { demos, planner } => {
            let data = run.dataset(demos.as_deref())?;
            let planner = match planner {
                Some(p) => run.load_planner(Some(&p))?,
                None => fit_planner(c, &run.task, &data, progress("planner", c.planner.epochs))?.0,
            };
            let rows = run_ablation(c, &run.task, &data, &planner, |row| {
                eprintln!(
                    "{}: {} parameters, final loss {:.4e}, success {:.2}",
                    row.report.model, row.parameters, row.final_loss, row.report.success_rate
                )
            })?;
            write_ablation_csv(&rows, run.create("ablation.csv")?)?;
            let reports: Vec<EvalReport> = rows.into_iter().map(|r| r.report).collect();
            write_reports(&run, &reports, "ablation_report")?;
        }
        Command::ExportAttention {
            dynamics,
            threshold,
            spawn,
        } => {
            let bank = run.load_bank(dynamics.as_deref())?;
            let state = run.task.initial_world(&run.spawn(spawn))?.state_vector();
            let threshold = threshold.unwrap_or(c.rollout.attention_threshold);
            let edges = attention_edges(&bank, &run.task, &state, threshold)?;
            write_attention_csv(&edges, run.create("attention.csv")?)?;
            let visible = edges.iter().filter(|e| e.visible).count();
            println!("{visible} of {} edges above {threshold}", edges.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

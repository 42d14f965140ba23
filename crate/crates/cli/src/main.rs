//! `kdlab` — experiment driver for the balancing-parameter gradient lab.
//!
//! Subcommands: `simulate`, `train-teacher`, `distill`, `verify-taylor`,
//! `sweep-lambda`. Values come from an optional JSON config (`--config`)
//! with flags taking precedence; all outputs are CSV files plus network
//! checkpoints, deterministic per seed.
//!
//! Exit codes: 0 success, 2 bad config or usage, 3 missing input artifact.

mod config;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kdlab_core::nn::{self, Batch, Network, accuracy};
use kdlab_core::pipeline::{
    self, TrainConfig, records_to_csv, sweep_lambda, sweep_summary_to_csv, train_teacher,
    verify_taylor,
};
use kdlab_core::simulate::{SimulationRow, SimulationTable, run_simulation};

use config::{ExperimentConfig, NormalizedConfig, RegimeSelector};

const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING_INPUT: u8 = 3;

#[derive(Debug)]
enum CliError {
    /// Bad config file, bad flag value, or invalid parameter combination.
    Config(String),
    /// A required input artifact (teacher checkpoint) does not exist.
    MissingInput(String),
    /// Filesystem trouble while writing outputs.
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::MissingInput(msg) => write!(f, "missing input: {msg}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<pipeline::PipelineError> for CliError {
    fn from(e: pipeline::PipelineError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<nn::NnError> for CliError {
    fn from(e: nn::NnError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingInput(_) => EXIT_MISSING_INPUT,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "kdlab",
    version,
    about = "Gradient-geometry lab for the distillation balancing parameter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sweep of the loss-change bracket over sampled gradients
    Simulate(SimulateArgs),
    /// Pretrain a teacher with plain cross-entropy and save its checkpoint
    TrainTeacher(TrainTeacherArgs),
    /// Distill a student against a trained teacher checkpoint
    Distill(DistillArgs),
    /// Measure how the first-order prediction residual scales with eta
    VerifyTaylor(VerifyTaylorArgs),
    /// Train one student per fixed lambda and summarise the outcomes
    SweepLambda(SweepLambdaArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; flags override file values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for all randomness
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

impl CommonArgs {
    fn load(&self) -> Result<NormalizedConfig, CliError> {
        let raw = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                ExperimentConfig::parse(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        let mut normalized = raw.normalize();
        if let Some(seed) = self.seed {
            normalized.seed = seed;
        }
        Ok(normalized)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Angle regime: acute, obtuse, full, or both
    #[arg(long)]
    regime: Option<String>,
    /// Number of Monte Carlo trials per regime
    #[arg(long)]
    trials: Option<u64>,
    /// Lambda grid size (points, endpoints included)
    #[arg(long)]
    grid: Option<usize>,
    /// Lower gradient-magnitude bound
    #[arg(long)]
    mag_lo: Option<f64>,
    /// Upper gradient-magnitude bound
    #[arg(long)]
    mag_hi: Option<f64>,
}

#[derive(Args)]
struct TrainTeacherArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Teacher checkpoint produced by train-teacher
    #[arg(long, value_name = "PATH")]
    teacher: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    /// Lambda scheduling strategy
    #[arg(long, value_enum)]
    lambda_strategy: Option<StrategyFlag>,
    /// Lambda for the fixed strategy
    #[arg(long)]
    lambda: Option<f64>,
    /// Requested per-step loss change for the target-rate strategy (<= 0)
    #[arg(long, allow_hyphen_values = true)]
    target_delta: Option<f64>,
    /// Exponential smoothing of scheduler recommendations, in [0, 1)
    #[arg(long)]
    smoothing: Option<f64>,
}

#[derive(Args)]
struct VerifyTaylorArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Teacher checkpoint produced by train-teacher
    #[arg(long, value_name = "PATH")]
    teacher: PathBuf,
    /// Comma-separated learning rates, strictly descending
    #[arg(long, value_delimiter = ',', required = true)]
    etas: Vec<f64>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SweepLambdaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Teacher checkpoint produced by train-teacher
    #[arg(long, value_name = "PATH")]
    teacher: PathBuf,
    /// Comma-separated fixed lambdas, each in (0, 1)
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    #[command(flatten)]
    train: TrainFlags,
}

/// Training knobs shared by every training-flavoured subcommand.
#[derive(Args)]
struct TrainFlags {
    /// Learning rate
    #[arg(long)]
    eta: Option<f64>,
    /// Number of SGD steps
    #[arg(long)]
    steps: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Softmax temperature for the distillation loss
    #[arg(long)]
    temperature: Option<f64>,
    /// Dataset noise level
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyFlag {
    Fixed,
    MaxDescent,
    MinDescent,
    TargetRate,
}

impl StrategyFlag {
    fn config_name(&self) -> &'static str {
        match self {
            StrategyFlag::Fixed => "fixed",
            StrategyFlag::MaxDescent => "max_descent",
            StrategyFlag::MinDescent => "min_descent",
            StrategyFlag::TargetRate => "target_rate",
        }
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut NormalizedConfig) {
        if let Some(eta) = self.eta {
            cfg.train.eta = eta;
        }
        if let Some(steps) = self.steps {
            cfg.train.steps = steps;
        }
        if let Some(batch_size) = self.batch_size {
            cfg.train.batch_size = batch_size;
        }
        if let Some(t) = self.temperature {
            cfg.train.temperature = t;
        }
        if let Some(noise) = self.noise {
            cfg.dataset.noise = noise;
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::TrainTeacher(args) => cmd_train_teacher(args),
        Command::Distill(args) => cmd_distill(args),
        Command::VerifyTaylor(args) => cmd_verify_taylor(args),
        Command::SweepLambda(args) => cmd_sweep_lambda(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kdlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(regime) = &args.regime {
        cfg.simulation.regime = regime.clone();
    }
    if let Some(trials) = args.trials {
        cfg.simulation.trials = trials;
    }
    if let Some(grid) = args.grid {
        cfg.simulation.lambda_grid = grid;
    }
    if let Some(lo) = args.mag_lo {
        cfg.simulation.mag_lo = lo;
    }
    if let Some(hi) = args.mag_hi {
        cfg.simulation.mag_hi = hi;
    }
    let selector: RegimeSelector = cfg
        .simulation
        .regime
        .parse()
        .map_err(|e: String| CliError::Config(format!("simulation.regime: {e}")))?;

    let mut rows: Vec<SimulationRow> = Vec::new();
    for regime in selector.regimes() {
        let spec = cfg.trial_spec(regime);
        let table =
            run_simulation(&spec).map_err(|e| CliError::Config(format!("simulation: {e}")))?;
        rows.extend(table.rows);
    }
    let table = SimulationTable { rows };
    let path = output::write_artifact(&args.common.out, "simulation.csv", &cfg, &table.to_csv())?;

    for regime in selector.regimes() {
        if let Some(s) = table.summary(regime) {
            println!(
                "{}: min Q = {:.6e}, mean Q = {:.6e}",
                s.regime, s.min_q, s.mean_q
            );
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_dataset(cfg: &NormalizedConfig) -> Result<(Batch, Batch), CliError> {
    kdlab_core::data::generate(&cfg.dataset_spec().map_err(CliError::Config)?)
        .map_err(|e| CliError::Config(format!("dataset: {e}")))
}

fn train_config(cfg: &NormalizedConfig) -> Result<TrainConfig, CliError> {
    let tc = cfg.train_config().map_err(CliError::Config)?;
    tc.validate()?;
    Ok(tc)
}

fn cmd_train_teacher(args: TrainTeacherArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    args.train.apply(&mut cfg);
    let tc = train_config(&cfg)?;
    let (train, test) = load_dataset(&cfg)?;

    let teacher = train_teacher(&tc, &train)?;
    let test_acc = accuracy(&teacher.network, &test)?;

    let mut log = String::from("step,loss_cls\n");
    for (i, loss) in teacher.step_losses.iter().enumerate() {
        log.push_str(&format!("{i},{loss}\n"));
    }
    output::write_artifact(&args.common.out, "teacher_log.csv", &cfg, &log)?;
    let ckpt = nn::checkpoint_string(&teacher.network, tc.temperature, Some(&cfg.to_json()));
    std::fs::create_dir_all(&args.common.out)?;
    let ckpt_path = args.common.out.join("teacher.ckpt");
    output::write_atomic(&ckpt_path, &ckpt)?;

    println!(
        "teacher: train accuracy {:.4}, test accuracy {:.4}",
        teacher.train_accuracy, test_acc
    );
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn load_teacher(path: &Path) -> Result<(Network, f64), CliError> {
    if !path.exists() {
        return Err(CliError::MissingInput(format!(
            "teacher checkpoint {} does not exist (run `kdlab train-teacher` first)",
            path.display()
        )));
    }
    nn::load_checkpoint(path)
        .map_err(|e| CliError::Config(format!("teacher checkpoint {}: {e}", path.display())))
}

/// Distillation commands take architecture truth from the checkpoint.
fn distill_config(cfg: &NormalizedConfig, teacher: &Network) -> Result<TrainConfig, CliError> {
    let mut tc = cfg.train_config().map_err(CliError::Config)?;
    tc.teacher_sizes = teacher.layer_sizes().to_vec();
    tc.validate()?;
    Ok(tc)
}

fn cmd_distill(args: DistillArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    args.train.apply(&mut cfg);
    if let Some(strategy) = args.lambda_strategy {
        cfg.train.lambda_strategy = strategy.config_name().to_string();
    }
    if let Some(lambda) = args.lambda {
        cfg.train.fixed_lambda = lambda;
    }
    if let Some(td) = args.target_delta {
        cfg.train.target_delta = td;
    }
    if let Some(s) = args.smoothing {
        cfg.train.smoothing = s;
    }

    let (teacher, _ckpt_temp) = load_teacher(&args.teacher)?;
    cfg.train.teacher_sizes = teacher.layer_sizes().to_vec();
    let tc = distill_config(&cfg, &teacher)?;
    let (train, test) = load_dataset(&cfg)?;

    let mut student = Network::init(
        &tc.student_sizes,
        tc.activation,
        &mut kdlab_core::rng::stream_rng(tc.seed, kdlab_core::rng::STREAM_STUDENT_INIT),
    )
    .map_err(pipeline::PipelineError::from)?;
    let records = pipeline::run_training_from(&tc, &train, &teacher, &mut student)?;

    output::write_artifact(
        &args.common.out,
        "distill_steps.csv",
        &cfg,
        &records_to_csv(&records),
    )?;
    let ckpt = nn::checkpoint_string(&student, tc.temperature, Some(&cfg.to_json()));
    let ckpt_path = args.common.out.join("student.ckpt");
    output::write_atomic(&ckpt_path, &ckpt)?;

    let final_acc = accuracy(&student, &test)?;
    let descents = records.iter().filter(|r| r.actual_delta < 0.0).count();
    println!(
        "distilled {} steps ({} descending); student test accuracy {:.4}",
        records.len(),
        descents,
        final_acc
    );
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn cmd_verify_taylor(args: VerifyTaylorArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    args.train.apply(&mut cfg);
    let (teacher, _) = load_teacher(&args.teacher)?;
    cfg.train.teacher_sizes = teacher.layer_sizes().to_vec();
    let tc = distill_config(&cfg, &teacher)?;
    let (train, _) = load_dataset(&cfg)?;

    let report = verify_taylor(&tc, &train, &teacher, &args.etas)?;
    let path = output::write_artifact(
        &args.common.out,
        "taylor_report.csv",
        &cfg,
        &report.to_csv(),
    )?;

    for (i, (eta, mar)) in report
        .eta_values
        .iter()
        .zip(&report.mean_abs_residual)
        .enumerate()
    {
        if i == 0 {
            println!("eta {eta:>10}: mean |residual| = {mar:.6e}");
        } else {
            println!(
                "eta {eta:>10}: mean |residual| = {mar:.6e} (ratio {:.4})",
                report.residual_ratio[i - 1]
            );
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep_lambda(args: SweepLambdaArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    args.train.apply(&mut cfg);
    let (teacher, _) = load_teacher(&args.teacher)?;
    cfg.train.teacher_sizes = teacher.layer_sizes().to_vec();
    let tc = distill_config(&cfg, &teacher)?;
    let (train, test) = load_dataset(&cfg)?;

    let arms = sweep_lambda(&tc, &train, &test, &teacher, &args.lambdas)?;
    let path = output::write_artifact(
        &args.common.out,
        "sweep_summary.csv",
        &cfg,
        &sweep_summary_to_csv(&arms),
    )?;
    for (i, arm) in arms.iter().enumerate() {
        output::write_artifact(
            &args.common.out,
            &format!("sweep_steps_{i}.csv"),
            &cfg,
            &records_to_csv(&arm.records),
        )?;
        println!(
            "lambda {:>5}: final loss {:.6}, test accuracy {:.4}",
            arm.lambda, arm.final_loss_total, arm.test_accuracy
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

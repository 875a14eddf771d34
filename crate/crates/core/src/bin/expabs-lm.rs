//! Command-line front end: single runs, τ grids and the Adult comparison.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use expabs_lm::bench::{
    adult_comparison, emit_results, run_plan, summarize, AdultConfig, ExperimentPlan, RunRecord,
    DEFAULT_REPETITIONS, DEFAULT_TAU_GRID,
};
use expabs_lm::data::{load_delimited, RawData, RawTargets, SchemaConfig};
use expabs_lm::trainer::{Mode, ResidualForm, Speedups, SupersabRule};
use expabs_lm::{Result, TrainerConfig};

#[derive(Parser)]
#[command(
    name = "expabs-lm",
    version,
    about = "LM training of MLPs with a trainable exponential error measure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its log.
    Train(TrainArgs),
    /// Run the fixed-vs-dynamic τ grid with repetitions.
    Bench(BenchArgs),
    /// Adult comparison with the fixed configuration.
    Adult(AdultArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Dynamic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Fixed => Mode::Fixed,
            ModeArg::Dynamic => Mode::Dynamic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpeedupArg {
    None,
    Momentum,
    Full,
}

impl From<SpeedupArg> for Speedups {
    fn from(s: SpeedupArg) -> Speedups {
        match s {
            SpeedupArg::None => Speedups::None,
            SpeedupArg::Momentum => Speedups::Momentum,
            SpeedupArg::Full => Speedups::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ResidualArg {
    SquareRoot,
    ErrorSum,
    PerOutput,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Prose,
    Pseudocode,
}

#[derive(Args)]
struct DataArgs {
    /// Delimited data file.
    #[arg(long)]
    dataset: PathBuf,
    /// TOML schema describing the columns.
    #[arg(long)]
    schema: PathBuf,
    /// Hidden layer width. Defaults to the schema value, then inputs + outputs.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainerArgs {
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "eta-plus")]
    eta_plus: Option<f64>,
    #[arg(long = "eta-minus")]
    eta_minus: Option<f64>,
    #[arg(long = "mu-init")]
    mu_init: Option<f64>,
    /// Least-squares form handed to the LM solve.
    #[arg(long, value_enum)]
    residual: Option<ResidualArg>,
    /// Which SuperSAB sign test to use.
    #[arg(long = "supersab-rule", value_enum)]
    supersab_rule: Option<RuleArg>,
}

impl TrainerArgs {
    fn apply(&self, mut cfg: TrainerConfig) -> TrainerConfig {
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.eta_plus {
            cfg.eta_plus = v;
        }
        if let Some(v) = self.eta_minus {
            cfg.eta_minus = v;
        }
        if let Some(v) = self.mu_init {
            cfg.mu_init = v;
        }
        if let Some(v) = self.residual {
            cfg.residual = match v {
                ResidualArg::SquareRoot => ResidualForm::SquareRoot,
                ResidualArg::ErrorSum => ResidualForm::ErrorSum,
                ResidualArg::PerOutput => ResidualForm::PerOutput,
            };
        }
        if let Some(v) = self.supersab_rule {
            cfg.supersab_rule = match v {
                RuleArg::Prose => SupersabRule::Prose,
                RuleArg::Pseudocode => SupersabRule::Pseudocode,
            };
        }
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    trainer: TrainerArgs,
    #[arg(long, value_enum, default_value = "dynamic")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, value_enum, default_value = "full")]
    speedup: SpeedupArg,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    trainer: TrainerArgs,
    /// Modes to run, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["fixed", "dynamic"])]
    mode: Vec<ModeArg>,
    /// Initial τ values, comma separated. Defaults to the 16-value grid.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    reps: usize,
    /// Dynamic-mode speed-up variants, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["full"])]
    speedup: Vec<SpeedupArg>,
}

#[derive(Args)]
struct AdultArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-iter", default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load(dataset: &Path, schema: &Path) -> Result<(SchemaConfig, RawData)> {
    let schema = SchemaConfig::load(schema)?;
    let raw = load_delimited(dataset, &schema)?;
    info!(
        "{}: {} patterns, {} dropped",
        schema.name,
        raw.len(),
        raw.dropped
    );
    Ok((schema, raw))
}

fn hidden_for(args: &DataArgs, schema: &SchemaConfig, raw: &RawData) -> usize {
    let outputs = match &raw.targets {
        RawTargets::Classes { classes, .. } => classes.len(),
        RawTargets::Values(v) => v.ncols(),
    };
    args.hidden
        .or(schema.hidden_nodes)
        .unwrap_or(raw.inputs.ncols() + outputs)
}

fn finish(plan: &ExperimentPlan, runs: &[RunRecord], out: &Path) -> Result<bool> {
    let grid = summarize(&runs.iter().map(|r| r.summary.clone()).collect::<Vec<_>>())?;
    let written = emit_results(&grid, runs, out)?;
    let plan_path = out.join("plan.json");
    let text = serde_json::to_string_pretty(plan).expect("plan serialises");
    std::fs::write(&plan_path, text).map_err(|e| expabs_lm::Error::Io {
        path: plan_path.clone(),
        source: e,
    })?;
    let failed = runs.iter().filter(|r| !r.summary.completed).count();
    for c in &grid.cap_hits {
        println!(
            "{} {} {}: cap hits {}/{}",
            c.dataset, c.mode, c.speedups, c.cap_hits, c.runs
        );
    }
    println!(
        "{} runs, {} failed, {} files under {}",
        runs.len(),
        failed,
        written.len() + 1,
        out.display()
    );
    Ok(failed == 0)
}

fn cmd_train(a: TrainArgs) -> Result<bool> {
    let (schema, raw) = load(&a.data.dataset, &a.data.schema)?;
    let mut plan = ExperimentPlan::new(schema.name.clone(), hidden_for(&a.data, &schema, &raw));
    plan.taus = vec![a.tau];
    plan.modes = vec![a.mode.into()];
    plan.speedups = vec![a.speedup.into()];
    plan.repetitions = 1;
    plan.base_seed = a.data.seed;
    plan.config = a.trainer.apply(plan.config);
    let runs = run_plan(&plan, &raw, 1)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&runs[0].summary).expect("summary serialises")
    );
    finish(&plan, &runs, &a.data.out)
}

fn cmd_bench(a: BenchArgs) -> Result<bool> {
    let (schema, raw) = load(&a.data.dataset, &a.data.schema)?;
    let mut plan = ExperimentPlan::new(schema.name.clone(), hidden_for(&a.data, &schema, &raw));
    plan.taus = if a.tau.is_empty() {
        DEFAULT_TAU_GRID.to_vec()
    } else {
        a.tau
    };
    plan.modes = a.mode.into_iter().map(Mode::from).collect();
    plan.speedups = a.speedup.into_iter().map(Speedups::from).collect();
    plan.repetitions = a.reps;
    plan.base_seed = a.data.seed;
    plan.config = a.trainer.apply(plan.config);
    info!("{} runs planned", plan.run_count());
    let runs = run_plan(&plan, &raw, a.data.jobs)?;
    finish(&plan, &runs, &a.data.out)
}

fn cmd_adult(a: AdultArgs) -> Result<bool> {
    let (_, raw) = load(&a.dataset, &a.schema)?;
    let cfg = AdultConfig::default();
    let counts = cfg.counts_for(raw.len());
    println!("patience      {}", cfg.patience);
    println!("eta_plus      {}", cfg.eta_plus);
    println!("eta_minus     {}", cfg.eta_minus);
    println!("tau_init      {}", cfg.tau_init);
    println!("alpha         {}", cfg.alpha);
    println!("hidden_nodes  {}", cfg.hidden_nodes);
    println!(
        "split         {} / {} / {}",
        counts[0], counts[1], counts[2]
    );
    let report = adult_comparison(&raw, &cfg, a.reps, a.seed, a.max_iter, a.jobs)?;
    if let Some(s) = &report.test_error {
        println!(
            "test error (1 - RecRate): median {:.4}  Q1 {:.4}  Q3 {:.4}  min {:.4}  max {:.4}  n {}",
            s.median, s.q1, s.q3, s.min, s.max, s.n
        );
    }
    finish(&report.plan, &report.runs, &a.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Adult(a) => cmd_adult(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

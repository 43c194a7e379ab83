use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdep::config::{LinkName, ModeName, RunConfig};
use cdep::parallel::thread_pool;
use cdep::pipeline;
use cdep::simulate::{Dgp, SimConfig};
use cdep::AppError;

#[derive(Parser)]
#[command(name = "cdep", version, args_override_self = true)]
#[command(about = "Sensitivity of treatment effects to selection on unobservables")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound curves, confidence bands, breakdown points and diagnostics.
    Analyze(RunArgs),
    /// Leave-out-variable-k and overlap tables only.
    Diagnose(RunArgs),
    /// A single bound pair, without inference.
    Bounds {
        #[command(flatten)]
        run: RunArgs,
        /// Estimand, e.g. `ate` or `cate:age=30`.
        #[arg(long)]
        estimand: String,
        #[arg(long)]
        c: f64,
    },
    /// Monte Carlo coverage of the confidence bands.
    Simulate(SimArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Quantile-regression design, e.g. "1 + x + age + x:age".
    #[arg(long)]
    q_formula: Option<String>,
    /// Propensity design, e.g. "1 + age + age^2".
    #[arg(long)]
    r_formula: Option<String>,
    #[arg(long, value_enum)]
    link: Option<LinkArg>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated values, or start:stop:points.
    #[arg(long)]
    c_grid: Option<String>,
    #[arg(long)]
    tau_step: Option<f64>,
    #[arg(long)]
    nquad: Option<usize>,
    /// Bootstrap draws; 0 skips inference.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    eta_scale: Option<f64>,
    #[arg(long)]
    kappa_scale: Option<f64>,
    /// Semicolon-separated estimands (ate, att, mean0, mean1, cate:w=v,...,
    /// cqte:tau:w=v,...).
    #[arg(long, value_delimiter = ';')]
    estimands: Option<Vec<String>>,
    /// Conclusion to test, e.g. "ate:lower>=0"; repeatable.
    #[arg(long)]
    threshold: Vec<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LinkArg {
    Logit,
    Probit,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Hdd,
    Standard,
}

impl From<ModeArg> for ModeName {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hdd => ModeName::Hdd,
            ModeArg::Standard => ModeName::Standard,
        }
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value = "linear-normal")]
    dgp: Dgp,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "0:1:21")]
    c_grid: String,
    #[arg(long, default_value_t = 500)]
    nquad: usize,
    #[arg(long, default_value_t = 0.005)]
    tau_step: f64,
    #[arg(long, value_enum, default_value = "hdd")]
    mode: ModeArg,
    #[arg(long, default_value = "cdep-sim")]
    out_dir: PathBuf,
}

fn parse_c_grid(s: &str) -> Result<Vec<f64>, AppError> {
    let bad = || AppError::Config(format!("cannot parse c grid `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return match k {
            0 => Err(bad()),
            1 => Ok(vec![a]),
            _ => Ok((0..k).map(|j| a + (b - a) * j as f64 / (k - 1) as f64).collect()),
        };
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, AppError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.input {
            c.input = Some(v);
        }
        if let Some(v) = self.outcome {
            c.outcome = v;
        }
        if let Some(v) = self.treatment {
            c.treatment = v;
        }
        if let Some(v) = self.covariates {
            c.covariates = v.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if self.q_formula.is_some() {
            c.q_formula = self.q_formula;
        }
        if self.r_formula.is_some() {
            c.r_formula = self.r_formula;
        }
        if let Some(v) = self.link {
            c.link = match v {
                LinkArg::Logit => LinkName::Logit,
                LinkArg::Probit => LinkName::Probit,
            };
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.c_grid {
            c.c_grid = parse_c_grid(&v)?;
        }
        if let Some(v) = self.tau_step {
            c.tau_step = v;
        }
        if let Some(v) = self.nquad {
            c.n_quad = v;
        }
        if let Some(v) = self.draws {
            c.draws = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.mode {
            c.mode = v.into();
        }
        if self.eta_scale.is_some() {
            c.eta_scale = self.eta_scale;
        }
        if let Some(v) = self.kappa_scale {
            c.kappa_scale = v;
        }
        if let Some(v) = self.estimands {
            c.estimands = v.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if !self.threshold.is_empty() {
            c.thresholds = self.threshold;
        }
        if let Some(v) = self.out_dir {
            c.out_dir = v;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let pool = thread_pool(cli.threads);
    match cli.command {
        Command::Analyze(args) => {
            let cfg = args.resolve()?;
            let report = pool.install(|| pipeline::analyze(&cfg))?;
            for b in &report.breakdown {
                println!("{} {}{}: breakdown point {:.4}", b.estimand, b.conclusion, b.threshold, b.c_bp);
            }
            for w in &report.preconditions.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Diagnose(args) => {
            let cfg = args.resolve()?;
            pool.install(|| pipeline::diagnose(&cfg))?;
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Bounds { run, estimand, c } => {
            let cfg = run.resolve()?;
            let sample = pipeline::load_sample(&cfg)?;
            let pair = pipeline::bounds_sample(&cfg, sample, &estimand, c)?;
            println!("{}\t{}", pair.lower, pair.upper);
        }
        Command::Simulate(a) => {
            let sim = SimConfig {
                dgp: a.dgp,
                n: a.n,
                reps: a.reps,
                draws: a.draws,
                seed: a.seed,
                alpha: a.alpha,
                c_grid: parse_c_grid(&a.c_grid)?,
                n_quad: a.nquad,
                tau_step: a.tau_step,
                mode: a.mode.into(),
            };
            let table = pool.install(|| sim.run())?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| AppError::io(&a.out_dir, e))?;
            cdep::report::write_file(&a.out_dir, "coverage.csv", &table.to_csv())?;
            let json = serde_json::to_string_pretty(&table).expect("table serializes") + "\n";
            cdep::report::write_file(&a.out_dir, "coverage.json", &json)?;
            print!("{}", table.to_csv());
            println!("uniform coverage {} ({} of {} replications failed)", table.uniform, table.failed, table.reps);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

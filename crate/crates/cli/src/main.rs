mod config;
mod output;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entrofact::inequalities::WeightPreset;
use entrofact::lattice::Region;
use entrofact::mc::mixing_time_scaling;
use entrofact::model::{Coupling, SpinModel};
use entrofact::report::{hash_of, CheckReport};
use serde_json::json;

use config::{parse_boundary, parse_range, parse_weights, Check, ExperimentConfig, ModelSpec, RegionSpec};
use suite::{Outcome, Series};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Cap(String),
    #[error(transparent)]
    Lib(#[from] entrofact::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Cap(_) | CliError::Lib(entrofact::Error::StateSpaceTooLarge { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "entrofact", version, about = "Exact entropy factorization and block dynamics experiments on small lattice volumes")]
struct Cli {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every randomized check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "ENTROFACT_THREADS")]
    threads: Option<usize>,
    /// Largest state space `q^|V|` to tabulate.
    #[arg(long, global = true)]
    cap_states: Option<u64>,
    /// Output directory for report.jsonl, summary.txt and series/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the checks listed in the config.
    Run(SystemArgs),
    /// Runs a preset with known answers.
    Verify {
        #[arg(long, value_enum, default_value = "product-ground-truth")]
        preset: Preset,
    },
    /// Estimates constants: δ̂, Ĉ, the spectral gap, MLSI and LSI.
    Constants {
        #[command(flatten)]
        system: SystemArgs,
        /// Comma-separated subset of delta, c-hat, gap, mlsi, lsi.
        #[arg(long, value_delimiter = ',')]
        which: Vec<String>,
    },
    /// Fits the decay of boundary influence.
    Ssm(SystemArgs),
    /// Spectral gap, MLSI, LSI, TV mixing and entropy decay.
    Dynamics(SystemArgs),
    /// Checks the multiscale decomposition on every rectangle of the given classes (d = 2).
    Geometry {
        /// Scale indices; default the two smallest with a nontrivial decomposition.
        #[arg(long, value_delimiter = ',')]
        k: Vec<i64>,
    },
    /// Continuous-time Monte Carlo of the block dynamics.
    Simulate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Fit mixing time against log |V| over the chain range instead.
        #[arg(long)]
        scaling: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    ProductGroundTruth,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Ising,
    Potts,
    HardCore,
    Colorings,
}

#[derive(Args, Default)]
struct SystemArgs {
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// JSON model spec, as in the config's "model" field.
    #[arg(long, conflicts_with = "model")]
    model_file: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    field: Option<f64>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Chain length or range, e.g. 8 or 2..=8.
    #[arg(long, conflicts_with = "rect")]
    chain: Option<String>,
    /// Rectangle side lengths, e.g. 3x4.
    #[arg(long)]
    rect: Option<String>,
    /// free, plus, minus, sweep or a spin value.
    #[arg(long)]
    boundary: Option<String>,
    /// singletons, even-odd, full or up-to-<m>.
    #[arg(long)]
    weights: Option<String>,
    /// Random test functions per randomized check.
    #[arg(long)]
    samples: Option<usize>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl SystemArgs {
    fn model_spec(&self) -> Result<Option<ModelSpec>, CliError> {
        if let Some(path) = &self.model_file {
            let text = std::fs::read_to_string(path)?;
            return serde_json::from_str(&text).map(Some).map_err(|e| usage(format!("{}: {e}", path.display())));
        }
        let Some(kind) = self.model else { return Ok(None) };
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("--{name} is required for this model")));
        Ok(Some(match kind {
            ModelKind::Ising => ModelSpec::Ising { beta: need(self.beta, "beta")?, field: self.field.unwrap_or(0.0) },
            ModelKind::Potts => {
                let q = self.q.ok_or_else(|| usage("--q is required for potts"))?;
                let field = self.field.map(|h| (0..q).map(|s| if s == 0 { h } else { 0.0 }).collect()).unwrap_or_default();
                ModelSpec::Potts { q, beta: need(self.beta, "beta")?, field }
            }
            ModelKind::HardCore => ModelSpec::HardCore { lambda: need(self.lambda, "lambda")? },
            ModelKind::Colorings => ModelSpec::Colorings { q: self.q.ok_or_else(|| usage("--q is required for colorings"))? },
        }))
    }

    fn region_spec(&self) -> Result<Option<RegionSpec>, CliError> {
        if let Some(c) = &self.chain {
            let (a, b) = parse_range(c)?;
            return Ok(Some(if a == b { RegionSpec::Chain(a) } else { RegionSpec::Chains { from: a, to: b } }));
        }
        if let Some(r) = &self.rect {
            let sides = r.split('x').map(|s| s.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| usage(format!("bad rectangle {r}")))?;
            return Ok(Some(RegionSpec::Rectangle(sides)));
        }
        Ok(None)
    }
}

fn load_config(cli: &Cli, sys: &SystemArgs, checks: Option<Vec<Check>>) -> Result<ExperimentConfig, CliError> {
    let model = sys.model_spec()?;
    let region = sys.region_spec()?;
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let model = model.clone().ok_or_else(|| usage("give --config or --model/--model-file"))?;
            let region = region.clone().ok_or_else(|| usage("give --config or --chain/--rect"))?;
            ExperimentConfig::new(model, region, Check::ALL.to_vec())
        }
    };
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(r) = region {
        cfg.region = r;
    }
    if let Some(b) = &sys.boundary {
        cfg.boundary = parse_boundary(b)?;
    }
    if let Some(w) = &sys.weights {
        cfg.weights = parse_weights(w)?;
    }
    if let Some(n) = sys.samples {
        cfg.samples = n;
    }
    if let Some(c) = checks {
        cfg.checks = c;
    }
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.cap_states = cli.cap_states.or(cfg.cap_states);
    cfg.out = cli.out.clone().or(cfg.out);
    cfg.threads = cli.threads.or(cfg.threads);
    Ok(cfg)
}

fn parse_which(which: &[String]) -> Result<Vec<Check>, CliError> {
    if which.is_empty() {
        return Ok(vec![Check::Delta, Check::BestConstant, Check::Gap]);
    }
    which
        .iter()
        .map(|w| match w.as_str() {
            "delta" => Ok(Check::Delta),
            "c-hat" => Ok(Check::BestConstant),
            "gap" => Ok(Check::Gap),
            "mlsi" => Ok(Check::Mlsi),
            "lsi" => Ok(Check::Lsi),
            other => Err(usage(format!("unknown constant {other}; use delta, c-hat, gap, mlsi or lsi"))),
        })
        .collect()
}

/// No pair interaction, site weights `e^{w_s}`.
fn product_model(w: &[f64]) -> Result<SpinModel, CliError> {
    Ok(SpinModel::new(w.len(), vec![vec![Coupling::Finite(0.0); w.len()]; w.len()], w.to_vec())?)
}

/// Ground truth for a product measure under even/odd blocks: Shearer is
/// tight, so `δ = Ĉ = 1`, and the two-block heat bath has gap exactly 1.
fn product_ground_truth(outcome: &mut Outcome) {
    let mut truth = Vec::new();
    for r in &outcome.reports {
        let (target, tol) = match r.name.as_str() {
            "delta" | "best-constant" => (1.0, 1e-6),
            "gap" => (1.0, 1e-9),
            _ => continue,
        };
        let err = (r.lhs - target).abs();
        truth.push(CheckReport::new(format!("ground-truth/{}", r.name), r.lhs, target, err <= tol).with("tolerance", tol).with("hard", true));
    }
    outcome.reports.extend(truth);
}

fn finish(cli: &Cli, hash: &str, config: serde_json::Value, outcome: &Outcome) -> Result<ExitCode, CliError> {
    print!("{}", output::summary(outcome));
    if let Some(out) = &cli.out {
        output::write(out, hash, &config, outcome)?;
    }
    Ok(if outcome.hard_failures() > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run_suite(cli: &Cli, cfg: &ExperimentConfig, post: impl FnOnce(&mut Outcome)) -> Result<ExitCode, CliError> {
    let regions = cfg.validate()?;
    let hash = cfg.hash();
    if let Some(out) = &cfg.out {
        output::prepare(out, &hash)?;
    }
    let mut outcome = suite::run(cfg, &regions)?;
    post(&mut outcome);
    let config = serde_json::to_value(cfg).map_err(entrofact::Error::from)?;
    finish(cli, &hash, config, &outcome)
}

fn main_inner(cli: &Cli) -> Result<ExitCode, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.to_string()))?;
    }
    let cfg_for = |sys: &SystemArgs, checks: Option<Vec<Check>>| load_config(cli, sys, checks);
    match &cli.command {
        Command::Run(sys) => {
            if cli.config.is_none() && sys.model.is_none() && sys.model_file.is_none() {
                return Err(usage("run needs --config (or model and region flags)"));
            }
            run_suite(cli, &cfg_for(sys, None)?, |_| ())
        }
        Command::Verify { preset: Preset::ProductGroundTruth } => {
            let mut cfg = ExperimentConfig::new(
                ModelSpec::Custom(product_model(&[0.3, -0.8, 0.0])?),
                RegionSpec::Rectangle(vec![2, 3]),
                vec![Check::Structural, Check::Shearer, Check::Tensorization, Check::Reduction, Check::Jensen, Check::Delta, Check::BestConstant, Check::Gap],
            );
            cfg.seed = Some(cli.seed.unwrap_or(1));
            cfg.out = cli.out.clone();
            run_suite(cli, &cfg, product_ground_truth)
        }
        Command::Constants { system, which } => run_suite(cli, &cfg_for(system, Some(parse_which(which)?))?, |_| ()),
        Command::Ssm(sys) => {
            let mut cfg = cfg_for(sys, Some(vec![Check::Ssm]))?;
            if sys.boundary.is_none() && cli.config.is_none() {
                cfg.boundary = config::BoundarySpec::Free;
            }
            run_suite(cli, &cfg, |_| ())
        }
        Command::Dynamics(sys) => run_suite(cli, &cfg_for(sys, Some(vec![Check::Gap, Check::Mlsi, Check::Lsi, Check::Mixing, Check::Decay]))?, |_| ()),
        Command::Geometry { k } => {
            let ks = if k.is_empty() { suite::admissible_ks(2) } else { k.clone() };
            if ks.iter().any(|&k| k < 1) {
                return Err(usage("scale indices must be positive"));
            }
            let config = json!({ "command": "geometry", "k": ks });
            let hash = hash_of(&config);
            if let Some(out) = &cli.out {
                output::prepare(out, &hash)?;
            }
            finish(cli, &hash, config, &suite::geometry_sweep(&ks))
        }
        Command::Simulate { system, horizon, replicas, scaling } => {
            let mut cfg = cfg_for(system, Some(vec![Check::Simulate]))?;
            if system.weights.is_none() && cli.config.is_none() {
                // even/odd blocks on a long chain mean 2^(n/2) states per resample
                cfg.weights = WeightPreset::Singletons;
            }
            if let Some(h) = horizon {
                cfg.mc.horizon = *h;
            }
            if let Some(r) = replicas {
                cfg.mc.replicas = *r;
            }
            if !*scaling {
                return run_suite(cli, &cfg, |_| ());
            }
            simulate_scaling(cli, cfg)
        }
    }
}

fn simulate_scaling(cli: &Cli, cfg: ExperimentConfig) -> Result<ExitCode, CliError> {
    let RegionSpec::Chains { .. } = cfg.region else {
        return Err(usage("--scaling needs a chain range, e.g. --chain 2..=10"));
    };
    let seed = cfg.seed.ok_or_else(|| usage("a seed is required for simulation (--seed)"))?;
    let regions: Vec<Region> = cfg.region.regions()?;
    let hash = cfg.hash();
    if let Some(out) = &cfg.out {
        output::prepare(out, &hash)?;
    }
    let (_, tau) = cfg.boundary.conditions(cfg.model.q()).remove(0);
    let model = cfg.model.build(1)?;
    let mc = entrofact::mc::McConfig { seed, ..cfg.mc.clone() };
    let table = mixing_time_scaling(&model, &regions, &tau, &cfg.weights, 1.0, cfg.cap().min(config::DEFAULT_CAP_STATES) as u128, &mc)?;
    let mut outcome = Outcome::default();
    for row in &table.rows {
        outcome.reports.push(
            CheckReport::new("mixing-scaling", row.value, 0.0, true)
                .with("sites", row.sites)
                .with("gamma", row.gamma)
                .with("method", &row.method)
                .with_seed(seed),
        );
    }
    outcome.reports.push(
        CheckReport::new("mixing-scaling/fit", table.fit.slope, table.fit.intercept, true).with("residuals", &table.fit.residuals).with_seed(seed),
    );
    outcome.series.push(Series {
        name: "scaling".into(),
        columns: vec![
            ("sites".into(), table.rows.iter().map(|r| r.sites as f64).collect()),
            ("value".into(), table.rows.iter().map(|r| r.value).collect()),
        ],
    });
    let config = serde_json::to_value(&cfg).map_err(entrofact::Error::from)?;
    finish(cli, &hash, config, &outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match main_inner(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safe_smc::experiment::{compare, run_experiment, ControllerMode, ExperimentConfig, ExperimentError};
use safe_smc::planner::PlanSpec;
use safe_smc::presets::Example2Variant;

#[derive(Parser)]
#[command(name = "safe-smc", version, about = "Safe sliding mode control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write trajectory.csv, metrics.json and gridscan.csv.
    Run(RunArgs),
    /// Run several controller modes from the same preset and initial state.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// JSON experiment file; flags given alongside it take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Example2Variant>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long = "tf")]
    t_f: Option<f64>,
    /// `scalar-trig:a,b`, `vector-cos:c1,c2,..`, `auto[:beta]` or `zero`.
    #[arg(long, value_parser = parse_plan, allow_hyphen_values = true)]
    plan: Option<PlanSpec>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Steps between recorded samples.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    no_disturbance: bool,
    #[arg(long)]
    ablation_printed_sign: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Lattice points per axis for gridscan.csv; 0 skips the scan.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ControllerMode>,
    /// Exit with status 1 when the run enters the unsafe set.
    #[arg(long)]
    assert_safe: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Overrides,
    /// Extra JSON experiment files, one run each.
    #[arg(long = "with")]
    with: Vec<PathBuf>,
    /// Modes to run from the common settings.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<ControllerMode>,
    #[arg(long, default_value = "out/compare")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    s.parse().map_err(|e: safe_smc::Error| e.to_string())
}

fn parse_plan(s: &str) -> Result<PlanSpec, String> {
    PlanSpec::parse(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<Example2Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown variant {s:?}; expected reference, text, third or caption")
    })
}

impl Overrides {
    fn build(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.preset = Some(p.clone());
            cfg.custom = None;
        }
        if self.variant.is_some() {
            cfg.variant = self.variant;
        }
        if let Some(x0) = &self.x0 {
            cfg.x0 = Some(x0.clone());
        }
        if self.t_f.is_some() {
            cfg.t_f = self.t_f;
        }
        if let Some(plan) = &self.plan {
            cfg.plan = Some(plan.clone());
        }
        if let Some(dt) = self.dt {
            cfg.sim.dt = dt;
        }
        if let Some(t_end) = self.t_end {
            cfg.sim.t_end = t_end;
        }
        if let Some(stride) = self.stride {
            cfg.sim.record_stride = stride;
        }
        if self.no_disturbance {
            cfg.sim.disturbance_on = false;
        }
        if self.ablation_printed_sign {
            cfg.sim.ablation_printed_sign = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.grid.is_some() {
            cfg.grid_resolution = self.grid;
        }
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<(), ExperimentError> {
    let mut cfg = args.common.build()?;
    if let Some(mode) = args.mode {
        cfg.sim.mode = mode;
    }
    if args.assert_safe {
        cfg.assert_safe = true;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    let outcome = run_experiment(&cfg)?;
    let r = &outcome.report;
    println!(
        "{} {}: safe={} tracking_sup={:?} post_tf_sigma_sup={:?} final_norm={:.4} -> {}",
        outcome.config.preset.as_deref().unwrap_or("custom"),
        outcome.config.sim.mode,
        r.safe,
        r.tracking_sup,
        r.post_tf_sigma_sup,
        r.final_norm,
        outcome.config.out.display()
    );
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<(), ExperimentError> {
    let base = args.common.build()?;
    let mut cfgs: Vec<ExperimentConfig> = args
        .modes
        .iter()
        .map(|&mode| {
            let mut c = base.clone();
            c.sim.mode = mode;
            c
        })
        .collect();
    for path in &args.with {
        cfgs.push(ExperimentConfig::from_path(path)?);
    }
    if cfgs.is_empty() {
        return Err(ExperimentError::Config("give --modes or --with".into()));
    }
    let table = compare(&cfgs, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&table).expect("json value"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => run_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("safe-smc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

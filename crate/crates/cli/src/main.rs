use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use cabin_rps::config::{ScenarioConfig, ScenarioId};
use cabin_rps::pipeline::{self, Evaluation, RangingReport, RunOptions};
use cabin_rps::visibility::{VisibilityMap, VisibilityState};
use clap::{Args, Parser, Subcommand};

/// Radio positioning simulation for an aircraft cabin.
#[derive(Debug, Parser)]
#[command(name = "cabin-rps", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify anchor visibility on the grid and write visibility.csv
    Visibility(Common),
    /// Sample reference positions and range measurements
    Ranges(Common),
    /// Run the grid filter over the sampled epochs
    Localize(Common),
    /// Error statistics and ECDF of the estimates
    Evaluate(Common),
    /// All stages in order
    Full(Common),
    /// Print the resolved configuration
    Config(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario: I (tag at 1.12 m), II (0.70 m) or III (boarding)
    #[arg(long, short)]
    scenario: Option<ScenarioId>,
    /// TOML scenario file; command-line flags override it
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out/<scenario>]
    #[arg(long, short)]
    out_dir: Option<PathBuf>,
    /// Number of static reference positions
    #[arg(long)]
    positions: Option<usize>,
    /// Worker threads (results do not depend on it)
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<(ScenarioConfig, RunOptions), Box<dyn Error>> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = ScenarioConfig::load(path)?;
                if let Some(id) = self.scenario {
                    if id != cfg.id() {
                        return Err(format!("--scenario {id} contradicts scenario {} in {}", cfg.id(), path.display()).into());
                    }
                }
                cfg
            }
            None => ScenarioConfig::defaults(self.scenario.unwrap_or(ScenarioId::I)),
        };
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
        }
        if let Some(n) = self.positions {
            cfg.scenario.positions = n;
        }
        cfg.validate()?;
        let out_dir = self
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(cfg.id().as_str()));
        let mut opts = RunOptions::new(out_dir);
        if let Some(t) = self.threads {
            if t == 0 {
                return Err("--threads must be at least 1".into());
            }
            opts = opts.with_threads(t);
        }
        Ok((cfg, opts))
    }
}

fn print_visibility(map: &VisibilityMap) {
    let pct = |s| 100.0 * map.fraction(s);
    println!(
        "visibility at {:.2} m: LOS {:.1}%  OLOS {:.1}%  NLOS {:.1}%  not receivable {:.1}%",
        map.height,
        pct(VisibilityState::Los),
        pct(VisibilityState::Olos),
        pct(VisibilityState::Nlos),
        pct(VisibilityState::NotReceivable)
    );
}

fn print_ranging(r: &RangingReport) {
    println!(
        "ranges: {} positions, {} attempts, {} valid ({:.1}%), {} outliers",
        r.positions,
        r.counts.total,
        r.counts.valid,
        100.0 * r.counts.valid_fraction(),
        r.counts.outliers
    );
}

fn print_evaluation(e: &Evaluation) {
    let s = &e.stats;
    println!(
        "errors: n {}  mean {:.3} m  rms {:.3} m  median {:.3} m  p75 {:.3} m  max {:.3} m",
        s.n, s.mean, s.rms, s.median, s.p75, s.max
    );
    if e.attempted > 0 {
        println!("valid measurements: {:.1}% of {}", 100.0 * e.valid_fraction(), e.attempted);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::Visibility(c) => {
            let (cfg, opts) = c.resolve()?;
            print_visibility(&pipeline::cmd_visibility(&cfg, &opts)?);
        }
        Command::Ranges(c) => {
            let (cfg, opts) = c.resolve()?;
            print_ranging(&pipeline::cmd_ranges(&cfg, &opts)?);
        }
        Command::Localize(c) => {
            let (cfg, opts) = c.resolve()?;
            let traj = pipeline::cmd_localize(&cfg, &opts)?;
            println!("trajectory: {} estimates", traj.len());
        }
        Command::Evaluate(c) => {
            let (cfg, opts) = c.resolve()?;
            print_evaluation(&pipeline::cmd_evaluate(&cfg, &opts)?);
        }
        Command::Full(c) => {
            let (cfg, opts) = c.resolve()?;
            let report = pipeline::cmd_full(&cfg, &opts)?;
            print_visibility(&report.visibility);
            print_ranging(&report.ranging);
            print_evaluation(&report.evaluation);
            println!("outputs in {}", opts.out_dir.display());
        }
        Command::Config(c) => {
            let (cfg, _) = c.resolve()?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

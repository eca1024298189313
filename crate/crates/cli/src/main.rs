//! `dslam`: run simulated SLAM deployments, evaluate trajectories, render reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dslam_core::harness::report::parse_csv;
use dslam_core::harness::{
    evaluate_ate, generate, run_centralized, run_distributed, to_csv, RunConfig, RunOutput, Scenario, ScenarioSpec,
    Topology, TrajectoryKind, TrajectoryRecord,
};

#[derive(Parser)]
#[command(name = "dslam", version, about = "Simulated distributed keyframe SLAM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over a simulated network of nodes.
    Run {
        /// Scenario file, or a catalog name such as LOOP.
        #[arg(long)]
        scenario: String,
        /// Topology file; three nodes on default links when omitted.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario in a single process with no peers.
    Oracle {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMS absolute trajectory error after alignment.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Rigid alignment only.
        #[arg(long)]
        no_scale: bool,
    },
    /// Render the metrics of a run directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_scenario(arg: &str, seed: Option<u64>) -> Result<Scenario> {
    let path = Path::new(arg);
    let mut spec = if path.exists() {
        ScenarioSpec::parse(&read(path)?).with_context(|| format!("in {arg}"))?
    } else if let Ok(kind) = arg.parse::<TrajectoryKind>() {
        ScenarioSpec::preset(kind, 0)
    } else {
        bail!("{arg}: no such scenario file or catalog name");
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(generate(&spec)?)
}

/// Keys the topology parser did not recognize are node tunables.
fn run_config(topology: &Topology) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in &topology.extra {
        cfg.node.set(k, v).with_context(|| "in topology file")?;
    }
    Ok(cfg)
}

fn save(dir: &Path, scenario: &Scenario, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "scenario.kv", &scenario.spec.to_kv())?;
    write(dir, "ground_truth.txt", &scenario.ground_truth.to_text())?;
    let mut events = String::new();
    for n in &out.nodes {
        let role = n.role.name().to_lowercase();
        write(dir, &format!("trajectory_{role}.txt"), &n.trajectory.to_text())?;
        for e in n.log.events() {
            events.push_str(&format!("{} {e}\n", n.role));
        }
    }
    write(dir, "events.log", &events)?;
    write(dir, "traffic.csv", &out.traffic.to_csv())?;
    write(dir, "metrics.csv", &to_csv(std::slice::from_ref(&out.metrics)))?;
    print!("{}", out.metrics.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, topology, seed, out } => {
            let sc = load_scenario(&scenario, seed)?;
            let topo = match topology {
                Some(p) => Topology::parse(&read(&p)?).with_context(|| format!("in {}", p.display()))?,
                None => Topology::three_node(),
            };
            let result = run_distributed(&sc, &topo, &run_config(&topo)?)?;
            save(&out, &sc, &result)
        }
        Command::Oracle { scenario, seed, out } => {
            let sc = load_scenario(&scenario, seed)?;
            let result = run_centralized(&sc, &RunConfig::default());
            save(&out, &sc, &result)
        }
        Command::Eval { est, gt, no_scale } => {
            let est = TrajectoryRecord::parse(&read(&est)?).with_context(|| format!("in {}", est.display()))?;
            let gt = TrajectoryRecord::parse(&read(&gt)?).with_context(|| format!("in {}", gt.display()))?;
            println!("{:.9}", evaluate_ate(&est, &gt, !no_scale)?);
            Ok(())
        }
        Command::Report { dir, format } => {
            let path = dir.join("metrics.csv");
            let reports = parse_csv(&read(&path)?)
                .map_err(anyhow::Error::msg)
                .with_context(|| format!("in {}", path.display()))?;
            match format {
                Format::Csv => print!("{}", to_csv(&reports)),
                Format::Text => {
                    for (i, r) in reports.iter().enumerate() {
                        if i > 0 {
                            println!();
                        }
                        print!("{}", r.to_text());
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dslam: {e:#}");
            ExitCode::FAILURE
        }
    }
}

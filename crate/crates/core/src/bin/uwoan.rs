use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use uwoan::scenario::{export_topology, sweep, sweep_csv, ScenarioError, SimConfig, SimReport, TopologyFormat};
use uwoan::sim_engine;

#[derive(Parser)]
#[command(name = "uwoan", version, about = "Underwater optical-acoustic network initialization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one deployment and write report.json, trace.log and topology files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeds 0..N for every attenuation value and write a CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated attenuation coefficients, 1/m.
        #[arg(long, value_delimiter = ',', required = true)]
        c_list: Vec<f64>,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Render the topology of a saved report.
    Topo {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } | ScenarioError::Parse(_) | ScenarioError::Invalid(_) => {
                Failure::Config(e.into())
            }
            ScenarioError::UnknownFormat(_) => Failure::Usage(e.into()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = SimConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let (report, trace) = sim_engine::trace(&cfg, seed)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let files = [
                ("report.json", report.to_json()),
                ("trace.log", sim_engine::format_trace(&trace)),
                ("topology.json", export_topology(&report, TopologyFormat::Json)),
                ("topology.dot", export_topology(&report, TopologyFormat::Dot)),
            ];
            for (name, body) in files {
                let path = out.join(name);
                fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            }
            println!(
                "seed {seed}: access {:.4}, dual-hop {:.4}, failed {}, unresolved {}",
                report.access_rate, report.dual_hop_rate, report.n_failed, report.n_unresolved
            );
        }
        Command::Sweep { config, c_list, seeds, out, threads } => {
            let cfg = SimConfig::load(&config)?;
            let reports = sweep(&cfg, &c_list, seeds, threads)?;
            let csv = sweep_csv(&reports)?;
            fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
            for s in uwoan::scenario::aggregate(&reports)? {
                println!(
                    "c0 {}: access {:.4} ± {:.4}, dual-hop {:.4}, max decomposition {:.2} s",
                    s.c0, s.access_rate.mean, s.access_rate.std, s.dual_hop_rate.mean, s.max_decomp_delay.mean
                );
            }
        }
        Command::Topo { report, format } => {
            let format: TopologyFormat = format.parse()?;
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let parsed: SimReport = serde_json::from_str(&text).context("parsing report")?;
            print!("{}", export_topology(&parsed, format));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

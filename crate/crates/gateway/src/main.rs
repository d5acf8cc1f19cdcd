use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bpguard_core::exec::Execution;
use bpguard_gateway::config::{load_config, ScenarioConfig};
use bpguard_gateway::graph_io::{load_graph, save_graph};
use bpguard_gateway::plan::{build, certify_graph, executive};
use bpguard_gateway::server::{serve, ServeOptions};
use bpguard_gateway::sim::{run_episode, EpisodeOptions};
use bpguard_gateway::trace::ForceScript;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bpguard",
    version,
    about = "Barrier-pair guarded shared control for a planar arm"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run every sampling loop on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the anchor graph and save it.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Output graph file.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the planning seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recertify every pair and edge of a graph; prints a JSON report.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Graph file written by `plan`.
        #[arg(long)]
        graph: PathBuf,
        /// Samples per pair on the boundary (as many again in the annulus).
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Overrides the certification seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a headless episode and write a CSV trace.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Graph file written by `plan`.
        #[arg(long)]
        graph: PathBuf,
        /// Force script CSV (t_start,t_end,fx,fy); no force when absent.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Trace CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Start anchor; defaults to the configured one.
        #[arg(long)]
        start: Option<String>,
        /// Initial target; defaults to the start anchor.
        #[arg(long)]
        target: Option<String>,
        /// Episode length (s).
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Trace rows per simulated second.
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        /// Keep running after arrival until the duration is over.
        #[arg(long)]
        full: bool,
    },
    /// Host a live session for browser clients.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Graph file written by `plan`.
        #[arg(long)]
        graph: PathBuf,
        /// Port on 127.0.0.1.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// State frames per second.
        #[arg(long, default_value_t = 60.0)]
        rate: f64,
    },
}

fn config(common: &Common) -> Result<ScenarioConfig, String> {
    load_config(&common.config).map_err(|e| e.to_string())
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Plan { common, out, seed } => {
            let cfg = config(&common)?;
            let seed = seed.unwrap_or(cfg.seeds.plan);
            let sg = build(&cfg, seed, common.execution()).map_err(|e| e.to_string())?;
            save_graph(&sg.graph, &out).map_err(|e| e.to_string())?;
            eprintln!(
                "{} pairs, {} edges, anchors {:?} -> {}",
                sg.graph.vertices.len(),
                sg.graph.edges.len(),
                sg.graph.anchors,
                out.display()
            );
            Ok(true)
        }
        Command::Certify {
            common,
            graph,
            samples,
            seed,
            out,
        } => {
            let cfg = config(&common)?;
            let g = load_graph(&graph).map_err(|e| e.to_string())?;
            let seed = seed.unwrap_or(cfg.seeds.certify);
            let report = certify_graph(&cfg, &g, samples, seed, common.execution())
                .map_err(|e| e.to_string())?;
            let failed = report.pairs.iter().filter(|p| !p.report.passed()).count();
            let bad_edges = report.edges.iter().filter(|e| !e.admissible).count();
            eprintln!(
                "{} pairs, {failed} failing; {} edges, {bad_edges} inadmissible",
                report.pairs.len(),
                report.edges.len()
            );
            let text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
            write_out(out.as_ref(), &text)?;
            Ok(report.passed())
        }
        Command::Sim {
            common,
            graph,
            script,
            out,
            start,
            target,
            duration,
            rate,
            full,
        } => {
            let cfg = config(&common)?;
            let g = load_graph(&graph).map_err(|e| e.to_string())?;
            let script = match script {
                Some(p) => {
                    let f = File::open(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    ForceScript::from_reader(f).map_err(|e| e.to_string())?
                }
                None => ForceScript::default(),
            };
            let ex = executive(&cfg, &g).map_err(|e| e.to_string())?;
            let start = start.unwrap_or_else(|| cfg.executive.start.clone());
            let target = target.unwrap_or_else(|| start.clone());
            let opts = EpisodeOptions {
                start,
                target,
                duration,
                stop_on_arrival: !full,
                record_rate: rate,
            };
            let outcome = run_episode(&cfg, &ex, &script, &opts).map_err(|e| e.to_string())?;
            let file = File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            let mut w = BufWriter::new(file);
            outcome.trace.write_csv(&mut w).map_err(|e| e.to_string())?;
            w.flush().map_err(|e| e.to_string())?;
            eprintln!(
                "t = {:.3} s, target {}, arrived {}, max barrier {:.4}, obstacle entries {}",
                outcome.final_state.t,
                outcome.final_state.target,
                outcome.arrived,
                outcome.max_barrier,
                outcome.obstacle_entries
            );
            if let Some(e) = &outcome.breach {
                eprintln!("{e}");
            }
            Ok(outcome.breach.is_none() && outcome.obstacle_entries == 0)
        }
        Command::Serve {
            common,
            graph,
            port,
            rate,
        } => {
            let cfg = config(&common)?;
            let g = load_graph(&graph).map_err(|e| e.to_string())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            let opts = ServeOptions {
                rate_hz: rate,
                ..ServeOptions::default()
            };
            rt.block_on(serve(g, cfg, port, opts))
                .map_err(|e| e.to_string())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

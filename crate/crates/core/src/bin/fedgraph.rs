use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedgraph::data::{load_fgb, parse_config, parse_sbm_spec, write_fgb};
use fedgraph::graph::{sbm_generate, Split};
use fedgraph::protocol::{run_fedgraph, ProtocolError};

#[derive(Parser)]
#[command(name = "fedgraph", version, about = "Federated graph learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Print the full report as JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Parse and validate a config file without running it.
    Check { config: PathBuf },
    /// Validate an FGB file and print its shape.
    Validate { fgb: PathBuf },
    /// Write a stochastic block model graph as FGB.
    GenSbm {
        /// e.g. sbm:blocks=4,n=100,p_in=0.1,p_out=0.01,d=16,seed=7
        spec: String,
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUN: u8 = 1;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, json } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", config.display())),
            };
            let cfg = match parse_config(&text) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match run_fedgraph(&cfg) {
                Ok(report) => {
                    if json {
                        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                    } else {
                        let t = &report.totals;
                        println!("method          {}", cfg.method);
                        println!("final accuracy  {:.4}", report.final_accuracy.unwrap_or(0.0));
                        println!("pretrain bytes  {} (theory {:.0})", t.pretrain_payload_bytes, report.theoretical.pretrain_bytes);
                        println!("training bytes  {} (theory {:.0})", t.training_payload_bytes, report.theoretical.training_bytes);
                        println!("pretrain ms     {:.1}", t.pretrain_ms);
                        println!("training ms     {:.1}", t.training_ms);
                        println!("local train ms  {:.2} per trainer-round", report.mean_local_train_ms());
                    }
                    ExitCode::SUCCESS
                }
                Err(e @ (ProtocolError::Config(_) | ProtocolError::Partition(_))) => fail(EXIT_CONFIG, e),
                Err(e @ ProtocolError::Data(_)) => fail(EXIT_DATA, e),
                Err(e) => fail(EXIT_RUN, e),
            }
        }
        Command::Check { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", config.display())),
            };
            match parse_config(&text) {
                Ok(c) => {
                    print!("{}", c.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
        Command::Validate { fgb } => match load_fgb(&fgb) {
            Ok(g) => {
                let count = |s| g.mask(s).iter().filter(|&&b| b).count();
                println!(
                    "n={} edges={} d={} c={} train={} val={} test={}",
                    g.num_nodes(),
                    g.num_edges(),
                    g.feature_dim(),
                    g.num_classes(),
                    count(Split::Train),
                    count(Split::Val),
                    count(Split::Test)
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_DATA, e),
        },
        Command::GenSbm { spec, out } => {
            let params = match parse_sbm_spec(&spec) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_DATA, e),
            };
            let g = match sbm_generate(&params) {
                Ok(g) => g,
                Err(e) => return fail(EXIT_DATA, e),
            };
            if let Err(e) = write_fgb(&g, &out) {
                return fail(EXIT_DATA, e);
            }
            println!("wrote {}: n={} edges={}", out.display(), g.num_nodes(), g.num_edges());
            ExitCode::SUCCESS
        }
    }
}

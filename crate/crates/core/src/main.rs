use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kraus_core::scenario;

#[derive(Parser)]
#[command(name = "kraus-sim", version, about = "Run reservoir-damping scenarios and compare their outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write CSVs plus summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (RAYON_NUM_THREADS is honoured when omitted).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Diff the primary CSVs of two runs of the same kind.
    Compare { summary_a: PathBuf, summary_b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, threads } => {
            if let Some(n) = threads {
                if n == 0 {
                    eprintln!("error: --threads must be >= 1");
                    return ExitCode::from(2);
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(2);
                }
            }
            let loaded = match scenario::load(&config) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let dir = loaded.output_dir(out.as_deref());
            match scenario::run(&loaded, &dir) {
                Ok(summary) => {
                    for a in &summary.audits {
                        println!(
                            "{} {}: {:.3e} (limit {:.3e})",
                            if a.pass { "ok  " } else { "FAIL" },
                            a.name,
                            a.value,
                            a.limit
                        );
                    }
                    println!("summary: {}", dir.join("summary.json").display());
                    if summary.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {:?} scenario: {e}", loaded.scenario.kind());
                    ExitCode::FAILURE
                }
            }
        }
        Command::Compare { summary_a, summary_b } => match scenario::compare(&summary_a, &summary_b) {
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}

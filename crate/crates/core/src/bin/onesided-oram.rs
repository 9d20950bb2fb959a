use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use onesided_oram::config::Config;
use onesided_oram::sealing::{slot_bytes_for, DEFAULT_VALUE_BYTES};
use onesided_oram::transport::WireServer;
use onesided_oram::{audit, bench, verify, Error, NetProfile, RegionStore};

#[derive(Parser)]
#[command(name = "onesided-oram", version, about = "Path ORAM key-value store with invisible one-sided reads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a zeroed region over TCP until killed.
    Serve {
        #[arg(long)]
        region_bytes: u64,
        #[arg(long)]
        listen: String,
        #[arg(long, default_value_t = slot_bytes_for(DEFAULT_VALUE_BYTES))]
        slot_bytes: usize,
    },
    /// Sweep the ORAM read percentage and emit CSV.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated percentages; defaults to the config's sweep.
        #[arg(long, value_delimiter = ',')]
        x: Option<Vec<f64>>,
        /// Limit the sweep to one profile.
        #[arg(long)]
        profile: Option<String>,
        /// Output path; standard output if omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Replay the workload against an in-memory map.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the adversary audit and write its JSON report.
    Audit {
        #[arg(long)]
        config: PathBuf,
        /// Snapshot every N write verbs; 1 is the finest schedule.
        #[arg(long, default_value_t = 1)]
        snap_freq: u64,
        #[arg(long)]
        json: PathBuf,
    },
    /// Print the default config.
    Init,
}

fn write_out(path: &Path, contents: &str) -> onesided_oram::Result<()> {
    fs::write(path, contents).map_err(|e| Error::Output(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> onesided_oram::Result<bool> {
    match cli.command {
        Command::Serve { region_bytes, listen, slot_bytes } => {
            let region = Arc::new(RegionStore::new(region_bytes, slot_bytes)?);
            let server = WireServer::bind(listen.as_str(), region)?;
            eprintln!("serving {region_bytes} bytes on {}", server.local_addr()?);
            server.run()?;
            Ok(true)
        }
        Command::Bench { config, x, profile, csv } => {
            let config = Config::load(&config)?;
            let xs = x.unwrap_or_else(|| config.sweep.x_values.clone());
            let profiles = match profile {
                Some(p) => vec![NetProfile::by_name(&p)?],
                None => config.profiles()?,
            };
            let rows = bench::sweep(&config, &xs, &profiles)?;
            let text = bench::to_csv(&rows)?;
            match csv {
                Some(path) => write_out(&path, &text)?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::Verify { config } => {
            let config = Config::load(&config)?;
            let report = verify::verify(&config, None)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(report.pass)
        }
        Command::Audit { config, snap_freq, json } => {
            let config = Config::load(&config)?;
            let report = audit::audit(&config, snap_freq)?;
            write_out(&json, &report.to_json())?;
            println!(
                "leaf uniformity p={:.4}  read/write p={:.4}  best classifier {} {:.4}  invisible={}  detector pass={}  max stash {}",
                report.leaf_uniformity.p_value,
                report.read_write_homogeneity.p_value,
                report.best_classifier.name,
                report.best_classifier.accuracy,
                report.invisible,
                report.detector.pass,
                report.max_stash,
            );
            Ok(report.pass)
        }
        Command::Init => {
            println!("{}", Config::default().to_json());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use volform_cli::{run, Cli, UsageError};

fn init_logging(level: &str) -> Result<(), String> {
    let filter: log::LevelFilter = level.parse().map_err(|_| format!("invalid --log-level `{level}`"))?;
    env_logger::Builder::new()
        .filter_level(filter)
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level(),
                record.target(),
                record.args()
            )
        })
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging(&cli.log_level) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(outcome) if outcome.issues.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{} asset(s) could not be processed:", outcome.issues.len());
            eprintln!("{:<16} {:<40} reason", "asset", "stage");
            for i in &outcome.issues {
                eprintln!("{:<16} {:<40} {}", i.asset_id, i.model_id, i.reason);
            }
            ExitCode::from(3)
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

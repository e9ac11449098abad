use std::process::ExitCode;

use frogsim_cli::{parse_config, run_experiment, RunError, EXIT_CONFIG};

fn main() -> ExitCode {
    let cfg = match parse_config(std::env::args_os()) {
        Err(e) => e.exit(),
        Ok(Err(e)) => {
            eprintln!("frogsim: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        Ok(Ok(cfg)) => cfg,
    };
    match run_experiment(&cfg) {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e @ RunError::Model(_)) => {
            eprintln!("frogsim: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
        Err(e) => {
            eprintln!("frogsim: {e}");
            ExitCode::FAILURE
        }
    }
}

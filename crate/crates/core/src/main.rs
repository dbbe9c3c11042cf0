use std::process::ExitCode;

use odre::analysis::VerdictClass;
use odre::campaign;
use odre::config::{parse_cli, CliError};
use odre::orchestrate::ProcessExecutor;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let config = match parse_cli(std::env::args_os()) {
        Ok(c) => c,
        Err(CliError::Display(text)) => {
            print!("{text}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if config.seed_was_drawn {
        eprintln!("odre: using seed {} (pass --seed={} to reproduce)", config.seed, config.seed);
    } else {
        eprintln!("odre: using seed {}", config.seed);
    }

    match campaign::run(&config, &ProcessExecutor) {
        Ok(outcome) => {
            let s = &outcome.summary;
            println!(
                "{} tests: {} order-dependent candidate(s), {} nondeterministic, {} stable pass, {} stable fail, {} inconclusive",
                s.tests_analyzed,
                s.count(VerdictClass::OrderDependentCandidate),
                s.count(VerdictClass::NondeterministicFlaky),
                s.count(VerdictClass::StablePass),
                s.count(VerdictClass::StableFail),
                s.count(VerdictClass::Inconclusive),
            );
            for c in &s.od_candidates {
                println!(
                    "  OD: {} ({}) orders {} vs {}",
                    c.test, c.file, c.witness_orders.0, c.witness_orders.1
                );
            }
            if let Some(md) = &s.markdown_path {
                println!("report: {}", md.display());
            }
            ExitCode::from(outcome.exit_code(&config) as u8)
        }
        Err(e) => {
            eprintln!("odre: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

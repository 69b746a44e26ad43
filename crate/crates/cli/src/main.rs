use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use ecgc::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("ECGC_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not cap threads at {n}: {e}");
                }
            }
            _ => log::warn!("ignoring ECGC_THREADS={v:?}: expected a positive integer"),
        }
    }
    let cli = Cli::parse();
    match cli.run() {
        Ok(out) => {
            print!("{out}");
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

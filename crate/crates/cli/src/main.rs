use std::process::ExitCode;

use clap::Parser;
use ergolab_cli::{emit, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.flags.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command, &cli.flags).and_then(|r| emit(&r, cli.flags.out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

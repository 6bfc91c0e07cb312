use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use relseq_cli::commands::{run, Cli};

/// Clap omits the usage line for some errors (e.g. invalid values); always
/// show it for the subcommand that was invoked.
fn usage_error(e: clap::Error) -> ExitCode {
    let text = e.render().to_string();
    if !e.use_stderr() {
        print!("{text}");
        return ExitCode::SUCCESS;
    }
    eprint!("{text}");
    if !text.contains("Usage:") {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = match std::env::args().nth(1).and_then(|s| cmd.find_subcommand_mut(&s).cloned()) {
            Some(mut sub) => sub.render_usage(),
            None => cmd.render_usage(),
        };
        eprintln!("\n{usage}");
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("RELSEQ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: RELSEQ_THREADS ignored: {e}");
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

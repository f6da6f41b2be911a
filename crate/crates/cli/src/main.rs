use clap::Parser;

use elastodiel_cli::{run, Args};

fn main() {
    let args = Args::parse();
    let outcome = run(&args);
    std::process::exit(outcome.exit_code);
}

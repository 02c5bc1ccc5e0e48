use clap::Parser;
use wulff_lab::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

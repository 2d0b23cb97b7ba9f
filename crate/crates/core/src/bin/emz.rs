use clap::Parser;
use emz::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(Cli::parse()));
}

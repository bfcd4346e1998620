use clap::Parser;

fn main() {
    std::process::exit(unrollhls::cli::run(unrollhls::cli::Cli::parse()));
}

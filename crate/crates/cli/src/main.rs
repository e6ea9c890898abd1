use clap::Parser;

fn main() {
    std::process::exit(tripletgan_cli::run(tripletgan_cli::args::Cli::parse()));
}

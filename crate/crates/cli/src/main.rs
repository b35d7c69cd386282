use clap::Parser;
use gridgym_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = cli.command.execute() {
        eprintln!("gridgym: {}", failure.message);
        std::process::exit(failure.code);
    }
}

use clap::Parser;
use stylerec_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = stylerec_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

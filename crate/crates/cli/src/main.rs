use clap::Parser;
use sgmm_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = sgmm_cli::run(&cli) {
        eprintln!("sgmm: {e}");
        std::process::exit(e.exit_code());
    }
}

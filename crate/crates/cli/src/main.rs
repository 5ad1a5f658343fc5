use clap::Parser;

use agescope_cli::app::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("agescope: {error}");
        std::process::exit(error.exit_code());
    }
}

use clap::Parser;
use cxr_pipeline::cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("cxr: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

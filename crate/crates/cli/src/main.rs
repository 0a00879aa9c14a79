use clap::Parser;
use gated_apd_cli::app::{self, Cli};

fn main() {
    let cli = Cli::parse();
    match app::run(&cli) {
        Ok(done) => {
            println!("{}", serde_json::to_string_pretty(&done.stdout).expect("json"));
            eprintln!("run directory: {}", done.run_dir.display());
        }
        Err(e) => {
            eprintln!("gated-apd {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}

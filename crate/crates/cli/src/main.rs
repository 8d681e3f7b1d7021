use clap::Parser;
use xmod_cli::cli::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

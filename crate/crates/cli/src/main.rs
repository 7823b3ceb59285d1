use clap::CommandFactory;
use topparse_cli::{run_matches, Cli};

fn main() {
    let matches = Cli::command().get_matches();
    match run_matches(&matches) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

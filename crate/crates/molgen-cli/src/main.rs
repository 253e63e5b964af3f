use clap::error::ErrorKind;
use clap::Parser;

use molgen_cli::{Cli, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string()).record());
            std::process::exit(2);
        }
    };
    match molgen_cli::run(cli) {
        Ok(record) => println!("{record}"),
        Err(e) => {
            eprintln!("{}", e.record());
            let code = if matches!(e, CliError::Usage(_)) { 2 } else { 1 };
            std::process::exit(code);
        }
    }
}

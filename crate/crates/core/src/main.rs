use clap::Parser;
use filippov::cli::{self, CliArgs};

fn main() {
    let args = CliArgs::parse(); // clap exits with code 2 on usage errors
    let code = match cli::parse_config(args).and_then(cli::run) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            cli::exit_code_for(&err)
        }
    };
    std::process::exit(code);
}

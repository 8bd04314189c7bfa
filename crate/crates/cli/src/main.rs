use std::process::ExitCode;

fn main() -> ExitCode {
    twopath_cli::cli::run(std::env::args_os())
}

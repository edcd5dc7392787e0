use std::process::ExitCode;

fn main() -> ExitCode {
    cycle_eae::cli::run(std::env::args_os())
}

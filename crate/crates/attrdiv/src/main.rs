use std::process::ExitCode;

fn main() -> ExitCode {
    attrdiv::cli::main_from(std::env::args_os())
}

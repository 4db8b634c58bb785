use std::process::ExitCode;

fn main() -> ExitCode {
    microinpaint::cli::main_with_args(std::env::args_os())
}

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(meter_privacy::cli::main_with_args(std::env::args_os()))
}

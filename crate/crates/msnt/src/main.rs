use std::process::ExitCode;

fn main() -> ExitCode {
    msnt::cli::run(std::env::args_os(), msnt::cli::env_seed())
}

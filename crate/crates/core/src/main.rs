use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bigrasp::cli::run(std::env::args()) as u8)
}

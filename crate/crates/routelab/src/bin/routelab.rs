use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(routelab::cli::run(std::env::args()) as u8)
}

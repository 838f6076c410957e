use std::process::ExitCode;

fn main() -> ExitCode {
    flashdiff::cli::run()
}

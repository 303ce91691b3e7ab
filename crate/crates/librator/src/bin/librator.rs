use std::process::ExitCode;

fn main() -> ExitCode {
    librator::cli::main()
}

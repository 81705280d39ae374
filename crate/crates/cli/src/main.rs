use std::process::ExitCode;

fn main() -> ExitCode {
    youla_cli::main_with(std::env::args())
}

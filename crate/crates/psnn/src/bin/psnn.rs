use std::process::ExitCode;

fn main() -> ExitCode {
    psnn::cli::main_entry()
}

use std::process::ExitCode;

fn main() -> ExitCode {
    replicadetect::cli::main_entry()
}

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cfdiff::cli::main_entry() as u8)
}

use std::process::ExitCode;

fn main() -> ExitCode {
    match evcoop_cli::run(std::env::args_os(), &mut std::io::stderr()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

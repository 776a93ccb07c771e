use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match coopsim::cli::run(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coopsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

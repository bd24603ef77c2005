use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = cvil_service::cli::Cli::parse();
    match cvil_service::cli::run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

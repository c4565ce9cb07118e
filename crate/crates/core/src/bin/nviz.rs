use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();
    ExitCode::from(nviz::cli::run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr()))
}

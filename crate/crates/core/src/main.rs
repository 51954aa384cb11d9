use std::process::ExitCode;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "forge=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    forge::cli::main_entry().await
}

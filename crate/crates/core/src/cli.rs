//! Command-line front end: `forge run|plan|serve|export|share`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::engine::{Clock, Dispatcher, ResponseCache, SystemClock};
use crate::flow::{load_flow, FlowDocument};
use crate::provider::{Credentials, ProviderRegistry, RegistryConfig};
use crate::service::{self, cache_dir_for, check_bind_host, share_hash, AppState};
use crate::workspace::{default_export_node, RunReport, RunRequest, Workspace, WorkspaceError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PROVIDER: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Combinatorial prompt testing across models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a node and everything upstream of it, reusing cached responses.
    Run(RunArgs),
    /// Print how many queries running a node would send.
    Plan(PlanArgs),
    /// Start the local HTTP service.
    Serve(ServeArgs),
    /// Write a node's cached responses as CSV.
    Export(ExportArgs),
    /// Write a flow with its cached responses to a content-addressed file.
    Share(ShareArgs),
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Dotenv file with FORGE_<PROVIDER>_KEY entries.
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Provider registry JSON merged over the built-in defaults.
    #[arg(long)]
    pub providers: Option<PathBuf>,
    /// Scorer command for External Evaluator nodes that name none.
    #[arg(long = "eval-cmd")]
    pub eval_cmd: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub flow: PathBuf,
    #[arg(long)]
    pub node: String,
    /// Also write the node's responses to this CSV file.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Re-query the node even where responses are cached.
    #[arg(long)]
    pub force: bool,
    /// Responses per prompt for the node, overriding the flow.
    #[arg(long)]
    pub n: Option<u32>,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    pub flow: PathBuf,
    #[arg(long)]
    pub node: String,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub n: Option<u32>,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = service::DEFAULT_HOST)]
    pub host: String,
    #[arg(long, default_value_t = service::DEFAULT_PORT)]
    pub port: u16,
    /// Allow binding an address other than loopback.
    #[arg(long)]
    pub allow_remote: bool,
    /// Where flows, caches and shares are stored.
    #[arg(long = "data-dir", default_value = ".")]
    pub data_dir: PathBuf,
    /// Built web UI assets.
    #[arg(long = "static-dir", default_value = "webui/dist")]
    pub static_dir: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub flow: PathBuf,
    /// Defaults to the only node whose responses nothing downstream scores.
    #[arg(long)]
    pub node: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ShareArgs {
    pub flow: PathBuf,
    /// Share the flow alone, without cached responses.
    #[arg(long)]
    pub no_cache: bool,
    /// Shares are written to `<data-dir>/shares/<hash>.json`.
    #[arg(long = "data-dir", default_value = ".")]
    pub data_dir: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl ToString) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }
}

impl From<WorkspaceError> for CliError {
    fn from(e: WorkspaceError) -> Self {
        CliError::config(e)
    }
}

pub fn registry(args: &ProviderArgs) -> Result<ProviderRegistry, CliError> {
    let mut config = RegistryConfig::defaults();
    if let Some(p) = &args.providers {
        config = config.merge(RegistryConfig::from_file(p).map_err(CliError::config)?);
    }
    let mut credentials = Credentials::from_env();
    if let Some(k) = &args.keys {
        credentials = credentials.with_dotenv(k).map_err(CliError::config)?;
    }
    Ok(ProviderRegistry::from_config(&config, &credentials))
}

fn dispatcher(args: &ProviderArgs) -> Result<Arc<Dispatcher>, CliError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    Ok(Arc::new(Dispatcher::new(Arc::new(registry(args)?), clock)))
}

fn open_flow(path: &Path, args: &ProviderArgs) -> Result<(FlowDocument, Workspace), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let doc = load_flow(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let cache = ResponseCache::open(cache_dir_for(path)).map_err(CliError::config)?;
    let ws = Workspace::new(dispatcher(args)?, Arc::new(cache)).with_eval_command(args.eval_cmd.clone());
    ws.import_embedded(&doc).map_err(CliError::config)?;
    Ok((doc, ws))
}

/// Per-model table printed after a run.
pub fn summary_table(report: &RunReport) -> String {
    let width = report
        .per_model
        .keys()
        .map(String::len)
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut out = format!("node {}: {} responses\n", report.node_id, report.records);
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}", "model", "ok", "errors");
    for (model, c) in &report.per_model {
        let _ = writeln!(out, "{model:<width$}  {:>6}  {:>6}", c.ok, c.errors);
    }
    let d = report.dispatched;
    let _ = writeln!(
        out,
        "sent {} queries: {} succeeded, {} failed",
        d.succeeded + d.failed,
        d.succeeded,
        d.failed
    );
    out
}

async fn cmd_run(args: RunArgs) -> Result<u8, CliError> {
    let (doc, ws) = open_flow(&args.flow, &args.providers)?;
    let request = RunRequest {
        node_id: args.node.clone(),
        force: args.force,
        n_override: args.n,
    };
    let report = ws.run(&doc, &request, None).await?;
    for w in &report.warnings {
        eprintln!("warning: {}{}", w.node.as_deref().map(|n| format!("{n}: ")).unwrap_or_default(), w.message);
    }
    print!("{}", summary_table(&report));
    if let Some(path) = &args.export {
        let csv = ws.export_csv(&doc, &args.node).await?;
        std::fs::write(path, csv).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(if report.has_errors() { EXIT_PROVIDER } else { EXIT_OK })
}

async fn cmd_plan(args: PlanArgs) -> Result<u8, CliError> {
    let (doc, ws) = open_flow(&args.flow, &args.providers)?;
    let report = crate::flow::validate_flow(&doc);
    if !report.is_ok() {
        return Err(WorkspaceError::Invalid(report).into());
    }
    let request = RunRequest {
        node_id: args.node,
        force: args.force,
        n_override: args.n,
    };
    let plan = ws.plan(&doc, &request).await?;
    for w in &plan.warnings {
        eprintln!("warning: {}{}", w.node.as_deref().map(|n| format!("{n}: ")).unwrap_or_default(), w.message);
    }
    println!("total {}, pending {}", plan.total, plan.pending);
    Ok(EXIT_OK)
}

async fn cmd_export(args: ExportArgs) -> Result<u8, CliError> {
    let (doc, ws) = open_flow(&args.flow, &args.providers)?;
    let node = args
        .node
        .or_else(|| default_export_node(&doc))
        .ok_or_else(|| CliError::config("several nodes hold responses; pass --node"))?;
    let csv = ws.export_csv(&doc, &node).await?;
    match &args.export {
        Some(path) => std::fs::write(path, csv).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?,
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&csv)
                .map_err(|e| CliError::config(e.to_string()))?;
        }
    }
    Ok(EXIT_OK)
}

async fn cmd_share(args: ShareArgs) -> Result<u8, CliError> {
    let (doc, ws) = open_flow(&args.flow, &args.providers)?;
    let bytes = if args.no_cache {
        crate::flow::save_flow(&doc, false)
    } else {
        ws.bundle(&doc).await?
    };
    let hash = share_hash(&bytes);
    let path = args.data_dir.join("shares").join(format!("{hash}.json"));
    std::fs::create_dir_all(path.parent().expect("has parent"))
        .and_then(|_| std::fs::write(&path, &bytes))
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    let embedded = load_flow(&bytes).map(|d| d.cached_records()).unwrap_or(0);
    println!("{hash}");
    eprintln!("wrote {} ({embedded} cached responses)", path.display());
    Ok(EXIT_OK)
}

async fn cmd_serve(args: ServeArgs) -> Result<u8, CliError> {
    let ip = check_bind_host(&args.host, args.allow_remote).map_err(CliError::config)?;
    let state = AppState::new(dispatcher(&args.providers)?, args.data_dir.clone())
        .with_static_dir(Some(args.static_dir.clone()))
        .with_eval_command(args.providers.eval_cmd.clone());
    service::serve((ip, args.port).into(), Arc::new(state))
        .await
        .map_err(|e| CliError::config(format!("cannot serve on {}:{}: {e}", args.host, args.port)))?;
    Ok(EXIT_OK)
}

pub async fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(a).await,
        Command::Plan(a) => cmd_plan(a).await,
        Command::Serve(a) => cmd_serve(a).await,
        Command::Export(a) => cmd_export(a).await,
        Command::Share(a) => cmd_share(a).await,
    }
}

/// Parses arguments, runs the command and reports errors on stderr.
pub async fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli).await {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

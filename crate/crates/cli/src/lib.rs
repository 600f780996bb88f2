//! `discover`: a thin command-line client for the processing server. Every
//! command maps onto REST calls; the server stays the single authority.

pub mod client;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::client::Client;
use crate::config::{CliConfig, Format, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SERVER: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("server returned {status}: {body}")]
    Server { status: u16, body: String },
    #[error("cannot reach server: {0}")]
    Transport(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Server { .. } | CliError::Transport(_) | CliError::Failed(_) => EXIT_SERVER,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "discover", version, about = "Command-line client for the annotation processing server")]
pub struct Cli {
    /// Server base url.
    #[arg(long, global = true, env = "DISCOVER_URL")]
    url: Option<String>,
    /// Bearer token (also the token `serve` requires).
    #[arg(long, global = true, env = "DISCOVER_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// TOML file with `url`, `token` and `format`.
    #[arg(long, global = true, env = "DISCOVER_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Session(SessionCmd),
    #[command(subcommand)]
    Scheme(SchemeCmd),
    #[command(subcommand)]
    Ann(AnnCmd),
    #[command(subcommand)]
    Job(JobCmd),
    #[command(subcommand)]
    Module(ModuleCmd),
    #[command(subcommand)]
    Search(SearchCmd),
    /// Agreement between annotations of one session.
    Agree(AgreeArgs),
    #[command(subcommand)]
    Cml(CmlCmd),
    /// Send one message to an assistant provider.
    Chat(ChatArgs),
    /// Run the server in the foreground.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    Create { name: String },
    List,
}

#[derive(Debug, Subcommand)]
enum SessionCmd {
    Add {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        duration_ms: u64,
        #[arg(long = "role", required = true)]
        roles: Vec<String>,
        #[arg(long)]
        media: Vec<String>,
    },
    List {
        #[arg(long)]
        dataset: String,
    },
}

#[derive(Debug, Subcommand)]
enum SchemeCmd {
    /// Add a scheme given as a JSON file (`-` for stdin).
    Add {
        #[arg(long)]
        dataset: String,
        file: PathBuf,
    },
    List {
        #[arg(long)]
        dataset: String,
    },
}

#[derive(Debug, Args)]
struct KeyArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    session: String,
    #[arg(long)]
    role: String,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    annotator: String,
}

#[derive(Debug, Subcommand)]
enum AnnCmd {
    /// Store an exported annotation document (`-` for stdin).
    Import { file: PathBuf },
    /// Write the stored document byte for byte.
    Export {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    List {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        session: String,
        #[arg(long)]
        role: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        annotator: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum JobCmd {
    Submit {
        #[arg(long)]
        module: String,
        #[arg(long)]
        version: Option<String>,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        session: String,
        /// `key=value`; the value is read as JSON, or as a string if it is not JSON.
        #[arg(long = "option")]
        options: Vec<String>,
        /// Input slot replacement as a JSON descriptor.
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// Output slot replacement as a JSON descriptor.
        #[arg(long = "output")]
        outputs: Vec<String>,
    },
    /// One job, or all jobs without an id.
    Status { id: Option<u64> },
    /// Poll until the job is DONE (exit 0) or FAILED (exit 2).
    Watch {
        id: u64,
        #[arg(long, default_value_t = 500)]
        interval_ms: u64,
    },
}

#[derive(Debug, Subcommand)]
enum ModuleCmd {
    List,
}

#[derive(Debug, Subcommand)]
enum SearchCmd {
    Run {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        session: String,
        #[arg(long)]
        query: String,
        #[arg(long)]
        frame_ms: u64,
    },
}

#[derive(Debug, Args)]
struct AgreeArgs {
    #[arg(long, value_parser = ["kappa", "alpha", "pearson", "spearman"])]
    measure: String,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    session: String,
    /// `role:scheme:annotator`, repeated once per annotation.
    #[arg(long = "ann", required = true)]
    annotations: Vec<String>,
    #[arg(long)]
    frame_ms: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum CmlCmd {
    /// Simulated cooperative learning; the request file holds the remaining fields.
    Loop {
        #[arg(long)]
        rounds: usize,
        #[arg(long)]
        budget: f64,
        #[arg(long)]
        request: PathBuf,
    },
    /// Apply reviewer corrections given as a JSON request file.
    Review {
        #[arg(long)]
        request: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ChatArgs {
    #[arg(long)]
    provider: String,
    /// Attach the transcripts of `--dataset`/`--session`.
    #[arg(long)]
    context_aware: bool,
    /// Conversation id; history is kept by the server.
    #[arg(long, default_value = "cli")]
    chat: String,
    #[arg(long, requires = "session")]
    dataset: Option<String>,
    #[arg(long, requires = "dataset")]
    session: Option<String>,
    /// Read from stdin when omitted.
    message: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long)]
    assistant_config: Option<PathBuf>,
    /// Directory served for paths outside the API, e.g. the browser client.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Do not run the built-in learning worker.
    #[arg(long)]
    no_worker: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let file = cli.config.clone().or_else(config::default_path);
    let config = CliConfig::resolve(
        file.as_deref(),
        Overrides { url: cli.url.clone(), token: cli.token.clone(), format: cli.format },
    )?;
    if let Command::Serve(args) = cli.command {
        return serve(args, config.token, err);
    }
    let client = Client::new(&config)?;
    let emit = |out: &mut dyn Write, bytes: Vec<u8>| -> Result<(), CliError> {
        let value: Value = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Failed(format!("server sent invalid json: {e}")))?;
        write_line(out, &output::render(&value, config.format))
    };
    match cli.command {
        Command::Dataset(DatasetCmd::Create { name }) => emit(out, client.post("/datasets", &json!({"name": name}))?),
        Command::Dataset(DatasetCmd::List) => emit(out, client.get("/datasets", &[])?),
        Command::Session(SessionCmd::Add { dataset, name, duration_ms, roles, media }) => {
            let body = json!({"dataset": dataset, "name": name, "duration_ms": duration_ms, "roles": roles, "media": media});
            emit(out, client.post("/sessions", &body)?)
        }
        Command::Session(SessionCmd::List { dataset }) => emit(out, client.get("/sessions", &[("dataset", &dataset)])?),
        Command::Scheme(SchemeCmd::Add { dataset, file }) => {
            let scheme = read_json(&file)?;
            emit(out, client.post("/schemes", &json!({"dataset": dataset, "scheme": scheme}))?)
        }
        Command::Scheme(SchemeCmd::List { dataset }) => emit(out, client.get("/schemes", &[("dataset", &dataset)])?),
        Command::Ann(AnnCmd::Import { file }) => emit(out, client.post_raw("/annotations/import", read_input(&file)?)?),
        Command::Ann(AnnCmd::Export { key, output }) => {
            let query = [
                ("dataset", key.dataset.as_str()),
                ("session", &key.session),
                ("role", &key.role),
                ("scheme", &key.scheme),
                ("annotator", &key.annotator),
            ];
            let bytes = client.get("/annotations", &query)?;
            match output {
                Some(path) => std::fs::write(&path, bytes)
                    .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display()))),
                None => out.write_all(&bytes).map_err(io_error),
            }
        }
        Command::Ann(AnnCmd::List { dataset, session, role, scheme, annotator }) => {
            let mut query = vec![("dataset", dataset.as_str()), ("session", session.as_str())];
            for (name, value) in [("role", &role), ("scheme", &scheme), ("annotator", &annotator)] {
                if let Some(v) = value {
                    query.push((name, v.as_str()));
                }
            }
            emit(out, client.get("/annotations", &query)?)
        }
        Command::Job(JobCmd::Submit { module, version, dataset, session, options, inputs, outputs }) => {
            let mut body = json!({
                "module": module,
                "dataset": dataset,
                "session": session,
                "options": parse_options(&options)?,
                "inputs": parse_descriptors(&inputs)?,
                "outputs": parse_descriptors(&outputs)?,
            });
            if let Some(v) = version {
                body["version"] = json!(v);
            }
            emit(out, client.post("/jobs", &body)?)
        }
        Command::Job(JobCmd::Status { id: Some(id) }) => emit(out, client.get(&format!("/jobs/{id}"), &[])?),
        Command::Job(JobCmd::Status { id: None }) => emit(out, client.get("/jobs", &[])?),
        Command::Job(JobCmd::Watch { id, interval_ms }) => {
            let mut last = None;
            loop {
                let bytes = client.get(&format!("/jobs/{id}"), &[])?;
                let job: Value = serde_json::from_slice(&bytes)
                    .map_err(|e| CliError::Failed(format!("server sent invalid json: {e}")))?;
                let state = job["state"].as_str().unwrap_or_default().to_string();
                let seen = (state.clone(), job["progress"].to_string());
                if last.as_ref() != Some(&seen) {
                    let _ = writeln!(err, "job {id} {state} {}", job["progress"]);
                    last = Some(seen);
                }
                match state.as_str() {
                    "DONE" => return emit(out, bytes),
                    "FAILED" => {
                        emit(out, bytes)?;
                        return Err(CliError::Failed(format!("job {id} failed")));
                    }
                    _ => std::thread::sleep(Duration::from_millis(interval_ms)),
                }
            }
        }
        Command::Module(ModuleCmd::List) => emit(out, client.get("/modules", &[])?),
        Command::Search(SearchCmd::Run { dataset, session, query, frame_ms }) => {
            let body = json!({"dataset": dataset, "session": session, "query": query, "frame_ms": frame_ms});
            emit(out, client.post("/search", &body)?)
        }
        Command::Agree(a) => {
            let annotations = a.annotations.iter().map(|s| parse_key_ref(s)).collect::<Result<Vec<_>, _>>()?;
            let mut body = json!({
                "measure": a.measure,
                "dataset": a.dataset,
                "session": a.session,
                "annotations": annotations,
            });
            if let Some(f) = a.frame_ms {
                body["frame_ms"] = json!(f);
            }
            emit(out, client.post("/agreement", &body)?)
        }
        Command::Cml(CmlCmd::Loop { rounds, budget, request }) => {
            let mut body = read_object(&request)?;
            body.insert("rounds".into(), json!(rounds));
            body.insert("budget".into(), json!(budget));
            emit(out, client.post("/cml/loop", &Value::Object(body))?)
        }
        Command::Cml(CmlCmd::Review { request }) => {
            emit(out, client.post("/cml/review", &Value::Object(read_object(&request)?))?)
        }
        Command::Chat(c) => {
            let message = match c.message {
                Some(m) => m,
                None => {
                    let mut m = String::new();
                    std::io::stdin().read_to_string(&mut m).map_err(io_error)?;
                    m.trim_end().to_string()
                }
            };
            let mut body = json!({
                "session": c.chat,
                "provider": c.provider,
                "context_aware": c.context_aware,
                "message": message,
            });
            if let (Some(dataset), Some(session)) = (c.dataset, c.session) {
                body["session_ref"] = json!({"dataset": dataset, "session": session});
            }
            emit(out, client.post("/assistant/chat", &body)?)
        }
        Command::Serve(_) => unreachable!("handled above"),
    }
}

fn serve(args: ServeArgs, token: Option<String>, err: &mut dyn Write) -> Result<(), CliError> {
    let mut config = discover_server::ServerConfig::new(args.data_dir);
    config.bind = args.bind;
    config.token = token;
    config.assistant_config = args.assistant_config;
    config.static_dir = args.static_dir;
    config.builtin_worker = !args.no_worker;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let _ = writeln!(err, "listening on http://{}", config.bind);
    runtime.block_on(discover_server::serve(config)).map_err(|e| CliError::Failed(e.to_string()))
}

fn write_line(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    if text.is_empty() {
        return Ok(());
    }
    writeln!(out, "{text}").map_err(io_error)
}

fn io_error(e: std::io::Error) -> CliError {
    CliError::Failed(format!("io: {e}"))
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(io_error)?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_slice(&read_input(path)?)
        .map_err(|e| CliError::Usage(format!("{} is not valid json: {e}", path.display())))
}

fn read_object(path: &Path) -> Result<Map<String, Value>, CliError> {
    match read_json(path)? {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Usage(format!("{} must hold a json object", path.display()))),
    }
}

fn parse_options(options: &[String]) -> Result<Map<String, Value>, CliError> {
    let mut map = Map::new();
    for option in options {
        let (key, raw) = option
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("option {option:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), value);
    }
    Ok(map)
}

fn parse_descriptors(raw: &[String]) -> Result<Vec<Value>, CliError> {
    raw.iter()
        .map(|r| serde_json::from_str(r).map_err(|e| CliError::Usage(format!("slot {r:?} is not valid json: {e}"))))
        .collect()
}

/// `role:scheme:annotator`; the annotator may itself contain colons.
fn parse_key_ref(raw: &str) -> Result<Value, CliError> {
    let mut parts = raw.splitn(3, ':');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(role), Some(scheme), Some(annotator)) if !role.is_empty() && !scheme.is_empty() && !annotator.is_empty() => {
            Ok(json!({"role": role, "scheme": scheme, "annotator": annotator}))
        }
        _ => Err(CliError::Usage(format!("annotation {raw:?} is not role:scheme:annotator"))),
    }
}

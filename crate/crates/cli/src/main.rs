use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use concurpaas_client::{Client, ClientError};
use concurpaas_core::api::{AdvanceRequest, RunRequest, ScenarioRequest};
use concurpaas_core::iot::ReprogramCommand;
use concurpaas_core::scenario::{Scenario, ScenarioError, SEED_ENV};
use concurpaas_core::ChannelMode;
use tokio::net::TcpListener;

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_SERVICE: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "concurpaas",
    version,
    about = "IoT PaaS simulator",
    arg_required_else_help = true
)]
struct Cli {
    /// Service to talk to. Without it an in-process server is started per invocation.
    #[arg(long, global = true, env = "CONCURPAAS_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario to its horizon and print the metrics report as JSON.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write samples.csv and fire_log.csv into this directory.
        #[arg(long, value_name = "DIR")]
        csv: Option<PathBuf>,
    },
    /// Run Direct and Proxied with the same seed; exit 3 if Direct is not faster.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the full comparison as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write the event trace of a run.
    Trace {
        scenario: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Service registry commands.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    /// Reprogram a sensor, e.g. `reprogram sensor-B sample_interval=100ms enabled=true`.
    Reprogram {
        sensor: String,
        #[arg(required = true, value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[command(flatten)]
        target: SessionTarget,
    },
    /// Long-lived simulation sessions (need --server).
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct Overrides {
    /// Overrides the scenario seed and $CONCURPAAS_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ChannelMode>,
}

#[derive(Subcommand, Debug)]
enum RegistryCommand {
    /// One line per record: service instance endpoint status lease_expiry.
    Ls {
        #[command(flatten)]
        target: SessionTarget,
    },
}

/// Either an existing session, or a scenario run in a throwaway session up to `--at`.
#[derive(Args, Debug)]
struct SessionTarget {
    #[arg(
        long,
        conflicts_with = "scenario",
        required_unless_present = "scenario"
    )]
    session: Option<String>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Advance to this virtual time (microseconds) first. `registry ls --scenario`
    /// defaults to the horizon.
    #[arg(long, value_name = "US")]
    at: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum SessionCommand {
    Open {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    Advance {
        id: String,
        #[arg(long, value_name = "US", conflicts_with = "by")]
        until: Option<u64>,
        #[arg(long, value_name = "US")]
        by: Option<u64>,
    },
    FireLog {
        id: String,
    },
    Close {
        id: String,
    },
}

fn parse_mode(s: &str) -> Result<ChannelMode, String> {
    s.parse()
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Invalid(String),
    Service(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Validation(problems) => {
                Failure::Invalid(format!("invalid scenario:\n  {}", problems.join("\n  ")))
            }
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { status, body } if (400..500).contains(status) => {
                let mut msg = body.message.clone();
                for d in &body.details {
                    msg.push_str("\n  ");
                    msg.push_str(d);
                }
                Failure::Invalid(msg)
            }
            _ => Failure::Service(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Service(e.to_string())
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Invalid(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Load and validate locally so errors carry file line numbers.
fn load(path: &Path, overrides: Overrides) -> Result<ScenarioRequest, Failure> {
    let scenario = Scenario::load_valid(path)?;
    let mut req = ScenarioRequest::new(&scenario);
    req.seed = overrides.seed.or(env_seed()?);
    req.mode = overrides.mode;
    Ok(req)
}

async fn connect(server: Option<&str>) -> Result<Client, Failure> {
    if let Some(url) = server {
        return Ok(Client::new(url));
    }
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(concurpaas_server::serve(listener, std::future::pending()));
    Ok(Client::new(format!("http://{addr}")))
}

/// `run_out` advances a throwaway session to its horizon when `--at` is absent.
async fn with_session<T, F, Fut>(
    client: &Client,
    target: &SessionTarget,
    run_out: bool,
    f: F,
) -> Result<T, Failure>
where
    F: FnOnce(String) -> Fut,
    Fut: std::future::Future<Output = Result<T, Failure>>,
{
    let (id, owned) = match (&target.session, &target.scenario) {
        (Some(id), _) => (id.clone(), false),
        (None, Some(path)) => {
            let req = load(
                path,
                Overrides {
                    seed: None,
                    mode: None,
                },
            )?;
            (client.open_session(&req).await?.id, true)
        }
        (None, None) => return Err(Failure::Usage("need --session or --scenario".into())),
    };
    if target.at.is_some() || (owned && run_out) {
        client
            .advance(
                &id,
                AdvanceRequest {
                    until_us: target.at,
                    by_us: None,
                },
            )
            .await?;
    }
    let result = f(id.clone()).await;
    if owned {
        let _ = client.close_session(&id).await;
    }
    result
}

async fn execute(cli: Cli) -> Result<u8, Failure> {
    if let Command::Serve { addr } = &cli.command {
        let listener = TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        concurpaas_server::serve(listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        return Ok(0);
    }
    if matches!(cli.command, Command::Session { .. }) && cli.server.is_none() {
        return Err(Failure::Usage(
            "session commands need --server or CONCURPAAS_SERVER".into(),
        ));
    }
    // Validate local input before starting anything.
    let prepared = match &cli.command {
        Command::Run {
            scenario,
            overrides,
            ..
        }
        | Command::Trace {
            scenario,
            overrides,
            ..
        } => Some(load(scenario, *overrides)?),
        Command::Compare { scenario, seed, .. } => Some(load(
            scenario,
            Overrides {
                seed: *seed,
                mode: None,
            },
        )?),
        Command::Session {
            command:
                SessionCommand::Open {
                    scenario,
                    overrides,
                },
        } => Some(load(scenario, *overrides)?),
        _ => None,
    };
    let client = connect(cli.server.as_deref()).await?;

    match cli.command {
        Command::Run { csv, .. } => {
            let resp = client
                .run(&RunRequest {
                    target: prepared.expect("loaded above"),
                    include_trace: false,
                    include_csv: csv.is_some(),
                })
                .await?;
            if let Some(dir) = csv {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(
                    dir.join("samples.csv"),
                    resp.samples_csv.unwrap_or_default(),
                )?;
                std::fs::write(
                    dir.join("fire_log.csv"),
                    resp.fire_log_csv.unwrap_or_default(),
                )?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&resp.report).expect("report serializes")
            );
            Ok(0)
        }
        Command::Compare { json, .. } => {
            let resp = client.compare(&prepared.expect("loaded above")).await?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&resp).expect("comparison serializes")
                );
            } else {
                print!("{}", resp.table);
            }
            Ok(resp.exit_code as u8)
        }
        Command::Trace { output, .. } => {
            let text = client.trace(&prepared.expect("loaded above")).await?;
            std::fs::write(&output, &text)?;
            eprintln!(
                "wrote {} events to {}",
                text.lines().count() - 1,
                output.display()
            );
            Ok(0)
        }
        Command::Registry {
            command: RegistryCommand::Ls { target },
        } => {
            let listing = with_session(&client, &target, true, |id| {
                let client = &client;
                async move { Ok(client.registry(&id).await?) }
            })
            .await?;
            print!("{}", listing.lines());
            Ok(0)
        }
        Command::Reprogram {
            sensor,
            params,
            target,
        } => {
            let cmd = ReprogramCommand::from_pairs(&sensor, &params)
                .map_err(|e| Failure::Invalid(e.to_string()))?;
            let applied = with_session(&client, &target, false, |id| {
                let client = &client;
                let cmd = &cmd;
                async move { Ok(client.reprogram(&id, cmd).await?) }
            })
            .await?;
            println!(
                "{}",
                serde_json::to_string_pretty(&applied).expect("params serialize")
            );
            Ok(0)
        }
        Command::Session { command } => match command {
            SessionCommand::Open { .. } => {
                let info = client
                    .open_session(&prepared.expect("loaded above"))
                    .await?;
                println!("{}", info.id);
                Ok(0)
            }
            SessionCommand::Advance { id, until, by } => {
                let resp = client
                    .advance(
                        &id,
                        AdvanceRequest {
                            until_us: until,
                            by_us: by,
                        },
                    )
                    .await?;
                println!("now_us={} events={}", resp.now_us, resp.events);
                Ok(0)
            }
            SessionCommand::FireLog { id } => {
                print!("{}", client.fire_log(&id).await?.to_csv());
                Ok(0)
            }
            SessionCommand::Close { id } => {
                client.close_session(&id).await?;
                Ok(0)
            }
        },
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    if matches!(cli.command, Command::Serve { .. }) {
        tracing_subscriber::fmt()
            .with_env_filter(
                tracing_subscriber::EnvFilter::try_from_default_env()
                    .unwrap_or_else(|_| "info".into()),
            )
            .with_writer(std::io::stderr)
            .init();
    }
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_SERVICE);
        }
    };
    match runtime.block_on(execute(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: concurpaas [--server URL] <run|compare|trace|registry|reprogram|session|serve> ...");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Service(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_SERVICE)
        }
    }
}

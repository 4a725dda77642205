mod services;

use atomic_transit_core::clock::{parse_iso8601, system_clock, Epoch, OffsetClock, SharedClock};
use atomic_transit_core::compose::{gen_fixture, FixtureSize, Mode};
use atomic_transit_core::gtfs::ServiceDate;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "atomic-transit", version, about = "Atomic transit services over an NGSI context broker")]
struct Cli {
    /// Start the service clock at this instant (epoch seconds or ISO-8601) instead of wall time.
    #[arg(long, global = true, value_parser = parse_instant)]
    clock_start: Option<Epoch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the context broker.
    Broker(BrokerArgs),
    /// Export transit entities from a broker as a GTFS zip.
    Ngsi2gtfs(ExportArgs),
    /// Watch feed pointers and push valid feeds to a routing engine.
    GtfsFetcher(FetcherArgs),
    /// Translate arrival and vehicle notifications into GTFS-RT feeds.
    GtfsRtBridge(BridgeArgs),
    /// Forecast parking and traffic attributes.
    Estimator(EstimatorArgs),
    /// Run the earliest-arrival routing engine.
    Router(RouterArgs),
    /// Start a full pipeline from a JSON description.
    Compose(ComposeArgs),
    /// Write a generated test city.
    Fixture(FixtureArgs),
}

#[derive(Args)]
pub struct BrokerArgs {
    #[arg(long, default_value = "127.0.0.1:1026")]
    pub listen: String,
    /// Append-only journal replayed on start.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub broker: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also publish a feed pointer with this id.
    #[arg(long)]
    pub register: Option<String>,
}

#[derive(Args)]
pub struct FetcherArgs {
    #[arg(long)]
    pub broker: String,
    /// Base URL of the routing engine's plugin endpoint.
    #[arg(long)]
    pub plugin_endpoint: String,
    #[arg(long, default_value_t = 60)]
    pub poll_seconds: u64,
    /// Date used for validity checks, YYYYMMDD; defaults to the clock's date.
    #[arg(long)]
    pub today: Option<ServiceDate>,
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Args)]
pub struct BridgeArgs {
    #[arg(long)]
    pub broker: String,
    /// Static GTFS zip the estimates are matched against.
    #[arg(long)]
    pub feed: PathBuf,
    #[arg(long)]
    pub date: ServiceDate,
    #[arg(long, default_value = "127.0.0.1:8081")]
    pub listen: String,
    #[arg(long, default_value_t = atomic_transit_core::realtime::DEFAULT_HORIZON_SECONDS)]
    pub horizon_seconds: i64,
    /// Also write the encoded feeds into this directory after each update.
    #[arg(long)]
    pub spool_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub broker: String,
    /// `entityId:attr:parking|traffic`, repeatable.
    #[arg(long = "target", required = true)]
    pub targets: Vec<String>,
    #[arg(long, default_value_t = 3600)]
    pub step_seconds: i64,
    #[arg(long, default_value_t = 3600)]
    pub horizon_seconds: i64,
    #[arg(long, default_value_t = 14 * 86_400)]
    pub window_seconds: i64,
    #[arg(long, default_value = "127.0.0.1:8082")]
    pub listen: String,
    /// JSON-lines event log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct RouterArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Service date to route on, YYYYMMDD; defaults to the clock's date.
    #[arg(long)]
    pub date: Option<ServiceDate>,
    /// Load this GTFS zip on start.
    #[arg(long)]
    pub feed: Option<PathBuf>,
    /// GTFS-RT trip-updates URL to poll.
    #[arg(long)]
    pub realtime_url: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub realtime_poll_ms: u64,
}

#[derive(Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "inproc")]
    pub mode: Mode,
    /// Print the status report and tear the pipeline down instead of running until interrupted.
    #[arg(long)]
    pub once: bool,
}

#[derive(Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "tiny")]
    pub size: FixtureSize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_instant(s: &str) -> Result<Epoch, String> {
    s.parse::<Epoch>().or_else(|_| parse_iso8601(s).map_err(|e| e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let clock: SharedClock = match cli.clock_start {
        Some(start) => Arc::new(OffsetClock::starting_at(start)),
        None => system_clock(),
    };
    let code = match cli.command {
        Command::Broker(a) => services::broker(a, clock),
        Command::Ngsi2gtfs(a) => services::export(a),
        Command::GtfsFetcher(a) => services::fetcher(a, clock),
        Command::GtfsRtBridge(a) => services::bridge(a, clock),
        Command::Estimator(a) => services::estimator(a, clock),
        Command::Router(a) => services::router(a, clock),
        Command::Compose(a) => services::compose(a),
        Command::Fixture(a) => match gen_fixture(a.seed, a.size).write_to(&a.out) {
            Ok(()) => {
                println!("wrote {} fixture (seed {}) to {}", a.size, a.seed, a.out.display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    };
    ExitCode::from(code as u8)
}

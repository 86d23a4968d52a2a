use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use smarthouse_bridge::Bridge;
use smarthouse_core::closed_loop::{replay, ClosedLoop, ReplayOptions, RunConfig, Station};
use smarthouse_core::sharedvar::{EngineHandle, EngineServer, DEFAULT_PORT};
use smarthouse_core::{SystemClock, Timestamp};

#[derive(Parser)]
#[command(name = "smarthouse", version, about = "Smart-house sensor network simulator, gateway and shared-variable engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop simulation: mesh, gateway, control and engine wired together.
    Sim(SimArgs),
    /// Gateway attached to a recorded or live byte stream.
    Gateway(GatewayArgs),
    /// Stand-alone shared-variable engine with its HTTP bridge.
    Engine(EngineArgs),
    /// Feeds a recorded byte stream through a fresh gateway.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; the built-in three-room house when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Serve the shared-variable engine on this UDP port.
    #[arg(long)]
    engine_port: Option<u16>,
    /// Serve the HTTP/WebSocket bridge on this TCP port.
    #[arg(long)]
    bridge_port: Option<u16>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time to run, e.g. 24h or 90min.
    #[arg(long, default_value = "24h", value_parser = positive_duration)]
    duration: Duration,
    /// Simulated seconds per wall-clock second; 0 runs as fast as possible.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    speed: f64,
    /// Write the LVM measurement log here.
    #[arg(long)]
    lvm: Option<PathBuf>,
    /// Write the run summary JSON here instead of stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Copy the base station's serial byte stream to a file, or `-` for stdout.
    #[arg(long)]
    stream_out: Option<PathBuf>,
    /// Send the serial byte stream to a gateway listening on this address.
    #[arg(long)]
    connect: Option<SocketAddr>,
    #[command(flatten)]
    serve: ServeArgs,
}

#[derive(Args)]
struct GatewayArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Byte stream file, or `-` for stdin.
    #[arg(long, conflicts_with = "listen", required_unless_present = "listen")]
    input: Option<PathBuf>,
    /// Accept one TCP connection on this address and read the stream from it.
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long)]
    lvm: Option<PathBuf>,
    #[command(flatten)]
    serve: ServeArgs,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    engine_port: u16,
    #[arg(long)]
    bridge_port: Option<u16>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Recorded byte stream.
    file: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Multiple of the 57600 baud line rate; 0 replays as fast as possible.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    speed: f64,
    /// Write the final room snapshot JSON here.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    lvm: Option<PathBuf>,
}

fn positive_duration(s: &str) -> Result<Duration, String> {
    let d = humantime::parse_duration(s).map_err(|e| e.to_string())?;
    if d.is_zero() {
        return Err("duration must be greater than zero".into());
    }
    Ok(d)
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err("must be a finite number >= 0".into());
    }
    Ok(v)
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

/// Engine plus optional UDP server and bridge; dropping stops them.
struct Services {
    engine: EngineHandle,
    _server: Option<EngineServer>,
    bridge: Option<Bridge>,
    rt: tokio::runtime::Runtime,
    stop: Arc<AtomicBool>,
}

impl Services {
    fn start(serve: &ServeArgs) -> Result<Services> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let engine = EngineHandle::new(Arc::new(SystemClock));
        let server = serve
            .engine_port
            .map(|port| engine.serve(("0.0.0.0", port)).with_context(|| format!("binding UDP port {port}")))
            .transpose()?;
        let bridge = serve
            .bridge_port
            .map(|port| {
                rt.block_on(Bridge::bind(SocketAddr::from(([0, 0, 0, 0], port)), engine.clone()))
                    .with_context(|| format!("binding TCP port {port}"))
            })
            .transpose()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        rt.spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                log::info!("interrupted, shutting down");
                flag.store(true, Ordering::Relaxed);
            }
        });
        Ok(Services { engine, _server: server, bridge, rt, stop })
    }

    fn active(&self) -> bool {
        self._server.is_some() || self.bridge.is_some()
    }

    fn shutdown(mut self) -> Result<()> {
        if let Some(b) = self.bridge.take() {
            self.rt.block_on(b.shutdown(Duration::from_secs(2)))?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<Box<dyn Write + Send>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout()));
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn write_json(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn run_sim(args: SimArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    if args.stream_out.as_deref() == Some(Path::new("-")) && args.summary.is_none() {
        bail!("--stream-out - needs --summary so the summary does not mix with the stream");
    }
    let services = Services::start(&args.serve)?;
    let mut lp = ClosedLoop::new(&config)?;
    if services.active() {
        lp = lp.with_engine(services.engine.clone());
    }
    if let Some(path) = &args.lvm {
        lp = lp.with_lvm(path, config.lvm_max_bytes).with_context(|| format!("creating {}", path.display()))?;
    }
    match (&args.stream_out, args.connect) {
        (Some(_), Some(_)) => bail!("--stream-out and --connect are mutually exclusive"),
        (Some(path), None) => lp = lp.with_stream(create(path)?),
        (None, Some(addr)) => {
            let sock = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
            lp = lp.with_stream(Box::new(BufWriter::new(sock)));
        }
        (None, None) => {}
    }
    let summary = lp.run_until(args.duration, args.speed, &services.stop)?;
    write_json(args.summary.as_deref(), &summary.to_json())?;
    if summary.co_activations > 0 {
        log::error!("{} seconds with heating and cooling both on", summary.co_activations);
    }
    services.shutdown()
}

fn run_gateway(args: GatewayArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let services = Services::start(&args.serve)?;
    let clock: Arc<dyn smarthouse_core::Clock> = Arc::new(SystemClock);
    let mut station = Station::new(config.gateway_config(), config.control)?.with_engine(services.engine.clone());
    if let Some(path) = &args.lvm {
        station = station
            .with_lvm(path, clock.now(), config.lvm_max_bytes)
            .with_context(|| format!("creating {}", path.display()))?;
    }
    let input: Box<dyn Read> = match (&args.input, args.listen) {
        (Some(p), _) if p == Path::new("-") => Box::new(io::stdin()),
        (Some(p), _) => Box::new(File::open(p).with_context(|| format!("opening {}", p.display()))?),
        (None, Some(addr)) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            log::info!("waiting for a stream on tcp://{}", listener.local_addr()?);
            let (sock, peer) = listener.accept()?;
            log::info!("reading stream from {peer}");
            sock.set_read_timeout(Some(Duration::from_secs(1)))?;
            Box::new(sock)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let opts = ReplayOptions { clock: Some(clock), stop: Some(Arc::clone(&services.stop)), ..Default::default() };
    let stats = replay(input, &mut station, opts)?;
    station.finish()?;
    let out = serde_json::json!({ "stats": stats, "rooms": station.snapshot() });
    write_json(None, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    services.shutdown()
}

fn run_engine(args: EngineArgs) -> Result<()> {
    let services = Services::start(&ServeArgs { engine_port: Some(args.engine_port), bridge_port: args.bridge_port })?;
    while !services.stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(100));
    }
    services.shutdown()
}

fn run_replay(args: ReplayArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let file = File::open(&args.file).with_context(|| format!("opening {}", args.file.display()))?;
    let start = Timestamp::from_secs(config.sim.start_unix_s);
    let mut station = Station::new(config.gateway_config(), config.control)?;
    if let Some(path) = &args.lvm {
        station = station
            .with_lvm(path, start, config.lvm_max_bytes)
            .with_context(|| format!("creating {}", path.display()))?;
    }
    let opts = ReplayOptions { start, speed: args.speed, ..Default::default() };
    let stats = replay(io::BufReader::new(file), &mut station, opts)?;
    station.finish()?;
    if stats.rejected > 0 {
        log::warn!("{} frames rejected: {:?}", stats.rejected, stats.rejects);
    }
    if let Some(path) = &args.snapshot {
        write_json(Some(path), &(serde_json::to_string_pretty(&station.snapshot())? + "\n"))?;
    }
    write_json(None, &(serde_json::to_string_pretty(&stats)? + "\n"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(a) => run_sim(a),
        Command::Gateway(a) => run_gateway(a),
        Command::Engine(a) => run_engine(a),
        Command::Replay(a) => run_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

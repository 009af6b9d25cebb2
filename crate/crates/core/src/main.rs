use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand};

use evstream::node::Node;
use evstream::protection::ProfileOverrides;
use evstream::sweep::{self, Grid, LabeledProfile, PowerSource, SweepConfig};
use evstream::wire::{self, ServerConfig};

#[derive(Parser)]
#[command(name = "evstream", version, about = "Event streaming store, benchmark sweeps and energy reports")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the store/pub-sub server until SIGINT or SIGTERM.
    Serve(ServeArgs),
    /// Run a benchmark sweep over profiles x sizes x rates.
    Bench(BenchArgs),
    /// Aggregate a sweep directory into report.csv and plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    per_call_ns: Option<u64>,
    #[arg(long)]
    per_byte_ns: Option<u64>,
    /// Protected-memory capacity in bytes (multiple of 4096).
    #[arg(long)]
    epc_bytes: Option<u64>,
    #[arg(long)]
    page_penalty_ns: Option<u64>,
}

impl ProfileArgs {
    fn overrides(&self) -> ProfileOverrides {
        ProfileOverrides {
            per_call_ns: self.per_call_ns,
            per_byte_ns: self.per_byte_ns,
            epc_capacity_bytes: self.epc_bytes,
            page_fault_penalty_ns: self.page_penalty_ns,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7450")]
    listen: String,
    /// native, enclave_like or encrypted_vm_like.
    #[arg(long, default_value = "native")]
    profile: String,
    #[command(flatten)]
    costs: ProfileArgs,
    /// Events a subscriber may have queued before it is disconnected.
    #[arg(long, default_value_t = evstream::pubsub::DEFAULT_QUEUE_CAPACITY)]
    queue_capacity: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated profiles, each `mode` or `label=mode`.
    #[arg(long, default_value = "native", value_delimiter = ',')]
    profile: Vec<String>,
    #[command(flatten)]
    costs: ProfileArgs,
    /// Target rates in messages per second.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,5000,10000,20000,50000,100000")]
    rates: Vec<f64>,
    /// Message sizes in bytes.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    sizes: Vec<usize>,
    /// Seconds per cell.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    publishers: usize,
    #[arg(long, default_value_t = 1)]
    subscribers: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Existing server to benchmark instead of spawning one per profile.
    #[arg(long)]
    server: Option<std::net::SocketAddr>,
    /// Power trace CSV (`t_s,power_w`, seconds from sweep start).
    #[arg(long, conflicts_with = "synthetic_power")]
    power_trace: Option<PathBuf>,
    /// Synthetic power model `p_idle,p_max,capacity`.
    #[arg(long)]
    synthetic_power: Option<String>,
    /// Idle power in watts to subtract from each cell's energy.
    #[arg(long)]
    baseline_w: Option<f64>,
    /// Accept message sizes outside 64..=512 bytes.
    #[arg(long)]
    any_size: bool,
    #[arg(long, env = "EVSTREAM_OUT", default_value = "evstream-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, env = "EVSTREAM_OUT", default_value = "evstream-out")]
    out: PathBuf,
}

fn serve(args: ServeArgs) -> Result<(), Box<dyn std::error::Error>> {
    let profile = LabeledProfile::parse(&args.profile, args.costs.overrides())?.profile;
    let config = ServerConfig {
        queue_capacity: args.queue_capacity,
    };
    let server = wire::serve(args.listen.as_str(), Node::default(), profile, config)?;
    println!("listening on {}", server.local_addr());
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })?;
    let _ = rx.recv();
    log::info!("termination signal received, draining connections");
    server.shutdown();
    Ok(())
}

fn bench(args: BenchArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let overrides = args.costs.overrides();
    let profiles = args
        .profile
        .iter()
        .map(|p| LabeledProfile::parse(p, overrides))
        .collect::<Result<Vec<_>, _>>()?;
    let power = match (&args.power_trace, &args.synthetic_power) {
        (Some(path), _) => PowerSource::Trace { path: path.clone() },
        (None, Some(s)) => PowerSource::Synthetic(sweep::parse_synthetic(s)?),
        (None, None) => PowerSource::default(),
    };
    if args.server.is_some() && profiles.len() > 1 {
        log::warn!("--server given: profile labels are bookkeeping only, the server's own profile applies");
    }
    let config = SweepConfig {
        grid: Grid {
            profiles,
            sizes: args.sizes,
            rates: args.rates,
            duration_s: args.duration,
            publishers: args.publishers,
            subscribers: args.subscribers,
            allow_any_size: args.any_size,
        },
        seed: args.seed,
        out_dir: args.out,
        power,
        baseline_w: args.baseline_w,
        server: args.server,
        channel: "bench".into(),
    };
    let manifest = sweep::run_sweep(&config)?;
    let failed = manifest.failed_cells();
    println!(
        "{} cells, {} failed; manifest in {}",
        manifest.cells.len(),
        failed,
        config.out_dir.join(sweep::MANIFEST_FILE).display()
    );
    Ok(failed == 0)
}

fn report(args: ReportArgs) -> Result<(), Box<dyn std::error::Error>> {
    let out = sweep::build_report(&args.out)?;
    println!("wrote {}", out.report_path.display());
    for p in &out.plot_paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Serve(a) => serve(a).map(|()| true),
        Cmd::Bench(a) => bench(a),
        Cmd::Report(a) => report(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

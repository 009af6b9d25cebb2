//! Benchmark sweeps over a (profile, size, rate) grid, and the reports
//! built from their outputs.
//!
//! A sweep writes `manifest.json` plus one latency CSV per cell under
//! `cells/`. The report step reads only those files and writes
//! `report.csv` and one `plot_<profile>.csv` per profile.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::{self, percentiles, BenchError, WorkloadSpec};
use crate::clock;
use crate::energy::{self, EnergyReport, SyntheticPowerModel};
use crate::node::Node;
use crate::protection::{ProfileError, ProfileOverrides, ProtectionMode, ProtectionProfile};
use crate::wire::{self, ServerConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_HEADER: &str = "rate,size_bytes,profile,achieved_rate,joules_total,joules_per_message,p50_ns,p99_ns";
pub const PLOT_HEADER: &str = "size_bytes,achieved_rate,joules_per_message";
const MANIFEST_FORMAT: u32 = 1;
const SYNTHETIC_SAMPLE_HZ: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing inputs: {0}")]
    MissingInputs(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("latency file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Energy(#[from] energy::EnergyError),
}

/// A grid profile: a display label and the protection parameters behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledProfile {
    pub label: String,
    pub profile: ProtectionProfile,
}

impl LabeledProfile {
    /// Parses `mode` or `label=mode`, then applies `overrides` to non-native modes.
    pub fn parse(spec: &str, overrides: ProfileOverrides) -> Result<Self, SweepError> {
        let (label, mode) = match spec.split_once('=') {
            Some((label, mode)) => (label.trim(), mode.trim()),
            None => (spec.trim(), spec.trim()),
        };
        if label.is_empty() || !label.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
            return Err(SweepError::InvalidConfig(format!("bad profile label {label:?}")));
        }
        let mode = ProtectionMode::from_str(mode)?;
        let profile = ProtectionProfile::preset(mode).with_overrides(overrides)?;
        Ok(LabeledProfile {
            label: label.to_string(),
            profile,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PowerSource {
    Synthetic(SyntheticPowerModel),
    /// Meter trace whose `t_s` counts from the start of the sweep.
    Trace { path: PathBuf },
}

impl Default for PowerSource {
    fn default() -> Self {
        PowerSource::Synthetic(SyntheticPowerModel::default())
    }
}

/// Parses `p_idle,p_max,capacity`.
pub fn parse_synthetic(s: &str) -> Result<SyntheticPowerModel, SweepError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| SweepError::InvalidConfig(format!("synthetic power {s:?}: {e}")))?;
    let [idle, max, capacity] = parts[..] else {
        return Err(SweepError::InvalidConfig(format!(
            "synthetic power needs p_idle,p_max,capacity, got {s:?}"
        )));
    };
    Ok(SyntheticPowerModel::new(idle, max, capacity)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub profiles: Vec<LabeledProfile>,
    pub sizes: Vec<usize>,
    pub rates: Vec<f64>,
    pub duration_s: f64,
    pub publishers: usize,
    pub subscribers: usize,
    #[serde(default)]
    pub allow_any_size: bool,
}

impl Grid {
    /// Cells in profile-major, then size, then rate order.
    pub fn cells(&self) -> Vec<(usize, &LabeledProfile, usize, f64)> {
        let mut out = Vec::new();
        for p in &self.profiles {
            for &size in &self.sizes {
                for &rate in &self.rates {
                    out.push((out.len(), p, size, rate));
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.profiles.is_empty() || self.sizes.is_empty() || self.rates.is_empty() {
            return Err(SweepError::InvalidConfig("the workload grid is empty".into()));
        }
        let mut labels: Vec<&str> = self.profiles.iter().map(|p| p.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(SweepError::InvalidConfig("profile labels must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: Grid,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub power: PowerSource,
    /// Idle power to subtract, in watts.
    pub baseline_w: Option<f64>,
    /// Use this server instead of spawning one per profile.
    pub server: Option<SocketAddr>,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    /// Seconds from the sweep start to the cell's first scheduled send.
    pub start_offset_s: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub index: usize,
    pub profile: String,
    pub mode: ProtectionMode,
    pub size_bytes: usize,
    pub rate: f64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_file: Option<String>,
    pub payload_digest: String,
    pub sent: usize,
    pub delivered: usize,
    pub achieved_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyReport>,
    /// Wall-clock data; differs between otherwise identical sweeps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<CellTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub tool_version: String,
    pub seed: u64,
    pub grid: Grid,
    pub power: PowerSource,
    pub baseline_w: Option<f64>,
    pub cells: Vec<CellEntry>,
}

impl Manifest {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }

    pub fn read(dir: &Path) -> Result<Self, SweepError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|_| SweepError::MissingInputs(format!("{} not found", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Copy with every timing field removed, for comparing sweeps.
    pub fn without_timing(&self) -> Manifest {
        let mut m = self.clone();
        for c in &mut m.cells {
            c.timing = None;
        }
        m
    }
}

fn cell_file_name(index: usize, label: &str, size: usize, rate: f64) -> String {
    format!("cells/{index:03}_{label}_{size}B_{rate}.csv")
}

/// Runs every grid cell, one at a time, and writes the manifest.
///
/// Cell failures are recorded and the sweep moves on; the caller decides
/// what a non-zero [`Manifest::failed_cells`] means.
pub fn run_sweep(config: &SweepConfig) -> Result<Manifest, SweepError> {
    config.grid.validate()?;
    let trace = match &config.power {
        PowerSource::Synthetic(m) => {
            m.validate()?;
            None
        }
        PowerSource::Trace { path } => Some(energy::read_trace_file(path)?),
    };
    fs::create_dir_all(config.out_dir.join("cells"))?;
    let sweep_start = clock::now_ns();

    let mut cells = Vec::new();
    let mut server: Option<(String, wire::Server)> = None;
    for (index, lp, size, rate) in config.grid.cells() {
        let spec = WorkloadSpec {
            target_rate: rate,
            message_size_bytes: size,
            duration_s: config.grid.duration_s,
            publishers: config.grid.publishers,
            subscribers: config.grid.subscribers,
            channel: config.channel.clone(),
            seed: config.seed,
            allow_any_size: config.grid.allow_any_size,
        };
        let digest_count = bench::send_count(rate, spec.duration_s);
        let mut entry = CellEntry {
            index,
            profile: lp.label.clone(),
            mode: lp.profile.mode,
            size_bytes: size,
            rate,
            status: CellStatus::Failed,
            error: None,
            latency_file: None,
            payload_digest: bench::payload_digest(spec.seed, digest_count, size),
            sent: 0,
            delivered: 0,
            achieved_rate: 0.0,
            energy: None,
            timing: None,
        };

        let addr = match config.server {
            Some(addr) => Ok(addr),
            None => {
                if server.as_ref().map(|(l, _)| l != &lp.label).unwrap_or(true) {
                    if let Some((_, old)) = server.take() {
                        old.shutdown();
                    }
                    match wire::serve("127.0.0.1:0", Node::default(), lp.profile, ServerConfig::default()) {
                        Ok(s) => server = Some((lp.label.clone(), s)),
                        Err(e) => log::error!("cannot start server for {}: {e}", lp.label),
                    }
                }
                server
                    .as_ref()
                    .map(|(_, s)| s.local_addr())
                    .ok_or_else(|| "no server for this profile".to_string())
            }
        };

        log::info!("cell {index}: profile={} size={size}B rate={rate}/s", lp.label);
        let outcome = addr.and_then(|addr| bench::run(&spec, addr).map_err(|e| e.to_string()));
        match outcome {
            Ok(result) => {
                let file = cell_file_name(index, &lp.label, size, rate);
                let out = BufWriter::new(fs::File::create(config.out_dir.join(&file))?);
                bench::write_records_csv(&result.records, out)?;
                let start_offset_s = result.start_ns.saturating_sub(sweep_start) as f64 / 1e9;
                let energy = match &trace {
                    None => {
                        let PowerSource::Synthetic(model) = &config.power else { unreachable!() };
                        let samples =
                            energy::synthesize_trace(model, result.achieved_rate, spec.duration_s, SYNTHETIC_SAMPLE_HZ)?;
                        Some(energy::energy_per_message(&samples, result.delivered as u64, config.baseline_w)?)
                    }
                    Some(trace) => energy::window(trace, start_offset_s, start_offset_s + spec.duration_s)
                        .and_then(|w| energy::energy_per_message(&w, result.delivered as u64, config.baseline_w))
                        .map_err(|e| log::warn!("cell {index}: no energy figure: {e}"))
                        .ok(),
                };
                entry.status = CellStatus::Ok;
                entry.latency_file = Some(file);
                entry.sent = result.sent;
                entry.delivered = result.delivered;
                entry.achieved_rate = result.achieved_rate;
                entry.energy = energy;
                entry.timing = Some(CellTiming {
                    start_offset_s,
                    elapsed_s: result.elapsed_s(),
                });
            }
            Err(e) => {
                log::error!("cell {index} failed: {e}");
                entry.error = Some(e);
            }
        }
        cells.push(entry);
    }
    if let Some((_, s)) = server {
        s.shutdown();
    }

    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        grid: config.grid.clone(),
        power: config.power.clone(),
        baseline_w: config.baseline_w,
        cells,
    };
    fs::write(
        config.out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

#[derive(Debug, Deserialize)]
struct LatencyRow {
    latency_ns: Option<u64>,
}

fn read_latencies(path: &Path) -> Result<Vec<u64>, SweepError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|_| SweepError::MissingInputs(format!("{} not found", path.display())))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<LatencyRow>() {
        if let Some(l) = row?.latency_ns {
            out.push(l);
        }
    }
    Ok(out)
}

/// One `report.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub rate: f64,
    pub size_bytes: usize,
    pub profile: String,
    pub achieved_rate: f64,
    pub joules_total: Option<f64>,
    pub joules_per_message: Option<f64>,
    pub p50_ns: Option<u64>,
    pub p99_ns: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub rows: Vec<ReportRow>,
    pub report_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Builds the energy report and per-profile plot data from a sweep directory.
pub fn build_report(dir: &Path) -> Result<ReportOutput, SweepError> {
    let manifest = Manifest::read(dir)?;
    let mut rows = Vec::new();
    for cell in manifest.cells.iter().filter(|c| c.status == CellStatus::Ok) {
        let file = cell
            .latency_file
            .as_ref()
            .ok_or_else(|| SweepError::MissingInputs(format!("cell {} has no latency file", cell.index)))?;
        let latencies = read_latencies(&dir.join(file))?;
        let (p50, p99) = match percentiles(&latencies, &[0.5, 0.99]) {
            Ok(q) => (Some(q[0]), Some(q[1])),
            Err(BenchError::EmptyInput) => (None, None),
            Err(e) => return Err(SweepError::InvalidConfig(e.to_string())),
        };
        rows.push(ReportRow {
            rate: cell.rate,
            size_bytes: cell.size_bytes,
            profile: cell.profile.clone(),
            achieved_rate: cell.achieved_rate,
            joules_total: cell.energy.map(|e| e.joules_total),
            joules_per_message: cell.energy.and_then(|e| e.joules_per_message),
            p50_ns: p50,
            p99_ns: p99,
        });
    }

    let mut report = String::from(REPORT_HEADER);
    report.push('\n');
    for r in &rows {
        writeln!(
            report,
            "{},{},{},{},{},{},{},{}",
            r.rate,
            r.size_bytes,
            r.profile,
            r.achieved_rate,
            opt(r.joules_total),
            opt(r.joules_per_message),
            opt(r.p50_ns),
            opt(r.p99_ns)
        )
        .unwrap();
    }
    let report_path = dir.join(REPORT_FILE);
    fs::write(&report_path, report)?;

    let mut plot_paths = Vec::new();
    for lp in &manifest.grid.profiles {
        let mut series: Vec<&ReportRow> = rows.iter().filter(|r| r.profile == lp.label).collect();
        series.sort_by(|a, b| {
            a.size_bytes
                .cmp(&b.size_bytes)
                .then(a.achieved_rate.total_cmp(&b.achieved_rate))
        });
        let mut plot = String::from(PLOT_HEADER);
        plot.push('\n');
        for r in series {
            writeln!(plot, "{},{},{}", r.size_bytes, r.achieved_rate, opt(r.joules_per_message)).unwrap();
        }
        let path = dir.join(format!("plot_{}.csv", lp.label));
        fs::write(&path, plot)?;
        plot_paths.push(path);
    }
    Ok(ReportOutput {
        rows,
        report_path,
        plot_paths,
    })
}

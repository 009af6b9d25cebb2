//! Power traces, energy integration and joules-per-message accounting.
//!
//! Power comes either from a replayed meter trace (`t_s,power_w` CSV) or
//! from a synthetic model in which power grows linearly with utilization.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated float comparisons reject NaN

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("at least two power samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("sample times must be strictly increasing (t={prev} then t={next})")]
    NonMonotonicTime { prev: f64, next: f64 },
    #[error("power must be finite and non-negative, got {0}")]
    InvalidPower(f64),
    #[error("invalid power model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("a linear fit needs at least two distinct rates")]
    DegenerateInput,
    #[error("power trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("power trace: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t_s: f64,
    pub power_w: f64,
}

impl PowerSample {
    pub fn new(t_s: f64, power_w: f64) -> Self {
        PowerSample { t_s, power_w }
    }
}

fn validate(samples: &[PowerSample]) -> Result<(), EnergyError> {
    if samples.len() < 2 {
        return Err(EnergyError::TooFewSamples(samples.len()));
    }
    for s in samples {
        if !s.power_w.is_finite() || s.power_w < 0.0 {
            return Err(EnergyError::InvalidPower(s.power_w));
        }
    }
    for w in samples.windows(2) {
        if !(w[1].t_s > w[0].t_s) {
            return Err(EnergyError::NonMonotonicTime {
                prev: w[0].t_s,
                next: w[1].t_s,
            });
        }
    }
    Ok(())
}

/// Trapezoidal energy in joules over `[first.t_s, last.t_s]`.
pub fn integrate(samples: &[PowerSample]) -> Result<f64, EnergyError> {
    validate(samples)?;
    Ok(samples
        .windows(2)
        .map(|w| 0.5 * (w[0].power_w + w[1].power_w) * (w[1].t_s - w[0].t_s))
        .sum())
}

/// Restricts a trace to `[start_s, end_s]`, interpolating linearly at the edges.
pub fn window(samples: &[PowerSample], start_s: f64, end_s: f64) -> Result<Vec<PowerSample>, EnergyError> {
    validate(samples)?;
    if !(end_s > start_s) {
        return Err(EnergyError::InvalidArgument("window end must follow its start"));
    }
    let first = samples[0].t_s;
    let last = samples[samples.len() - 1].t_s;
    if start_s < first || end_s > last {
        return Err(EnergyError::InvalidArgument("window falls outside the trace"));
    }
    let at = |t: f64| -> f64 {
        let i = samples.partition_point(|s| s.t_s <= t);
        if i == 0 {
            return samples[0].power_w;
        }
        if i == samples.len() {
            return samples[i - 1].power_w;
        }
        let (a, b) = (samples[i - 1], samples[i]);
        a.power_w + (b.power_w - a.power_w) * (t - a.t_s) / (b.t_s - a.t_s)
    };
    let mut out = vec![PowerSample::new(start_s, at(start_s))];
    out.extend(samples.iter().copied().filter(|s| s.t_s > start_s && s.t_s < end_s));
    out.push(PowerSample::new(end_s, at(end_s)));
    Ok(out)
}

/// Power grows linearly from `p_idle_w` to `p_max_w` as the message rate
/// approaches `capacity_msgs_per_s`, and stays flat beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPowerModel {
    pub p_idle_w: f64,
    pub p_max_w: f64,
    pub capacity_msgs_per_s: f64,
}

impl SyntheticPowerModel {
    pub fn new(p_idle_w: f64, p_max_w: f64, capacity_msgs_per_s: f64) -> Result<Self, EnergyError> {
        let m = SyntheticPowerModel {
            p_idle_w,
            p_max_w,
            capacity_msgs_per_s,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.p_idle_w.is_finite() && self.p_idle_w > 0.0) {
            return Err(EnergyError::InvalidModel("idle power must be positive"));
        }
        if !(self.p_max_w.is_finite() && self.p_max_w >= self.p_idle_w) {
            return Err(EnergyError::InvalidModel("max power must be at least idle power"));
        }
        if !(self.capacity_msgs_per_s.is_finite() && self.capacity_msgs_per_s > 0.0) {
            return Err(EnergyError::InvalidModel("capacity must be positive"));
        }
        Ok(())
    }

    pub fn power_at(&self, rate: f64) -> f64 {
        let utilization = (rate.max(0.0) / self.capacity_msgs_per_s).min(1.0);
        self.p_idle_w + (self.p_max_w - self.p_idle_w) * utilization
    }
}

impl Default for SyntheticPowerModel {
    fn default() -> Self {
        SyntheticPowerModel {
            p_idle_w: 50.0,
            p_max_w: 150.0,
            capacity_msgs_per_s: 100_000.0,
        }
    }
}

/// Constant-power trace for a run at `achieved_rate`, sampled at `sample_hz`
/// from 0 to `duration_s` inclusive.
pub fn synthesize_trace(
    model: &SyntheticPowerModel,
    achieved_rate: f64,
    duration_s: f64,
    sample_hz: f64,
) -> Result<Vec<PowerSample>, EnergyError> {
    model.validate()?;
    if !(sample_hz.is_finite() && sample_hz > 0.0) {
        return Err(EnergyError::InvalidArgument("sample rate must be positive"));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(EnergyError::InvalidArgument("duration must be positive"));
    }
    let power = model.power_at(achieved_rate);
    let n = (duration_s * sample_hz).floor() as u64;
    let mut samples: Vec<PowerSample> = (0..=n)
        .map(|i| PowerSample::new(i as f64 / sample_hz, power))
        .collect();
    if samples.last().is_none_or(|s| s.t_s < duration_s) {
        samples.push(PowerSample::new(duration_s, power));
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub joules_total: f64,
    pub joules_baseline: Option<f64>,
    pub messages_delivered: u64,
    /// `None` when no message was delivered.
    pub joules_per_message: Option<f64>,
}

impl EnergyReport {
    /// Energy attributed to the workload, after optional idle subtraction.
    pub fn joules_net(&self) -> f64 {
        self.joules_total - self.joules_baseline.unwrap_or(0.0)
    }

    pub fn is_flagged(&self) -> bool {
        self.joules_per_message.is_none()
    }
}

pub fn energy_per_message(
    samples: &[PowerSample],
    messages_delivered: u64,
    baseline_w: Option<f64>,
) -> Result<EnergyReport, EnergyError> {
    let joules_total = integrate(samples)?;
    let span = samples[samples.len() - 1].t_s - samples[0].t_s;
    let joules_baseline = match baseline_w {
        Some(w) if !(w.is_finite() && w >= 0.0) => return Err(EnergyError::InvalidPower(w)),
        Some(w) => Some(w * span),
        None => None,
    };
    let net = joules_total - joules_baseline.unwrap_or(0.0);
    Ok(EnergyReport {
        joules_total,
        joules_baseline,
        messages_delivered,
        joules_per_message: (messages_delivered > 0).then(|| net / messages_delivered as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares over `(x, y)` points.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit, EnergyError> {
    if points.len() < 2 {
        return Err(EnergyError::DegenerateInput);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EnergyError::DegenerateInput);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    t_s: f64,
    power_w: f64,
}

pub fn read_trace(reader: impl Read) -> Result<Vec<PowerSample>, EnergyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    {
        let headers = rdr.headers()?;
        if headers.len() != 2 || &headers[0] != "t_s" || &headers[1] != "power_w" {
            return Err(EnergyError::InvalidArgument("trace header must be `t_s,power_w`"));
        }
    }
    let samples = rdr
        .deserialize::<TraceRow>()
        .map(|r| r.map(|row| PowerSample::new(row.t_s, row.power_w)))
        .collect::<Result<Vec<_>, _>>()?;
    validate(&samples)?;
    Ok(samples)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<PowerSample>, EnergyError> {
    read_trace(std::fs::File::open(path)?)
}

pub fn write_trace(samples: &[PowerSample], writer: impl Write) -> Result<(), EnergyError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(TraceRow {
            t_s: s.t_s,
            power_w: s.power_w,
        })?;
    }
    w.flush()?;
    Ok(())
}

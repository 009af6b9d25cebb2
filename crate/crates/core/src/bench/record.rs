use std::io::Write;

/// Timeline of one scheduled send. All timestamps share the host monotonic clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyRecord {
    /// Position in the send schedule.
    pub index: usize,
    /// Channel sequence number, once some subscriber has seen the event.
    pub seq: Option<u64>,
    pub intended_send_ns: u64,
    /// `None` if the run ended before the send was issued.
    pub actual_send_ns: Option<u64>,
    pub publish_ns: Option<u64>,
    /// One entry per subscriber that received the event.
    pub receive_ns: Vec<u64>,
    pub subscribers: usize,
}

impl LatencyRecord {
    /// Every subscriber received the event.
    pub fn is_complete(&self) -> bool {
        self.publish_ns.is_some() && self.receive_ns.len() == self.subscribers
    }

    /// Latest arrival among subscribers.
    pub fn receive_max_ns(&self) -> Option<u64> {
        self.receive_ns.iter().copied().max()
    }

    /// Server publish to the last subscriber's arrival; only for complete records.
    pub fn event_latency_ns(&self) -> Option<u64> {
        if !self.is_complete() {
            return None;
        }
        Some(self.receive_max_ns()?.saturating_sub(self.publish_ns?))
    }

    /// Intended send to the last subscriber's arrival; only for complete records.
    pub fn corrected_latency_ns(&self) -> Option<u64> {
        if !self.is_complete() {
            return None;
        }
        Some(self.receive_max_ns()?.saturating_sub(self.intended_send_ns))
    }
}

pub const RECORD_CSV_HEADER: &str =
    "seq,intended_send_ns,actual_send_ns,publish_ns,recv_max_ns,latency_ns,corrected_latency_ns";

/// One row per scheduled send, in schedule order. Missing values are empty fields.
pub fn write_records_csv(records: &[LatencyRecord], mut out: impl Write) -> std::io::Result<()> {
    fn opt(v: Option<u64>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    writeln!(out, "{RECORD_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            opt(r.seq),
            r.intended_send_ns,
            opt(r.actual_send_ns),
            opt(r.publish_ns),
            opt(r.receive_max_ns()),
            opt(r.event_latency_ns()),
            opt(r.corrected_latency_ns()),
        )?;
    }
    out.flush()
}

//! Trace records, loss-monitor throughput samples, Xgraph plot data and run reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use crate::error::SimError;
use crate::netgraph::{NodeId, Packet};
use crate::scheduler::Seconds;
use crate::transport::TcpSink;

pub const TRACE_FLAGS: &str = "-------";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Enqueue,
    Dequeue,
    Receive,
    Drop,
}

impl TraceEvent {
    pub fn as_char(self) -> char {
        match self {
            TraceEvent::Enqueue => '+',
            TraceEvent::Dequeue => '-',
            TraceEvent::Receive => 'r',
            TraceEvent::Drop => 'd',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '+' => TraceEvent::Enqueue,
            '-' => TraceEvent::Dequeue,
            'r' => TraceEvent::Receive,
            'd' => TraceEvent::Drop,
            _ => return None,
        })
    }
}

/// One line of the wired trace format:
/// `event time from to type size flags flow src.port dst.port seq uid`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub event: TraceEvent,
    pub time: Seconds,
    pub from: u32,
    pub to: u32,
    pub pkt_type: String,
    pub size: u32,
    pub flags: String,
    pub flow_id: u32,
    pub src_addr: (u32, u32),
    pub dst_addr: (u32, u32),
    pub seq: u64,
    pub uid: u64,
}

impl TraceRecord {
    pub fn new(event: TraceEvent, pkt: &Packet, hop: (NodeId, NodeId), now: Seconds) -> Self {
        Self {
            event,
            time: now,
            from: hop.0 .0,
            to: hop.1 .0,
            pkt_type: pkt.kind.as_str().to_string(),
            size: pkt.size,
            flags: TRACE_FLAGS.to_string(),
            flow_id: pkt.flow_id,
            src_addr: (pkt.src.0, 0),
            dst_addr: (pkt.dst.0, 0),
            seq: pkt.seq,
            uid: pkt.uid,
        }
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 12 {
            return Err(format!("expected 12 fields, found {}", f.len()));
        }
        let mut chars = f[0].chars();
        let event = match (chars.next().and_then(TraceEvent::from_char), chars.next()) {
            (Some(e), None) => e,
            _ => return Err(format!("unknown event '{}'", f[0])),
        };
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} '{s}'"))
        }
        fn addr(s: &str) -> Result<(u32, u32), String> {
            let (n, p) = s.split_once('.').ok_or_else(|| format!("bad address '{s}'"))?;
            Ok((num(n, "address")?, num(p, "port")?))
        }
        Ok(Self {
            event,
            time: num(f[1], "time")?,
            from: num(f[2], "from node")?,
            to: num(f[3], "to node")?,
            pkt_type: f[4].to_string(),
            size: num(f[5], "size")?,
            flags: f[6].to_string(),
            flow_id: num(f[7], "flow id")?,
            src_addr: addr(f[8])?,
            dst_addr: addr(f[9])?,
            seq: num(f[10], "seq")?,
            uid: num(f[11], "uid")?,
        })
    }
}

impl std::fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:.6} {} {} {} {} {} {} {}.{} {}.{} {} {}",
            self.event.as_char(),
            self.time,
            self.from,
            self.to,
            self.pkt_type,
            self.size,
            self.flags,
            self.flow_id,
            self.src_addr.0,
            self.src_addr.1,
            self.dst_addr.0,
            self.dst_addr.1,
            self.seq,
            self.uid
        )
    }
}

/// Formats one trace line (without trailing newline).
pub fn trace_line(event: TraceEvent, pkt: &Packet, hop: (NodeId, NodeId), now: Seconds) -> String {
    TraceRecord::new(event, pkt, hop, now).to_string()
}

/// Line-oriented trace output. The first write error is kept and reported by
/// [`TraceWriter::finish`]; later writes are skipped.
pub struct TraceWriter<W: Write> {
    out: Option<W>,
    error: Option<io::Error>,
    buf: String,
    pub lines: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out: Some(out),
            error: None,
            buf: String::with_capacity(96),
            lines: 0,
        }
    }

    /// A writer that formats nothing.
    pub fn disabled() -> Self {
        Self {
            out: None,
            error: None,
            buf: String::new(),
            lines: 0,
        }
    }

    pub fn emit(&mut self, event: TraceEvent, pkt: &Packet, hop: (NodeId, NodeId), now: Seconds) {
        self.lines += 1;
        let Some(out) = self.out.as_mut() else {
            return;
        };
        if self.error.is_some() {
            return;
        }
        self.buf.clear();
        let rec = TraceRecord::new(event, pkt, hop, now);
        let _ = writeln!(self.buf, "{rec}");
        if let Err(e) = out.write_all(self.buf.as_bytes()) {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> io::Result<Option<W>> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if let Some(out) = self.out.as_mut() {
            out.flush()?;
        }
        Ok(self.out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputSample {
    pub flow_id: u32,
    /// end of the sampling interval
    pub t: Seconds,
    pub interval: Seconds,
    pub bytes: u64,
    pub bits_per_second: f64,
}

impl ThroughputSample {
    /// Bytes implied by the rate over the interval.
    pub fn implied_bytes(&self) -> u64 {
        (self.bits_per_second * self.interval / 8.0).round() as u64
    }
}

/// Samples the sink's loss monitor: rate over the last `interval`, then
/// resets the per-interval byte counter.
pub fn record_tick(sink: &mut TcpSink, flow_id: u32, now: Seconds, interval: Seconds) -> ThroughputSample {
    debug_assert!(interval > 0.0);
    let bytes = sink.take_bytes();
    ThroughputSample {
        flow_id,
        t: now,
        interval,
        bytes,
        bits_per_second: bytes as f64 * 8.0 / interval,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    pub flow_id: u32,
    pub name: String,
    pub samples: Vec<ThroughputSample>,
}

impl FlowSeries {
    pub fn file_name(&self) -> String {
        format!("{}.tr.w", self.name)
    }
}

/// Renders Xgraph data: a title line followed by `time value` pairs with the
/// value in Mb/s.
pub fn xgraph_render(series: &FlowSeries) -> String {
    let mut s = format!("TitleText: {}\n", series.name);
    for sample in &series.samples {
        let _ = writeln!(s, "{:.3} {:.6}", sample.t, sample.bits_per_second / 1e6);
    }
    s
}

pub fn xgraph_write(series: &FlowSeries, path: &Path) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(xgraph_render(series).as_bytes())?;
    f.flush()?;
    f.into_inner().map_err(|e| e.into_error())?.sync_all()
}

/// Per-flow packet accounting. The first five fields satisfy
/// `created == received + dropped + buffered + in_flight` and can be
/// recomputed from a trace file alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowCounters {
    /// every packet of the flow (data and ack) handed to the network
    pub created: u64,
    pub received: u64,
    pub dropped: u64,
    pub buffered: u64,
    pub in_flight: u64,
    pub data_sent: u64,
    pub retransmitted: u64,
    pub acks_sent: u64,
    pub bytes_delivered: u64,
}

impl FlowCounters {
    pub fn conserved(&self) -> bool {
        self.created == self.received + self.dropped + self.buffered + self.in_flight
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub duration: Seconds,
    pub seed: u64,
    pub events_executed: u64,
    pub trace_lines: u64,
    pub flows: BTreeMap<u32, FlowCounters>,
    pub node_drops: BTreeMap<u32, u64>,
    pub wall_clock: Duration,
}

impl RunReport {
    pub fn total_drops(&self) -> u64 {
        self.node_drops.values().sum()
    }

    pub fn drops_at(&self, node: u32) -> u64 {
        self.node_drops.get(&node).copied().unwrap_or(0)
    }

    /// `key: value` lines. Wall-clock time is left out so equal seeds give
    /// byte-identical reports.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "duration: {:.6}", self.duration);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "events_executed: {}", self.events_executed);
        let _ = writeln!(s, "trace_lines: {}", self.trace_lines);
        for (id, c) in &self.flows {
            render_conservation(&mut s, *id, c);
            let _ = writeln!(s, "flow.{id}.data_sent: {}", c.data_sent);
            let _ = writeln!(s, "flow.{id}.retransmitted: {}", c.retransmitted);
            let _ = writeln!(s, "flow.{id}.acks_sent: {}", c.acks_sent);
            let _ = writeln!(s, "flow.{id}.bytes_delivered: {}", c.bytes_delivered);
        }
        render_drops(&mut s, &self.node_drops);
        s
    }

    /// The trace-derivable part of this report.
    pub fn trace_view(&self) -> TraceSummary {
        TraceSummary {
            lines: self.trace_lines,
            flows: self
                .flows
                .iter()
                .map(|(id, c)| {
                    let v = FlowCounters {
                        created: c.created,
                        received: c.received,
                        dropped: c.dropped,
                        buffered: c.buffered,
                        in_flight: c.in_flight,
                        ..FlowCounters::default()
                    };
                    (*id, v)
                })
                .collect(),
            node_drops: self
                .node_drops
                .iter()
                .filter(|(_, &v)| v > 0)
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }
}

fn render_conservation(s: &mut String, id: u32, c: &FlowCounters) {
    let _ = writeln!(s, "flow.{id}.created: {}", c.created);
    let _ = writeln!(s, "flow.{id}.received: {}", c.received);
    let _ = writeln!(s, "flow.{id}.dropped: {}", c.dropped);
    let _ = writeln!(s, "flow.{id}.buffered: {}", c.buffered);
    let _ = writeln!(s, "flow.{id}.in_flight: {}", c.in_flight);
}

fn render_drops(s: &mut String, drops: &BTreeMap<u32, u64>) {
    for (node, n) in drops {
        let _ = writeln!(s, "node.{node}.drops: {n}");
    }
    let _ = writeln!(s, "total.drops: {}", drops.values().sum::<u64>());
}

/// Accounting recomputed from a trace file alone. Each packet's fate is
/// the last event recorded for its uid: `r` at its destination means
/// received, `d` dropped, `+` buffered and `-` on the wire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSummary {
    pub lines: u64,
    pub flows: BTreeMap<u32, FlowCounters>,
    pub node_drops: BTreeMap<u32, u64>,
}

impl TraceSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trace_lines: {}", self.lines);
        for (id, c) in &self.flows {
            render_conservation(&mut s, *id, c);
        }
        render_drops(&mut s, &self.node_drops);
        s
    }

    pub fn drops_at(&self, node: u32) -> u64 {
        self.node_drops.get(&node).copied().unwrap_or(0)
    }
}

pub fn summarize_trace<R: BufRead>(input: R) -> Result<TraceSummary, SimError> {
    struct Fate {
        flow: u32,
        last: TraceEvent,
        at_dst: bool,
    }
    let mut fates: HashMap<u64, Fate> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    let mut summary = TraceSummary::default();
    let mut last_time = f64::NEG_INFINITY;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = TraceRecord::parse(&line).map_err(|message| SimError::Trace { line: i + 1, message })?;
        if rec.time < last_time {
            return Err(SimError::Trace {
                line: i + 1,
                message: format!("time {} goes backwards", rec.time),
            });
        }
        last_time = rec.time;
        summary.lines += 1;
        let at_dst = rec.event == TraceEvent::Receive && rec.to == rec.dst_addr.0;
        match fates.get_mut(&rec.uid) {
            Some(f) => {
                f.last = rec.event;
                f.at_dst = at_dst;
            }
            None => {
                if rec.event != TraceEvent::Enqueue {
                    return Err(SimError::Trace {
                        line: i + 1,
                        message: format!("uid {} first seen with '{}'", rec.uid, rec.event.as_char()),
                    });
                }
                order.push(rec.uid);
                fates.insert(
                    rec.uid,
                    Fate {
                        flow: rec.flow_id,
                        last: rec.event,
                        at_dst,
                    },
                );
            }
        }
        if rec.event == TraceEvent::Drop {
            *summary.node_drops.entry(rec.from).or_default() += 1;
        }
    }
    for uid in order {
        let f = &fates[&uid];
        let c = summary.flows.entry(f.flow).or_default();
        c.created += 1;
        match f.last {
            TraceEvent::Receive if f.at_dst => c.received += 1,
            TraceEvent::Drop => c.dropped += 1,
            TraceEvent::Enqueue => c.buffered += 1,
            // a receive short of the destination is immediately followed by
            // a re-enqueue, so only '-' leaves a packet on the wire
            TraceEvent::Dequeue | TraceEvent::Receive => c.in_flight += 1,
        }
    }
    Ok(summary)
}

pub fn summarize_trace_file(path: &Path) -> Result<TraceSummary, SimError> {
    summarize_trace(io::BufReader::new(File::open(path)?))
}

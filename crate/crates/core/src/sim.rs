//! Wires a [`Scenario`] into a running simulation and writes its outputs.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Result, SimError};
use crate::netgraph::{Admission, LinkId, NodeId, Packet, PacketKind, Topology};
use crate::scenario::Scenario;
use crate::scheduler::{Event, EventId, Scheduler, Seconds};
use crate::telemetry::{record_tick, xgraph_write, FlowCounters, FlowSeries, RunReport, TraceEvent, TraceWriter};
use crate::traffic::{AppAction, ExpOnOffState, RngStream};
use crate::transport::{TcpConn, TcpOutput, TcpSink, TimerCmd};

pub const REPORT_FILE: &str = "report.txt";

const LINK_STREAM_BASE: u64 = 1 << 32;
const TIME_EPS: Seconds = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    PacketArrival { link: LinkId, pkt: Packet },
    LinkTxComplete { link: LinkId },
    AppEmit { app: usize },
    AppStateFlip { app: usize },
    TcpTimeout { conn: usize },
    RecordTick { index: u64 },
    AgentStart { app: usize },
    AgentStop { app: usize },
    SimFinish,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PacketArrival { .. } => "PacketArrival",
            EventKind::LinkTxComplete { .. } => "LinkTxComplete",
            EventKind::AppEmit { .. } => "AppEmit",
            EventKind::AppStateFlip { .. } => "AppStateFlip",
            EventKind::TcpTimeout { .. } => "TcpTimeout",
            EventKind::RecordTick { .. } => "RecordTick",
            EventKind::AgentStart { .. } => "AgentStart",
            EventKind::AgentStop { .. } => "AgentStop",
            EventKind::SimFinish => "SimFinish",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Keep `(fire_at, seq, kind)` for every executed event.
    pub log_events: bool,
    /// Keep the sender's cwnd at every ACK arrival.
    pub log_cwnd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwndSample {
    pub t: Seconds,
    pub flow_id: u32,
    pub ack_seq: u64,
    pub cwnd_before: f64,
    pub cwnd_after: f64,
    pub ssthresh: f64,
    /// after the sender has reacted to the ACK
    pub in_flight: u64,
    pub window: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropRecord {
    pub t: Seconds,
    pub flow_id: u32,
    pub node: NodeId,
    pub kind: PacketKind,
}

pub struct RunOutcome<W> {
    pub report: RunReport,
    pub series: Vec<FlowSeries>,
    pub drops: Vec<DropRecord>,
    pub cwnd_log: Vec<CwndSample>,
    pub event_log: Vec<(Seconds, u64, &'static str)>,
    pub sinks: Vec<TcpSink>,
    pub conns: Vec<TcpConn>,
    pub trace: Option<W>,
}

struct AppRuntime {
    gen: ExpOnOffState,
    conn: usize,
    pending: Option<EventId>,
}

struct World<W: Write> {
    duration: Seconds,
    record_interval: Seconds,
    last_tick: Seconds,
    topo: Topology,
    link_rngs: Vec<RngStream>,
    conns: Vec<TcpConn>,
    sinks: Vec<TcpSink>,
    apps: Vec<AppRuntime>,
    flow_index: HashMap<u32, usize>,
    trace: TraceWriter<W>,
    counters: BTreeMap<u32, FlowCounters>,
    node_drops: BTreeMap<u32, u64>,
    series: Vec<FlowSeries>,
    drops: Vec<DropRecord>,
    cwnd_log: Option<Vec<CwndSample>>,
    event_log: Option<Vec<(Seconds, u64, &'static str)>>,
    next_uid: u64,
    finished: bool,
}

/// A scenario wired up and ready to run.
pub struct Simulation<W: Write> {
    scenario: Scenario,
    sched: Scheduler<EventKind>,
    world: World<W>,
}

impl<W: Write> Simulation<W> {
    pub fn new(scenario: &Scenario, trace: TraceWriter<W>, options: SimOptions) -> Result<Self> {
        let topo = scenario.topology();
        let link_rngs = (0..topo.links.len())
            .map(|i| RngStream::new(scenario.seed, LINK_STREAM_BASE + i as u64))
            .collect();
        let mut conns = Vec::new();
        let mut sinks = Vec::new();
        let mut flow_index = HashMap::new();
        let mut counters = BTreeMap::new();
        let mut series = Vec::new();
        for (i, a) in scenario.agents.iter().enumerate() {
            topo.path(a.src, a.dst)?;
            topo.path(a.dst, a.src)?;
            conns.push(TcpConn::new(i, a.src, a.dst, a.flow_id, a.mss, a.window));
            sinks.push(TcpSink::new(i, a.dst, a.flow_id));
            flow_index.insert(a.flow_id, i);
            counters.insert(a.flow_id, FlowCounters::default());
            series.push(FlowSeries {
                flow_id: a.flow_id,
                name: format!("flow{}", a.flow_id),
                samples: Vec::new(),
            });
        }
        let mut apps = Vec::new();
        for (i, app) in scenario.apps.iter().enumerate() {
            let conn = scenario
                .agent_index(&app.agent)
                .ok_or_else(|| crate::error::ParseError::new(0, format!("unknown agent {}", app.agent)))?;
            apps.push(AppRuntime {
                gen: ExpOnOffState::new(app.config.clone(), RngStream::new(scenario.seed, i as u64)),
                conn,
                pending: None,
            });
        }
        Ok(Self {
            scenario: scenario.clone(),
            sched: Scheduler::new(),
            world: World {
                duration: scenario.duration,
                record_interval: scenario.record_interval,
                last_tick: 0.0,
                topo,
                link_rngs,
                conns,
                sinks,
                apps,
                flow_index,
                trace,
                counters,
                node_drops: BTreeMap::new(),
                series,
                drops: Vec::new(),
                cwnd_log: options.log_cwnd.then(Vec::new),
                event_log: options.log_events.then(Vec::new),
                next_uid: 0,
                finished: false,
            },
        })
    }

    pub fn run(mut self) -> Result<RunOutcome<W>> {
        let started = Instant::now();
        let duration = self.scenario.duration;
        for (i, app) in self.scenario.apps.iter().enumerate() {
            self.sched
                .schedule(app.config.start_at, EventKind::AgentStart { app: i })?;
            self.sched
                .schedule(app.config.stop_at, EventKind::AgentStop { app: i })?;
        }
        self.sched.schedule(duration, EventKind::SimFinish)?;
        if self.scenario.record_interval < duration - TIME_EPS {
            self.sched
                .schedule(self.scenario.record_interval, EventKind::RecordTick { index: 1 })?;
        }
        let world = &mut self.world;
        let summary = self.sched.run_until(duration, |sched, ev| world.handle(sched, ev))?;
        let world = self.world;
        let trace_lines = world.trace.lines;
        let trace = world.trace.finish()?;
        let report = RunReport {
            duration,
            seed: self.scenario.seed,
            events_executed: summary.events_executed,
            trace_lines,
            flows: world.counters,
            node_drops: world.node_drops,
            wall_clock: started.elapsed(),
        };
        Ok(RunOutcome {
            report,
            series: world.series,
            drops: world.drops,
            cwnd_log: world.cwnd_log.unwrap_or_default(),
            event_log: world.event_log.unwrap_or_default(),
            sinks: world.sinks,
            conns: world.conns,
            trace,
        })
    }
}

impl<W: Write> World<W> {
    fn handle(&mut self, sched: &mut Scheduler<EventKind>, ev: Event<EventKind>) -> Result<()> {
        if let Some(log) = self.event_log.as_mut() {
            log.push((ev.fire_at, ev.seq, ev.payload.name()));
        }
        if self.finished {
            return Ok(());
        }
        let now = ev.fire_at;
        match ev.payload {
            EventKind::PacketArrival { link, pkt } => self.on_arrival(sched, link, pkt, now)?,
            EventKind::LinkTxComplete { link } => {
                self.topo.link_mut(link).tx_complete();
                self.start_tx(sched, link, now)?;
            }
            EventKind::AgentStart { app } => {
                let action = self.apps[app].gen.start(now);
                self.schedule_app(sched, app, action)?;
            }
            EventKind::AgentStop { app } => {
                let rt = &mut self.apps[app];
                rt.gen.stop();
                if let Some(id) = rt.pending.take() {
                    sched.cancel(id);
                }
            }
            EventKind::AppEmit { app } => {
                self.apps[app].pending = None;
                let action = self.apps[app].gen.on_emit(now);
                let size = self.apps[app].gen.config.packet_size as u64;
                let conn = self.apps[app].conn;
                let out = self.conns[conn].app_send(size);
                self.apply_tcp(sched, conn, out, now)?;
                self.schedule_app(sched, app, action)?;
            }
            EventKind::AppStateFlip { app } => {
                self.apps[app].pending = None;
                let action = self.apps[app].gen.on_flip(now);
                self.schedule_app(sched, app, action)?;
            }
            EventKind::TcpTimeout { conn } => {
                self.conns[conn].timer = None;
                let out = self.conns[conn].on_timeout();
                self.apply_tcp(sched, conn, out, now)?;
            }
            EventKind::RecordTick { index } => {
                self.sample_all(now, self.record_interval);
                self.last_tick = now;
                let next = (index + 1) as f64 * self.record_interval;
                if next < self.duration - TIME_EPS {
                    sched.schedule(next, EventKind::RecordTick { index: index + 1 })?;
                }
            }
            EventKind::SimFinish => {
                let rem = now - self.last_tick;
                if rem > TIME_EPS {
                    let interval = if (rem - self.record_interval).abs() < TIME_EPS {
                        self.record_interval
                    } else {
                        rem
                    };
                    self.sample_all(now, interval);
                }
                self.finished = true;
            }
        }
        Ok(())
    }

    fn sample_all(&mut self, now: Seconds, interval: Seconds) {
        for (sink, series) in self.sinks.iter_mut().zip(self.series.iter_mut()) {
            series.samples.push(record_tick(sink, series.flow_id, now, interval));
        }
    }

    fn schedule_app(&mut self, sched: &mut Scheduler<EventKind>, app: usize, action: AppAction) -> Result<()> {
        let id = match action {
            AppAction::EmitPacket(t) => Some(sched.schedule(t, EventKind::AppEmit { app })?),
            AppAction::FlipPhase(t) => Some(sched.schedule(t, EventKind::AppStateFlip { app })?),
            AppAction::Stop => None,
        };
        self.apps[app].pending = id;
        Ok(())
    }

    fn new_uid(&mut self) -> u64 {
        let uid = self.next_uid;
        self.next_uid += 1;
        uid
    }

    fn counters(&mut self, flow: u32) -> &mut FlowCounters {
        self.counters.entry(flow).or_default()
    }

    fn apply_tcp(&mut self, sched: &mut Scheduler<EventKind>, conn: usize, out: TcpOutput, now: Seconds) -> Result<()> {
        for seg in out.segments {
            let uid = self.new_uid();
            let pkt = self.conns[conn].make_packet(seg, uid, now);
            let c = self.counters(pkt.flow_id);
            c.data_sent += 1;
            if seg.retransmit {
                c.retransmitted += 1;
            }
            self.inject(sched, pkt, now)?;
        }
        let c = &mut self.conns[conn];
        match out.timer {
            TimerCmd::Keep => {}
            TimerCmd::StartIfStopped => {
                if c.timer.is_none() {
                    c.timer = Some(sched.schedule(now + c.rto, EventKind::TcpTimeout { conn })?);
                }
            }
            TimerCmd::Restart => {
                if let Some(id) = c.timer.take() {
                    sched.cancel(id);
                }
                c.timer = Some(sched.schedule(now + c.rto, EventKind::TcpTimeout { conn })?);
            }
            TimerCmd::Stop => {
                if let Some(id) = c.timer.take() {
                    sched.cancel(id);
                }
            }
        }
        Ok(())
    }

    /// Hands a newly created packet to the network at its source node.
    fn inject(&mut self, sched: &mut Scheduler<EventKind>, pkt: Packet, now: Seconds) -> Result<()> {
        self.counters(pkt.flow_id).created += 1;
        let at = pkt.src;
        self.forward(sched, pkt, at, now)
    }

    fn forward(&mut self, sched: &mut Scheduler<EventKind>, pkt: Packet, at: NodeId, now: Seconds) -> Result<()> {
        let link_id = self.topo.next_hop(at, pkt.dst)?;
        let hop = {
            let l = self.topo.link(link_id);
            (l.from, l.to)
        };
        self.trace.emit(TraceEvent::Enqueue, &pkt, hop, now);
        let flow = pkt.flow_id;
        let link = &mut self.topo.links[link_id.0];
        match link.enqueue(pkt, now, &mut self.link_rngs[link_id.0]) {
            Admission::Queued => {
                self.counters(flow).buffered += 1;
                if self.topo.link(link_id).is_idle() {
                    self.start_tx(sched, link_id, now)?;
                }
            }
            Admission::Dropped(_, pkt) => {
                self.trace.emit(TraceEvent::Drop, &pkt, hop, now);
                self.counters(flow).dropped += 1;
                *self.node_drops.entry(hop.0 .0).or_default() += 1;
                self.drops.push(DropRecord {
                    t: now,
                    flow_id: flow,
                    node: hop.0,
                    kind: pkt.kind,
                });
            }
        }
        Ok(())
    }

    fn start_tx(&mut self, sched: &mut Scheduler<EventKind>, link_id: LinkId, now: Seconds) -> Result<()> {
        let link = self.topo.link_mut(link_id);
        let hop = (link.from, link.to);
        let Some(plan) = link.transmit_next(now) else {
            return Ok(());
        };
        self.trace.emit(TraceEvent::Dequeue, &plan.pkt, hop, now);
        let c = self.counters(plan.pkt.flow_id);
        c.buffered -= 1;
        c.in_flight += 1;
        sched.schedule(plan.tx_done_at, EventKind::LinkTxComplete { link: link_id })?;
        sched.schedule(
            plan.arrive_at,
            EventKind::PacketArrival {
                link: link_id,
                pkt: plan.pkt,
            },
        )?;
        Ok(())
    }

    fn on_arrival(
        &mut self,
        sched: &mut Scheduler<EventKind>,
        link_id: LinkId,
        pkt: Packet,
        now: Seconds,
    ) -> Result<()> {
        let l = self.topo.link(link_id);
        let hop = (l.from, l.to);
        self.trace.emit(TraceEvent::Receive, &pkt, hop, now);
        self.counters(pkt.flow_id).in_flight -= 1;
        let node = hop.1;
        if node != pkt.dst {
            return self.forward(sched, pkt, node, now);
        }
        self.counters(pkt.flow_id).received += 1;
        let Some(&idx) = self.flow_index.get(&pkt.flow_id) else {
            return Ok(());
        };
        match pkt.kind {
            PacketKind::Tcp => {
                let uid = self.new_uid();
                let ack = self.sinks[idx].on_packet(&pkt, uid, now);
                let bytes = self.sinks[idx].total_bytes;
                let c = self.counters(pkt.flow_id);
                c.acks_sent += 1;
                c.bytes_delivered = bytes;
                self.inject(sched, ack, now)?;
            }
            PacketKind::Ack => {
                let conn = &mut self.conns[idx];
                let before = conn.cwnd;
                let out = conn.on_ack(pkt.seq, pkt.ts_echo, now);
                let (in_flight, window) = (conn.in_flight(), conn.window());
                if let Some(log) = self.cwnd_log.as_mut() {
                    log.push(CwndSample {
                        t: now,
                        flow_id: pkt.flow_id,
                        ack_seq: pkt.seq,
                        cwnd_before: before,
                        cwnd_after: conn.cwnd,
                        ssthresh: conn.ssthresh,
                        in_flight,
                        window,
                    });
                }
                self.apply_tcp(sched, idx, out, now)?;
            }
        }
        Ok(())
    }
}

/// Runs a scenario entirely in memory, keeping the trace as bytes.
pub fn run_in_memory(scenario: &Scenario, options: SimOptions) -> Result<RunOutcome<Vec<u8>>> {
    Simulation::new(scenario, TraceWriter::new(Vec::new()), options)?.run()
}

/// Paths of the files produced by [`run_scenario`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub trace: PathBuf,
    pub plots: Vec<PathBuf>,
    pub report: PathBuf,
}

/// Runs a scenario and writes the trace, one plot-data file per flow and
/// `report.txt` into `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<(RunReport, OutputFiles)> {
    fs::create_dir_all(out_dir)?;
    let trace_path = out_dir.join(&scenario.trace_file);
    let writer = TraceWriter::new(BufWriter::new(File::create(&trace_path)?));
    let outcome = Simulation::new(scenario, writer, SimOptions::default())?.run()?;
    if let Some(w) = outcome.trace {
        w.into_inner().map_err(|e| SimError::Io(e.into_error()))?.sync_all()?;
    }
    let mut plots = Vec::new();
    for series in &outcome.series {
        let path = out_dir.join(series.file_name());
        xgraph_write(series, &path)?;
        plots.push(path);
    }
    let report_path = out_dir.join(REPORT_FILE);
    let mut f = File::create(&report_path)?;
    f.write_all(outcome.report.render().as_bytes())?;
    f.sync_all()?;
    Ok((
        outcome.report,
        OutputFiles {
            trace: trace_path,
            plots,
            report: report_path,
        },
    ))
}

/// Sum of propagation and serialization delays for one data packet out and
/// its ACK back, with empty queues.
pub fn base_rtt(scenario: &Scenario, src: NodeId, dst: NodeId, data_bytes: u32, ack_bytes: u32) -> Result<Seconds> {
    let topo = scenario.topology();
    let leg = |from, to, bytes: u32| -> Result<Seconds> {
        Ok(topo
            .path(from, to)?
            .iter()
            .map(|l| {
                let l = topo.link(*l);
                l.delay + crate::netgraph::tx_time(bytes, l.bandwidth)
            })
            .sum())
    };
    Ok(leg(src, dst, data_bytes)? + leg(dst, src, ack_bytes)?)
}

//! TCP Tahoe sender and cumulative-ACK sink.
//!
//! Windows and sequence numbers count whole packets. The sender only
//! packetizes full MSS units of application backlog. Loss recovery is
//! go-back-N from the last cumulative ACK, triggered either by the
//! retransmission timer or by the third duplicate ACK.

use std::collections::BTreeSet;

use crate::netgraph::{NodeId, Packet, PacketKind};
use crate::scheduler::{EventId, Seconds};

pub const ACK_SIZE: u32 = 40;
pub const INITIAL_CWND: f64 = 1.0;
pub const INITIAL_SSTHRESH: f64 = 64.0;
pub const INITIAL_RTO: Seconds = 1.0;
pub const MIN_RTO: Seconds = 0.2;
pub const MAX_RTO: Seconds = 60.0;
pub const DEFAULT_RCV_WINDOW: u32 = 20;
const DUP_ACK_THRESHOLD: u32 = 3;

/// One packet the sender wants on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub seq: u64,
    pub retransmit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerCmd {
    Keep,
    /// Arm the timer at `now + rto` unless it is already running.
    StartIfStopped,
    /// Cancel any running timer and arm it at `now + rto`.
    Restart,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpOutput {
    pub segments: Vec<Segment>,
    pub timer: TimerCmd,
}

impl TcpOutput {
    fn merge_timer(&mut self, cmd: TimerCmd) {
        self.timer = match (self.timer, cmd) {
            (t, TimerCmd::Keep) => t,
            (TimerCmd::Restart, TimerCmd::StartIfStopped) => TimerCmd::Restart,
            (_, c) => c,
        };
    }
}

#[derive(Debug, Clone)]
pub struct TcpConn {
    pub id: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub flow_id: u32,
    pub mss: u32,
    pub rcv_window: u32,
    pub cwnd: f64,
    pub ssthresh: f64,
    /// Next sequence number to send.
    pub next_seq: u64,
    /// Cumulative ACK point: every seq below it is acknowledged.
    pub highest_acked: u64,
    /// One past the highest sequence number ever sent.
    pub max_sent: u64,
    pub app_backlog: u64,
    pub srtt: Option<Seconds>,
    pub rttvar: Seconds,
    pub rto: Seconds,
    pub timer: Option<EventId>,
    pub dup_acks: u32,
    pub retransmit_count: u64,
    pub packets_sent: u64,
}

impl TcpConn {
    pub fn new(id: usize, src: NodeId, dst: NodeId, flow_id: u32, mss: u32, rcv_window: u32) -> Self {
        Self {
            id,
            src,
            dst,
            flow_id,
            mss,
            rcv_window,
            cwnd: INITIAL_CWND,
            ssthresh: INITIAL_SSTHRESH,
            next_seq: 0,
            highest_acked: 0,
            max_sent: 0,
            app_backlog: 0,
            srtt: None,
            rttvar: 0.0,
            rto: INITIAL_RTO,
            timer: None,
            dup_acks: 0,
            retransmit_count: 0,
            packets_sent: 0,
        }
    }

    pub fn in_flight(&self) -> u64 {
        self.next_seq - self.highest_acked
    }

    /// Whole packets the window currently allows in flight.
    pub fn window(&self) -> u64 {
        self.cwnd.min(self.rcv_window as f64).floor() as u64
    }

    pub fn has_unacked(&self) -> bool {
        self.max_sent > self.highest_acked
    }

    /// Builds the data packet for `seg`.
    pub fn make_packet(&self, seg: Segment, uid: u64, now: Seconds) -> Packet {
        Packet {
            uid,
            flow_id: self.flow_id,
            src: self.src,
            dst: self.dst,
            size: self.mss,
            seq: seg.seq,
            kind: PacketKind::Tcp,
            sent_at: now,
            ts_echo: now,
        }
    }

    pub fn app_send(&mut self, nbytes: u64) -> TcpOutput {
        debug_assert!(nbytes > 0);
        self.app_backlog += nbytes;
        self.try_send()
    }

    pub fn try_send(&mut self) -> TcpOutput {
        let mut out = TcpOutput {
            segments: Vec::new(),
            timer: TimerCmd::Keep,
        };
        let window = self.window();
        while self.in_flight() < window {
            let seq = self.next_seq;
            let retransmit = seq < self.max_sent;
            if !retransmit {
                if self.app_backlog < self.mss as u64 {
                    break;
                }
                self.app_backlog -= self.mss as u64;
                self.max_sent = seq + 1;
            } else {
                self.retransmit_count += 1;
            }
            self.next_seq += 1;
            self.packets_sent += 1;
            out.segments.push(Segment { seq, retransmit });
        }
        debug_assert!(self.in_flight() <= window.max(1));
        if !out.segments.is_empty() {
            out.timer = TimerCmd::StartIfStopped;
        }
        out
    }

    fn sample_rtt(&mut self, m: Seconds) {
        match self.srtt {
            None => {
                self.srtt = Some(m);
                self.rttvar = m / 2.0;
            }
            Some(srtt) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - m).abs();
                self.srtt = Some(0.875 * srtt + 0.125 * m);
            }
        }
        let srtt = self.srtt.unwrap();
        self.rto = (srtt + 4.0 * self.rttvar).clamp(MIN_RTO, MAX_RTO);
    }

    fn collapse(&mut self) {
        let half = (self.in_flight() / 2).max(2);
        self.ssthresh = half as f64;
        self.cwnd = 1.0;
        self.next_seq = self.highest_acked;
    }

    /// Processes a cumulative ACK `ack_seq` (next expected sequence number)
    /// whose echoed send time is `ts_echo`.
    pub fn on_ack(&mut self, ack_seq: u64, ts_echo: Seconds, now: Seconds) -> TcpOutput {
        if ack_seq > self.highest_acked {
            self.highest_acked = ack_seq;
            if self.next_seq < ack_seq {
                self.next_seq = ack_seq;
            }
            if self.cwnd < self.ssthresh {
                self.cwnd += 1.0;
            } else {
                self.cwnd += 1.0 / self.cwnd;
            }
            self.sample_rtt(now - ts_echo);
            self.dup_acks = 0;
            let mut out = self.try_send();
            out.merge_timer(if self.has_unacked() {
                TimerCmd::Restart
            } else {
                TimerCmd::Stop
            });
            return out;
        }
        let mut out = TcpOutput {
            segments: Vec::new(),
            timer: TimerCmd::Keep,
        };
        if ack_seq == self.highest_acked && self.has_unacked() {
            self.dup_acks += 1;
            if self.dup_acks == DUP_ACK_THRESHOLD {
                self.collapse();
                out = self.try_send();
                out.merge_timer(TimerCmd::Restart);
            }
        }
        out
    }

    pub fn on_timeout(&mut self) -> TcpOutput {
        if !self.has_unacked() {
            return TcpOutput {
                segments: Vec::new(),
                timer: TimerCmd::Stop,
            };
        }
        self.collapse();
        self.dup_acks = 0;
        self.rto = (2.0 * self.rto).min(MAX_RTO);
        let mut out = self.try_send();
        out.merge_timer(TimerCmd::Restart);
        out
    }
}

#[derive(Debug, Clone)]
pub struct TcpSink {
    pub id: usize,
    pub node: NodeId,
    pub flow_id: u32,
    pub expected_seq: u64,
    /// Loss-monitor counter, reset by each throughput sample.
    pub bytes_received: u64,
    pub total_bytes: u64,
    pub total_packets: u64,
    pub duplicate_packets: u64,
    out_of_order: BTreeSet<u64>,
}

impl TcpSink {
    pub fn new(id: usize, node: NodeId, flow_id: u32) -> Self {
        Self {
            id,
            node,
            flow_id,
            expected_seq: 0,
            bytes_received: 0,
            total_bytes: 0,
            total_packets: 0,
            duplicate_packets: 0,
            out_of_order: BTreeSet::new(),
        }
    }

    /// Accepts a data packet and returns the cumulative ACK to send back.
    /// Only the first copy of each sequence number is counted in the byte
    /// counters; out-of-order packets are held so the ACK point can jump.
    pub fn on_packet(&mut self, pkt: &Packet, uid: u64, now: Seconds) -> Packet {
        debug_assert_eq!(pkt.kind, PacketKind::Tcp);
        let fresh = if pkt.seq == self.expected_seq {
            self.expected_seq += 1;
            while self.out_of_order.remove(&self.expected_seq) {
                self.expected_seq += 1;
            }
            true
        } else if pkt.seq > self.expected_seq {
            self.out_of_order.insert(pkt.seq)
        } else {
            false
        };
        if fresh {
            self.bytes_received += pkt.size as u64;
            self.total_bytes += pkt.size as u64;
            self.total_packets += 1;
        } else {
            self.duplicate_packets += 1;
        }
        Packet {
            uid,
            flow_id: pkt.flow_id,
            src: self.node,
            dst: pkt.src,
            size: ACK_SIZE,
            seq: self.expected_seq,
            kind: PacketKind::Ack,
            sent_at: now,
            ts_echo: pkt.sent_at,
        }
    }

    /// Returns and clears the bytes counted since the previous call.
    pub fn take_bytes(&mut self) -> u64 {
        std::mem::take(&mut self.bytes_received)
    }
}

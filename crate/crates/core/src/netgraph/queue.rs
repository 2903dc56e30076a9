//! Per-link buffers: DropTail and RED admission.

use std::collections::VecDeque;
use std::fmt;

use super::Packet;
use crate::scheduler::Seconds;
use crate::traffic::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    QueueFull,
    /// RED average at or above `max_th`.
    RedForced,
    /// RED probabilistic drop between the thresholds.
    RedEarly,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::QueueFull => "queue_full",
            DropReason::RedForced => "red_forced",
            DropReason::RedEarly => "red_early",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Queued,
    Dropped(DropReason, Packet),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedParams {
    pub w_q: f64,
    pub min_th: f64,
    pub max_th: f64,
    pub max_p: f64,
    /// Packet size used to convert idle time into "missed" arrivals.
    pub mean_pkt_bytes: u32,
}

impl Default for RedParams {
    fn default() -> Self {
        Self {
            w_q: 0.002,
            min_th: 5.0,
            max_th: 15.0,
            max_p: 0.1,
            mean_pkt_bytes: 210,
        }
    }
}

impl RedParams {
    pub fn validate(&self, limit: usize) -> Result<(), String> {
        if !(self.w_q > 0.0 && self.w_q <= 1.0) {
            return Err(format!("RED weight {} outside (0, 1]", self.w_q));
        }
        if !(self.min_th >= 0.0 && self.min_th < self.max_th && self.max_th <= limit as f64) {
            return Err(format!(
                "RED thresholds need 0 <= minth < maxth <= limit (got {}, {}, {})",
                self.min_th, self.max_th, limit
            ));
        }
        if !(self.max_p > 0.0 && self.max_p <= 1.0) {
            return Err(format!("RED maxp {} outside (0, 1]", self.max_p));
        }
        if self.mean_pkt_bytes == 0 {
            return Err("RED mean packet size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedState {
    pub params: RedParams,
    /// EWMA of the queue length in packets.
    pub avg: f64,
    /// Packets admitted in the probabilistic band since the last drop.
    pub count: u64,
    pub idle_since: Option<Seconds>,
    /// Transmission time of a mean-sized packet on the owning link.
    pub ptc: Seconds,
}

impl RedState {
    pub fn new(params: RedParams, bandwidth: f64) -> Self {
        Self {
            params,
            avg: 0.0,
            count: 0,
            idle_since: None,
            ptc: params.mean_pkt_bytes as f64 * 8.0 / bandwidth,
        }
    }

    /// Folds the current instantaneous queue length into `avg`. After an
    /// idle period the average decays as if `idle / ptc` empty-queue
    /// arrivals had been observed.
    pub fn update_avg(&mut self, len: usize, now: Seconds) {
        let w = self.params.w_q;
        match self.idle_since.take() {
            Some(since) if len == 0 => {
                let m = ((now - since) / self.ptc).max(0.0);
                self.avg *= (1.0 - w).powf(m);
            }
            _ => self.avg = (1.0 - w) * self.avg + w * len as f64,
        }
    }

    /// Early-drop probability for the current `avg` and `count`, assuming
    /// `min_th <= avg < max_th`.
    pub fn drop_probability(&self) -> f64 {
        let p = &self.params;
        let p_b = p.max_p * (self.avg - p.min_th) / (p.max_th - p.min_th);
        let denom = 1.0 - self.count as f64 * p_b;
        if denom <= 0.0 {
            1.0
        } else {
            (p_b / denom).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Discipline {
    DropTail,
    Red(RedState),
}

#[derive(Debug, Clone)]
pub struct QueueState {
    pub discipline: Discipline,
    pub limit: usize,
    pub buffer: VecDeque<Packet>,
}

/// DropTail admission: accept iff there is room in the buffer.
pub fn droptail_admit(q: &QueueState) -> bool {
    q.buffer.len() < q.limit
}

impl QueueState {
    pub fn droptail(limit: usize) -> Self {
        Self {
            discipline: Discipline::DropTail,
            limit,
            buffer: VecDeque::new(),
        }
    }

    pub fn red(limit: usize, params: RedParams, bandwidth: f64) -> Self {
        Self {
            discipline: Discipline::Red(RedState::new(params, bandwidth)),
            limit,
            buffer: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn red_state(&self) -> Option<&RedState> {
        match &self.discipline {
            Discipline::Red(r) => Some(r),
            Discipline::DropTail => None,
        }
    }

    /// RED admission decision for one arrival. Updates the average, then
    /// applies the threshold regions. The uniform draw is taken only in the
    /// probabilistic band.
    ///
    /// Panics if the discipline is not RED.
    pub fn red_admit(&mut self, now: Seconds, rng: &mut RngStream) -> Result<(), DropReason> {
        let len = self.buffer.len();
        let full = len >= self.limit;
        let Discipline::Red(red) = &mut self.discipline else {
            panic!("red_admit on a non-RED queue");
        };
        red.update_avg(len, now);
        let p = red.params;
        if full {
            red.count = 0;
            return Err(DropReason::QueueFull);
        }
        if red.avg < p.min_th {
            return Ok(());
        }
        if red.avg >= p.max_th {
            red.count = 0;
            return Err(DropReason::RedForced);
        }
        let p_a = red.drop_probability();
        if rng.uniform() < p_a {
            red.count = 0;
            Err(DropReason::RedEarly)
        } else {
            red.count += 1;
            Ok(())
        }
    }

    pub fn enqueue(&mut self, pkt: Packet, now: Seconds, rng: &mut RngStream) -> Admission {
        let verdict = match self.discipline {
            Discipline::DropTail => {
                if droptail_admit(self) {
                    Ok(())
                } else {
                    Err(DropReason::QueueFull)
                }
            }
            Discipline::Red(_) => self.red_admit(now, rng),
        };
        match verdict {
            Ok(()) => {
                self.buffer.push_back(pkt);
                debug_assert!(self.buffer.len() <= self.limit);
                Admission::Queued
            }
            Err(reason) => Admission::Dropped(reason, pkt),
        }
    }

    pub fn dequeue(&mut self, now: Seconds) -> Option<Packet> {
        let pkt = self.buffer.pop_front()?;
        if self.buffer.is_empty() {
            if let Discipline::Red(red) = &mut self.discipline {
                red.idle_since = Some(now);
            }
        }
        Some(pkt)
    }
}

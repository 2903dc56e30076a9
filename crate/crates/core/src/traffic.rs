//! Exponential on/off application traffic and the seeded random streams behind it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scheduler::Seconds;

/// One independent, reproducible random stream. Equal `(seed, stream_id)`
/// pairs produce equal draw sequences; different stream ids are independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in (0, 1).
    fn uniform_open(&mut self) -> f64 {
        loop {
            let u = 1.0 - self.uniform();
            if u < 1.0 {
                return u;
            }
        }
    }
}

/// Inverse-CDF exponential draw for a given uniform `u`. Returns `None` for
/// draws outside (0, 1), which would give a zero or undefined duration.
pub fn exp_from_uniform(mean: Seconds, u: f64) -> Option<Seconds> {
    (u > 0.0 && u < 1.0).then(|| -mean * u.ln())
}

/// Strictly positive exponential sample with the given mean.
pub fn exp_sample(rng: &mut RngStream, mean: Seconds) -> Seconds {
    debug_assert!(mean > 0.0);
    -mean * rng.uniform_open().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpOnOffConfig {
    /// bytes
    pub packet_size: u32,
    /// bits per second while ON
    pub rate: f64,
    /// mean ON duration
    pub burst_time: Seconds,
    /// mean OFF duration
    pub idle_time: Seconds,
    pub start_at: Seconds,
    pub stop_at: Seconds,
}

impl Default for ExpOnOffConfig {
    fn default() -> Self {
        Self {
            packet_size: 210,
            rate: 100_000.0,
            burst_time: 0.002,
            idle_time: 0.001,
            start_at: 0.0,
            stop_at: 1.0,
        }
    }
}

impl ExpOnOffConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.packet_size == 0 {
            return Err("packet size must be positive".into());
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(format!("rate must be positive (got {})", self.rate));
        }
        if self.burst_time.is_nan() || self.burst_time <= 0.0 {
            return Err("burst time must be positive".into());
        }
        if self.idle_time.is_nan() || self.idle_time < 0.0 {
            return Err("idle time must be non-negative".into());
        }
        if !(self.start_at >= 0.0 && self.start_at < self.stop_at) {
            return Err(format!(
                "start ({}) must be non-negative and before stop ({})",
                self.start_at, self.stop_at
            ));
        }
        Ok(())
    }

    /// Spacing between emissions while ON.
    pub fn emit_interval(&self) -> Seconds {
        self.packet_size as f64 * 8.0 / self.rate
    }

    /// Long-run offered rate: ON rate times the ON duty cycle.
    pub fn mean_rate(&self) -> f64 {
        self.rate * self.burst_time / (self.burst_time + self.idle_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    On,
    Off,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AppAction {
    EmitPacket(Seconds),
    FlipPhase(Seconds),
    Stop,
}

/// Exponential on/off generator.
///
/// The emission clock only runs while ON: a packet is due once a full
/// `emit_interval` of ON time has accumulated since the previous emission,
/// even if that ON time is spread over several short bursts. The first
/// packet after `start` is emitted immediately.
#[derive(Debug, Clone)]
pub struct ExpOnOffState {
    pub config: ExpOnOffConfig,
    pub phase: Phase,
    pub phase_ends_at: Seconds,
    pub next_emit_at: Option<Seconds>,
    pub packets_emitted: u64,
    rng: RngStream,
    // ON time accumulated toward the next emission, excluding the current ON stretch
    credit: Seconds,
    // start of the current ON stretch (phase start or last emission)
    on_since: Seconds,
    pending: Option<AppAction>,
}

impl ExpOnOffState {
    pub fn new(config: ExpOnOffConfig, rng: RngStream) -> Self {
        Self {
            phase: Phase::Stopped,
            phase_ends_at: config.start_at,
            next_emit_at: None,
            packets_emitted: 0,
            rng,
            credit: 0.0,
            on_since: config.start_at,
            pending: None,
            config,
        }
    }

    pub fn bytes_emitted(&self) -> u64 {
        self.packets_emitted * self.config.packet_size as u64
    }

    /// Begins the first ON phase at `now`.
    pub fn start(&mut self, now: Seconds) -> AppAction {
        self.credit = self.config.emit_interval();
        self.enter_on(now);
        self.next_action()
    }

    /// Handles the action previously returned, which fires at `now`.
    /// Returns whether a packet was emitted and the next action.
    pub fn step(&mut self, now: Seconds) -> (bool, AppAction) {
        match self.pending {
            Some(AppAction::EmitPacket(_)) => (true, self.on_emit(now)),
            Some(AppAction::FlipPhase(_)) => (false, self.on_flip(now)),
            Some(AppAction::Stop) | None => (false, AppAction::Stop),
        }
    }

    pub fn on_emit(&mut self, now: Seconds) -> AppAction {
        debug_assert_eq!(self.phase, Phase::On);
        self.packets_emitted += 1;
        self.credit = 0.0;
        self.on_since = now;
        self.next_action()
    }

    pub fn on_flip(&mut self, now: Seconds) -> AppAction {
        match self.phase {
            Phase::On => {
                self.credit += now - self.on_since;
                self.phase = Phase::Off;
                self.phase_ends_at = now + exp_sample(&mut self.rng, self.config.idle_time);
            }
            Phase::Off => self.enter_on(now),
            Phase::Stopped => {}
        }
        self.next_action()
    }

    pub fn stop(&mut self) {
        self.phase = Phase::Stopped;
        self.next_emit_at = None;
        self.pending = Some(AppAction::Stop);
    }

    fn enter_on(&mut self, now: Seconds) {
        self.phase = Phase::On;
        self.on_since = now;
        self.phase_ends_at = if self.config.idle_time > 0.0 {
            now + exp_sample(&mut self.rng, self.config.burst_time)
        } else {
            f64::INFINITY
        };
    }

    fn next_action(&mut self) -> AppAction {
        let stop_at = self.config.stop_at;
        let action = match self.phase {
            Phase::Stopped => AppAction::Stop,
            Phase::On => {
                let emit_at = self.on_since + (self.config.emit_interval() - self.credit).max(0.0);
                if emit_at <= self.phase_ends_at && emit_at <= stop_at {
                    self.next_emit_at = Some(emit_at);
                    AppAction::EmitPacket(emit_at)
                } else if self.phase_ends_at > stop_at {
                    AppAction::Stop
                } else {
                    self.next_emit_at = None;
                    AppAction::FlipPhase(self.phase_ends_at)
                }
            }
            Phase::Off => {
                if self.phase_ends_at > stop_at {
                    AppAction::Stop
                } else {
                    AppAction::FlipPhase(self.phase_ends_at)
                }
            }
        };
        if action == AppAction::Stop {
            self.stop();
        }
        self.pending = Some(action);
        action
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorStats {
    pub packets: u64,
    pub bytes: u64,
    pub emit_times: Vec<Seconds>,
    /// bits per second over `[start_at, stop_at]`
    pub mean_rate: f64,
}

/// Drives a generator on its own, without a network, and measures its output.
pub fn run_generator(config: &ExpOnOffConfig, rng: RngStream) -> GeneratorStats {
    let mut gen = ExpOnOffState::new(config.clone(), rng);
    let mut times = Vec::new();
    let mut action = gen.start(config.start_at);
    loop {
        match action {
            AppAction::EmitPacket(t) => {
                times.push(t);
                action = gen.step(t).1;
            }
            AppAction::FlipPhase(t) => action = gen.step(t).1,
            AppAction::Stop => break,
        }
    }
    let bytes = gen.bytes_emitted();
    GeneratorStats {
        packets: gen.packets_emitted,
        bytes,
        mean_rate: bytes as f64 * 8.0 / (config.stop_at - config.start_at),
        emit_times: times,
    }
}

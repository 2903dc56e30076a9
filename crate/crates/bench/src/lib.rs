//! Workloads shared by the criterion benches in `benches/`.

use std::io;

use dropsim_core::sim::SimOptions;
use dropsim_core::telemetry::TraceWriter;
use dropsim_core::{Scenario, Scheduler, SimError, Simulation};

/// Runs a scenario with tracing turned off and returns the number of
/// events executed.
pub fn run_untraced(scenario: &Scenario) -> Result<u64, SimError> {
    let sim = Simulation::new(scenario, TraceWriter::<io::Sink>::disabled(), SimOptions::default())?;
    Ok(sim.run()?.report.events_executed)
}

/// Keeps `width` events in flight and pops `total` of them, rescheduling
/// each one a pseudo-random distance ahead.
pub fn scheduler_churn(width: usize, total: u64) -> u64 {
    let mut sched: Scheduler<u64> = Scheduler::new();
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut step = move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x % 1000) as f64 * 1e-6
    };
    for i in 0..width as u64 {
        sched.schedule(step(), i).unwrap();
    }
    let mut popped = 0;
    while popped < total {
        let ev = sched.pop_until(f64::INFINITY).expect("queue never drains");
        sched.schedule_in(step(), ev.payload).unwrap();
        popped += 1;
    }
    popped
}

#[cfg(test)]
mod tests {
    use super::*;
    use dropsim_core::{parse_scenario, DROP_SCENARIO};

    #[test]
    fn workloads_do_work() {
        let s = parse_scenario(DROP_SCENARIO).unwrap();
        assert!(run_untraced(&s).unwrap() > 10_000);
        assert_eq!(scheduler_churn(16, 1000), 1000);
    }
}

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Seconds since a run started.
pub trait Clock {
    fn now(&self) -> f64;

    /// Blocks for `seconds`; a virtual clock just advances.
    fn sleep(&mut self, seconds: f64);

    /// Books `seconds` of work that already happened. Wall clocks ignore it,
    /// since the work itself took the time.
    fn charge(&mut self, seconds: f64);
}

#[derive(Clone, Copy, Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn sleep(&mut self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }

    fn charge(&mut self, _seconds: f64) {}
}

/// Logical time advanced only by `sleep` and `charge`.
#[derive(Clone, Copy, Debug, Default)]
pub struct VirtualClock {
    now: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.now
    }

    fn sleep(&mut self, seconds: f64) {
        self.now += seconds.max(0.0);
    }

    fn charge(&mut self, seconds: f64) {
        self.now += seconds.max(0.0);
    }
}

/// Which clock a synchronous run uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClockMode {
    #[default]
    Wall,
    /// Fixed costs per env step, per planner call and per learner update.
    Virtual {
        step_s: f64,
        plan_s: f64,
        update_s: f64,
    },
}

/// Per-event costs booked on the clock; all zero for wall clocks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Costs {
    pub step_s: f64,
    pub plan_s: f64,
    pub update_s: f64,
}

impl ClockMode {
    pub(crate) fn costs(&self) -> Costs {
        match *self {
            ClockMode::Wall => Costs::default(),
            ClockMode::Virtual {
                step_s,
                plan_s,
                update_s,
            } => Costs {
                step_s,
                plan_s,
                update_s,
            },
        }
    }
}

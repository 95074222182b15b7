use std::time::Instant;

use ampc_core::simulate::Clock;

/// Seconds since construction, from the monotonic system clock.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

//! Time sources for per-task timing. Mock runs use a frozen or stepping
//! clock so that stored outcomes are byte-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary fixed origin.
    fn now(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Always reports zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Advances by a fixed amount on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    step: f64,
    ticks: AtomicU64,
}

impl SteppingClock {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            ticks: AtomicU64::new(0),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> f64 {
        self.ticks.fetch_add(1, Ordering::SeqCst) as f64 * self.step
    }
}

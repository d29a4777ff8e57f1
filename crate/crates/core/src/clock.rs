//! Time sources shared by the dispatcher, the fake cluster and the bench
//! harness. A virtual clock advances only when someone sleeps on it, which
//! makes whole benchmark sweeps reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::{DateTime, TimeZone, Utc};

#[async_trait]
pub trait Clock: Send + Sync {
    /// Seconds since the clock's epoch.
    fn now(&self) -> f64;

    async fn sleep(&self, duration: Duration);

    /// Calendar time of `seconds` on this clock.
    fn timestamp(&self, seconds: f64) -> DateTime<Utc>;

    fn is_virtual(&self) -> bool;
}

pub type SharedClock = Arc<dyn Clock>;

#[derive(Debug)]
pub struct WallClock {
    start: Instant,
    start_utc: DateTime<Utc>,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            start_utc: Utc::now(),
        }
    }

    pub fn shared() -> SharedClock {
        Arc::new(Self::new())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    async fn sleep(&self, duration: Duration) {
        tokio::time::sleep(duration).await;
    }

    fn timestamp(&self, seconds: f64) -> DateTime<Utc> {
        self.start_utc + chrono::Duration::nanoseconds((seconds * 1e9) as i64)
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

/// Nanosecond counter that moves forward only through [`Clock::sleep`] or
/// [`VirtualClock::advance`]. Its epoch is 2024-01-01T00:00:00Z.
#[derive(Debug, Default)]
pub struct VirtualClock {
    nanos: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shared() -> Arc<Self> {
        Arc::new(Self::new())
    }

    pub fn advance(&self, duration: Duration) {
        self.nanos
            .fetch_add(duration.as_nanos() as u64, Ordering::SeqCst);
    }
}

#[async_trait]
impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.nanos.load(Ordering::SeqCst) as f64 / 1e9
    }

    async fn sleep(&self, duration: Duration) {
        self.advance(duration);
        tokio::task::yield_now().await;
    }

    fn timestamp(&self, seconds: f64) -> DateTime<Utc> {
        let epoch = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        epoch + chrono::Duration::nanoseconds((seconds * 1e9) as i64)
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

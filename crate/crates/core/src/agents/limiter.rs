use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Per-endpoint request caps. `max_concurrent = 0` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimits {
    pub max_concurrent: usize,
    /// At most `.0` request starts within any window of `.1` milliseconds.
    pub per_interval: Option<(u32, u64)>,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            max_concurrent: 8,
            per_interval: None,
        }
    }
}

#[derive(Debug)]
pub(crate) struct RateLimiter {
    limits: RateLimits,
    in_flight: Mutex<usize>,
    released: Condvar,
    starts: Mutex<VecDeque<Instant>>,
}

pub(crate) struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap();
        *n -= 1;
        self.limiter.released.notify_one();
    }
}

impl RateLimiter {
    pub(crate) fn new(limits: RateLimits) -> Self {
        Self {
            limits,
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            starts: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until both the interval cap and the concurrency cap admit one
    /// more request.
    pub(crate) fn acquire(&self) -> Permit<'_> {
        if let Some((count, window_ms)) = self.limits.per_interval {
            let window = Duration::from_millis(window_ms);
            loop {
                let mut starts = self.starts.lock().unwrap();
                let now = Instant::now();
                while starts.front().is_some_and(|t| now.duration_since(*t) >= window) {
                    starts.pop_front();
                }
                if starts.len() < count.max(1) as usize {
                    starts.push_back(now);
                    break;
                }
                let wait = window - now.duration_since(*starts.front().unwrap());
                drop(starts);
                thread::sleep(wait);
            }
        }
        let mut n = self.in_flight.lock().unwrap();
        if self.limits.max_concurrent > 0 {
            while *n >= self.limits.max_concurrent {
                n = self.released.wait(n).unwrap();
            }
        }
        *n += 1;
        Permit { limiter: self }
    }
}

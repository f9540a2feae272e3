//! Retry with exponential backoff and per-endpoint rate limiting for the HTTP clients.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 50, max_delay_ms: 2_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Outcome of one attempt, classified for the retry loop.
pub enum Attempt<E> {
    Transient(E),
    Permanent(E),
}

#[derive(Debug)]
pub struct RetryExhausted<E> {
    pub error: E,
    pub attempts: u32,
}

/// Runs `op` until it succeeds, fails permanently, or the retry cap is hit.
/// Returns the value together with the number of retries it took.
pub fn with_retries<T, E>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, Attempt<E>>,
) -> Result<(T, u32), RetryExhausted<E>> {
    let mut retry = 0;
    loop {
        match op(retry) {
            Ok(v) => return Ok((v, retry)),
            Err(Attempt::Permanent(error)) => return Err(RetryExhausted { error, attempts: retry + 1 }),
            Err(Attempt::Transient(error)) => {
                if retry >= policy.max_retries {
                    return Err(RetryExhausted { error, attempts: retry + 1 });
                }
                let wait = policy.delay(retry);
                log::debug!("transient failure, retry {} in {:?}", retry + 1, wait);
                thread::sleep(wait);
                retry += 1;
            }
        }
    }
}

/// Whether an HTTP status is worth retrying.
pub fn is_transient_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Spaces requests to one endpoint at least `min_interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self { min_interval, next_slot: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter lock");
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.min_interval);
            start.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy { max_retries: 2, base_delay_ms: 1, max_delay_ms: 2 }
    }

    #[test]
    fn succeeds_after_transient_failures() {
        let (v, retries) = with_retries(&fast(), |n| if n < 2 { Err(Attempt::Transient(n)) } else { Ok("ok") }).unwrap();
        assert_eq!(v, "ok");
        assert_eq!(retries, 2);
    }

    #[test]
    fn gives_up_at_cap() {
        let err = with_retries::<(), _>(&fast(), |n| Err(Attempt::Transient(n))).unwrap_err();
        assert_eq!(err.attempts, 3);
        assert_eq!(err.error, 2);
    }

    #[test]
    fn permanent_stops_immediately() {
        let err = with_retries::<(), _>(&fast(), |_| Err(Attempt::Permanent("no"))).unwrap_err();
        assert_eq!(err.attempts, 1);
    }

    #[test]
    fn delay_is_capped() {
        let p = RetryPolicy { max_retries: 10, base_delay_ms: 10, max_delay_ms: 50 };
        assert_eq!(p.delay(0), Duration::from_millis(10));
        assert_eq!(p.delay(1), Duration::from_millis(20));
        assert_eq!(p.delay(9), Duration::from_millis(50));
    }

    #[test]
    fn rate_limiter_spaces_calls() {
        let rl = RateLimiter::new(Duration::from_millis(5));
        let start = Instant::now();
        for _ in 0..4 {
            rl.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(15));
    }
}

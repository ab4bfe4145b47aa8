use super::BackendError;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Exponential backoff: `base_delay`, doubling per retry, capped at `max_delay`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(250), max_delay: Duration::from_secs(30) }
    }
}

pub(crate) enum Outcome<T> {
    Done(T),
    /// Worth retrying (network failure, 429, 5xx).
    Transient(BackendError),
    Fatal(BackendError),
}

impl RetryPolicy {
    /// The wait before each retry, in order.
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.max_retries)
            .map(|k| {
                let factor = 2u32.saturating_pow(k);
                self.base_delay.saturating_mul(factor).min(self.max_delay)
            })
            .collect()
    }

    pub(crate) fn run<T>(
        &self,
        mut sleep: impl FnMut(Duration),
        mut attempt: impl FnMut() -> Outcome<T>,
    ) -> Result<T, BackendError> {
        let delays = self.delays();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match attempt() {
                Outcome::Done(v) => return Ok(v),
                Outcome::Fatal(e) => return Err(e),
                Outcome::Transient(e) => match delays.get(attempts as usize - 1) {
                    Some(d) => sleep(*d),
                    None => {
                        return Err(match e {
                            BackendError::Transport { message, .. } => BackendError::Transport { attempts, message },
                            other => other,
                        })
                    }
                },
            }
        }
    }
}

/// Caps the number of concurrent in-flight requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("limiter lock");
        while *active >= self.max {
            active = self.freed.wait(active).expect("limiter lock");
        }
        *active += 1;
        Permit { limiter: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock().expect("limiter lock")
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().expect("limiter lock");
        *active -= 1;
        self.limiter.freed.notify_one();
    }
}

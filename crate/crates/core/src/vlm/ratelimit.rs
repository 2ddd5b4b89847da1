use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Token bucket shared by every worker that talks to one endpoint.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    /// `rate` tokens per second; a non-positive rate disables limiting.
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity.min(1.0), Instant::now())),
        }
    }

    /// Time to wait before a token is available, taking it if none is needed.
    fn try_take(&self) -> Option<Duration> {
        let mut state = self.state.lock().unwrap();
        let now = Instant::now();
        let (tokens, last) = *state;
        let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
        if tokens >= 1.0 {
            *state = (tokens - 1.0, now);
            None
        } else {
            *state = (tokens, now);
            Some(Duration::from_secs_f64((1.0 - tokens) / self.rate))
        }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        if self.rate <= 0.0 || !self.rate.is_finite() {
            return;
        }
        while let Some(wait) = self.try_take() {
            thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn paces_requests() {
        let limiter = RateLimiter::new(20.0);
        let start = Instant::now();
        for _ in 0..6 {
            limiter.acquire();
        }
        // One token up front, five more at 50 ms each.
        assert!(start.elapsed() >= Duration::from_millis(230), "{:?}", start.elapsed());
    }

    #[test]
    fn shared_across_threads() {
        let limiter = Arc::new(RateLimiter::new(40.0));
        let start = Instant::now();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let l = Arc::clone(&limiter);
                thread::spawn(move || {
                    for _ in 0..3 {
                        l.acquire();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        // 12 tokens at 40/s with a burst of 1: at least 11 * 25 ms.
        assert!(start.elapsed() >= Duration::from_millis(260), "{:?}", start.elapsed());
    }

    #[test]
    fn zero_rate_is_unlimited() {
        let limiter = RateLimiter::new(0.0);
        let start = Instant::now();
        for _ in 0..1000 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(100));
    }
}

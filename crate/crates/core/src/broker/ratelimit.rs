use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// Token bucket modelling a logical broker's ingress capacity.
#[derive(Debug)]
pub(crate) struct RateLimiter {
    bytes_per_sec: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(bytes_per_sec: u64) -> Self {
        let rate = bytes_per_sec.max(1) as f64;
        let burst = (rate * 0.02).max(64.0 * 1024.0);
        Self {
            bytes_per_sec: rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Blocks until `bytes` of capacity are available.
    pub fn acquire(&self, bytes: usize) {
        let need = bytes as f64;
        let wait = {
            let mut st = self.state.lock();
            let now = Instant::now();
            let refill = now.duration_since(st.1).as_secs_f64() * self.bytes_per_sec;
            st.0 = (st.0 + refill).min(self.burst);
            st.1 = now;
            st.0 -= need;
            if st.0 >= 0.0 {
                return;
            }
            Duration::from_secs_f64(-st.0 / self.bytes_per_sec)
        };
        std::thread::sleep(wait);
    }
}

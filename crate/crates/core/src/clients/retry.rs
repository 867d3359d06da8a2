use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exponential backoff with full jitter: the delay before retry `k`
/// (0-based) is uniform in `[0, min(max, base * factor^k)]`.
pub struct Backoff {
    base: Duration,
    factor: f64,
    max: Duration,
    rng: Mutex<ChaCha8Rng>,
}

impl Backoff {
    pub fn new(base: Duration, factor: f64, max: Duration, seed: Option<u64>) -> Self {
        let rng = match seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            base,
            factor,
            max,
            rng: Mutex::new(rng),
        }
    }

    /// Upper bound of the jitter window for retry `attempt`.
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(secs.min(self.max.as_secs_f64()))
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ceiling = self.ceiling(attempt).as_secs_f64();
        let u: f64 = self.rng.lock().expect("backoff rng poisoned").random();
        Duration::from_secs_f64(ceiling * u)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested sleeps instead of sleeping.
#[derive(Default)]
pub struct RecordingSleeper {
    pub sleeps: Mutex<Vec<Duration>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
    }
}

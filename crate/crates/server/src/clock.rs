//! Injectable time and token sources.
//!
//! Production uses the wall clock and OS randomness; simulations swap in a
//! manual clock and a seeded generator so whole runs are reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self {
            now: AtomicU64::new(start_ms),
        }
    }

    pub fn advance(&self, ms: u64) -> u64 {
        self.now.fetch_add(ms, Ordering::SeqCst) + ms
    }

    pub fn set(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

pub trait TokenSource: Send + Sync {
    /// A fresh bearer token: 32 random bytes, hex encoded.
    fn next_token(&self) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OsTokens;

impl TokenSource for OsTokens {
    fn next_token(&self) -> String {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        hex::encode(bytes)
    }
}

/// Deterministic tokens for simulations. Not for live deployments.
#[derive(Debug)]
pub struct SeededTokens {
    rng: Mutex<ChaCha8Rng>,
}

impl SeededTokens {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl TokenSource for SeededTokens {
    fn next_token(&self) -> String {
        let mut bytes = [0u8; 32];
        self.rng.lock().expect("token rng poisoned").fill_bytes(&mut bytes);
        hex::encode(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_moves_only_on_demand() {
        let c = ManualClock::new(100);
        assert_eq!(c.now_ms(), 100);
        assert_eq!(c.advance(50), 150);
        c.set(7);
        assert_eq!(c.now_ms(), 7);
    }

    #[test]
    fn seeded_tokens_repeat() {
        let a = SeededTokens::new(3);
        let b = SeededTokens::new(3);
        let ta = a.next_token();
        assert_eq!(ta, b.next_token());
        assert_eq!(ta.len(), 64);
        assert_ne!(ta, a.next_token());
        assert_ne!(OsTokens.next_token(), OsTokens.next_token());
    }
}

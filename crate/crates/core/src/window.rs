use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest window the AC/DC and feature code accepts.
pub const MIN_WINDOW_LEN: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window length {0} is below the minimum of {MIN_WINDOW_LEN}")]
    TooShort(usize),
    #[error("window step must be at least 1")]
    ZeroStep,
}

/// Window length and hop, both in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_len: usize,
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 100,
            step: 100,
        }
    }
}

impl WindowConfig {
    pub fn new(window_len: usize, step: usize) -> Result<Self, WindowError> {
        let cfg = Self { window_len, step };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Non-overlapping windows (training mode).
    pub fn non_overlapping(window_len: usize) -> Result<Self, WindowError> {
        Self::new(window_len, window_len)
    }

    /// Step-1 sliding windows (inference mode).
    pub fn sliding(window_len: usize) -> Result<Self, WindowError> {
        Self::new(window_len, 1)
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        if self.window_len < MIN_WINDOW_LEN {
            return Err(WindowError::TooShort(self.window_len));
        }
        if self.step == 0 {
            return Err(WindowError::ZeroStep);
        }
        Ok(())
    }

    /// Start indices of every complete window over a stream of `n` samples.
    pub fn starts(&self, n: usize) -> impl Iterator<Item = usize> {
        let last = n.checked_sub(self.window_len);
        let step = self.step.max(1);
        (0..)
            .map(move |k| k * step)
            .take_while(move |&s| last.is_some_and(|l| s <= l))
    }

    pub fn count(&self, n: usize) -> usize {
        match n.checked_sub(self.window_len) {
            Some(l) => l / self.step.max(1) + 1,
            None => 0,
        }
    }
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::nets::Condition;

pub const DEFAULT_W_MAX: f64 = 3.5;
pub const DEFAULT_DROP_PROB: f64 = 0.1;

/// Per-sample guidance settings for the guided objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceContext {
    w: f64,
    w_max: f64,
    dropped: bool,
}

impl GuidanceContext {
    /// A guided sample with scale `w` in `[1, w_max]`.
    pub fn guided(w: f64, w_max: f64) -> Result<Self> {
        if !(w_max > 1.0) || !w_max.is_finite() {
            return Err(Error::InvalidArgument(format!("w_max must exceed 1, got {w_max}")));
        }
        if !(1.0..=w_max).contains(&w) {
            return Err(Error::InvalidArgument(format!("guidance scale {w} outside [1, {w_max}]")));
        }
        Ok(Self { w, w_max, dropped: false })
    }

    /// A sample whose condition was dropped: trained on the negative
    /// condition with `w = 1`.
    pub fn dropped(w_max: f64) -> Result<Self> {
        let mut ctx = Self::guided(1.0, w_max)?;
        ctx.dropped = true;
        Ok(ctx)
    }

    /// Drops the condition with probability `drop_prob`, otherwise draws
    /// `w ~ U(1, w_max)`.
    pub fn sample<R: Rng + ?Sized>(w_max: f64, drop_prob: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_prob) {
            return Err(Error::InvalidArgument(format!("drop probability {drop_prob} outside [0, 1]")));
        }
        if rng.random::<f64>() < drop_prob {
            Self::dropped(w_max)
        } else {
            Self::guided(rng.random_range(1.0..w_max), w_max)
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn is_dropped(&self) -> bool {
        self.dropped
    }

    pub fn cond(&self) -> Condition {
        if self.dropped {
            Condition::Negative
        } else {
            Condition::Positive
        }
    }
}

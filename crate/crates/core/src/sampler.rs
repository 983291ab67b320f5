//! Delay samplers for processing, channel and block-production latencies.
//!
//! Samplers are configured in milliseconds and produce whole microseconds of
//! virtual time.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid sampler: {0}")]
pub struct SamplerError(String);

impl SamplerError {
    pub fn new(msg: String) -> Self {
        SamplerError(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Constant { ms: f64 },
    /// Uniform over the closed interval, at microsecond resolution.
    Uniform { lo_ms: f64, hi_ms: f64 },
    /// Scripted values replayed in order; the last one repeats forever.
    Sequence { values_ms: Vec<f64> },
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1_000.0).round().max(0.0) as u64
}

impl Sampler {
    pub fn constant(ms: f64) -> Self {
        Sampler::Constant { ms }
    }

    pub fn uniform(lo_ms: f64, hi_ms: f64) -> Self {
        Sampler::Uniform { lo_ms, hi_ms }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let check = |v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(SamplerError(format!("value {v} must be finite and non-negative")))
            }
        };
        match self {
            Sampler::Constant { ms } => check(*ms),
            Sampler::Uniform { lo_ms, hi_ms } => {
                check(*lo_ms)?;
                check(*hi_ms)?;
                if lo_ms > hi_ms {
                    return Err(SamplerError(format!("uniform bounds reversed: [{lo_ms}, {hi_ms}]")));
                }
                Ok(())
            }
            Sampler::Sequence { values_ms } => {
                if values_ms.is_empty() {
                    return Err(SamplerError("sequence is empty".into()));
                }
                values_ms.iter().try_for_each(|v| check(*v))
            }
        }
    }

    pub fn min_ms(&self) -> f64 {
        match self {
            Sampler::Constant { ms } => *ms,
            Sampler::Uniform { lo_ms, .. } => *lo_ms,
            Sampler::Sequence { values_ms } => values_ms.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_ms(&self) -> f64 {
        match self {
            Sampler::Constant { ms } => *ms,
            Sampler::Uniform { hi_ms, .. } => *hi_ms,
            Sampler::Sequence { values_ms } => values_ms.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Analytic mean in ms (for a sequence, the steady-state value).
    pub fn mean_ms(&self) -> f64 {
        match self {
            Sampler::Constant { ms } => *ms,
            Sampler::Uniform { lo_ms, hi_ms } => (ms_to_us(*lo_ms) + ms_to_us(*hi_ms)) as f64 / 2_000.0,
            Sampler::Sequence { values_ms } => *values_ms.last().unwrap_or(&0.0),
        }
    }

    pub fn source(&self) -> DelaySource {
        DelaySource { sampler: self.clone(), cursor: 0 }
    }
}

/// A sampler together with its replay position.
#[derive(Debug, Clone)]
pub struct DelaySource {
    sampler: Sampler,
    cursor: usize,
}

impl DelaySource {
    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    /// Draw one delay in microseconds.
    pub fn sample_us<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u64 {
        match &self.sampler {
            Sampler::Constant { ms } => ms_to_us(*ms),
            Sampler::Uniform { lo_ms, hi_ms } => rng.gen_range(ms_to_us(*lo_ms)..=ms_to_us(*hi_ms)),
            Sampler::Sequence { values_ms } => {
                let v = values_ms[self.cursor.min(values_ms.len() - 1)];
                self.cursor += 1;
                ms_to_us(v)
            }
        }
    }
}

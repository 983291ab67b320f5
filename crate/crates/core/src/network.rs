//! Lossy device/agent channel with latency ε₂, scheduled jamming and
//! random loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Interval;
use crate::sampler::{DelaySource, Sampler, SamplerError};
use crate::types::SimTime;

fn default_eps2() -> Sampler {
    Sampler::uniform(50.0, 80.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// One-way transfer latency ε₂.
    #[serde(default = "default_eps2")]
    pub eps2: Sampler,
    /// Intervals during which the radio link is jammed.
    #[serde(default)]
    pub jam_windows: Vec<Interval>,
    /// Independent per-transmission loss probability.
    #[serde(default)]
    pub loss_rate: f64,
    /// Time the modem needs to re-register after a jam ends; the link
    /// stays down for this long past each window.
    #[serde(default)]
    pub reattach_ms: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { eps2: default_eps2(), jam_windows: Vec::new(), loss_rate: 0.0, reattach_ms: 0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        self.eps2.validate()?;
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(SamplerError::new(format!("loss_rate {} must be in [0, 1)", self.loss_rate)));
        }
        if self.jam_windows.iter().any(|w| w.start_ms >= w.end_ms) {
            return Err(SamplerError::new("jam windows must be non-empty".into()));
        }
        if self.jam_windows.windows(2).any(|w| w[0].end_ms > w[1].start_ms) {
            return Err(SamplerError::new("jam windows must be sorted and disjoint".into()));
        }
        Ok(())
    }

    /// Whether the link is down at `at`.
    pub fn is_jammed(&self, at: SimTime) -> bool {
        let us = at.micros();
        self.jam_windows.iter().any(|w| {
            let end = w.end_ms.saturating_add(self.reattach_ms);
            us >= w.start_ms * 1_000 && us < end.saturating_mul(1_000)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Device to agent: uploads and alarms.
    Uplink,
    /// Agent to device: acknowledgements.
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Jammed,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmission {
    Delivered { arrival: SimTime },
    Dropped { reason: DropReason },
}

/// The channel with its own latency streams per direction.
#[derive(Debug, Clone)]
pub struct Channel {
    config: ChannelConfig,
    up: DelaySource,
    down: DelaySource,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Self {
        let up = config.eps2.source();
        let down = config.eps2.source();
        Channel { config, up, down }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    /// Send a message at `send`. An uplink is lost if the device radio is
    /// jammed when it transmits; a downlink if the device is jammed when the
    /// message would reach it.
    pub fn transmit<R: Rng + ?Sized>(&mut self, direction: Direction, send: SimTime, rng: &mut R) -> Transmission {
        let delay = match direction {
            Direction::Uplink => self.up.sample_us(rng),
            Direction::Downlink => self.down.sample_us(rng),
        };
        let arrival = send.plus_micros(delay);
        let exposed = match direction {
            Direction::Uplink => send,
            Direction::Downlink => arrival,
        };
        if self.config.is_jammed(exposed) {
            return Transmission::Dropped { reason: DropReason::Jammed };
        }
        if self.config.loss_rate > 0.0 && rng.gen::<f64>() < self.config.loss_rate {
            return Transmission::Dropped { reason: DropReason::Lost };
        }
        Transmission::Delivered { arrival }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn jammed(reattach_ms: u64) -> Channel {
        Channel::new(ChannelConfig {
            eps2: Sampler::constant(70.0),
            jam_windows: vec![Interval { start_ms: 200_000, end_ms: 220_000 }],
            loss_rate: 0.0,
            reattach_ms,
        })
    }

    #[test]
    fn clear_link_adds_latency() {
        let mut ch = jammed(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = ch.transmit(Direction::Uplink, SimTime::from_ms(100), &mut rng);
        assert_eq!(got, Transmission::Delivered { arrival: SimTime(170_000) });
    }

    #[test]
    fn uplink_judged_at_send_time() {
        let mut ch = jammed(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = ch.transmit(Direction::Uplink, SimTime(199_999_999), &mut rng);
        assert!(matches!(before, Transmission::Delivered { .. }));
        for ms in [200_000, 219_999] {
            let got = ch.transmit(Direction::Uplink, SimTime::from_ms(ms), &mut rng);
            assert_eq!(got, Transmission::Dropped { reason: DropReason::Jammed });
        }
        let after = ch.transmit(Direction::Uplink, SimTime::from_ms(220_000), &mut rng);
        assert!(matches!(after, Transmission::Delivered { .. }));
    }

    #[test]
    fn downlink_judged_at_arrival() {
        let mut ch = jammed(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // leaves before the window, lands inside it
        let got = ch.transmit(Direction::Downlink, SimTime::from_ms(199_950), &mut rng);
        assert_eq!(got, Transmission::Dropped { reason: DropReason::Jammed });
    }

    #[test]
    fn reattach_extends_outage() {
        let ch = jammed(10_000);
        assert!(ch.config().is_jammed(SimTime::from_ms(229_999)));
        assert!(!ch.config().is_jammed(SimTime::from_ms(230_000)));
    }

    #[test]
    fn random_loss_rate() {
        let mut ch = Channel::new(ChannelConfig { loss_rate: 0.25, ..ChannelConfig::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lost = (0..20_000)
            .filter(|_| {
                matches!(ch.transmit(Direction::Uplink, SimTime::ZERO, &mut rng), Transmission::Dropped { .. })
            })
            .count();
        let rate = lost as f64 / 20_000.0;
        assert!((rate - 0.25).abs() < 0.02, "{rate}");
    }

    #[test]
    fn validation() {
        let mut cfg = ChannelConfig { loss_rate: 1.0, ..ChannelConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.loss_rate = 0.0;
        cfg.jam_windows = vec![Interval { start_ms: 50, end_ms: 60 }, Interval { start_ms: 10, end_ms: 20 }];
        assert!(cfg.validate().is_err());
    }
}

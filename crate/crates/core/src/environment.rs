//! Ground-truth physical world inside the shipping box, and the sensor
//! sampling that turns it into a reading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{InvalidValue, Light, SensorReading};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("time {time_ms} ms is outside the scenario [0, {duration_ms}] ms")]
    OutOfRange { time_ms: u64, duration_ms: u64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("sensor produced an invalid reading: {0}")]
    Reading(#[from] InvalidValue),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_ms: u64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePoint {
    pub t_ms: u64,
    pub celsius: f64,
}

/// Half-open `[start_ms, end_ms)` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Interval {
    pub fn contains(&self, t_ms: u64) -> bool {
        t_ms >= self.start_ms && t_ms < self.end_ms
    }
}

/// Optional zero-mean uniform sensor noise, keyed by its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    pub seed: u64,
    #[serde(default)]
    pub temperature_c: f64,
    #[serde(default)]
    pub position_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration_ms: u64,
    pub route: Vec<Waypoint>,
    pub temperature: Vec<TemperaturePoint>,
    #[serde(default)]
    pub open_events: Vec<Interval>,
    pub ambient_lux_open: f64,
    pub ambient_lux_closed: f64,
    /// Photosensor threshold θ in lux.
    pub theta: f64,
    #[serde(default)]
    pub noise: Option<SensorNoise>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxState {
    pub lux: f64,
    pub temperature_c: f64,
    pub lat: f64,
    pub lon: f64,
    pub lid_open: bool,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.duration_ms == 0 {
            return bad("duration must be positive".into());
        }
        if self.route.is_empty() || self.temperature.is_empty() {
            return bad("route and temperature profile need at least one point".into());
        }
        if self.route.windows(2).any(|w| w[0].t_ms >= w[1].t_ms) {
            return bad("route waypoints must be strictly increasing in time".into());
        }
        if self.temperature.windows(2).any(|w| w[0].t_ms >= w[1].t_ms) {
            return bad("temperature profile must be strictly increasing in time".into());
        }
        for wp in &self.route {
            if !(-90.0..=90.0).contains(&wp.lat) || !(-180.0..=180.0).contains(&wp.lon) {
                return bad(format!("waypoint at {} ms has invalid coordinates", wp.t_ms));
            }
        }
        if self.temperature.iter().any(|p| !p.celsius.is_finite()) {
            return bad("temperature values must be finite".into());
        }
        for iv in &self.open_events {
            if iv.start_ms >= iv.end_ms {
                return bad(format!("open interval [{}, {}) is empty", iv.start_ms, iv.end_ms));
            }
        }
        if self.open_events.windows(2).any(|w| w[0].end_ms > w[1].start_ms) {
            return bad("open intervals must be sorted and non-overlapping".into());
        }
        if !(self.ambient_lux_closed < self.theta && self.theta <= self.ambient_lux_open) {
            return bad(format!(
                "need lux_closed < theta <= lux_open, got {} / {} / {}",
                self.ambient_lux_closed, self.theta, self.ambient_lux_open
            ));
        }
        Ok(())
    }

    pub fn lid_open_at(&self, time_ms: u64) -> bool {
        self.open_events.iter().any(|iv| iv.contains(time_ms))
    }

    /// Physical state of the box at `time_ms`.
    pub fn ground_truth(&self, time_ms: u64) -> Result<BoxState, ScenarioError> {
        if time_ms > self.duration_ms {
            return Err(ScenarioError::OutOfRange { time_ms, duration_ms: self.duration_ms });
        }
        let (lat, lon) = {
            let [lat, lon] = interpolate(&self.route, time_ms, |w| (w.t_ms, [w.lat, w.lon]));
            (lat, lon)
        };
        let [temperature_c] = interpolate(&self.temperature, time_ms, |p| (p.t_ms, [p.celsius]));
        let lid_open = self.lid_open_at(time_ms);
        let lux = if lid_open { self.ambient_lux_open } else { self.ambient_lux_closed };
        Ok(BoxState { lux, temperature_c, lat, lon, lid_open })
    }
}

/// Piecewise-linear interpolation, clamped to the end points.
fn interpolate<P, const N: usize>(points: &[P], t: u64, get: impl Fn(&P) -> (u64, [f64; N])) -> [f64; N] {
    let first = get(&points[0]);
    if t <= first.0 {
        return first.1;
    }
    let idx = points.partition_point(|p| get(p).0 <= t);
    if idx == points.len() {
        return get(&points[points.len() - 1]).1;
    }
    let (t0, v0) = get(&points[idx - 1]);
    let (t1, v1) = get(&points[idx]);
    let frac = (t - t0) as f64 / (t1 - t0) as f64;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = v0[i] + (v1[i] - v0[i]) * frac;
    }
    out
}

/// Sample the box's sensors at `time_ms` with photosensor threshold `theta`.
///
/// Pure in `(scenario, time_ms, theta)`; noise, when configured, is drawn
/// from a generator keyed by the noise seed and the sampling time.
pub fn sample_sensors(scenario: &Scenario, time_ms: u64, theta: f64) -> Result<SensorReading, ScenarioError> {
    let truth = scenario.ground_truth(time_ms)?;
    let light = if truth.lux > theta { Light::Bright } else { Light::Dark };
    let (mut k, mut lat, mut lon) = (truth.temperature_c, truth.lat, truth.lon);
    if let Some(noise) = scenario.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ time_ms.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        if noise.temperature_c > 0.0 {
            k += rng.gen_range(-noise.temperature_c..=noise.temperature_c);
        }
        if noise.position_deg > 0.0 {
            lat = (lat + rng.gen_range(-noise.position_deg..=noise.position_deg)).clamp(-90.0, 90.0);
            lon = (lon + rng.gen_range(-noise.position_deg..=noise.position_deg)).clamp(-180.0, 180.0);
        }
    }
    Ok(SensorReading::new(light, k, lat, lon)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario {
            duration_ms: 100_000,
            route: vec![
                Waypoint { t_ms: 0, lat: 36.0, lon: 120.0 },
                Waypoint { t_ms: 50_000, lat: 36.01, lon: 120.02 },
            ],
            temperature: vec![
                TemperaturePoint { t_ms: 0, celsius: 13.0 },
                TemperaturePoint { t_ms: 20_000, celsius: 15.0 },
            ],
            open_events: vec![Interval { start_ms: 60_000, end_ms: 70_000 }],
            ambient_lux_open: 10_000.0,
            ambient_lux_closed: 0.5,
            theta: 50.0,
            noise: None,
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let s = scenario();
        let at_wp = s.ground_truth(50_000).unwrap();
        assert_eq!((at_wp.lat, at_wp.lon), (36.01, 120.02));
        let mid = s.ground_truth(10_000).unwrap();
        assert_eq!(mid.temperature_c, 14.0);
        let after = s.ground_truth(90_000).unwrap();
        assert_eq!(after.temperature_c, 15.0);
        assert_eq!((after.lat, after.lon), (36.01, 120.02));
    }

    #[test]
    fn lid_and_lux() {
        let s = scenario();
        let open = s.ground_truth(65_000).unwrap();
        assert!(open.lid_open);
        assert_eq!(open.lux, 10_000.0);
        let closed = s.ground_truth(70_000).unwrap();
        assert!(!closed.lid_open);
        assert_eq!(closed.lux, 0.5);
    }

    #[test]
    fn out_of_range_time() {
        assert!(matches!(scenario().ground_truth(100_001), Err(ScenarioError::OutOfRange { .. })));
        assert!(sample_sensors(&scenario(), 200_000, 50.0).is_err());
    }

    #[test]
    fn photosensor_threshold() {
        let s = scenario();
        assert_eq!(sample_sensors(&s, 1_000, 50.0).unwrap().light, Light::Dark);
        assert_eq!(sample_sensors(&s, 61_000, 50.0).unwrap().light, Light::Bright);
    }

    #[test]
    fn plateau_temperature_copied() {
        let mut s = scenario();
        s.temperature = vec![
            TemperaturePoint { t_ms: 0, celsius: 14.0 },
            TemperaturePoint { t_ms: 100_000, celsius: 14.0 },
        ];
        assert_eq!(sample_sensors(&s, 33_333, 50.0).unwrap().temperature_c, 14.0);
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let mut s = scenario();
        s.noise = Some(SensorNoise { seed: 5, temperature_c: 0.2, position_deg: 0.0001 });
        let a = sample_sensors(&s, 12_345, 50.0).unwrap();
        let b = sample_sensors(&s, 12_345, 50.0).unwrap();
        assert_eq!(a, b);
        let truth = s.ground_truth(12_345).unwrap();
        assert!((a.temperature_c - truth.temperature_c).abs() <= 0.2);
        assert!((a.lat - truth.lat).abs() <= 0.0001);
    }

    #[test]
    fn lux_invariant_enforced() {
        let mut s = scenario();
        s.ambient_lux_closed = 60.0;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.open_events.push(Interval { start_ms: 65_000, end_ms: 80_000 });
        assert!(s.validate().is_err());
    }
}

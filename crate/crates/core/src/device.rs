//! The sensing device: periodic sense, violation check, sign, drain the
//! backup queue, seal and send, with ACK-driven recovery.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, upload_aad};
use crate::crypto::{self, DeviceKeys, NonceSequence, SessionKey};
use crate::environment::{sample_sensors, Scenario, ScenarioError};
use crate::sampler::{DelaySource, Sampler};
use crate::types::{
    AlarmBody, AlarmMessage, DeviceId, Pattern, Record, RecordBody, SensorReading, UploadMessage,
    UploadPayload, ViolationKind,
};

/// Terminal failure text when the backlog outgrows the recovery budget.
pub const EXCEED_TOLERANCE: &str = "Exceed maximum recovery tolerance";

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Distance in meters between two `(lat, lon)` points using an
/// equirectangular projection about their mean latitude.
pub fn dist_meters(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let mut dlon = lon2 - lon1;
    if dlon > std::f64::consts::PI {
        dlon -= 2.0 * std::f64::consts::PI;
    } else if dlon < -std::f64::consts::PI {
        dlon += 2.0 * std::f64::consts::PI;
    }
    let east = dlon * ((lat1 + lat2) / 2.0).cos();
    let north = lat2 - lat1;
    EARTH_RADIUS_M * east.hypot(north)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

/// Compare a reading against the pattern. An empty result means compliant.
pub fn violation_check(c: &SensorReading, gamma: &Pattern) -> Vec<Violation> {
    let mut out = Vec::new();
    if !gamma.permitted_light.contains(&c.light) {
        out.push(Violation {
            kind: ViolationKind::BoxOpened,
            detail: format!("photosensor reads {}", c.light.bit()),
        });
    }
    let band = gamma.temperature;
    if c.temperature_c > band.max_c || c.temperature_c < band.min_c {
        out.push(Violation {
            kind: ViolationKind::AbnormalTemperature,
            detail: format!("{:.2} C outside [{}, {}]", c.temperature_c, band.min_c, band.max_c),
        });
    }
    let margin = gamma
        .checkpoints
        .iter()
        .map(|cp| dist_meters((c.lat, c.lon), (cp.lat, cp.lon)) - cp.radius_m)
        .fold(f64::INFINITY, f64::min);
    if margin > 0.0 {
        out.push(Violation {
            kind: ViolationKind::RouteDeviated,
            detail: format!("{margin:.1} m outside the nearest checkpoint radius"),
        });
    }
    out
}

fn default_eps1() -> Sampler {
    Sampler::uniform(50.0, 158.0)
}

fn default_max_fd() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub id: DeviceId,
    /// Sensing interval Δt.
    pub delta_t_ms: u64,
    /// First sensing instant (true virtual time).
    #[serde(default)]
    pub t0_ms: u64,
    /// Largest backlog that may be resent, `max_F_d`.
    #[serde(default = "default_max_fd")]
    pub max_fd: usize,
    /// Constant device-clock offset ε_s relative to the agent clock.
    #[serde(default)]
    pub clock_skew_ms: i64,
    /// Local processing delay ε₁.
    #[serde(default = "default_eps1")]
    pub eps1: Sampler,
    /// Photosensor threshold θ; falls back to the scenario's.
    #[serde(default)]
    pub theta: Option<f64>,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum DeviceStatus {
    Running,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    /// The device has stopped; carries the terminal reason.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot encode record: {0}")]
    Encode(#[from] codec::EncodeError),
}

#[derive(Debug, Clone)]
struct InFlight {
    msg_id: u64,
    records: Vec<Record>,
}

/// Everything one sensing cycle emits.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    pub record: Record,
    pub upload: UploadMessage,
    /// Plaintext records inside `upload`, oldest first.
    pub carried: Vec<Record>,
    pub alarm: Option<AlarmMessage>,
    pub violations: Vec<Violation>,
    /// Timestamps pushed back to the queue because the previous upload was
    /// never acknowledged.
    pub requeued: Vec<u64>,
    /// Sampled ε₁: time from sensing until the upload leaves the device.
    pub processing_us: u64,
}

/// One TEE device. Owned and driven by a single execution context.
#[derive(Debug)]
pub struct DeviceState {
    config: DeviceConfig,
    keys: DeviceKeys,
    session: SessionKey,
    nonces: NonceSequence,
    backup_queue: VecDeque<Record>,
    in_flight: Option<InFlight>,
    msg_counter: u64,
    eps1: DelaySource,
    status: DeviceStatus,
}

impl DeviceState {
    pub fn new(config: DeviceConfig, keys: DeviceKeys, session: SessionKey) -> Self {
        let eps1 = config.eps1.source();
        DeviceState {
            config,
            keys,
            session,
            nonces: NonceSequence::new(),
            backup_queue: VecDeque::new(),
            in_flight: None,
            msg_counter: 0,
            eps1,
            status: DeviceStatus::Running,
        }
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn status(&self) -> &DeviceStatus {
        &self.status
    }

    pub fn keys(&self) -> &DeviceKeys {
        &self.keys
    }

    pub fn backup_queue(&self) -> impl Iterator<Item = &Record> {
        self.backup_queue.iter()
    }

    pub fn queue_len(&self) -> usize {
        self.backup_queue.len()
    }

    pub fn awaiting_ack(&self) -> Option<u64> {
        self.in_flight.as_ref().map(|f| f.msg_id)
    }

    /// Device clock reading at true time `now_ms`.
    pub fn device_clock_ms(&self, now_ms: u64) -> u64 {
        (now_ms as i64 + self.config.clock_skew_ms).max(0) as u64
    }

    fn fail(&mut self, reason: &str) -> DeviceError {
        self.status = DeviceStatus::Failed(reason.to_string());
        DeviceError::Failed(reason.to_string())
    }

    /// Treat the outstanding upload, if any, as lost: its records go back
    /// to the front of the queue in timestamp order.
    fn expire_in_flight(&mut self) -> Vec<u64> {
        let Some(lost) = self.in_flight.take() else {
            return Vec::new();
        };
        let ts = lost.records.iter().map(|r| r.t).collect();
        for rec in lost.records.into_iter().rev() {
            self.backup_queue.push_front(rec);
        }
        ts
    }

    /// Run one periodic reporting cycle at true time `now_ms`.
    pub fn sense_cycle<R: Rng + ?Sized>(
        &mut self,
        now_ms: u64,
        scenario: &Scenario,
        rng: &mut R,
    ) -> Result<CycleOutput, DeviceError> {
        if let DeviceStatus::Failed(reason) = &self.status {
            return Err(DeviceError::Failed(reason.clone()));
        }
        // ACK timeout is one full Δt: anything still unacknowledged now is lost.
        let requeued = self.expire_in_flight();
        if self.backup_queue.len() > self.config.max_fd {
            return Err(self.fail(EXCEED_TOLERANCE));
        }

        let theta = self.config.theta.unwrap_or(scenario.theta);
        let reading = sample_sensors(scenario, now_ms, theta)?;
        let t = self.device_clock_ms(now_ms);

        let violations = violation_check(&reading, &self.config.pattern);
        let alarm = if violations.is_empty() {
            None
        } else {
            let body = AlarmBody { t_ms: t, messages: violations.iter().map(|v| v.kind).collect() };
            let sig = crypto::sign(&codec::encode(&body)?, &self.keys.tee_sk);
            Some(AlarmMessage { t, messages: body.messages, sig })
        };

        let pi = crypto::sign(&codec::encode(&RecordBody { t_ms: t, reading })?, &self.keys.tee_sk);
        let record = Record { t, reading, pi };

        let mut carried: Vec<Record> = self.backup_queue.drain(..).collect();
        carried.push(record.clone());
        let payload = codec::encode(&UploadPayload { records: carried.clone() })?;
        let counter = self.msg_counter;
        self.msg_counter += 1;
        let aad = upload_aad(&self.config.id, counter);
        let ciphertext = crypto::seal(&payload, &self.session, &aad, &mut self.nonces);
        let upload = UploadMessage { device_id: self.config.id.clone(), counter, ciphertext };

        self.in_flight = Some(InFlight { msg_id: counter, records: carried.clone() });
        let processing_us = self.eps1.sample_us(rng);
        Ok(CycleOutput { record, upload, carried, alarm, violations, requeued, processing_us })
    }

    /// Acknowledge an upload. Unknown or repeated ids are ignored.
    pub fn handle_ack(&mut self, msg_id: u64) -> bool {
        match &self.in_flight {
            Some(f) if f.msg_id == msg_id => {
                self.in_flight = None;
                true
            }
            _ => false,
        }
    }

    /// Explicit negative acknowledgement: requeue now instead of waiting
    /// for the timeout.
    pub fn handle_nack(&mut self, msg_id: u64) -> Vec<u64> {
        match &self.in_flight {
            Some(f) if f.msg_id == msg_id => self.expire_in_flight(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode;
    use crate::crypto::{keygen, open, verify};
    use crate::environment::{Interval, TemperaturePoint, Waypoint};
    use crate::types::{Checkpoint, Light, TemperatureBand};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CP: (f64, f64) = (36.1, 120.4);

    fn pattern() -> Pattern {
        Pattern {
            permitted_light: vec![Light::Dark],
            temperature: TemperatureBand { min_c: 13.0, max_c: 15.0 },
            checkpoints: vec![Checkpoint { lat: CP.0, lon: CP.1, radius_m: 500.0 }],
        }
    }

    /// Point `meters` due north of the checkpoint.
    fn north_of_cp(meters: f64) -> (f64, f64) {
        (CP.0 + (meters / EARTH_RADIUS_M).to_degrees(), CP.1)
    }

    #[test]
    fn compliant_reading() {
        let p = north_of_cp(100.0);
        let c = SensorReading::new(Light::Dark, 14.0, p.0, p.1).unwrap();
        assert!(violation_check(&c, &pattern()).is_empty());
    }

    #[test]
    fn each_violation_kind() {
        let p = north_of_cp(100.0);
        let opened = SensorReading::new(Light::Bright, 14.0, p.0, p.1).unwrap();
        let kinds: Vec<_> = violation_check(&opened, &pattern()).into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::BoxOpened]);

        let warm = SensorReading::new(Light::Dark, 24.0, p.0, p.1).unwrap();
        let kinds: Vec<_> = violation_check(&warm, &pattern()).into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::AbnormalTemperature]);

        let far = north_of_cp(600.0);
        let off = SensorReading::new(Light::Dark, 14.0, far.0, far.1).unwrap();
        let kinds: Vec<_> = violation_check(&off, &pattern()).into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::RouteDeviated]);
    }

    #[test]
    fn band_edges_are_inclusive() {
        let p = north_of_cp(0.0);
        for k in [13.0, 15.0] {
            let c = SensorReading::new(Light::Dark, k, p.0, p.1).unwrap();
            assert!(violation_check(&c, &pattern()).is_empty());
        }
    }

    #[test]
    fn dist_basics() {
        let a = (36.1, 120.4);
        assert_eq!(dist_meters(a, a), 0.0);
        let b = (36.105, 120.41);
        assert_eq!(dist_meters(a, b), dist_meters(b, a));
        let d = dist_meters((0.0, 0.0), (0.001, 0.0));
        assert!((d - 111.2).abs() < 0.5, "{d}");
        // across the antimeridian
        let w = dist_meters((0.0, 179.9995), (0.0, -179.9995));
        assert!((w - 111.2).abs() < 0.5, "{w}");
    }

    fn scenario() -> Scenario {
        Scenario {
            duration_ms: 1_000_000,
            route: vec![Waypoint { t_ms: 0, lat: CP.0, lon: CP.1 }],
            temperature: vec![TemperaturePoint { t_ms: 0, celsius: 14.0 }],
            open_events: vec![Interval { start_ms: 500_000, end_ms: 1_000_000 }],
            ambient_lux_open: 10_000.0,
            ambient_lux_closed: 0.5,
            theta: 50.0,
            noise: None,
        }
    }

    fn device(max_fd: usize) -> (DeviceState, SessionKey) {
        let cfg = DeviceConfig {
            id: DeviceId::new("box"),
            delta_t_ms: 10_000,
            t0_ms: 0,
            max_fd,
            clock_skew_ms: 0,
            eps1: Sampler::constant(80.0),
            theta: None,
            pattern: pattern(),
        };
        let session = SessionKey::from_bytes([3; 32]);
        (DeviceState::new(cfg, keygen([1; 32]), session.clone()), session)
    }

    fn open_payload(out: &CycleOutput, session: &SessionKey) -> Vec<Record> {
        let aad = upload_aad(&out.upload.device_id, out.upload.counter);
        let plain = open(&out.upload.ciphertext, session, &aad).unwrap();
        decode::<UploadPayload>(&plain).unwrap().records
    }

    #[test]
    fn no_fault_cycle_sends_one_record() {
        let (mut dev, session) = device(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = dev.sense_cycle(0, &scenario(), &mut rng).unwrap();
        assert!(out.alarm.is_none());
        assert_eq!(out.processing_us, 80_000);
        let recs = open_payload(&out, &session);
        assert_eq!(recs, vec![out.record.clone()]);
        let body = codec::encode(&out.record.body()).unwrap();
        assert!(verify(&body, out.record.pi.as_bytes(), &dev.keys().tee_pk));
    }

    #[test]
    fn backlog_is_drained_oldest_first() {
        let (mut dev, session) = device(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = scenario();
        for k in 0..4u64 {
            let out = dev.sense_cycle(k * 10_000, &s, &mut rng).unwrap();
            assert_eq!(out.carried.len(), k as usize + 1);
        }
        // three unacknowledged cycles, then the fourth message carries 4
        let out = dev.sense_cycle(40_000, &s, &mut rng).unwrap();
        let ts: Vec<u64> = open_payload(&out, &session).iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 10_000, 20_000, 30_000, 40_000]);
        assert!(dev.handle_ack(out.upload.id()));
        assert_eq!(dev.queue_len(), 0);
        assert!(!dev.handle_ack(out.upload.id()));
    }

    #[test]
    fn exactly_three_lost_then_recovered() {
        let (mut dev, session) = device(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = scenario();
        let first = dev.sense_cycle(0, &s, &mut rng).unwrap();
        dev.handle_ack(first.upload.id());
        for k in 1..=3u64 {
            dev.sense_cycle(k * 10_000, &s, &mut rng).unwrap();
        }
        let out = dev.sense_cycle(40_000, &s, &mut rng).unwrap();
        assert_eq!(out.requeued, vec![10_000, 20_000, 30_000]);
        assert_eq!(open_payload(&out, &session).len(), 4);
    }

    #[test]
    fn timeout_requeues_in_order_and_fails_past_max_fd() {
        let (mut dev, _) = device(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = scenario();
        // six consecutive failed sends: the sixth carries 5 backlog + 1 new
        for k in 0..6u64 {
            let out = dev.sense_cycle(k * 10_000, &s, &mut rng).unwrap();
            assert!(dev.queue_len() <= 5);
            assert_eq!(out.carried.len(), k as usize + 1);
        }
        let err = dev.sense_cycle(60_000, &s, &mut rng).unwrap_err();
        assert_eq!(err.to_string(), EXCEED_TOLERANCE);
        assert_eq!(dev.status(), &DeviceStatus::Failed(EXCEED_TOLERANCE.into()));
        let queued: Vec<u64> = dev.backup_queue().map(|r| r.t).collect();
        assert_eq!(queued, (0..6).map(|k| k * 10_000).collect::<Vec<_>>());
        assert!(matches!(dev.sense_cycle(70_000, &s, &mut rng), Err(DeviceError::Failed(_))));
    }

    #[test]
    fn alarm_is_signed_and_independent() {
        let (mut dev, _) = device(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = dev.sense_cycle(500_000, &scenario(), &mut rng).unwrap();
        let alarm = out.alarm.expect("box is open");
        assert_eq!(alarm.messages, vec![ViolationKind::BoxOpened]);
        assert_eq!(alarm.t, out.record.t);
        let body = codec::encode(&alarm.body()).unwrap();
        assert!(verify(&body, alarm.sig.as_bytes(), &dev.keys().tee_pk));
        assert_eq!(out.carried.len(), 1);
    }

    #[test]
    fn nack_requeues_immediately() {
        let (mut dev, _) = device(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = dev.sense_cycle(0, &scenario(), &mut rng).unwrap();
        assert_eq!(dev.handle_nack(out.upload.id()), vec![0]);
        assert_eq!(dev.queue_len(), 1);
        assert_eq!(dev.handle_nack(out.upload.id()), Vec::<u64>::new());
    }

    #[test]
    fn clock_skew_shifts_timestamps() {
        let (mut dev, _) = device(5);
        dev.config.clock_skew_ms = -40;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = dev.sense_cycle(10_000, &scenario(), &mut rng).unwrap();
        assert_eq!(out.record.t, 9_960);
    }
}

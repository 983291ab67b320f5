//! Domain values shared by every module: readings, signed records, patterns,
//! alarms, uploads and the committed digital entity.
//!
//! All of these are plain immutable values. Anything that gets signed or
//! sealed goes through [`crate::codec`] first.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Simulator virtual time in microseconds.
///
/// Device timestamps are whole milliseconds (they are signed), while channel
/// and chain delays need sub-millisecond resolution, so the event clock runs
/// one step finer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn plus_micros(self, us: u64) -> Self {
        SimTime(self.0 + us)
    }

    /// Signed difference `self - earlier` in milliseconds.
    pub fn ms_since(self, earlier: SimTime) -> f64 {
        (self.0 as f64 - earlier.0 as f64) / 1_000.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_ms())
    }
}

/// Opaque device identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Self {
        DeviceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Binary photosensor output: `1` iff ambient brightness exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Light {
    Dark = 0,
    Bright = 1,
}

impl Light {
    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn from_bit(bit: u8) -> Option<Light> {
        match bit {
            0 => Some(Light::Dark),
            1 => Some(Light::Bright),
            _ => None,
        }
    }
}

impl Serialize for Light {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Light {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Light::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("brightness flag must be 0 or 1, got {bit}")))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidValue {
    #[error("{field} must be finite, got {value}")]
    NotFinite { field: &'static str, value: f64 },
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("{0}")]
    Other(String),
}

/// One instant of sensor output `C = (L, K, x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    #[serde(rename = "L")]
    pub light: Light,
    /// Temperature in degrees Celsius.
    #[serde(rename = "K")]
    pub temperature_c: f64,
    /// Latitude, decimal degrees.
    #[serde(rename = "x")]
    pub lat: f64,
    /// Longitude, decimal degrees.
    #[serde(rename = "y")]
    pub lon: f64,
}

impl SensorReading {
    pub fn new(light: Light, temperature_c: f64, lat: f64, lon: f64) -> Result<Self, InvalidValue> {
        let reading = SensorReading { light, temperature_c, lat, lon };
        reading.validate()?;
        Ok(reading)
    }

    pub fn validate(&self) -> Result<(), InvalidValue> {
        for (field, value) in [("K", self.temperature_c), ("x", self.lat), ("y", self.lon)] {
            if !value.is_finite() {
                return Err(InvalidValue::NotFinite { field, value });
            }
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(InvalidValue::OutOfRange { field: "x", value: self.lat });
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(InvalidValue::OutOfRange { field: "y", value: self.lon });
        }
        Ok(())
    }
}

/// Raw signature bytes. Serialized as lowercase hex.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(&text).map(Signature).map_err(serde::de::Error::custom)
    }
}

/// The part of a record covered by its signature: `(t, C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordBody {
    pub t_ms: u64,
    pub reading: SensorReading,
}

/// A signed timed capture `(t, C, π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Device clock at sensing, milliseconds.
    pub t: u64,
    #[serde(flatten)]
    pub reading: SensorReading,
    pub pi: Signature,
}

impl Record {
    pub fn body(&self) -> RecordBody {
        RecordBody { t_ms: self.t, reading: self.reading }
    }
}

/// Legal ranges a reading is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    /// Permitted brightness flags; a sealed box only ever reads dark.
    #[serde(default = "default_permitted_light")]
    pub permitted_light: Vec<Light>,
    pub temperature: TemperatureBand,
    pub checkpoints: Vec<Checkpoint>,
}

fn default_permitted_light() -> Vec<Light> {
    vec![Light::Dark]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureBand {
    pub min_c: f64,
    pub max_c: f64,
}

impl TemperatureBand {
    pub fn contains(&self, k: f64) -> bool {
        k >= self.min_c && k <= self.max_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

impl Pattern {
    pub fn validate(&self) -> Result<(), InvalidValue> {
        if self.permitted_light.is_empty() {
            return Err(InvalidValue::Other("permitted brightness set is empty".into()));
        }
        let band = self.temperature;
        if !band.min_c.is_finite() || !band.max_c.is_finite() || band.min_c > band.max_c {
            return Err(InvalidValue::Other(format!(
                "temperature band [{}, {}] is not a valid interval",
                band.min_c, band.max_c
            )));
        }
        if self.checkpoints.is_empty() {
            return Err(InvalidValue::Other("pattern needs at least one checkpoint".into()));
        }
        for cp in &self.checkpoints {
            if !(cp.radius_m > 0.0 && cp.radius_m.is_finite()) {
                return Err(InvalidValue::OutOfRange { field: "radius_m", value: cp.radius_m });
            }
            if !(-90.0..=90.0).contains(&cp.lat) {
                return Err(InvalidValue::OutOfRange { field: "checkpoint lat", value: cp.lat });
            }
            if !(-180.0..=180.0).contains(&cp.lon) {
                return Err(InvalidValue::OutOfRange { field: "checkpoint lon", value: cp.lon });
            }
        }
        Ok(())
    }
}

/// The kinds of pattern violation a device can raise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    BoxOpened,
    AbnormalTemperature,
    RouteDeviated,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 3] =
        [ViolationKind::BoxOpened, ViolationKind::AbnormalTemperature, ViolationKind::RouteDeviated];

    /// Alarm text as emitted by the device firmware.
    pub fn message(self) -> &'static str {
        match self {
            ViolationKind::BoxOpened => "Box opened",
            ViolationKind::AbnormalTemperature => "Abnormal Temperature",
            ViolationKind::RouteDeviated => "Route Deviated",
        }
    }

    pub fn from_message(text: &str) -> Option<ViolationKind> {
        ViolationKind::ALL.into_iter().find(|k| k.message() == text)
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl Serialize for ViolationKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.message())
    }
}

impl<'de> Deserialize<'de> for ViolationKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        ViolationKind::from_message(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown violation message {text:?}")))
    }
}

/// Signed body of an alarm: timestamp plus the violation messages.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmBody {
    pub t_ms: u64,
    pub messages: Vec<ViolationKind>,
}

/// Plaintext alarm, signed but not sealed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmMessage {
    pub t: u64,
    pub messages: Vec<ViolationKind>,
    pub sig: Signature,
}

impl AlarmMessage {
    pub fn body(&self) -> AlarmBody {
        AlarmBody { t_ms: self.t, messages: self.messages.clone() }
    }
}

/// Plaintext of an upload: the drained backlog `F_d` followed by the new record.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadPayload {
    pub records: Vec<Record>,
}

/// Sealed upload as it travels over the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadMessage {
    pub device_id: DeviceId,
    /// Monotonic per-device message counter; doubles as the message id for ACKs.
    pub counter: u64,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}

impl UploadMessage {
    pub fn id(&self) -> u64 {
        self.counter
    }
}

/// A record as committed on chain, with its block commit time `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedRecord {
    pub record: Record,
    pub commit: SimTime,
    pub depth: u64,
}

/// The chain of committed records describing one device, in ledger order.
///
/// Honest ledgers keep `records` strictly increasing in `t`; a tampered one
/// may not, and the auditor reports that rather than this type rejecting it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalEntity {
    pub device_id: DeviceId,
    pub records: Vec<CommittedRecord>,
    /// Commit time of the newest block (possibly empty) on the ledger this
    /// entity was read from.
    pub head: Option<SimTime>,
}

impl DigitalEntity {
    pub fn new(device_id: DeviceId) -> Self {
        DigitalEntity { device_id, records: Vec::new(), head: None }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_chronological(&self) -> bool {
        self.records.windows(2).all(|w| w[0].record.t < w[1].record.t)
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod hex_bytes_32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|b: Vec<u8>| serde::de::Error::custom(format!("expected 32 bytes, got {}", b.len())))
    }
}

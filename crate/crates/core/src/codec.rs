//! Canonical binary encoding for everything that is signed, sealed or hashed.
//!
//! Every top-level value starts with a one-byte type tag followed by its
//! fields in a fixed order:
//!
//! - integers are big-endian (`u64` for timestamps and counters, `u32` for
//!   lengths and counts)
//! - reals are IEEE-754 binary64, big-endian bit pattern; NaN and infinities
//!   are rejected
//! - the brightness flag is a single byte, `0` or `1`
//! - byte strings and UTF-8 strings are a `u32` length followed by the bytes
//! - lists are a `u32` count followed by the elements (untagged)
//!
//! | tag    | value            | fields                                   |
//! |--------|------------------|------------------------------------------|
//! | `0x01` | `RecordBody`     | t, L, K, x, y                            |
//! | `0x02` | `SensorReading`  | L, K, x, y                               |
//! | `0x03` | `Record`         | t, L, K, x, y, π                         |
//! | `0x04` | `AlarmBody`      | t, [message]                             |
//! | `0x05` | `AlarmMessage`   | t, [message], sig                        |
//! | `0x06` | `UploadPayload`  | [record]                                 |
//! | `0x07` | `UploadMessage`  | device_id, counter, ciphertext           |
//! | `0x08` | `DigitalEntity`  | device_id, [record, T µs, depth], head   |
//! | `0x09` | `Pattern`        | [L], K_min, K_max, [lat, lon, radius]    |
//!
//! `head` is one presence byte followed by a `u64` when present. Decoding
//! requires the exact tag and consumes the whole input.

use thiserror::Error;

use crate::types::{
    AlarmBody, AlarmMessage, Checkpoint, CommittedRecord, DeviceId, DigitalEntity, Light, Pattern,
    Record, RecordBody, SensorReading, Signature, SimTime, TemperatureBand, UploadMessage,
    UploadPayload, ViolationKind,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("field {field} is not finite ({value})")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{what} is too long to encode ({len} bytes)")]
    TooLong { what: &'static str, len: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("input is empty")]
    Empty,
    #[error("tag mismatch: expected {expected:#04x}, got {got:#04x}")]
    TagMismatch { expected: u8, got: u8 },
    #[error("truncated input: needed {need} more bytes at offset {offset}")]
    Truncated { offset: usize, need: usize },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid {field}: {detail}")]
    Invalid { field: &'static str, detail: String },
}

/// A value with a canonical byte representation.
pub trait Canonical: Sized {
    const TAG: u8;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError>;

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError>;
}

/// Encode `value` with its leading tag.
pub fn encode<T: Canonical>(value: &T) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    w.buf.push(T::TAG);
    value.write_fields(&mut w)?;
    Ok(w.buf)
}

/// Decode a tagged value, requiring the whole input to be consumed.
pub fn decode<T: Canonical>(bytes: &[u8]) -> Result<T, DecodeError> {
    let (&tag, rest) = bytes.split_first().ok_or(DecodeError::Empty)?;
    if tag != T::TAG {
        return Err(DecodeError::TagMismatch { expected: T::TAG, got: tag });
    }
    let mut r = Reader { buf: rest, pos: 0, base: 1 };
    let value = T::read_fields(&mut r)?;
    if r.remaining() != 0 {
        return Err(DecodeError::TrailingBytes(r.remaining()));
    }
    Ok(value)
}

/// Associated data bound to every sealed upload: `device_id ‖ counter`.
pub fn upload_aad(device_id: &DeviceId, counter: u64) -> Vec<u8> {
    let mut w = Writer::default();
    // Lengths of ids are tiny; an overflow here would be a programming error.
    w.string(device_id.as_str()).expect("device id length fits u32");
    w.u64(counter);
    w.buf
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn f64(&mut self, field: &'static str, v: f64) -> Result<(), EncodeError> {
        if !v.is_finite() {
            return Err(EncodeError::NonFinite { field, value: v });
        }
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
        Ok(())
    }

    pub fn len_prefix(&mut self, what: &'static str, len: usize) -> Result<(), EncodeError> {
        let len32 = u32::try_from(len).map_err(|_| EncodeError::TooLong { what, len })?;
        self.u32(len32);
        Ok(())
    }

    pub fn bytes(&mut self, what: &'static str, v: &[u8]) -> Result<(), EncodeError> {
        self.len_prefix(what, v.len())?;
        self.buf.extend_from_slice(v);
        Ok(())
    }

    pub fn string(&mut self, v: &str) -> Result<(), EncodeError> {
        self.bytes("string", v.as_bytes())
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                offset: self.base + self.pos,
                need: n - self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self, field: &'static str) -> Result<f64, DecodeError> {
        let v = f64::from_bits(self.u64()?);
        if !v.is_finite() {
            return Err(DecodeError::Invalid { field, detail: format!("non-finite value {v}") });
        }
        Ok(v)
    }

    /// Reads a `u32` count and sanity-checks it against the bytes left, given
    /// a lower bound on the encoded size of one element.
    pub fn count(&mut self, min_elem_size: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem_size) > self.remaining() {
            return Err(DecodeError::Truncated {
                offset: self.base + self.pos,
                need: n * min_elem_size - self.remaining(),
            });
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.count(1)?;
        Ok(self.take(n)?.to_vec())
    }

    pub fn string(&mut self, field: &'static str) -> Result<String, DecodeError> {
        String::from_utf8(self.bytes()?)
            .map_err(|e| DecodeError::Invalid { field, detail: e.to_string() })
    }
}

fn write_reading(w: &mut Writer, c: &SensorReading) -> Result<(), EncodeError> {
    w.u8(c.light.bit());
    w.f64("K", c.temperature_c)?;
    w.f64("x", c.lat)?;
    w.f64("y", c.lon)
}

fn read_reading(r: &mut Reader<'_>) -> Result<SensorReading, DecodeError> {
    let bit = r.u8()?;
    let light = Light::from_bit(bit)
        .ok_or_else(|| DecodeError::Invalid { field: "L", detail: format!("flag {bit}") })?;
    let k = r.f64("K")?;
    let x = r.f64("x")?;
    let y = r.f64("y")?;
    SensorReading::new(light, k, x, y)
        .map_err(|e| DecodeError::Invalid { field: "reading", detail: e.to_string() })
}

fn write_record(w: &mut Writer, rec: &Record) -> Result<(), EncodeError> {
    w.u64(rec.t);
    write_reading(w, &rec.reading)?;
    w.bytes("signature", rec.pi.as_bytes())
}

fn read_record(r: &mut Reader<'_>) -> Result<Record, DecodeError> {
    let t = r.u64()?;
    let reading = read_reading(r)?;
    let pi = Signature(r.bytes()?);
    Ok(Record { t, reading, pi })
}

fn write_messages(w: &mut Writer, messages: &[ViolationKind]) -> Result<(), EncodeError> {
    w.len_prefix("messages", messages.len())?;
    for m in messages {
        w.string(m.message())?;
    }
    Ok(())
}

fn read_messages(r: &mut Reader<'_>) -> Result<Vec<ViolationKind>, DecodeError> {
    let n = r.count(4)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let text = r.string("message")?;
        let kind = ViolationKind::from_message(&text)
            .ok_or_else(|| DecodeError::Invalid { field: "message", detail: text })?;
        out.push(kind);
    }
    if out.is_empty() {
        return Err(DecodeError::Invalid { field: "messages", detail: "empty alarm".into() });
    }
    Ok(out)
}

const READING_LEN: usize = 1 + 8 * 3;
const RECORD_MIN_LEN: usize = 8 + READING_LEN + 4;

impl Canonical for RecordBody {
    const TAG: u8 = 0x01;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u64(self.t_ms);
        write_reading(w, &self.reading)
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t_ms = r.u64()?;
        let reading = read_reading(r)?;
        Ok(RecordBody { t_ms, reading })
    }
}

impl Canonical for SensorReading {
    const TAG: u8 = 0x02;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        write_reading(w, self)
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        read_reading(r)
    }
}

impl Canonical for Record {
    const TAG: u8 = 0x03;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        write_record(w, self)
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        read_record(r)
    }
}

impl Canonical for AlarmBody {
    const TAG: u8 = 0x04;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u64(self.t_ms);
        write_messages(w, &self.messages)
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t_ms = r.u64()?;
        let messages = read_messages(r)?;
        Ok(AlarmBody { t_ms, messages })
    }
}

impl Canonical for AlarmMessage {
    const TAG: u8 = 0x05;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u64(self.t);
        write_messages(w, &self.messages)?;
        w.bytes("signature", self.sig.as_bytes())
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t = r.u64()?;
        let messages = read_messages(r)?;
        let sig = Signature(r.bytes()?);
        Ok(AlarmMessage { t, messages, sig })
    }
}

impl Canonical for UploadPayload {
    const TAG: u8 = 0x06;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.len_prefix("records", self.records.len())?;
        for rec in &self.records {
            write_record(w, rec)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.count(RECORD_MIN_LEN)?;
        let records = (0..n).map(|_| read_record(r)).collect::<Result<Vec<_>, _>>()?;
        Ok(UploadPayload { records })
    }
}

impl Canonical for UploadMessage {
    const TAG: u8 = 0x07;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.string(self.device_id.as_str())?;
        w.u64(self.counter);
        w.bytes("ciphertext", &self.ciphertext)
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let device_id = DeviceId::new(r.string("device_id")?);
        let counter = r.u64()?;
        let ciphertext = r.bytes()?;
        Ok(UploadMessage { device_id, counter, ciphertext })
    }
}

impl Canonical for DigitalEntity {
    const TAG: u8 = 0x08;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.string(self.device_id.as_str())?;
        w.len_prefix("records", self.records.len())?;
        for c in &self.records {
            write_record(w, &c.record)?;
            w.u64(c.commit.micros());
            w.u64(c.depth);
        }
        match self.head {
            Some(h) => {
                w.u8(1);
                w.u64(h.micros());
            }
            None => w.u8(0),
        }
        Ok(())
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let device_id = DeviceId::new(r.string("device_id")?);
        let n = r.count(RECORD_MIN_LEN + 16)?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let record = read_record(r)?;
            let commit = SimTime(r.u64()?);
            let depth = r.u64()?;
            records.push(CommittedRecord { record, commit, depth });
        }
        let head = match r.u8()? {
            0 => None,
            1 => Some(SimTime(r.u64()?)),
            other => {
                return Err(DecodeError::Invalid { field: "head", detail: format!("flag {other}") })
            }
        };
        Ok(DigitalEntity { device_id, records, head })
    }
}

impl Canonical for Pattern {
    const TAG: u8 = 0x09;

    fn write_fields(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.len_prefix("permitted_light", self.permitted_light.len())?;
        for l in &self.permitted_light {
            w.u8(l.bit());
        }
        w.f64("K_min", self.temperature.min_c)?;
        w.f64("K_max", self.temperature.max_c)?;
        w.len_prefix("checkpoints", self.checkpoints.len())?;
        for cp in &self.checkpoints {
            w.f64("X", cp.lat)?;
            w.f64("Y", cp.lon)?;
            w.f64("r", cp.radius_m)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.count(1)?;
        let mut permitted_light = Vec::with_capacity(n);
        for _ in 0..n {
            let bit = r.u8()?;
            permitted_light.push(Light::from_bit(bit).ok_or_else(|| DecodeError::Invalid {
                field: "permitted_light",
                detail: format!("flag {bit}"),
            })?);
        }
        let min_c = r.f64("K_min")?;
        let max_c = r.f64("K_max")?;
        let m = r.count(24)?;
        let mut checkpoints = Vec::with_capacity(m);
        for _ in 0..m {
            checkpoints.push(Checkpoint { lat: r.f64("X")?, lon: r.f64("Y")?, radius_m: r.f64("r")? });
        }
        let pattern = Pattern {
            permitted_light,
            temperature: TemperatureBand { min_c, max_c },
            checkpoints,
        };
        pattern
            .validate()
            .map_err(|e| DecodeError::Invalid { field: "pattern", detail: e.to_string() })?;
        Ok(pattern)
    }
}

//! Deterministic discrete-event engine tying the environment, device,
//! channel and chain together on one virtual clock.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{AgentResponse, Chain, ChainParams, TxPayload};
use crate::crypto::{self, keygen, AgentKeys, DevicePublicKey, SessionKey};
use crate::device::{DeviceConfig, DeviceError, DeviceState};
use crate::environment::{Scenario, ScenarioError};
use crate::network::{Channel, ChannelConfig, Direction, DropReason, Transmission};
use crate::types::{AlarmMessage, SimTime, UploadMessage};
use crate::verifier::{RecordLifecycle, TimingParams};

pub mod schedules;
mod trace;

pub use trace::{Trace, TraceError, TraceEvent, TraceFooter, TraceHeader, TraceLine};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Everything about a run except the physical scenario and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub device: DeviceConfig,
    pub chain: ChainParams,
    #[serde(default)]
    pub channel: ChannelConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let d = &self.device;
        if d.delta_t_ms == 0 {
            return bad("device.delta_t_ms must be positive".into());
        }
        d.eps1.validate().map_err(|e| ConfigError::Invalid(format!("device.eps1: {e}")))?;
        d.pattern.validate().map_err(|e| ConfigError::Invalid(format!("device.pattern: {e}")))?;
        if (d.t0_ms as i64) + d.clock_skew_ms < 0 {
            return bad("device clock would start before zero (t0_ms + clock_skew_ms < 0)".into());
        }
        if let Some(theta) = d.theta {
            if !(theta.is_finite() && theta > 0.0) {
                return bad(format!("device.theta {theta} must be positive"));
            }
        }
        self.chain.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.channel.validate().map_err(|e| ConfigError::Invalid(format!("channel: {e}")))?;
        let round_trip = d.eps1.max_ms() + 2.0 * self.channel.eps2.max_ms();
        if d.delta_t_ms as f64 <= round_trip {
            return bad(format!(
                "Δt = {} ms must exceed ε₁ + 2·ε₂ = {round_trip} ms so an ACK can return within one interval",
                d.delta_t_ms
            ));
        }
        Ok(())
    }

    /// Audit parameters implied by this configuration.
    pub fn timing_params(&self) -> TimingParams {
        TimingParams {
            eps1_max_ms: self.device.eps1.max_ms(),
            eps2_max_ms: self.channel.eps2.max_ms(),
            eps_s_abs_ms: self.device.clock_skew_ms.unsigned_abs() as f64,
            delta_gst_max_ms: self.chain.delta_gst_max_ms(),
            l_ms: self.chain.l_ms,
            delta_t_ms: self.device.delta_t_ms,
            max_fd: self.device.max_fd,
            delta_override_ms: None,
            delta_hat_override_ms: None,
        }
    }
}

/// Independent random substreams derived from the run seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Device = 1,
    Channel = 2,
    Chain = 3,
    Kdf = 4,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn derive_seed(domain: &str, seed: u64, extra: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update(seed.to_be_bytes());
    h.update(extra.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone)]
enum EventKind {
    Gst,
    Bct,
    Delivery { upload: UploadMessage, send: SimTime, carried: Vec<u64> },
    AlarmDelivery { alarm: AlarmMessage },
    AckDelivery { msg_id: u64 },
    SenseTick { k: u64 },
}

impl EventKind {
    /// Order among events at the same instant.
    fn priority(&self) -> u8 {
        match self {
            EventKind::Gst => 0,
            EventKind::Bct => 1,
            EventKind::Delivery { .. } => 2,
            EventKind::AlarmDelivery { .. } => 3,
            EventKind::AckDelivery { .. } => 4,
            EventKind::SenseTick { .. } => 5,
        }
    }
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.time, self.kind.priority(), self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

/// One simulation run. Build with [`Simulation::new`], drive with [`Simulation::run`].
pub struct Simulation {
    seed: u64,
    scenario: Scenario,
    config: RunConfig,
    device: DeviceState,
    device_pk: DevicePublicKey,
    session: SessionKey,
    chain: Chain,
    channel: Channel,
    device_rng: ChaCha20Rng,
    channel_rng: ChaCha20Rng,
    chain_rng: ChaCha20Rng,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    in_transit: usize,
    events: Vec<TraceEvent>,
    lifecycles: BTreeMap<u64, RecordLifecycle>,
    nonces: BTreeSet<[u8; 12]>,
    alarms_sent: usize,
}

impl Simulation {
    pub fn new(scenario: Scenario, config: RunConfig, seed: u64) -> Result<Self, ConfigError> {
        scenario.validate()?;
        config.validate()?;
        let keys = keygen(derive_seed("trustbridge/device-key/v1", seed, config.device.id.as_str()));
        let agent = AgentKeys::from_seed(derive_seed("trustbridge/agent-key/v1", seed, ""), "agent-0");
        let mut kdf_rng = stream_rng(seed, Stream::Kdf);
        let dist = crypto::kdf(&keys, &agent.identity, &mut kdf_rng);
        let device_pk = keys.tee_pk;
        assert!(crypto::verify(&dist.distribution, dist.signature.as_bytes(), &device_pk));
        let session = agent.unwrap_session(&dist.distribution).expect("agent unwraps its own distribution");
        assert_eq!(session, dist.session, "device and agent must agree on the session key");

        let device = DeviceState::new(config.device.clone(), keys, dist.session);
        let chain = Chain::new(config.chain.clone());
        let channel = Channel::new(config.channel.clone());
        Ok(Simulation {
            seed,
            scenario,
            device,
            device_pk,
            session,
            chain,
            channel,
            device_rng: stream_rng(seed, Stream::Device),
            channel_rng: stream_rng(seed, Stream::Channel),
            chain_rng: stream_rng(seed, Stream::Chain),
            queue: BinaryHeap::new(),
            next_seq: 0,
            in_transit: 0,
            events: Vec::new(),
            lifecycles: BTreeMap::new(),
            nonces: BTreeSet::new(),
            alarms_sent: 0,
            config,
        })
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        self.queue.push(Event { time, seq: self.next_seq, kind });
        self.next_seq += 1;
    }

    fn tick_time(&self, k: u64) -> Option<SimTime> {
        let ms = self.config.device.t0_ms + k * self.config.device.delta_t_ms;
        (ms < self.scenario.duration_ms).then(|| SimTime::from_ms(ms))
    }

    /// Keep producing blocks while sensing continues or work is outstanding.
    fn chain_busy(&self, now: SimTime) -> bool {
        now.micros() < self.scenario.duration_ms * 1_000 || self.in_transit > 0 || self.chain.pool_len() > 0
    }

    pub fn run(mut self) -> Trace {
        if let Some(t) = self.tick_time(0) {
            self.schedule(t, EventKind::SenseTick { k: 0 });
        }
        let first = self.chain.next_gst(&mut self.chain_rng);
        self.schedule(first, EventKind::Gst);

        while let Some(ev) = self.queue.pop() {
            let now = ev.time;
            match ev.kind {
                EventKind::Gst => self.on_gst(now),
                EventKind::Bct => self.on_bct(now),
                EventKind::Delivery { upload, send, carried } => self.on_delivery(now, upload, send, carried),
                EventKind::AlarmDelivery { alarm } => self.on_alarm(now, alarm),
                EventKind::AckDelivery { msg_id } => {
                    let matched = self.device.handle_ack(msg_id);
                    self.events.push(TraceEvent::AckDelivery { time_us: now.micros(), msg_id, matched });
                }
                EventKind::SenseTick { k } => {
                    if !self.on_tick(now, k) {
                        break;
                    }
                }
            }
            assert!(self.device.queue_len() <= self.config.device.max_fd, "backup queue exceeded max_fd");
        }
        self.finish()
    }

    fn on_gst(&mut self, now: SimTime) {
        let block = self.chain.produce_block(now, &mut self.chain_rng);
        self.events.push(TraceEvent::Gst {
            time_us: now.micros(),
            depth: block.depth,
            transactions: block.transactions.len(),
            bct_us: block.bct.micros(),
        });
        self.schedule(block.bct, EventKind::Bct);
        if self.chain_busy(now) {
            let next = self.chain.next_gst(&mut self.chain_rng);
            self.schedule(next, EventKind::Gst);
        }
    }

    fn on_bct(&mut self, now: SimTime) {
        for block in self.chain.commit_pending(now) {
            for tx in &block.transactions {
                if let TxPayload::Record(r) = &tx.payload {
                    if let Some(lc) = self.lifecycles.get_mut(&r.t) {
                        lc.commit = Some(block.bct);
                    }
                }
            }
            self.events.push(TraceEvent::Bct { time_us: now.micros(), block });
        }
    }

    fn on_delivery(&mut self, now: SimTime, upload: UploadMessage, send: SimTime, carried: Vec<u64>) {
        self.in_transit -= 1;
        let response = self.chain.agent_receive(&upload, now, &self.session, &self.device_pk);
        if let AgentResponse::Ack { fresh, .. } = &response {
            let newest = carried.last().copied();
            for t in fresh {
                if let Some(lc) = self.lifecycles.get_mut(t) {
                    lc.send = Some(send);
                    lc.arrival = Some(now);
                    lc.recovered = Some(*t) != newest;
                }
            }
        }
        self.events.push(TraceEvent::Delivery { time_us: now.micros(), msg_id: upload.id(), response: response.clone() });
        if let AgentResponse::Ack { msg_id, .. } = response {
            let outcome = self.channel.transmit(Direction::Downlink, now, &mut self.channel_rng);
            self.events.push(TraceEvent::AckSend { time_us: now.micros(), msg_id, outcome: outcome.into() });
            if let Transmission::Delivered { arrival } = outcome {
                self.schedule(arrival, EventKind::AckDelivery { msg_id });
            }
        }
    }

    fn on_alarm(&mut self, now: SimTime, alarm: AlarmMessage) {
        self.in_transit -= 1;
        let id = self.config.device.id.clone();
        let accepted = self.chain.agent_receive_alarm(&id, &alarm, now, &self.device_pk).unwrap_or(false);
        self.events.push(TraceEvent::AlarmDelivery { time_us: now.micros(), t: alarm.t, accepted });
    }

    /// Returns false when the device has failed and the run must stop.
    fn on_tick(&mut self, now: SimTime, k: u64) -> bool {
        let now_ms = now.micros() / 1_000;
        let out = match self.device.sense_cycle(now_ms, &self.scenario, &mut self.device_rng) {
            Ok(out) => out,
            Err(DeviceError::Failed(reason)) => {
                self.events.push(TraceEvent::DeviceFailed { time_us: now.micros(), reason });
                return false;
            }
            Err(e) => panic!("sensing failed inside a validated scenario: {e}"),
        };
        let nonce = crypto::sealed_nonce(&out.upload.ciphertext).expect("sealed uploads carry a nonce");
        assert!(self.nonces.insert(nonce), "nonce reused under one session key");

        self.lifecycles.insert(
            out.record.t,
            RecordLifecycle { t: out.record.t, sense: now, send: None, arrival: None, commit: None, recovered: false },
        );
        let send = now.plus_micros(out.processing_us);
        let carried: Vec<u64> = out.carried.iter().map(|r| r.t).collect();
        self.events.push(TraceEvent::SenseTick {
            time_us: now.micros(),
            t: out.record.t,
            reading: out.record.reading,
            requeued: out.requeued.clone(),
            violations: out.violations.iter().map(|v| v.kind).collect(),
        });

        let outcome = self.channel.transmit(Direction::Uplink, send, &mut self.channel_rng);
        self.events.push(TraceEvent::Send {
            time_us: send.micros(),
            msg_id: out.upload.id(),
            carried: carried.clone(),
            outcome: outcome.into(),
        });
        if let Transmission::Delivered { arrival } = outcome {
            self.in_transit += 1;
            self.schedule(arrival, EventKind::Delivery { upload: out.upload, send, carried });
        }

        if let Some(alarm) = out.alarm {
            self.alarms_sent += 1;
            let outcome = self.channel.transmit(Direction::Uplink, send, &mut self.channel_rng);
            self.events.push(TraceEvent::AlarmSend {
                time_us: send.micros(),
                t: alarm.t,
                messages: alarm.messages.clone(),
                outcome: outcome.into(),
            });
            if let Transmission::Delivered { arrival } = outcome {
                self.in_transit += 1;
                self.schedule(arrival, EventKind::AlarmDelivery { alarm });
            }
        }

        if let Some(next) = self.tick_time(k + 1) {
            self.schedule(next, EventKind::SenseTick { k: k + 1 });
        }
        true
    }

    fn finish(self) -> Trace {
        let id = self.config.device.id.clone();
        let entity = self.chain.query_entity(&id);
        let alarms = self.chain.query_alarms(&id);
        let lifecycles: Vec<RecordLifecycle> = self.lifecycles.into_values().collect();
        let recovered = lifecycles.iter().filter(|lc| lc.recovered && lc.commit.is_some()).count();
        let footer = TraceFooter {
            status: self.device.status().clone(),
            sensed: lifecycles.len(),
            committed: entity.len(),
            recovered,
            alarms_sent: self.alarms_sent,
            alarms_committed: alarms.len(),
            head_us: entity.head.map(|h| h.micros()),
        };
        let header = TraceHeader {
            seed: self.seed,
            device_id: id,
            device_pk: self.device_pk,
            session_fingerprint: hex::encode(self.session.fingerprint()),
            config: self.config,
            scenario: self.scenario,
        };
        Trace { header, events: self.events, lifecycles, footer }
    }
}

/// Convenience wrapper: validate, run and return the trace.
pub fn run(scenario: &Scenario, config: &RunConfig, seed: u64) -> Result<Trace, ConfigError> {
    Ok(Simulation::new(scenario.clone(), config.clone(), seed)?.run())
}

/// Channel outcome as recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Delivered { arrival_us: u64 },
    Jammed,
    Lost,
}

impl From<Transmission> for Outcome {
    fn from(t: Transmission) -> Self {
        match t {
            Transmission::Delivered { arrival } => Outcome::Delivered { arrival_us: arrival.micros() },
            Transmission::Dropped { reason: DropReason::Jammed } => Outcome::Jammed,
            Transmission::Dropped { reason: DropReason::Lost } => Outcome::Lost,
        }
    }
}

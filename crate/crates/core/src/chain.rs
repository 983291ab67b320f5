//! Partially-synchronous blockchain: transaction pool, GST schedule, block
//! production lasting l₁ ≤ L, commit to every correct node, and the agent
//! front end that opens, verifies and acknowledges uploads.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, upload_aad};
use crate::crypto::{self, DevicePublicKey, SessionKey};
use crate::sampler::{DelaySource, Sampler};
use crate::types::{
    AlarmMessage, CommittedRecord, DeviceId, DigitalEntity, Record, SimTime, UploadMessage, UploadPayload,
    ViolationKind,
};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid chain parameters: {0}")]
pub struct ChainParamsError(pub String);

/// Spacing between consecutive GSTs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GstMode {
    Constant { delta_ms: f64 },
    /// Random spacing with a known finite upper bound.
    BoundedRandom { bound_ms: f64, sampler: Sampler },
}

impl GstMode {
    pub fn max_ms(&self) -> f64 {
        match self {
            GstMode::Constant { delta_ms } => *delta_ms,
            GstMode::BoundedRandom { bound_ms, .. } => *bound_ms,
        }
    }

    pub fn min_ms(&self) -> f64 {
        match self {
            GstMode::Constant { delta_ms } => *delta_ms,
            GstMode::BoundedRandom { sampler, .. } => sampler.min_ms(),
        }
    }

    fn source(&self) -> DelaySource {
        match self {
            GstMode::Constant { delta_ms } => Sampler::constant(*delta_ms).source(),
            GstMode::BoundedRandom { sampler, .. } => sampler.source(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Node count.
    pub n: usize,
    /// Byzantine node count; the last `f` nodes are faulty.
    pub f: usize,
    pub gst: GstMode,
    /// Length L of each synchronized period.
    pub l_ms: f64,
    /// Block production time l₁; defaults to uniform over (0, L].
    #[serde(default)]
    pub l1: Option<Sampler>,
}

impl ChainParams {
    pub fn l1_sampler(&self) -> Sampler {
        self.l1.clone().unwrap_or(Sampler::uniform(0.001, self.l_ms))
    }

    pub fn delta_gst_max_ms(&self) -> f64 {
        self.gst.max_ms()
    }

    pub fn validate(&self) -> Result<(), ChainParamsError> {
        let bad = |m: String| Err(ChainParamsError(m));
        if self.n == 0 || 3 * self.f >= self.n {
            return bad(format!("need n > 3f, got n = {}, f = {}", self.n, self.f));
        }
        if let GstMode::BoundedRandom { sampler, .. } = &self.gst {
            sampler.validate().map_err(|e| ChainParamsError(e.to_string()))?;
        }
        if !(self.gst.min_ms() > 0.0) {
            return bad("ΔGST must be positive".into());
        }
        if let GstMode::BoundedRandom { bound_ms, sampler } = &self.gst {
            if sampler.max_ms() > *bound_ms {
                return bad(format!("ΔGST sampler exceeds its bound {bound_ms} ms"));
            }
        }
        if !(self.l_ms > 0.0 && self.l_ms.is_finite()) {
            return bad("L must be positive".into());
        }
        if self.l_ms > self.gst.min_ms() {
            return bad(format!(
                "L = {} ms exceeds the smallest ΔGST {} ms; block production would overlap",
                self.l_ms,
                self.gst.min_ms()
            ));
        }
        let l1 = self.l1_sampler();
        l1.validate().map_err(|e| ChainParamsError(e.to_string()))?;
        if crate::sampler::ms_to_us(l1.min_ms()) == 0 || l1.max_ms() > self.l_ms {
            return bad(format!("l₁ must lie in (0, {}] ms", self.l_ms));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxPayload {
    Record(Record),
    Alarm(AlarmMessage),
}

/// A pooled transaction stamped with its arrival at the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub device_id: DeviceId,
    pub arrival: SimTime,
    /// The record first reached the agent as part of a resent backlog.
    #[serde(default)]
    pub via_backlog: bool,
    pub payload: TxPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub depth: u64,
    pub gst: SimTime,
    /// Block commit time, `gst + l₁`.
    pub bct: SimTime,
    pub transactions: Vec<Transaction>,
}

/// Per-node block lists. Correct nodes hold identical lists; faulty nodes
/// present forged views.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    nodes: Vec<Vec<Block>>,
    f: usize,
}

impl Ledger {
    pub fn new(n: usize, f: usize) -> Self {
        Ledger { nodes: vec![Vec::new(); n], f }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_byzantine(&self, node: usize) -> bool {
        node >= self.nodes.len() - self.f
    }

    fn append(&mut self, block: &Block) {
        let n = self.nodes.len();
        for (i, view) in self.nodes.iter_mut().enumerate() {
            if i >= n - self.f {
                view.push(forge(block, i));
            } else {
                view.push(block.clone());
            }
        }
    }

    pub fn view(&self, node: usize) -> &[Block] {
        &self.nodes[node]
    }

    /// The view held by at least `n − f` nodes.
    pub fn quorum_view(&self) -> Option<&[Block]> {
        let need = self.nodes.len() - self.f;
        self.nodes
            .iter()
            .find(|v| self.nodes.iter().filter(|w| w == v).count() >= need)
            .map(|v| v.as_slice())
    }

    pub fn correct_views_agree(&self) -> bool {
        let correct = &self.nodes[..self.nodes.len() - self.f];
        correct.windows(2).all(|w| w[0] == w[1])
    }
}

/// A faulty node's view of a block: every reading is shifted so the
/// signatures no longer match.
fn forge(block: &Block, node: usize) -> Block {
    let mut fake = block.clone();
    for tx in &mut fake.transactions {
        if let TxPayload::Record(r) = &mut tx.payload {
            r.reading.temperature_c += 5.0 + node as f64;
        }
    }
    fake
}

/// Build a device's digital entity from an ordered list of blocks.
pub fn entity_from_blocks(blocks: &[Block], device_id: &DeviceId) -> DigitalEntity {
    let mut entity = DigitalEntity::new(device_id.clone());
    for block in blocks {
        for tx in &block.transactions {
            if &tx.device_id != device_id {
                continue;
            }
            if let TxPayload::Record(r) = &tx.payload {
                entity.records.push(CommittedRecord { record: r.clone(), commit: block.bct, depth: block.depth });
            }
        }
    }
    entity.head = blocks.last().map(|b| b.bct);
    entity
}

/// Committed alarms of one device with their commit times.
pub fn alarms_from_blocks(blocks: &[Block], device_id: &DeviceId) -> Vec<(AlarmMessage, SimTime)> {
    blocks
        .iter()
        .flat_map(|b| b.transactions.iter().map(move |tx| (tx, b.bct)))
        .filter(|(tx, _)| &tx.device_id == device_id)
        .filter_map(|(tx, bct)| match &tx.payload {
            TxPayload::Alarm(a) => Some((a.clone(), bct)),
            TxPayload::Record(_) => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "response", rename_all = "snake_case")]
pub enum AgentResponse {
    /// Timestamps of the records pooled for the first time.
    Ack { msg_id: u64, fresh: Vec<u64>, duplicates: usize },
    Reject { msg_id: u64, reason: String },
}

impl AgentResponse {
    pub fn is_ack(&self) -> bool {
        matches!(self, AgentResponse::Ack { .. })
    }
}

#[derive(Debug)]
pub struct Chain {
    params: ChainParams,
    gst_src: DelaySource,
    l1_src: DelaySource,
    last_gst: SimTime,
    next_depth: u64,
    pool: Vec<Transaction>,
    pending: VecDeque<Block>,
    ledger: Ledger,
    seen_records: BTreeSet<(DeviceId, u64)>,
    seen_alarms: BTreeSet<(DeviceId, u64)>,
}

impl Chain {
    pub fn new(params: ChainParams) -> Self {
        let gst_src = params.gst.source();
        let l1_src = params.l1_sampler().source();
        let ledger = Ledger::new(params.n, params.f);
        Chain {
            params,
            gst_src,
            l1_src,
            last_gst: SimTime::ZERO,
            next_depth: 0,
            pool: Vec::new(),
            pending: VecDeque::new(),
            ledger,
            seen_records: BTreeSet::new(),
            seen_alarms: BTreeSet::new(),
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn has_pending_work(&self) -> bool {
        !self.pool.is_empty() || !self.pending.is_empty()
    }

    /// Open, verify and pool an upload. Nothing is pooled unless the whole
    /// message checks out.
    pub fn agent_receive(
        &mut self,
        upload: &UploadMessage,
        arrival: SimTime,
        session: &SessionKey,
        device_pk: &DevicePublicKey,
    ) -> AgentResponse {
        let msg_id = upload.id();
        let reject = |reason: String| AgentResponse::Reject { msg_id, reason };
        let aad = upload_aad(&upload.device_id, upload.counter);
        let plain = match crypto::open(&upload.ciphertext, session, &aad) {
            Ok(p) => p,
            Err(e) => return reject(e.to_string()),
        };
        let records = match codec::decode::<UploadPayload>(&plain) {
            Ok(p) => p.records,
            Err(e) => return reject(e.to_string()),
        };
        if records.is_empty() {
            return reject("upload carries no records".into());
        }
        for (i, r) in records.iter().enumerate() {
            let Ok(body) = codec::encode(&r.body()) else {
                return reject(format!("record {i} cannot be encoded"));
            };
            if !crypto::verify(&body, r.pi.as_bytes(), device_pk) {
                return reject(format!("record {i} has a bad signature"));
            }
        }
        if records.windows(2).any(|w| w[0].t >= w[1].t) {
            return reject("records are not in increasing time order".into());
        }
        let last = records.len() - 1;
        let (mut fresh, mut duplicates) = (Vec::new(), 0);
        for (i, r) in records.into_iter().enumerate() {
            if !self.seen_records.insert((upload.device_id.clone(), r.t)) {
                duplicates += 1;
                continue;
            }
            fresh.push(r.t);
            self.pool.push(Transaction {
                device_id: upload.device_id.clone(),
                arrival,
                via_backlog: i < last,
                payload: TxPayload::Record(r),
            });
        }
        AgentResponse::Ack { msg_id, fresh, duplicates }
    }

    /// Verify and pool a plaintext alarm.
    pub fn agent_receive_alarm(
        &mut self,
        device_id: &DeviceId,
        alarm: &AlarmMessage,
        arrival: SimTime,
        device_pk: &DevicePublicKey,
    ) -> Result<bool, String> {
        let body = codec::encode(&alarm.body()).map_err(|e| e.to_string())?;
        if !crypto::verify(&body, alarm.sig.as_bytes(), device_pk) {
            return Err("alarm has a bad signature".into());
        }
        if !self.seen_alarms.insert((device_id.clone(), alarm.t)) {
            return Ok(false);
        }
        self.pool.push(Transaction {
            device_id: device_id.clone(),
            arrival,
            via_backlog: false,
            payload: TxPayload::Alarm(alarm.clone()),
        });
        Ok(true)
    }

    /// Schedule the next GST after the previous one.
    pub fn next_gst<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SimTime {
        self.last_gst = self.last_gst.plus_micros(self.gst_src.sample_us(rng));
        self.last_gst
    }

    /// Start producing a block at `gst` from every pooled transaction that
    /// arrived strictly before it. The block stays pending until its BCT.
    pub fn produce_block<R: Rng + ?Sized>(&mut self, gst: SimTime, rng: &mut R) -> Block {
        let (take, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pool).into_iter().partition(|tx| tx.arrival < gst);
        self.pool = keep;
        let l1 = self.l1_src.sample_us(rng).max(1);
        let block = Block { depth: self.next_depth, gst, bct: gst.plus_micros(l1), transactions: take };
        self.next_depth += 1;
        self.pending.push_back(block.clone());
        block
    }

    /// Append every pending block whose BCT has been reached to all nodes.
    pub fn commit_pending(&mut self, now: SimTime) -> Vec<Block> {
        let mut done = Vec::new();
        while self.pending.front().is_some_and(|b| b.bct <= now) {
            let block = self.pending.pop_front().expect("checked above");
            self.ledger.append(&block);
            done.push(block);
        }
        done
    }

    /// The device's entity as seen by the correct-node quorum.
    pub fn query_entity(&self, device_id: &DeviceId) -> DigitalEntity {
        let view = self.ledger.quorum_view().unwrap_or(&[]);
        entity_from_blocks(view, device_id)
    }

    /// The device's entity as seen by a single node.
    pub fn query_node(&self, node: usize, device_id: &DeviceId) -> DigitalEntity {
        entity_from_blocks(self.ledger.view(node), device_id)
    }

    pub fn query_alarms(&self, device_id: &DeviceId) -> Vec<(AlarmMessage, SimTime)> {
        alarms_from_blocks(self.ledger.quorum_view().unwrap_or(&[]), device_id)
    }

    pub fn correct_views_agree(&self) -> bool {
        self.ledger.correct_views_agree()
    }
}

/// One line of the ledger export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub depth: u64,
    pub gst_us: u64,
    pub bct_us: u64,
    pub device_id: DeviceId,
    pub arrival_us: u64,
    #[serde(flatten)]
    pub payload: LedgerPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerPayload {
    Record(Record),
    Alarm(AlarmMessage),
}

pub fn ledger_lines(blocks: &[Block]) -> Vec<LedgerLine> {
    let mut out = Vec::new();
    for b in blocks {
        for tx in &b.transactions {
            out.push(LedgerLine {
                depth: b.depth,
                gst_us: b.gst.micros(),
                bct_us: b.bct.micros(),
                device_id: tx.device_id.clone(),
                arrival_us: tx.arrival.micros(),
                payload: match &tx.payload {
                    TxPayload::Record(r) => LedgerPayload::Record(r.clone()),
                    TxPayload::Alarm(a) => LedgerPayload::Alarm(a.clone()),
                },
            });
        }
    }
    out
}

/// JSON-lines ledger export, one committed transaction per line.
pub fn export_ledger(blocks: &[Block]) -> String {
    let mut s = String::new();
    for line in ledger_lines(blocks) {
        s.push_str(&serde_json::to_string(&line).expect("ledger lines always serialize"));
        s.push('\n');
    }
    s
}

/// Parse a ledger export. Blank lines are skipped.
pub fn parse_ledger(text: &str) -> Result<Vec<LedgerLine>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Rebuild a device's entity from ledger lines. Empty blocks are not
/// exported, so the head is the last exported commit.
pub fn entity_from_ledger(lines: &[LedgerLine], device_id: &DeviceId) -> DigitalEntity {
    let mut entity = DigitalEntity::new(device_id.clone());
    for line in lines.iter().filter(|l| &l.device_id == device_id) {
        if let LedgerPayload::Record(r) = &line.payload {
            entity.records.push(CommittedRecord { record: r.clone(), commit: SimTime(line.bct_us), depth: line.depth });
        }
    }
    entity.head = lines.iter().map(|l| SimTime(l.bct_us)).max();
    entity
}

/// Alarm kinds committed for a device, in commit order.
pub fn alarm_kinds(alarms: &[(AlarmMessage, SimTime)]) -> Vec<ViolationKind> {
    alarms.iter().flat_map(|(a, _)| a.messages.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, seal, sign, DeviceKeys, NonceSequence};
    use crate::types::{Light, RecordBody, SensorReading};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ChainParams {
        ChainParams { n: 4, f: 1, gst: GstMode::Constant { delta_ms: 5000.0 }, l_ms: 2000.0, l1: None }
    }

    fn record(keys: &DeviceKeys, t: u64) -> Record {
        let reading = SensorReading::new(Light::Dark, 14.0, 36.1, 120.4).unwrap();
        let pi = sign(&codec::encode(&RecordBody { t_ms: t, reading }).unwrap(), &keys.tee_sk);
        Record { t, reading, pi }
    }

    struct Rig {
        keys: DeviceKeys,
        session: SessionKey,
        nonces: NonceSequence,
        counter: u64,
        id: DeviceId,
    }

    impl Rig {
        fn new() -> Self {
            Rig {
                keys: keygen([4; 32]),
                session: SessionKey::from_bytes([9; 32]),
                nonces: NonceSequence::new(),
                counter: 0,
                id: DeviceId::new("box"),
            }
        }

        fn upload(&mut self, records: Vec<Record>) -> UploadMessage {
            let plain = codec::encode(&UploadPayload { records }).unwrap();
            let aad = upload_aad(&self.id, self.counter);
            let ct = seal(&plain, &self.session, &aad, &mut self.nonces);
            self.counter += 1;
            UploadMessage { device_id: self.id.clone(), counter: self.counter - 1, ciphertext: ct }
        }
    }

    #[test]
    fn happy_path_and_dedup() {
        let mut rig = Rig::new();
        let mut chain = Chain::new(params());
        let a = rig.upload(vec![record(&rig.keys, 0)]);
        let resp = chain.agent_receive(&a, SimTime::from_ms(70), &rig.session, &rig.keys.tee_pk);
        assert_eq!(resp, AgentResponse::Ack { msg_id: 0, fresh: vec![0], duplicates: 0 });
        let recs: Vec<_> = [0, 10_000, 20_000].iter().map(|&t| record(&rig.keys, t)).collect();
        let b = rig.upload(recs);
        let resp = chain.agent_receive(&b, SimTime::from_ms(20_070), &rig.session, &rig.keys.tee_pk);
        assert_eq!(resp, AgentResponse::Ack { msg_id: 1, fresh: vec![10_000, 20_000], duplicates: 1 });
        assert_eq!(chain.pool_len(), 3);
        let flags: Vec<bool> = chain.pool.iter().map(|tx| tx.via_backlog).collect();
        assert_eq!(flags, vec![false, true, false]);
    }

    #[test]
    fn tampered_upload_is_rejected_whole() {
        let mut rig = Rig::new();
        let mut chain = Chain::new(params());
        let mut up = rig.upload(vec![record(&rig.keys, 0), record(&rig.keys, 10_000)]);
        up.ciphertext[20] ^= 1;
        let resp = chain.agent_receive(&up, SimTime::ZERO, &rig.session, &rig.keys.tee_pk);
        assert!(!resp.is_ack());
        assert_eq!(chain.pool_len(), 0);

        let mut bad = record(&rig.keys, 10_000);
        bad.reading.temperature_c = 30.0;
        let up = rig.upload(vec![record(&rig.keys, 0), bad]);
        let resp = chain.agent_receive(&up, SimTime::ZERO, &rig.session, &rig.keys.tee_pk);
        assert!(matches!(resp, AgentResponse::Reject { ref reason, .. } if reason.contains("record 1")));
        assert_eq!(chain.pool_len(), 0);
    }

    #[test]
    fn gst_schedule() {
        let mut chain = Chain::new(params());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(chain.next_gst(&mut rng), SimTime::from_ms(5000));
        assert_eq!(chain.next_gst(&mut rng), SimTime::from_ms(10_000));

        let mut p = params();
        p.gst = GstMode::BoundedRandom { bound_ms: 8000.0, sampler: Sampler::uniform(2000.0, 8000.0) };
        p.validate().unwrap();
        let mut chain = Chain::new(p);
        let mut prev = SimTime::ZERO;
        for _ in 0..10_000 {
            let g = chain.next_gst(&mut rng);
            assert!(g.micros() - prev.micros() <= 8_000_000);
            prev = g;
        }
    }

    #[test]
    fn inclusion_is_strictly_before_gst() {
        let mut rig = Rig::new();
        let mut chain = Chain::new(params());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let early = rig.upload(vec![record(&rig.keys, 0)]);
        chain.agent_receive(&early, SimTime::from_ms(4999), &rig.session, &rig.keys.tee_pk);
        let late = rig.upload(vec![record(&rig.keys, 10_000)]);
        chain.agent_receive(&late, SimTime::from_ms(5001), &rig.session, &rig.keys.tee_pk);
        let exact = rig.upload(vec![record(&rig.keys, 20_000)]);
        chain.agent_receive(&exact, SimTime::from_ms(5000), &rig.session, &rig.keys.tee_pk);

        let gst = chain.next_gst(&mut rng);
        let block = chain.produce_block(gst, &mut rng);
        assert_eq!(block.transactions.len(), 1);
        let l1 = block.bct.micros() - block.gst.micros();
        assert!(l1 > 0 && l1 <= 2_000_000);
        assert!(chain.commit_pending(block.bct.plus_micros(0)).len() == 1);
        let gst2 = chain.next_gst(&mut rng);
        let block2 = chain.produce_block(gst2, &mut rng);
        assert_eq!(block2.transactions.len(), 2);
    }

    #[test]
    fn empty_blocks_and_quorum() {
        let mut rig = Rig::new();
        let mut chain = Chain::new(params());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..3u64 {
            let up = rig.upload(vec![record(&rig.keys, k * 10_000)]);
            chain.agent_receive(&up, SimTime::from_ms(k * 5_000 + 100), &rig.session, &rig.keys.tee_pk);
            let gst = chain.next_gst(&mut rng);
            let b = chain.produce_block(gst, &mut rng);
            chain.commit_pending(b.bct);
        }
        let gst = chain.next_gst(&mut rng);
        let empty = chain.produce_block(gst, &mut rng);
        assert!(empty.transactions.is_empty());
        chain.commit_pending(empty.bct);

        let entity = chain.query_entity(&rig.id);
        assert_eq!(entity.len(), 3);
        assert!(entity.records.windows(2).all(|w| w[0].commit < w[1].commit));
        assert_eq!(entity.head, Some(empty.bct));
        assert!(chain.correct_views_agree());
        assert_eq!(chain.query_node(0, &rig.id), chain.query_node(2, &rig.id));
        assert!(chain.ledger().is_byzantine(3));
        assert_ne!(chain.query_node(3, &rig.id), entity);
    }

    #[test]
    fn alarms_are_verified_and_deduplicated() {
        let rig = Rig::new();
        let mut chain = Chain::new(params());
        let messages = vec![ViolationKind::BoxOpened];
        let body = crate::types::AlarmBody { t_ms: 600_000, messages: messages.clone() };
        let sig = sign(&codec::encode(&body).unwrap(), &rig.keys.tee_sk);
        let alarm = AlarmMessage { t: 600_000, messages, sig };
        assert_eq!(chain.agent_receive_alarm(&rig.id, &alarm, SimTime::ZERO, &rig.keys.tee_pk), Ok(true));
        assert_eq!(chain.agent_receive_alarm(&rig.id, &alarm, SimTime::ZERO, &rig.keys.tee_pk), Ok(false));
        let mut forged = alarm.clone();
        forged.t += 1;
        assert!(chain.agent_receive_alarm(&rig.id, &forged, SimTime::ZERO, &rig.keys.tee_pk).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        let mut p = params();
        p.f = 2;
        assert!(p.validate().is_err());
        let mut p = params();
        p.l_ms = 6000.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.l1 = Some(Sampler::constant(0.0));
        assert!(p.validate().is_err());
        let mut p = params();
        p.gst = GstMode::BoundedRandom { bound_ms: 4000.0, sampler: Sampler::uniform(3000.0, 5000.0) };
        assert!(p.validate().is_err());
    }

    #[test]
    fn ledger_export_round_trips() {
        let mut rig = Rig::new();
        let mut chain = Chain::new(params());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let up = rig.upload(vec![record(&rig.keys, 0)]);
        chain.agent_receive(&up, SimTime::from_ms(100), &rig.session, &rig.keys.tee_pk);
        let gst = chain.next_gst(&mut rng);
        let b = chain.produce_block(gst, &mut rng);
        let text = export_ledger(&[b.clone()]);
        let line: LedgerLine = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(line.bct_us, b.bct.micros());
        assert!(text.contains("\"kind\":\"record\""));
        assert!(text.contains("\"pi\":\""));
        let lines = parse_ledger(&text).unwrap();
        let entity = entity_from_ledger(&lines, &rig.id);
        assert_eq!(entity, entity_from_blocks(&[b], &rig.id));
    }
}

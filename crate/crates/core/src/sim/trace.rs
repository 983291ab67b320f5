//! Run trace and its JSON-lines file format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Outcome, RunConfig};
use crate::chain::{self, AgentResponse, Block};
use crate::crypto::DevicePublicKey;
use crate::device::DeviceStatus;
use crate::environment::Scenario;
use crate::types::{AlarmMessage, DeviceId, DigitalEntity, SensorReading, SimTime, ViolationKind};
use crate::verifier::{self, AuditError, AuditReport, LatencyStats, RecordLifecycle, TimingParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("malformed trace: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: u64,
    pub device_id: DeviceId,
    pub device_pk: DevicePublicKey,
    pub session_fingerprint: String,
    pub config: RunConfig,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub status: DeviceStatus,
    pub sensed: usize,
    pub committed: usize,
    pub recovered: usize,
    pub alarms_sent: usize,
    pub alarms_committed: usize,
    pub head_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    SenseTick {
        time_us: u64,
        t: u64,
        reading: SensorReading,
        requeued: Vec<u64>,
        violations: Vec<ViolationKind>,
    },
    Send {
        time_us: u64,
        msg_id: u64,
        carried: Vec<u64>,
        #[serde(flatten)]
        outcome: Outcome,
    },
    AlarmSend {
        time_us: u64,
        t: u64,
        messages: Vec<ViolationKind>,
        #[serde(flatten)]
        outcome: Outcome,
    },
    Delivery {
        time_us: u64,
        msg_id: u64,
        response: AgentResponse,
    },
    AlarmDelivery {
        time_us: u64,
        t: u64,
        accepted: bool,
    },
    AckSend {
        time_us: u64,
        msg_id: u64,
        #[serde(flatten)]
        outcome: Outcome,
    },
    AckDelivery {
        time_us: u64,
        msg_id: u64,
        matched: bool,
    },
    Gst {
        time_us: u64,
        depth: u64,
        transactions: usize,
        bct_us: u64,
    },
    /// A block reaching every correct node, with its transactions.
    Bct {
        time_us: u64,
        block: Block,
    },
    DeviceFailed {
        time_us: u64,
        reason: String,
    },
}

impl TraceEvent {
    pub fn time_us(&self) -> u64 {
        match self {
            TraceEvent::SenseTick { time_us, .. }
            | TraceEvent::Send { time_us, .. }
            | TraceEvent::AlarmSend { time_us, .. }
            | TraceEvent::Delivery { time_us, .. }
            | TraceEvent::AlarmDelivery { time_us, .. }
            | TraceEvent::AckSend { time_us, .. }
            | TraceEvent::AckDelivery { time_us, .. }
            | TraceEvent::Gst { time_us, .. }
            | TraceEvent::Bct { time_us, .. }
            | TraceEvent::DeviceFailed { time_us, .. } => *time_us,
        }
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Event(TraceEvent),
    Record(RecordLifecycle),
    Footer(TraceFooter),
}

/// Complete, replayable record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    /// Per-record lifecycle, ordered by device timestamp.
    pub lifecycles: Vec<RecordLifecycle>,
    pub footer: TraceFooter,
}

fn line(value: &TraceLine) -> String {
    let mut s = serde_json::to_string(value).expect("trace lines always serialize");
    s.push('\n');
    s
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = line(&TraceLine::Header(self.header.clone()));
        for ev in &self.events {
            out.push_str(&line(&TraceLine::Event(ev.clone())));
        }
        for lc in &self.lifecycles {
            out.push_str(&line(&TraceLine::Record(lc.clone())));
        }
        out.push_str(&line(&TraceLine::Footer(self.footer.clone())));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut header = None;
        let mut footer = None;
        let mut events = Vec::new();
        let mut lifecycles = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine =
                serde_json::from_str(raw).map_err(|e| TraceError::Json { line: i + 1, message: e.to_string() })?;
            if footer.is_some() {
                return Err(TraceError::Structure(format!("line {} follows the footer", i + 1)));
            }
            match parsed {
                TraceLine::Header(h) if header.is_none() && events.is_empty() && lifecycles.is_empty() => {
                    header = Some(h)
                }
                TraceLine::Header(_) => {
                    return Err(TraceError::Structure(format!("unexpected header at line {}", i + 1)))
                }
                _ if header.is_none() => return Err(TraceError::Structure("first line must be the header".into())),
                TraceLine::Event(e) => events.push(e),
                TraceLine::Record(r) => lifecycles.push(r),
                TraceLine::Footer(f) => footer = Some(f),
            }
        }
        let Some(header) = header else {
            return Err(TraceError::Empty);
        };
        let footer = footer.ok_or_else(|| TraceError::Structure("missing footer".into()))?;
        Ok(Trace { header, events, lifecycles, footer })
    }

    /// Committed blocks in ledger order.
    pub fn blocks(&self) -> Vec<Block> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Bct { block, .. } => Some(block.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn entity(&self) -> DigitalEntity {
        chain::entity_from_blocks(&self.blocks(), &self.header.device_id)
    }

    pub fn alarms(&self) -> Vec<(AlarmMessage, SimTime)> {
        chain::alarms_from_blocks(&self.blocks(), &self.header.device_id)
    }

    pub fn ledger_export(&self) -> String {
        chain::export_ledger(&self.blocks())
    }

    pub fn timing_params(&self) -> TimingParams {
        self.header.config.timing_params()
    }

    pub fn audit(&self, params: &TimingParams) -> Result<AuditReport, AuditError> {
        verifier::audit(&self.entity(), &self.header.device_pk, params)
    }

    pub fn stats(&self) -> LatencyStats {
        verifier::latency_stats(&self.lifecycles)
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.footer.status, DeviceStatus::Failed(_))
    }

    /// "N sensed, N committed, N recovered, N alarms".
    pub fn summary(&self) -> String {
        let f = &self.footer;
        format!(
            "{} sensed, {} committed, {} recovered, {} alarms",
            f.sensed, f.committed, f.recovered, f.alarms_committed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::schedules::{quiet_config, quiet_scenario};
    use super::super::run;
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut cfg = quiet_config();
        cfg.channel.jam_windows = vec![crate::environment::Interval { start_ms: 15_000, end_ms: 25_000 }];
        let trace = run(&quiet_scenario(60_000), &cfg, 11).unwrap();
        let text = trace.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn structural_errors() {
        assert_eq!(Trace::from_jsonl(""), Err(TraceError::Empty));
        assert!(matches!(Trace::from_jsonl("{not json"), Err(TraceError::Json { line: 1, .. })));
        let trace = run(&quiet_scenario(20_000), &quiet_config(), 1).unwrap();
        let text = trace.to_jsonl();
        let no_footer: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Trace::from_jsonl(&no_footer), Err(TraceError::Structure(_))));
        let no_header: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Trace::from_jsonl(&no_header), Err(TraceError::Structure(_))));
    }

    #[test]
    fn summary_counts() {
        let trace = run(&quiet_scenario(60_000), &quiet_config(), 2).unwrap();
        assert_eq!(trace.summary(), "6 sensed, 6 committed, 0 recovered, 0 alarms");
    }
}

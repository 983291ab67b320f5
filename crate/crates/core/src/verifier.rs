//! Auditor for committed digital entities: truthfulness, real-time
//! consistency and continuity, plus latency statistics over a run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::crypto::{self, DevicePublicKey};
use crate::sampler::ms_to_us;
use crate::types::{DigitalEntity, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("entity has no committed records")]
    Empty,
    #[error("invalid timing parameters: {0}")]
    Params(String),
}

/// Worst-case timing assumptions the audit is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub eps1_max_ms: f64,
    pub eps2_max_ms: f64,
    #[serde(default)]
    pub eps_s_abs_ms: f64,
    pub delta_gst_max_ms: f64,
    pub l_ms: f64,
    pub delta_t_ms: u64,
    pub max_fd: usize,
    /// Replaces the derived δ when set.
    #[serde(default)]
    pub delta_override_ms: Option<f64>,
    /// Replaces the derived δ̂ when set.
    #[serde(default)]
    pub delta_hat_override_ms: Option<f64>,
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), AuditError> {
        let fields = [
            ("eps1_max_ms", self.eps1_max_ms),
            ("eps2_max_ms", self.eps2_max_ms),
            ("eps_s_abs_ms", self.eps_s_abs_ms),
            ("delta_gst_max_ms", self.delta_gst_max_ms),
            ("l_ms", self.l_ms),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AuditError::Params(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, AuditError> {
        let p: TimingParams = toml::from_str(text).map_err(|e| AuditError::Params(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Event-to-availability bound δ = ε₁ + ε₂ + ΔGST + L + |ε_s|.
pub fn delta_bound(p: &TimingParams) -> f64 {
    p.delta_override_ms
        .unwrap_or(p.eps1_max_ms + p.eps2_max_ms + p.delta_gst_max_ms + p.l_ms + p.eps_s_abs_ms)
}

/// Consecutive-commit bound δ̂ = Δt + ΔGST + L + |ε_s|.
pub fn delta_hat_bound(p: &TimingParams) -> f64 {
    p.delta_hat_override_ms
        .unwrap_or(p.delta_t_ms as f64 + p.delta_gst_max_ms + p.l_ms + p.eps_s_abs_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCheck {
    pub ok: bool,
    /// Ledger indices whose signature does not verify.
    pub failing: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub ok: bool,
    /// Largest `T − t` among records held to the bound.
    pub max_latency_ms: f64,
    pub bound_ms: f64,
    pub violations: Vec<usize>,
    /// Records delivered as part of a resent backlog.
    pub recovered: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcusedGap {
    /// Index of the record before the gap.
    pub index: usize,
    pub gap_ms: f64,
    /// Backlog records that tile the gap.
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapViolation {
    /// Index of the record before the gap (the last record for an open gap).
    pub index: usize,
    pub gap_ms: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityCheck {
    pub ok: bool,
    pub max_gap_ms: f64,
    pub bound_ms: f64,
    pub excused: Vec<ExcusedGap>,
    pub violations: Vec<GapViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub records: usize,
    pub truthful: TruthCheck,
    pub consistent: ConsistencyCheck,
    pub continuous: ContinuityCheck,
}

impl AuditReport {
    pub fn trustworthy(&self) -> bool {
        self.truthful.ok && self.consistent.ok && self.continuous.ok
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut out = String::new();
        if self.truthful.ok {
            out.push_str(&format!("truthfulness: PASS ({} records)\n", self.records));
        } else {
            let idx: Vec<String> = self.truthful.failing.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("truthfulness: FAIL at index {}\n", idx.join(", ")));
        }
        let c = &self.consistent;
        out.push_str(&format!(
            "consistency: {} (max T-t {:.3} ms, bound {:.3} ms, {} recovered exempt)\n",
            verdict(c.ok),
            c.max_latency_ms,
            c.bound_ms,
            c.recovered.len()
        ));
        for i in &c.violations {
            out.push_str(&format!("  violation at index {i}\n"));
        }
        let g = &self.continuous;
        out.push_str(&format!(
            "continuity: {} (max gap {:.3} ms, bound {:.3} ms, {} excused)\n",
            verdict(g.ok),
            g.max_gap_ms,
            g.bound_ms,
            g.excused.len()
        ));
        for e in &g.excused {
            out.push_str(&format!("  excused gap after index {}: {:.3} ms, {} recovered\n", e.index, e.gap_ms, e.slots));
        }
        for v in &g.violations {
            out.push_str(&format!("  violation after index {}: {:.3} ms, {}\n", v.index, v.gap_ms, v.reason));
        }
        out.push_str(&format!("verdict: {}\n", if self.trustworthy() { "TRUSTWORTHY" } else { "UNTRUSTWORTHY" }));
        out
    }
}

fn us_to_ms(us: i64) -> f64 {
    us as f64 / 1_000.0
}

/// Length of the same-block run starting at `i`.
fn run_len(entity: &DigitalEntity, i: usize) -> usize {
    let depth = entity.records[i].depth;
    entity.records[i..].iter().take_while(|r| r.depth == depth).count()
}

/// Judge an entity. Records sharing a block with a later record count as
/// recovered backlog.
pub fn audit(entity: &DigitalEntity, device_pk: &DevicePublicKey, p: &TimingParams) -> Result<AuditReport, AuditError> {
    p.validate()?;
    if entity.is_empty() {
        return Err(AuditError::Empty);
    }
    let recs = &entity.records;
    let n = recs.len();
    let dt = p.delta_t_ms;

    let failing: Vec<usize> = recs
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            codec::encode(&c.record.body())
                .map(|body| !crypto::verify(&body, c.record.pi.as_bytes(), device_pk))
                .unwrap_or(true)
        })
        .map(|(i, _)| i)
        .collect();

    let delta = delta_bound(p);
    let delta_us = ms_to_us(delta) as i64;
    let recovered: Vec<usize> = (0..n).filter(|&i| i + 1 < n && recs[i + 1].depth == recs[i].depth).collect();
    let mut violations = Vec::new();
    let mut max_latency: Option<i64> = None;
    for (i, c) in recs.iter().enumerate() {
        if recovered.binary_search(&i).is_ok() {
            // backlog must keep the Δt cadence up to the record that carried it
            if recs[i + 1].record.t != c.record.t.saturating_add(dt) {
                violations.push(i);
            }
            continue;
        }
        let latency = c.commit.micros() as i64 - (c.record.t as i64) * 1_000;
        max_latency = Some(max_latency.map_or(latency, |m| m.max(latency)));
        if latency > delta_us {
            violations.push(i);
        }
    }
    let consistent = ConsistencyCheck {
        ok: violations.is_empty(),
        max_latency_ms: max_latency.map_or(0.0, us_to_ms),
        bound_ms: delta,
        violations,
        recovered,
    };

    let delta_hat = delta_hat_bound(p);
    let delta_hat_us = ms_to_us(delta_hat) as i64;
    let mut excused = Vec::new();
    let mut gap_violations = Vec::new();
    let mut max_gap = 0i64;
    for i in 0..n.saturating_sub(1) {
        let (a, b) = (&recs[i], &recs[i + 1]);
        let gap = b.commit.micros() as i64 - a.commit.micros() as i64;
        max_gap = max_gap.max(gap);
        if b.record.t <= a.record.t || gap < 0 {
            gap_violations.push(GapViolation { index: i, gap_ms: us_to_ms(gap), reason: "out of order".into() });
            continue;
        }
        if gap <= delta_hat_us {
            continue;
        }
        let m = if b.depth != a.depth { run_len(entity, i + 1) } else { 1 };
        let k = m.saturating_sub(1);
        let tiles = m >= 2
            && k <= p.max_fd
            && b.record.t == a.record.t + dt
            && recs[i + 1..i + 1 + m].windows(2).all(|w| w[1].record.t == w[0].record.t + dt)
            && gap <= delta_hat_us + (k as i64) * (dt as i64) * 1_000;
        if tiles {
            excused.push(ExcusedGap { index: i, gap_ms: us_to_ms(gap), slots: k });
        } else {
            gap_violations.push(GapViolation {
                index: i,
                gap_ms: us_to_ms(gap),
                reason: "commit gap exceeds bound and is not tiled by recovered records".into(),
            });
        }
    }
    if let Some(head) = entity.head {
        let last = &recs[n - 1];
        let open = head.micros() as i64 - last.commit.micros() as i64;
        if open > delta_hat_us {
            gap_violations.push(GapViolation {
                index: n - 1,
                gap_ms: us_to_ms(open),
                reason: "no further record committed before the ledger head (cutoff)".into(),
            });
        }
    }
    let continuous = ContinuityCheck {
        ok: gap_violations.is_empty(),
        max_gap_ms: us_to_ms(max_gap),
        bound_ms: delta_hat,
        excused,
        violations: gap_violations,
    };

    Ok(AuditReport { records: n, truthful: TruthCheck { ok: failing.is_empty(), failing }, consistent, continuous })
}

/// Timestamps of one record's journey from sensing to commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLifecycle {
    /// Device clock timestamp.
    pub t: u64,
    /// True virtual time of sensing.
    pub sense: SimTime,
    /// Send time of the upload that first delivered the record.
    pub send: Option<SimTime>,
    /// First arrival at the agent.
    pub arrival: Option<SimTime>,
    /// Block commit time.
    pub commit: Option<SimTime>,
    /// First delivered inside a resent backlog.
    pub recovered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population variance in ms².
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { count, mean, variance, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub eps1: Option<Summary>,
    pub eps2: Option<Summary>,
    pub eps3: Option<Summary>,
    /// Largest `T − t` over every committed record, recovered or not.
    pub max_latency_ms: Option<f64>,
}

/// ε₁ = send − sense, ε₂ = arrival − send, ε₃ = commit − arrival, over
/// committed records that were not recovered.
pub fn latency_stats(lifecycles: &[RecordLifecycle]) -> LatencyStats {
    let (mut e1, mut e2, mut e3) = (Vec::new(), Vec::new(), Vec::new());
    let mut max_latency: Option<f64> = None;
    for lc in lifecycles {
        if let Some(commit) = lc.commit {
            let l = (commit.micros() as i64 - lc.t as i64 * 1_000) as f64 / 1_000.0;
            max_latency = Some(max_latency.map_or(l, |m| m.max(l)));
        }
        if lc.recovered {
            continue;
        }
        if let (Some(send), Some(arrival), Some(commit)) = (lc.send, lc.arrival, lc.commit) {
            e1.push(send.ms_since(lc.sense));
            e2.push(arrival.ms_since(send));
            e3.push(commit.ms_since(arrival));
        }
    }
    LatencyStats { eps1: Summary::of(&e1), eps2: Summary::of(&e2), eps3: Summary::of(&e3), max_latency_ms: max_latency }
}

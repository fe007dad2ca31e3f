//! Event records emitted by the simulator and their line formats.
//!
//! The event log is one JSON object per line with self-describing fields;
//! reach-set records carry the per-computation intermediate boxes to a
//! separate line file so the event log stays small. Boxes are serialized as
//! `[lo, hi]` pairs per axis.

use serde::{Deserialize, Serialize};

use crate::geometry::{HyperRectangle, Interval};
use crate::reach::LocalSafety;
use crate::sim::SimError;
use crate::verify::{GlobalVerdict, PairVerdict};

pub fn box_to_pairs(rect: &HyperRectangle) -> Vec<[f64; 2]> {
    rect.dims.iter().map(|d| [d.lo, d.hi]).collect()
}

pub fn box_from_pairs(pairs: &[[f64; 2]]) -> HyperRectangle {
    HyperRectangle {
        dims: pairs.iter().map(|p| Interval { lo: p[0], hi: p[1] }).collect(),
    }
}

/// One simulation event. `t` is virtual global time; local-clock readings
/// appear inside payloads where relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub agent: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ReachStart {
        t_rs: f64,
    },
    ReachDone {
        t_rs: f64,
        hull: Vec<[f64; 2]>,
        local_safe: LocalSafety,
        passes: u32,
        final_step: f64,
    },
    Send {
        t_send: f64,
        recipients: usize,
        bytes: usize,
    },
    Deliver {
        from: u32,
        delay_s: f64,
    },
    Decode {
        from: u32,
    },
    PairCheck {
        peer: u32,
        t_c: f64,
        d_min: f64,
        verdict: PairVerdict,
    },
    GlobalCheck {
        t_c: f64,
        verdict: GlobalVerdict,
    },
    WaypointReached {
        index: usize,
    },
    LocalUnsafe,
    BudgetOverrun,
    StaleMsg {
        from: u32,
        t_c: f64,
    },
    MalformedMsg {
        reason: String,
    },
}

/// Ordered sequence of events; times are non-decreasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, agent: u32, kind: EventKind) {
        self.records.push(EventRecord { t, agent, kind });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self, SimError> {
        let mut records = Vec::new();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: EventRecord = serde_json::from_str(line)
                .map_err(|e| SimError::Artifact(format!("events line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn count<F: Fn(&EventRecord) -> bool>(&self, pred: F) -> usize {
        self.records.iter().filter(|r| pred(r)).count()
    }

    /// Total verdicts that could not exclude a violation (pairwise, local,
    /// global); nonzero means the run carries a safety warning.
    pub fn uncertain_total(&self) -> usize {
        self.count(|r| {
            matches!(
                &r.kind,
                EventKind::PairCheck {
                    verdict: PairVerdict::Uncertain,
                    ..
                } | EventKind::GlobalCheck {
                    verdict: GlobalVerdict::Uncertain,
                    ..
                } | EventKind::LocalUnsafe
            )
        })
    }
}

/// One reach computation with its intermediate boxes, for plotting and for
/// the soundness audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachRecord {
    pub agent: u32,
    /// Global time at which the computation started (and its initial set was
    /// sensed).
    pub global_start: f64,
    pub t_rs: f64,
    pub horizon: f64,
    pub passes: u32,
    pub final_step: f64,
    pub local_safe: LocalSafety,
    pub hull: Vec<[f64; 2]>,
    /// `(offset, box)` pairs; entry k covers offsets `[o_k, o_{k+1}]`, the
    /// last entry up to `horizon`.
    pub intermediates: Vec<(f64, Vec<[f64; 2]>)>,
}

pub fn reach_records_to_jsonl(records: &[ReachRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("reach record serializes"));
        out.push('\n');
    }
    out
}

pub fn reach_records_from_jsonl(s: &str) -> Result<Vec<ReachRecord>, SimError> {
    let mut records = Vec::new();
    for (i, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ReachRecord = serde_json::from_str(line)
            .map_err(|e| SimError::Artifact(format!("reach-set line {}: {e}", i + 1)))?;
        records.push(r);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_log_roundtrips_jsonl() {
        let mut log = EventLog::default();
        log.push(0.5, 1, EventKind::ReachStart { t_rs: 0.503 });
        log.push(
            0.52,
            1,
            EventKind::PairCheck {
                peer: 2,
                t_c: 0.523,
                d_min: 250.0,
                verdict: PairVerdict::False { t_safe: 2.4 },
            },
        );
        log.push(
            0.53,
            2,
            EventKind::GlobalCheck {
                t_c: 0.533,
                verdict: GlobalVerdict::Uncertain,
            },
        );
        let text = log.to_jsonl();
        let back = EventLog::from_jsonl(&text).unwrap();
        assert_eq!(log, back);
        assert_eq!(back.uncertain_total(), 1);
    }

    #[test]
    fn event_lines_are_self_describing() {
        let mut log = EventLog::default();
        log.push(1.0, 0, EventKind::LocalUnsafe);
        let line = log.to_jsonl();
        assert!(line.contains("\"kind\":\"local_unsafe\""));
        assert!(line.contains("\"agent\":0"));
    }

    #[test]
    fn reach_records_roundtrip() {
        let r = ReachRecord {
            agent: 3,
            global_start: 1.2,
            t_rs: 1.203,
            horizon: 2.0,
            passes: 3,
            final_step: 0.025,
            local_safe: LocalSafety::Safe,
            hull: vec![[0.0, 1.0], [2.0, 3.0]],
            intermediates: vec![(0.0, vec![[0.0, 0.5], [2.0, 2.5]])],
        };
        let text = reach_records_to_jsonl(&[r.clone()]);
        let back = reach_records_from_jsonl(&text).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn malformed_lines_are_reported() {
        assert!(EventLog::from_jsonl("{not json}\n").is_err());
        assert!(reach_records_from_jsonl("[1, 2]\n").is_err());
    }
}

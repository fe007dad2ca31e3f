//! Reach-set messages, their wire format, and the simulated channel.
//!
//! A message carries an agent's current hull, the local-time window it is
//! valid for, and the local send time. The wire layout is fixed little-endian
//! so golden-byte fixtures are portable:
//!
//! ```text
//! magic "RSM1" | sender u32 | t_send f64 | t_rs f64 | horizon f64 | n x (lo f64, hi f64)
//! ```
//!
//! for a total of `32 + 16 n` bytes; the interval count is recovered from the
//! payload length. The channel keeps the set of in-flight messages and decides
//! per recipient, from a seeded generator, whether a copy is dropped and when
//! it is delivered, so a whole exchange is a deterministic function of the
//! seed and the send sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{HyperRectangle, Interval};

pub const MESSAGE_MAGIC: [u8; 4] = *b"RSM1";
/// Fixed header: magic, sender, t_send, t_rs, horizon.
pub const MESSAGE_HEADER_LEN: usize = 32;
/// Bytes per interval (lo, hi).
pub const MESSAGE_INTERVAL_LEN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("bad magic")]
    BadMagic,
    #[error("message truncated or length not a whole number of intervals: {len} bytes")]
    BadLength { len: usize },
    #[error("message carries no intervals")]
    EmptyHull,
    #[error("interval {index} is invalid: [{lo}, {hi}]")]
    BadInterval { index: usize, lo: f64, hi: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("clock offset {offset} exceeds synchronization bound {delta}")]
    OffsetExceedsBound { offset: f64, delta: f64 },
    #[error("delay law requires 0 <= min <= max, got [{min_s}, {max_s}]")]
    BadDelayLaw { min_s: f64, max_s: f64 },
    #[error("drop probability {0} outside [0, 1]")]
    BadDropProbability(f64),
}

/// An agent's local clock: a constant offset from virtual global time,
/// bounded in magnitude by the synchronization error `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub agent: u32,
    pub offset: f64,
    pub delta: f64,
}

impl ClockModel {
    pub fn new(agent: u32, offset: f64, delta: f64) -> Result<Self, CommError> {
        if !(delta >= 0.0 && offset.abs() <= delta) {
            return Err(CommError::OffsetExceedsBound { offset, delta });
        }
        Ok(Self { agent, offset, delta })
    }

    /// Local reading of a global instant.
    pub fn local_time(&self, t_global: f64) -> f64 {
        t_global + self.offset
    }

    /// Global instant at which the local clock reads `t_local`.
    pub fn global_time(&self, t_local: f64) -> f64 {
        t_local - self.offset
    }
}

/// The unit of inter-agent exchange: a hull valid over
/// `[t_rs, t_rs + horizon]` of the sender's clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachMessage {
    pub sender: u32,
    pub t_rs: f64,
    pub horizon: f64,
    pub hull: HyperRectangle,
    pub t_send: f64,
}

impl ReachMessage {
    pub fn encode(&self) -> Vec<u8> {
        let n = self.hull.dim();
        let mut out = Vec::with_capacity(MESSAGE_HEADER_LEN + MESSAGE_INTERVAL_LEN * n);
        out.extend_from_slice(&MESSAGE_MAGIC);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.t_send.to_le_bytes());
        out.extend_from_slice(&self.t_rs.to_le_bytes());
        out.extend_from_slice(&self.horizon.to_le_bytes());
        for d in &self.hull.dims {
            out.extend_from_slice(&d.lo.to_le_bytes());
            out.extend_from_slice(&d.hi.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < MESSAGE_HEADER_LEN {
            return Err(CodecError::BadLength { len: bytes.len() });
        }
        if bytes[..4] != MESSAGE_MAGIC {
            return Err(CodecError::BadMagic);
        }
        let payload = bytes.len() - MESSAGE_HEADER_LEN;
        if payload % MESSAGE_INTERVAL_LEN != 0 {
            return Err(CodecError::BadLength { len: bytes.len() });
        }
        let n = payload / MESSAGE_INTERVAL_LEN;
        if n == 0 {
            return Err(CodecError::EmptyHull);
        }
        let f64_at = |off: usize| {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            f64::from_le_bytes(buf)
        };
        let sender = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        let t_send = f64_at(8);
        let t_rs = f64_at(16);
        let horizon = f64_at(24);
        let mut dims = Vec::with_capacity(n);
        for i in 0..n {
            let off = MESSAGE_HEADER_LEN + MESSAGE_INTERVAL_LEN * i;
            let lo = f64_at(off);
            let hi = f64_at(off + 8);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CodecError::BadInterval { index: i, lo, hi });
            }
            dims.push(Interval { lo, hi });
        }
        Ok(Self {
            sender,
            t_rs,
            horizon,
            hull: HyperRectangle { dims },
            t_send,
        })
    }
}

/// Uniform transfer-delay law in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayLaw {
    pub min_s: f64,
    pub max_s: f64,
}

impl Default for DelayLaw {
    fn default() -> Self {
        // Brackets measured single-message transfer times on real hardware.
        Self {
            min_s: 0.0005,
            max_s: 0.003,
        }
    }
}

/// What the channel decided to do with one recipient's copy of a message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Disposition {
    /// Deliver at the given global time.
    Deliver(f64),
    /// Lose the copy; it is removed from the in-flight set at the given time
    /// without ever being delivered.
    Drop(f64),
}

/// A message handed to its recipient, with both ends of its transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub msg: ReachMessage,
    pub delivered_at: f64,
    pub sent_at: f64,
}

/// One recipient's copy of a sent message, waiting in the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub msg: ReachMessage,
    pub recipient: u32,
    pub sent_at: f64,
    pub disposition: Disposition,
    /// Monotone sequence number; keeps copies unique and ordering stable.
    pub seq: u64,
}

/// Asynchronous lossy channel: the set of in-flight messages plus the seeded
/// delay/drop policy. All behavior is a deterministic function of the seed
/// and the send sequence.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub in_flight: Vec<InFlight>,
    pub delay: DelayLaw,
    pub drop_prob: f64,
    rng: ChaCha8Rng,
    next_seq: u64,
}

impl ChannelModel {
    pub fn new(delay: DelayLaw, drop_prob: f64, seed: u64) -> Result<Self, CommError> {
        if !(delay.min_s >= 0.0 && delay.min_s <= delay.max_s) {
            return Err(CommError::BadDelayLaw {
                min_s: delay.min_s,
                max_s: delay.max_s,
            });
        }
        if !(0.0..=1.0).contains(&drop_prob) {
            return Err(CommError::BadDropProbability(drop_prob));
        }
        Ok(Self {
            in_flight: Vec::new(),
            delay,
            drop_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_seq: 0,
        })
    }

    /// Queue one copy of `msg` per recipient. Each copy independently draws a
    /// drop decision and a delay from the seeded generator.
    pub fn send(&mut self, msg: &ReachMessage, recipients: &[u32], t_global: f64) {
        for &recipient in recipients {
            let dropped = self.rng.gen::<f64>() < self.drop_prob;
            let delay = if self.delay.min_s == self.delay.max_s {
                self.delay.min_s
            } else {
                self.rng.gen_range(self.delay.min_s..self.delay.max_s)
            };
            let at = t_global + delay;
            let disposition = if dropped {
                Disposition::Drop(at)
            } else {
                Disposition::Deliver(at)
            };
            self.in_flight.push(InFlight {
                msg: msg.clone(),
                recipient,
                sent_at: t_global,
                disposition,
                seq: self.next_seq,
            });
            self.next_seq += 1;
        }
    }

    /// Remove and return every message due for `recipient` by `t_global`,
    /// ordered by delivery time. Due dropped copies are discarded silently.
    pub fn poll(&mut self, recipient: u32, t_global: f64) -> Vec<Delivery> {
        let mut due: Vec<(Delivery, u64)> = Vec::new();
        self.in_flight.retain(|entry| {
            if entry.recipient != recipient {
                return true;
            }
            match entry.disposition {
                Disposition::Deliver(at) if at <= t_global => {
                    due.push((
                        Delivery {
                            msg: entry.msg.clone(),
                            delivered_at: at,
                            sent_at: entry.sent_at,
                        },
                        entry.seq,
                    ));
                    false
                }
                Disposition::Drop(at) if at <= t_global => false,
                _ => true,
            }
        });
        due.sort_by(|a, b| a.0.delivered_at.total_cmp(&b.0.delivered_at).then(a.1.cmp(&b.1)));
        due.into_iter().map(|(d, _)| d).collect()
    }

    /// Global time of the next pending delivery, across all recipients.
    pub fn next_delivery(&self) -> Option<f64> {
        self.in_flight
            .iter()
            .filter_map(|e| match e.disposition {
                Disposition::Deliver(at) => Some(at),
                Disposition::Drop(_) => None,
            })
            .min_by(f64::total_cmp)
    }
}

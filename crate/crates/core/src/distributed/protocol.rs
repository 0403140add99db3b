//! Messages exchanged between the master and the workers.
//!
//! A message carries exactly one vector: either an index set or a real
//! vector, always of length `|A|` or `p`. There is no variant able to hold a
//! row of a shard, so raw observations cannot leave a worker.
//!
//! On-disk frame: `u8` kind tag, `u32` little-endian payload byte length,
//! then the payload as 8-byte little-endian items (`u64` indices or `f64`
//! reals).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accounted bytes per message on top of the payload.
pub const HEADER_BYTES: usize = 16;
/// Accounted bytes per payload item (real or index).
pub const ITEM_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    BroadcastActiveSet,
    BroadcastAnchor,
    ReportGradient,
    ReportDual,
    ReportCurvature,
    BroadcastFinal,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::BroadcastActiveSet,
        MessageKind::BroadcastAnchor,
        MessageKind::ReportGradient,
        MessageKind::ReportDual,
        MessageKind::ReportCurvature,
        MessageKind::BroadcastFinal,
    ];

    pub fn tag(self) -> u8 {
        match self {
            MessageKind::BroadcastActiveSet => 1,
            MessageKind::BroadcastAnchor => 2,
            MessageKind::ReportGradient => 3,
            MessageKind::ReportDual => 4,
            MessageKind::ReportCurvature => 5,
            MessageKind::BroadcastFinal => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::BroadcastActiveSet => "broadcast_active_set",
            MessageKind::BroadcastAnchor => "broadcast_anchor",
            MessageKind::ReportGradient => "report_gradient",
            MessageKind::ReportDual => "report_dual",
            MessageKind::ReportCurvature => "report_curvature",
            MessageKind::BroadcastFinal => "broadcast_final",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Sent by a worker to the master.
    pub fn is_report(self) -> bool {
        matches!(
            self,
            MessageKind::ReportGradient | MessageKind::ReportDual | MessageKind::ReportCurvature
        )
    }

    pub fn carries_indices(self) -> bool {
        self == MessageKind::BroadcastActiveSet
    }

    /// Whether the payload is sized by the active set (else by `p`).
    pub fn active_sized(self) -> bool {
        !matches!(self, MessageKind::ReportDual | MessageKind::ReportCurvature)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Indices(Vec<usize>),
    Reals(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Indices(v) => v.len(),
            Payload::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMessage {
    pub kind: MessageKind,
    pub payload: Payload,
}

/// Accounted size of a message with `items` payload entries.
pub fn byte_size_for(items: usize) -> usize {
    HEADER_BYTES + ITEM_BYTES * items
}

impl WorkerMessage {
    pub fn indices(kind: MessageKind, indices: Vec<usize>) -> Result<Self> {
        Self::new(kind, Payload::Indices(indices))
    }

    pub fn reals(kind: MessageKind, reals: Vec<f64>) -> Result<Self> {
        Self::new(kind, Payload::Reals(reals))
    }

    pub fn new(kind: MessageKind, payload: Payload) -> Result<Self> {
        let ok = matches!(payload, Payload::Indices(_)) == kind.carries_indices();
        if !ok {
            return Err(Error::Format {
                what: "worker message",
                detail: format!("{kind} cannot carry this payload type"),
            });
        }
        Ok(Self { kind, payload })
    }

    pub fn byte_size(&self) -> usize {
        byte_size_for(self.payload.len())
    }

    pub fn reals_payload(&self) -> &[f64] {
        match &self.payload {
            Payload::Reals(v) => v,
            Payload::Indices(_) => &[],
        }
    }

    /// Checks the payload length against the only shapes allowed to cross a
    /// machine boundary: `|A|` for active-set-sized kinds, `p` otherwise.
    pub fn audit(&self, active_len: usize, p: usize) -> Result<()> {
        let allowed = if self.kind.active_sized() { active_len } else { p };
        if self.payload.len() != allowed {
            return Err(Error::PrivacyViolation {
                kind: self.kind.name(),
                len: self.payload.len(),
                allowed: vec![allowed],
            });
        }
        Ok(())
    }

    pub fn encode_frame(&self, out: &mut Vec<u8>) {
        out.push(self.kind.tag());
        out.extend_from_slice(&((self.payload.len() * ITEM_BYTES) as u32).to_le_bytes());
        match &self.payload {
            Payload::Indices(v) => v.iter().for_each(|i| out.extend_from_slice(&(*i as u64).to_le_bytes())),
            Payload::Reals(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

fn frame_error(detail: String) -> Error {
    Error::Format {
        what: "message frame",
        detail,
    }
}

/// Parses a concatenation of frames.
pub fn decode_frames(mut buf: &[u8]) -> Result<Vec<WorkerMessage>> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        if buf.len() < 5 {
            return Err(frame_error("truncated header".into()));
        }
        let kind = MessageKind::from_tag(buf[0]).ok_or_else(|| frame_error(format!("unknown tag {}", buf[0])))?;
        let len = u32::from_le_bytes(buf[1..5].try_into().expect("4 bytes")) as usize;
        if len % ITEM_BYTES != 0 || buf.len() < 5 + len {
            return Err(frame_error(format!("bad payload length {len}")));
        }
        let items = buf[5..5 + len].chunks_exact(ITEM_BYTES);
        let payload = if kind.carries_indices() {
            Payload::Indices(
                items
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
                    .collect(),
            )
        } else {
            Payload::Reals(items.map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        out.push(WorkerMessage { kind, payload });
        buf = &buf[5 + len..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_and_audit() {
        let m = WorkerMessage::reals(MessageKind::ReportDual, vec![0.0; 7]).unwrap();
        assert_eq!(m.byte_size(), 16 + 56);
        assert!(m.audit(3, 7).is_ok());
        assert!(matches!(m.audit(3, 9), Err(Error::PrivacyViolation { .. })));
        let g = WorkerMessage::reals(MessageKind::ReportGradient, vec![1.0; 3]).unwrap();
        assert!(g.audit(3, 7).is_ok());
        assert!(g.audit(2, 7).is_err());
        assert!(WorkerMessage::reals(MessageKind::BroadcastActiveSet, vec![]).is_err());
        assert!(WorkerMessage::indices(MessageKind::ReportDual, vec![]).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for k in MessageKind::ALL {
            assert_eq!(MessageKind::from_tag(k.tag()), Some(k));
            assert_eq!(MessageKind::from_name(k.name()), Some(k));
        }
        assert_eq!(MessageKind::from_tag(0), None);
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(decode_frames(&[9, 0, 0, 0, 0]).is_err());
        assert!(decode_frames(&[1, 8, 0, 0]).is_err());
        assert!(decode_frames(&[2, 8, 0, 0, 0, 1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn frames_round_trip(
            reals in prop::collection::vec(-1e9f64..1e9, 0..20),
            idx in prop::collection::vec(0usize..100_000, 0..20),
        ) {
            let msgs = vec![
                WorkerMessage::indices(MessageKind::BroadcastActiveSet, idx).unwrap(),
                WorkerMessage::reals(MessageKind::ReportGradient, reals).unwrap(),
            ];
            let mut buf = Vec::new();
            for m in &msgs {
                m.encode_frame(&mut buf);
            }
            let framed: usize = msgs.iter().map(|m| 5 + 8 * m.payload.len()).sum();
            prop_assert_eq!(buf.len(), framed);
            prop_assert_eq!(decode_frames(&buf).unwrap(), msgs);
        }
    }
}

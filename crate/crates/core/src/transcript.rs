//! Message transcripts shared by every protocol.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Initial PDMM dual, sent over an encrypted channel.
    DualInit,
    /// PDMM primal value broadcast to neighbors.
    PrimalBroadcast,
    /// Federated node-to-server upload of local statistics.
    Upload,
    /// Federated server broadcast of the new parameters.
    GlobalBroadcast,
    /// Masked partial sum forwarded along the Hamiltonian cycle.
    Relay,
    /// Unmasked total broadcast by the secure-summation initiator.
    SumBroadcast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Message<T> {
    /// EM iteration the message belongs to, when nested in a protocol run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_iter: Option<usize>,
    pub round: usize,
    pub from: NodeId,
    pub to: Vec<NodeId>,
    pub kind: MessageKind,
    pub encrypted: bool,
    pub payload: Vec<T>,
}

impl<T> Message<T> {
    pub fn involves(&self, node: NodeId) -> bool {
        self.from == node || self.to.contains(&node)
    }
}

/// Ordered message log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript<T> {
    messages: Vec<Message<T>>,
}

impl<T: Real> Transcript<T> {
    pub fn new() -> Self {
        Self { messages: Vec::new() }
    }

    pub fn push(&mut self, m: Message<T>) {
        self.messages.push(m);
    }

    pub fn messages(&self) -> &[Message<T>] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Message<T>> {
        self.messages.iter()
    }

    pub fn count_kind(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }

    /// Moves another transcript in, tagging its messages with an EM iteration.
    pub fn extend_tagged(&mut self, other: Transcript<T>, em_iter: usize) {
        self.messages.extend(other.messages.into_iter().map(|mut m| {
            m.em_iter = Some(em_iter);
            m
        }));
    }

    /// `(em_iter, round)` never decreases along the log.
    pub fn is_ordered(&self) -> bool {
        self.messages
            .windows(2)
            .all(|w| (w[0].em_iter, w[0].round) <= (w[1].em_iter, w[1].round))
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut messages = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::ParseError {
                line: i + 1,
                column: 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let m = serde_json::from_str(&line).map_err(|e| Error::ParseError {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            messages.push(m);
        }
        Ok(Self { messages })
    }
}

impl<T> FromIterator<Message<T>> for Transcript<T> {
    fn from_iter<I: IntoIterator<Item = Message<T>>>(iter: I) -> Self {
        Self {
            messages: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Transcript::new();
        t.push(Message {
            em_iter: None,
            round: 0,
            from: NodeId(1),
            to: vec![NodeId(2)],
            kind: MessageKind::DualInit,
            encrypted: true,
            payload: vec![0.5_f64, -1.25],
        });
        let mut tagged = Transcript::new();
        tagged.extend_tagged(t.clone(), 3);
        let mut buf = Vec::new();
        tagged.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"em_iter\":3,\"round\":0,\"from\":1,\"to\":[2],\"kind\":\"dual_init\",\"encrypted\":true,\"payload\":[0.5,-1.25]}\n"
        );
        assert_eq!(Transcript::read_jsonl(buf.as_slice()).unwrap(), tagged);
    }
}

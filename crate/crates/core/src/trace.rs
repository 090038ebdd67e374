//! Slot-ordered execution trace, serialized as JSON lines.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::block::BlockId;

/// One trace record. Every variant carries the slot it happened in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TraceEvent {
    /// Run parameters; always the first record.
    Meta {
        slot: u64,
        n_nodes: u32,
        tau: f64,
        capacity: f64,
        delta_h: f64,
        horizon_slots: u64,
        protocol: String,
        policy: String,
    },
    Bpo { slot: u64, node: u32, honest: bool, seq: u32 },
    BlockProduced {
        slot: u64,
        block: BlockId,
        parent: BlockId,
        height: u32,
        bpo_slot: u64,
        bpo_node: u32,
        #[serde(default)]
        bpo_seq: u32,
        honest: bool,
    },
    HeaderDelivered { slot: u64, node: u32, block: BlockId },
    ContentUploaded { slot: u64, block: BlockId },
    /// A budget-paid download completed. `resumed` is the prepaid fraction
    /// restored from the partial-work cache when the final stint started.
    ContentFetched { slot: u64, node: u32, block: BlockId, resumed: f64 },
    /// A block entered the node's processed set (fetched, own, pushed or blanked).
    Processed { slot: u64, node: u32, block: BlockId, blank: bool },
    PretendEmpty { slot: u64, node: u32, block: BlockId },
    ChainSwitched { slot: u64, node: u32, old_tip: BlockId, new_tip: BlockId, height: u32 },
    EquivocationSeen { slot: u64, node: u32, block: BlockId, other: BlockId },
    ProofIncluded { slot: u64, carrier: BlockId, target: BlockId, depth: u32 },
    Blanked { slot: u64, node: u32, block: BlockId },
    AdversaryRelease { slot: u64, blocks: Vec<BlockId>, with_content: Vec<bool> },
    AdversaryPush { slot: u64, node: u32, block: BlockId, content: bool },
    LeadSample { slot: u64, lead: i64 },
    LedgerOutput { slot: u64, node: u32, length: u32, digest: u64 },
    /// Non-idleness witness: the node ended its slot idle with budget left
    /// while a processable candidate existed.
    IdleWithCandidates { slot: u64, node: u32 },
}

impl TraceEvent {
    pub fn slot(&self) -> u64 {
        use TraceEvent::*;
        match self {
            Meta { slot, .. }
            | Bpo { slot, .. }
            | BlockProduced { slot, .. }
            | HeaderDelivered { slot, .. }
            | ContentUploaded { slot, .. }
            | ContentFetched { slot, .. }
            | Processed { slot, .. }
            | PretendEmpty { slot, .. }
            | ChainSwitched { slot, .. }
            | EquivocationSeen { slot, .. }
            | ProofIncluded { slot, .. }
            | Blanked { slot, .. }
            | AdversaryRelease { slot, .. }
            | AdversaryPush { slot, .. }
            | LeadSample { slot, .. }
            | LedgerOutput { slot, .. }
            | IdleWithCandidates { slot, .. } => *slot,
        }
    }
}

/// Receiver of trace events.
pub trait TraceSink {
    fn record(&mut self, ev: TraceEvent);
    /// False when events are discarded, letting callers skip building them.
    fn enabled(&self) -> bool {
        true
    }
}

/// Discards everything.
#[derive(Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _ev: TraceEvent) {}
    fn enabled(&self) -> bool {
        false
    }
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, ev: TraceEvent) {
        self.push(ev);
    }
}

/// Writes each event as one JSON line.
pub fn write_jsonl<W: Write>(mut w: W, events: &[TraceEvent]) -> io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Parses a JSONL trace, skipping blank lines.
pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let evs = vec![
            TraceEvent::Meta {
                slot: 0,
                n_nodes: 3,
                tau: 0.1,
                capacity: 2.0,
                delta_h: 0.0,
                horizon_slots: 10,
                protocol: "pow".into(),
                policy: "longest-header-chain".into(),
            },
            TraceEvent::Bpo { slot: 1, node: 2, honest: true, seq: 0 },
            TraceEvent::ContentFetched { slot: 2, node: 1, block: 4, resumed: 0.25 },
            TraceEvent::AdversaryRelease { slot: 3, blocks: vec![5, 6], with_content: vec![true, false] },
            TraceEvent::LeadSample { slot: 4, lead: -2 },
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &evs).unwrap();
        let back = read_jsonl(io::Cursor::new(buf)).unwrap();
        assert_eq!(back, evs);
    }
}

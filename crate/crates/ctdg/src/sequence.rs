//! Truncated first-hop interaction histories and neighbor co-occurrence
//! counting.

use std::collections::HashMap;

use crate::error::CtdgError;
use crate::graph::NeighborIndex;

/// One position in a node's history. `event_index` is `None` only for the
/// synthetic self entry, which references no stored event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqEntry {
    pub neighbor: usize,
    pub event_index: Option<usize>,
    pub timestamp: f64,
}

/// A node's time-sorted first-hop history strictly before `anchor_time`,
/// truncated to the most recent `max_len` interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSequence {
    pub anchor: usize,
    pub anchor_time: f64,
    pub entries: Vec<SeqEntry>,
    pub max_len: usize,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Neighbor ids of the real (non-self) entries.
    pub fn real_neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .filter(|e| e.event_index.is_some())
            .map(|e| e.neighbor)
    }
}

/// All and only the interactions of `node` strictly before `t`, keeping the
/// most recent `max_len` in time order.
pub fn extract_first_hop(
    index: &NeighborIndex,
    node: usize,
    t: f64,
    max_len: usize,
) -> Result<InteractionSequence, CtdgError> {
    if node >= index.num_nodes() {
        return Err(CtdgError::Data(format!("unknown node id {node}")));
    }
    assert!(max_len >= 1, "max_len must be at least 1");
    let list = index.list(node);
    // strict `<` so simultaneous events never leak into the history
    let end = list.partition_point(|e| e.timestamp < t);
    let start = end.saturating_sub(max_len);
    let entries = list[start..end]
        .iter()
        .map(|e| SeqEntry {
            neighbor: e.neighbor,
            event_index: Some(e.event_index),
            timestamp: e.timestamp,
        })
        .collect();
    Ok(InteractionSequence {
        anchor: node,
        anchor_time: t,
        entries,
        max_len,
    })
}

/// Prepend the anchor itself as entry 0 with time interval zero. The entry
/// carries no event, a zero link feature, and the anchor's node feature.
pub fn prepend_self(seq: &mut InteractionSequence) {
    seq.entries.insert(
        0,
        SeqEntry {
            neighbor: seq.anchor,
            event_index: None,
            timestamp: seq.anchor_time,
        },
    );
}

/// Per-neighbor occurrence counts of both endpoints' histories. Row `i` of
/// `c_src` counts entry `i`'s neighbor in the source sequence (column 0) and
/// in the destination sequence (column 1); `c_dst` likewise for the
/// destination's entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrencePair {
    pub c_src: Vec<[u32; 2]>,
    pub c_dst: Vec<[u32; 2]>,
}

pub fn cooccurrence_counts(
    seq_u: &InteractionSequence,
    seq_v: &InteractionSequence,
) -> CooccurrencePair {
    assert_eq!(
        seq_u.anchor_time.to_bits(),
        seq_v.anchor_time.to_bits(),
        "co-occurrence requires a shared anchor time"
    );
    let mut in_u: HashMap<usize, u32> = HashMap::new();
    for e in &seq_u.entries {
        *in_u.entry(e.neighbor).or_insert(0) += 1;
    }
    let mut in_v: HashMap<usize, u32> = HashMap::new();
    for e in &seq_v.entries {
        *in_v.entry(e.neighbor).or_insert(0) += 1;
    }
    let count = |m: &HashMap<usize, u32>, n: usize| m.get(&n).copied().unwrap_or(0);
    let c_src = seq_u
        .entries
        .iter()
        .map(|e| [count(&in_u, e.neighbor), count(&in_v, e.neighbor)])
        .collect();
    let c_dst = seq_v
        .entries
        .iter()
        .map(|e| [count(&in_u, e.neighbor), count(&in_v, e.neighbor)])
        .collect();
    CooccurrencePair { c_src, c_dst }
}

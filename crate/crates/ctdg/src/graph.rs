//! Event-stream storage: ingestion, chronological splitting, per-node
//! neighbor indexing, and synthetic stream generation.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use crate::autodiff::rng::{RngStream, StreamId};
use crate::error::CtdgError;

/// One timestamped interaction. Node ids are dense indices into the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub source: usize,
    pub destination: usize,
    pub timestamp: f64,
    pub link_features: Vec<f64>,
    /// Dynamic binary state attached to the interaction, when present.
    pub label: Option<u8>,
}

/// A time-sorted interaction stream with optional node and link features.
///
/// Node ids are dense `0..num_nodes`, assigned in first-appearance order at
/// load time; `original_ids` maps each dense id back to the id found in the
/// source file.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    pub events: Vec<Event>,
    pub num_nodes: usize,
    pub d_n: usize,
    pub d_e: usize,
    /// Flat num_nodes x d_n feature table; zero vectors when absent.
    node_features: Vec<f64>,
    pub original_ids: Vec<u64>,
}

impl TemporalGraph {
    pub fn new(events: Vec<Event>, num_nodes: usize, d_e: usize) -> Self {
        let mut g = TemporalGraph {
            events,
            num_nodes,
            d_n: 0,
            d_e,
            node_features: Vec::new(),
            original_ids: (0..num_nodes as u64).collect(),
        };
        g.sort_events();
        g
    }

    fn sort_events(&mut self) {
        self.events
            .sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
    }

    pub fn node_feature(&self, node: usize) -> &[f64] {
        if self.d_n == 0 {
            return &[];
        }
        &self.node_features[node * self.d_n..(node + 1) * self.d_n]
    }

    pub fn set_node_features(&mut self, d_n: usize, features: Vec<f64>) {
        assert_eq!(features.len(), self.num_nodes * d_n);
        self.d_n = d_n;
        self.node_features = features;
    }

    /// Timestamp span of an index range; zero when the range is empty.
    pub fn duration(&self, range: &Range<usize>) -> f64 {
        if range.is_empty() {
            return 0.0;
        }
        self.events[range.end - 1].timestamp - self.events[range.start].timestamp
    }

    pub fn check_invariants(&self) -> Result<(), CtdgError> {
        for w in self.events.windows(2) {
            if w[0].timestamp > w[1].timestamp {
                return Err(CtdgError::Data("events out of timestamp order".into()));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.source >= self.num_nodes || e.destination >= self.num_nodes {
                return Err(CtdgError::Data(format!("event {i} references unknown node")));
            }
            if e.timestamp < 0.0 {
                return Err(CtdgError::Data(format!("event {i} has negative timestamp")));
            }
            if e.link_features.len() != self.d_e {
                return Err(CtdgError::Data(format!(
                    "event {i} has {} link features, expected {}",
                    e.link_features.len(),
                    self.d_e
                )));
            }
        }
        Ok(())
    }
}

/// Contiguous chronological train/validation/test ranges plus the node ids
/// never seen inside the train range.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitView {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub new_nodes: HashSet<usize>,
}

/// Chronological split by floored cumulative boundaries. Timestamp ties at
/// the boundaries resolve by event index, which the stable sort fixed.
pub fn chronological_split(
    g: &TemporalGraph,
    ratios: (f64, f64, f64),
) -> Result<SplitView, CtdgError> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(CtdgError::Config("split ratios must be positive".into()));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(CtdgError::Config("split ratios must sum to 1".into()));
    }
    let n = g.events.len();
    if n < 3 {
        return Err(CtdgError::Data(format!(
            "cannot split a graph with {n} events into three parts"
        )));
    }
    let b1 = (a * n as f64).floor() as usize;
    let b2 = ((a + b) * n as f64).floor() as usize;
    let train = 0..b1;
    let val = b1..b2;
    let test = b2..n;

    let mut seen_in_train = vec![false; g.num_nodes];
    for e in &g.events[train.clone()] {
        seen_in_train[e.source] = true;
        seen_in_train[e.destination] = true;
    }
    let new_nodes = (0..g.num_nodes).filter(|&u| !seen_in_train[u]).collect();
    Ok(SplitView {
        train,
        val,
        test,
        new_nodes,
    })
}

/// One indexed interaction under a node: the other endpoint, the event it
/// came from, and its timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexEntry {
    pub neighbor: usize,
    pub event_index: usize,
    pub timestamp: f64,
}

/// Per-node, timestamp-sorted first-hop interaction lists. Every event is
/// indexed under both endpoints.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    lists: Vec<Vec<IndexEntry>>,
}

impl NeighborIndex {
    pub fn num_nodes(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, node: usize) -> &[IndexEntry] {
        &self.lists[node]
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(|l| l.len()).sum()
    }
}

pub fn build_neighbor_index(g: &TemporalGraph) -> NeighborIndex {
    let mut lists: Vec<Vec<IndexEntry>> = vec![Vec::new(); g.num_nodes];
    for (i, e) in g.events.iter().enumerate() {
        lists[e.source].push(IndexEntry {
            neighbor: e.destination,
            event_index: i,
            timestamp: e.timestamp,
        });
        lists[e.destination].push(IndexEntry {
            neighbor: e.source,
            event_index: i,
            timestamp: e.timestamp,
        });
    }
    // events are time-sorted, so each list is already sorted
    NeighborIndex { lists }
}

// ---------------------------------------------------------------------------
// CSV ingestion and serialization
//
// Event CSV: header `u,v,t[,label][,f_0..f_{d_E-1}]`. Node-feature CSV:
// header `node,f_0..f_{d_N-1}`.
// ---------------------------------------------------------------------------

fn data_err(line: usize, msg: impl std::fmt::Display) -> CtdgError {
    CtdgError::Data(format!("line {line}: {msg}"))
}

pub fn load_events<R: Read>(reader: R) -> Result<TemporalGraph, CtdgError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| CtdgError::Data("empty event stream".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(|c| c.trim()).collect();
    if cols.len() < 3 || cols[0] != "u" || cols[1] != "v" || cols[2] != "t" {
        return Err(data_err(1, "header must start with u,v,t"));
    }
    let has_label = cols.len() > 3 && cols[3] == "label";
    let feat_start = if has_label { 4 } else { 3 };
    let d_e = cols.len() - feat_start;
    for (k, name) in cols[feat_start..].iter().enumerate() {
        if *name != format!("f_{k}") {
            return Err(data_err(1, format!("unexpected feature column `{name}`")));
        }
    }

    let mut dense: HashMap<u64, usize> = HashMap::new();
    let mut original_ids: Vec<u64> = Vec::new();
    let mut intern = |raw: u64| -> usize {
        *dense.entry(raw).or_insert_with(|| {
            original_ids.push(raw);
            original_ids.len() - 1
        })
    };

    let mut events = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').map(|f| f.trim()).collect();
        if fields.len() != cols.len() {
            return Err(data_err(
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let u: u64 = fields[0]
            .parse()
            .map_err(|_| data_err(lineno, format!("bad node id `{}`", fields[0])))?;
        let v: u64 = fields[1]
            .parse()
            .map_err(|_| data_err(lineno, format!("bad node id `{}`", fields[1])))?;
        let t: f64 = fields[2]
            .parse()
            .map_err(|_| data_err(lineno, format!("bad timestamp `{}`", fields[2])))?;
        if !t.is_finite() || t < 0.0 {
            return Err(data_err(lineno, format!("negative or non-finite timestamp {t}")));
        }
        let label = if has_label {
            match fields[3] {
                "0" => Some(0),
                "1" => Some(1),
                "" => None,
                other => return Err(data_err(lineno, format!("bad label `{other}`"))),
            }
        } else {
            None
        };
        let mut link_features = Vec::with_capacity(d_e);
        for f in &fields[feat_start..] {
            let x: f64 = f
                .parse()
                .map_err(|_| data_err(lineno, format!("bad feature value `{f}`")))?;
            link_features.push(x);
        }
        events.push(Event {
            source: intern(u),
            destination: intern(v),
            timestamp: t,
            link_features,
            label,
        });
    }

    let num_nodes = original_ids.len();
    let mut g = TemporalGraph {
        events,
        num_nodes,
        d_n: 0,
        d_e,
        node_features: Vec::new(),
        original_ids,
    };
    g.sort_events();
    g.check_invariants()?;
    Ok(g)
}

/// Attach per-node features from a `node,f_0..` CSV. Nodes are addressed by
/// their original ids; rows for nodes absent from the event stream are
/// ignored, and unlisted nodes keep zero vectors.
pub fn load_node_features<R: Read>(reader: R, g: &mut TemporalGraph) -> Result<(), CtdgError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| CtdgError::Data("empty node-feature stream".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(|c| c.trim()).collect();
    if cols.is_empty() || cols[0] != "node" {
        return Err(data_err(1, "header must start with node"));
    }
    let d_n = cols.len() - 1;
    let by_original: HashMap<u64, usize> = g
        .original_ids
        .iter()
        .enumerate()
        .map(|(dense, &raw)| (raw, dense))
        .collect();
    let mut table = vec![0.0; g.num_nodes * d_n];
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').map(|f| f.trim()).collect();
        if fields.len() != d_n + 1 {
            return Err(data_err(
                lineno,
                format!("expected {} fields, found {}", d_n + 1, fields.len()),
            ));
        }
        let raw: u64 = fields[0]
            .parse()
            .map_err(|_| data_err(lineno, format!("bad node id `{}`", fields[0])))?;
        let Some(&dense) = by_original.get(&raw) else {
            continue;
        };
        for (k, f) in fields[1..].iter().enumerate() {
            table[dense * d_n + k] = f
                .parse()
                .map_err(|_| data_err(lineno, format!("bad feature value `{f}`")))?;
        }
    }
    g.set_node_features(d_n, table);
    Ok(())
}

/// Write the event stream back out in the ingestion format, using original
/// node ids. Floats are printed with shortest round-trip formatting, so
/// `load_events(save_events(g))` reproduces every value exactly.
pub fn save_events<W: Write>(g: &TemporalGraph, w: &mut W) -> Result<(), CtdgError> {
    let has_label = g.events.iter().any(|e| e.label.is_some());
    let mut header = String::from("u,v,t");
    if has_label {
        header.push_str(",label");
    }
    for k in 0..g.d_e {
        header.push_str(&format!(",f_{k}"));
    }
    writeln!(w, "{header}")?;
    for e in &g.events {
        let mut line = format!(
            "{},{},{}",
            g.original_ids[e.source], g.original_ids[e.destination], e.timestamp
        );
        if has_label {
            line.push(',');
            if let Some(l) = e.label {
                line.push_str(&l.to_string());
            }
        }
        for f in &e.link_features {
            line.push_str(&format!(",{f}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic streams
// ---------------------------------------------------------------------------

/// Parameters for synthetic stream generation, parsed from key=value text.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_events: usize,
    /// Probability that an event repeats an already-seen node pair.
    pub recurrence_bias: f64,
    pub d_e: usize,
    pub d_n: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn parse(text: &str) -> Result<SynthConfig, CtdgError> {
        let mut cfg = SynthConfig {
            num_nodes: 0,
            num_events: 0,
            recurrence_bias: 0.0,
            d_e: 0,
            d_n: 0,
            seed: 0,
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CtdgError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |k: &str| CtdgError::Config(format!("bad value for {k}: `{value}`"));
            match key {
                "num_nodes" => cfg.num_nodes = value.parse().map_err(|_| bad(key))?,
                "num_events" => cfg.num_events = value.parse().map_err(|_| bad(key))?,
                "recurrence_bias" => cfg.recurrence_bias = value.parse().map_err(|_| bad(key))?,
                "d_E" | "d_e" => cfg.d_e = value.parse().map_err(|_| bad(key))?,
                "d_N" | "d_n" => cfg.d_n = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                other => return Err(CtdgError::Config(format!("unknown synth key `{other}`"))),
            }
        }
        if !(0.0..=1.0).contains(&cfg.recurrence_bias) {
            return Err(CtdgError::Config("recurrence_bias must be in [0,1]".into()));
        }
        Ok(cfg)
    }
}

/// Generate a stream where each event repeats a previously seen pair with
/// probability `recurrence_bias` and otherwise introduces an unseen pair.
/// Deterministic for a fixed seed.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<TemporalGraph, CtdgError> {
    if cfg.num_nodes < 2 {
        return Err(CtdgError::Config("synthetic graphs need at least 2 nodes".into()));
    }
    if cfg.num_events == 0 {
        return Err(CtdgError::Config("synthetic graphs need at least 1 event".into()));
    }
    let mut rng = RngStream::new(seed, StreamId::Synthesis);
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut seen_list: Vec<(usize, usize)> = Vec::new();
    let mut events = Vec::with_capacity(cfg.num_events);
    let mut t = 0.0;
    for _ in 0..cfg.num_events {
        t += rng.exponential();
        let repeat = !seen_list.is_empty() && rng.bernoulli(cfg.recurrence_bias);
        let (u, v) = if repeat {
            let pair = seen_list[rng.below(seen_list.len())];
            if rng.bernoulli(0.5) {
                pair
            } else {
                (pair.1, pair.0)
            }
        } else {
            let mut found = None;
            for _ in 0..1000 {
                let a = rng.below(cfg.num_nodes);
                let b = rng.below(cfg.num_nodes);
                if a == b {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                if !seen.contains(&key) {
                    found = Some((a, b));
                    break;
                }
            }
            match found {
                Some(p) => p,
                // pair space exhausted; fall back to a repeat
                None => seen_list[rng.below(seen_list.len())],
            }
        };
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            seen_list.push(key);
        }
        let link_features = (0..cfg.d_e).map(|_| rng.uniform(-1.0, 1.0)).collect();
        events.push(Event {
            source: u,
            destination: v,
            timestamp: t,
            link_features,
            label: None,
        });
    }
    let mut g = TemporalGraph {
        events,
        num_nodes: cfg.num_nodes,
        d_n: 0,
        d_e: cfg.d_e,
        node_features: Vec::new(),
        original_ids: (0..cfg.num_nodes as u64).collect(),
    };
    if cfg.d_n > 0 {
        let table = (0..cfg.num_nodes * cfg.d_n)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        g.set_node_features(cfg.d_n, table);
    }
    g.check_invariants()?;
    Ok(g)
}

//! Evaluation protocol: negative sampling, ranking metrics, and the
//! common-neighbor / changed-link diagnostics.

use std::collections::HashSet;
use std::ops::Range;

use crate::autodiff::rng::RngStream;
use crate::error::CtdgError;
use crate::graph::TemporalGraph;
use crate::sequence::InteractionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeStrategy {
    Random,
    Historical,
    Inductive,
}

impl NegativeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            NegativeStrategy::Random => "rnd",
            NegativeStrategy::Historical => "hist",
            NegativeStrategy::Inductive => "ind",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CtdgError> {
        match s {
            "rnd" | "random" => Ok(NegativeStrategy::Random),
            "hist" | "historical" => Ok(NegativeStrategy::Historical),
            "ind" | "inductive" => Ok(NegativeStrategy::Inductive),
            other => Err(CtdgError::Config(format!(
                "unknown negative sampling strategy `{other}`"
            ))),
        }
    }
}

/// Candidate pools for corrupting the destination of a positive link.
///
/// `hist` holds, per source node, the endpoints seen with it in the pool
/// range (the stream before the evaluation split by default); `induct` holds
/// endpoints whose pair appears only inside the evaluation range.
#[derive(Debug, Clone)]
pub struct SamplingContext {
    pub num_nodes: usize,
    hist: Vec<Vec<usize>>,
    induct: Vec<Vec<usize>>,
}

impl SamplingContext {
    pub fn build(g: &TemporalGraph, pool: Range<usize>, eval: Range<usize>) -> SamplingContext {
        let mut hist: Vec<HashSet<usize>> = vec![HashSet::new(); g.num_nodes];
        let mut pool_pairs: HashSet<(usize, usize)> = HashSet::new();
        for e in &g.events[pool] {
            hist[e.source].insert(e.destination);
            hist[e.destination].insert(e.source);
            pool_pairs.insert((
                e.source.min(e.destination),
                e.source.max(e.destination),
            ));
        }
        let mut induct: Vec<HashSet<usize>> = vec![HashSet::new(); g.num_nodes];
        for e in &g.events[eval] {
            let key = (
                e.source.min(e.destination),
                e.source.max(e.destination),
            );
            if !pool_pairs.contains(&key) {
                induct[e.source].insert(e.destination);
                induct[e.destination].insert(e.source);
            }
        }
        let finish = |sets: Vec<HashSet<usize>>| -> Vec<Vec<usize>> {
            sets.into_iter()
                .map(|s| {
                    let mut v: Vec<usize> = s.into_iter().collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        };
        SamplingContext {
            num_nodes: g.num_nodes,
            hist: finish(hist),
            induct: finish(induct),
        }
    }

    pub fn historical_candidates(&self, source: usize) -> &[usize] {
        &self.hist[source]
    }

    pub fn inductive_candidates(&self, source: usize) -> &[usize] {
        &self.induct[source]
    }
}

/// One corrupted destination per positive. The sampled pair never collides
/// with a positive of the same batch timestamp; pool strategies fall back to
/// random when their candidate list empties (unless forbidden).
pub fn sample_negatives(
    strategy: NegativeStrategy,
    positives: &[(usize, usize, f64)],
    ctx: &SamplingContext,
    rng: &mut RngStream,
    allow_fallback: bool,
) -> Result<Vec<(usize, usize, f64)>, CtdgError> {
    let batch: HashSet<(usize, usize, u64)> = positives
        .iter()
        .map(|&(u, v, t)| (u, v, t.to_bits()))
        .collect();
    let is_batch_positive =
        |u: usize, v: usize, t: f64| batch.contains(&(u, v, t.to_bits()));

    let mut out = Vec::with_capacity(positives.len());
    for &(u, _, t) in positives {
        let random_endpoint = |rng: &mut RngStream| -> usize {
            let mut v = rng.below(ctx.num_nodes);
            for _ in 0..100 {
                if !is_batch_positive(u, v, t) {
                    break;
                }
                v = rng.below(ctx.num_nodes);
            }
            v
        };
        let from_pool = |pool: &[usize], rng: &mut RngStream| -> Option<usize> {
            let candidates: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&v| !is_batch_positive(u, v, t))
                .collect();
            if candidates.is_empty() {
                None
            } else {
                Some(candidates[rng.below(candidates.len())])
            }
        };
        let v = match strategy {
            NegativeStrategy::Random => random_endpoint(rng),
            NegativeStrategy::Historical => match from_pool(ctx.historical_candidates(u), rng) {
                Some(v) => v,
                None if allow_fallback => random_endpoint(rng),
                None => {
                    return Err(CtdgError::Eval(format!(
                        "empty historical candidate pool for node {u} with fallback disabled"
                    )))
                }
            },
            NegativeStrategy::Inductive => match from_pool(ctx.inductive_candidates(u), rng) {
                Some(v) => v,
                None if allow_fallback => random_endpoint(rng),
                None => {
                    return Err(CtdgError::Eval(format!(
                        "empty inductive candidate pool for node {u} with fallback disabled"
                    )))
                }
            },
        };
        out.push((u, v, t));
    }
    Ok(out)
}

/// AP and AUC-ROC over one scored set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub ap: f64,
    pub auc_roc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricReport {
    /// Line-oriented records `split,strategy,metric,value,seed`.
    pub fn log_lines(&self, split: &str, strategy: &str, seed: u64) -> Vec<String> {
        vec![
            format!("{split},{strategy},ap,{},{seed}", self.ap),
            format!("{split},{strategy},auc_roc,{},{seed}", self.auc_roc),
            format!("{split},{strategy},n_pos,{},{seed}", self.n_pos),
            format!("{split},{strategy},n_neg,{},{seed}", self.n_neg),
        ]
    }
}

/// Mean precision at the rank of each positive in a score-descending
/// ranking; ties keep input order (the sort is stable).
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64, CtdgError> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(CtdgError::Eval("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (rank-sum formulation with midranks).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, CtdgError> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CtdgError::Eval("AUC-ROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tied groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Jaccard ratio of the two sequences' distinct neighbor sets; `None` when
/// both histories are empty. Synthetic self entries are not neighbors.
pub fn common_neighbor_ratio(
    seq_u: &InteractionSequence,
    seq_v: &InteractionSequence,
) -> Option<f64> {
    let a: HashSet<usize> = seq_u.real_neighbors().collect();
    let b: HashSet<usize> = seq_v.real_neighbors().collect();
    if a.is_empty() && b.is_empty() {
        return None;
    }
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    Some(inter as f64 / union as f64)
}

/// Confusion cells of one model at a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    TrueNegative,
    FalseNegative,
    FalsePositive,
}

fn classify(score: f64, label: u8, threshold: f64) -> Outcome {
    let predicted = score >= threshold;
    match (predicted, label == 1) {
        (true, true) => Outcome::TruePositive,
        (false, false) => Outcome::TrueNegative,
        (false, true) => Outcome::FalseNegative,
        (true, false) => Outcome::FalsePositive,
    }
}

/// Changed-link ratios between two models' confusion cells, per-outcome link
/// ratios of the second model, and mean common-neighbor ratios per cell.
///
/// Transition order: FN->TP, FP->TN, TP->FN, TN->FP (ratios over model A's
/// originating cell). Outcome order: TP, TN, FN, FP.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisTable {
    pub clr: [Option<f64>; 4],
    pub cnr_transition: [Option<f64>; 4],
    pub lr: [Option<f64>; 4],
    pub cnr_outcome: [Option<f64>; 4],
}

impl AnalysisTable {
    /// CSV lines mirroring the diagnostic table layout: one row per cell.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("section,cell,value,mean_cnr\n");
        for (name, v, c) in [
            ("FN->TP", self.clr[0], self.cnr_transition[0]),
            ("FP->TN", self.clr[1], self.cnr_transition[1]),
            ("TP->FN", self.clr[2], self.cnr_transition[2]),
            ("TN->FP", self.clr[3], self.cnr_transition[3]),
        ] {
            out.push_str(&format!("clr,{name},{},{}\n", fmt(v), fmt(c)));
        }
        for (name, v, c) in [
            ("TP", self.lr[0], self.cnr_outcome[0]),
            ("TN", self.lr[1], self.cnr_outcome[1]),
            ("FN", self.lr[2], self.cnr_outcome[2]),
            ("FP", self.lr[3], self.cnr_outcome[3]),
        ] {
            out.push_str(&format!("lr,{name},{},{}\n", fmt(v), fmt(c)));
        }
        out
    }
}

/// Compare model B against model A link by link at a threshold (0.5 in the
/// standard protocol). `cnrs` carries each link's common-neighbor ratio when
/// defined.
pub fn confusion_analysis(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    threshold: f64,
    cnrs: &[Option<f64>],
) -> Result<AnalysisTable, CtdgError> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() || cnrs.len() != labels.len()
    {
        return Err(CtdgError::Eval("confusion analysis inputs must align".into()));
    }
    let a: Vec<Outcome> = scores_a
        .iter()
        .zip(labels.iter())
        .map(|(&s, &l)| classify(s, l, threshold))
        .collect();
    let b: Vec<Outcome> = scores_b
        .iter()
        .zip(labels.iter())
        .map(|(&s, &l)| classify(s, l, threshold))
        .collect();

    let transitions = [
        (Outcome::FalseNegative, Outcome::TruePositive),
        (Outcome::FalsePositive, Outcome::TrueNegative),
        (Outcome::TruePositive, Outcome::FalseNegative),
        (Outcome::TrueNegative, Outcome::FalsePositive),
    ];
    let mut clr = [None; 4];
    let mut cnr_transition = [None; 4];
    for (slot, (from, to)) in transitions.iter().enumerate() {
        let origin = a.iter().filter(|&&o| o == *from).count();
        let moved: Vec<usize> = (0..labels.len())
            .filter(|&i| a[i] == *from && b[i] == *to)
            .collect();
        if origin > 0 {
            clr[slot] = Some(moved.len() as f64 / origin as f64);
        }
        let known: Vec<f64> = moved.iter().filter_map(|&i| cnrs[i]).collect();
        if !known.is_empty() {
            cnr_transition[slot] = Some(known.iter().sum::<f64>() / known.len() as f64);
        }
    }

    let outcomes = [
        Outcome::TruePositive,
        Outcome::TrueNegative,
        Outcome::FalseNegative,
        Outcome::FalsePositive,
    ];
    let mut lr = [None; 4];
    let mut cnr_outcome = [None; 4];
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    for (slot, outcome) in outcomes.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| b[i] == *outcome).collect();
        let denom = match outcome {
            Outcome::TruePositive | Outcome::FalseNegative => n_pos,
            Outcome::TrueNegative | Outcome::FalsePositive => n_neg,
        };
        if denom > 0 {
            lr[slot] = Some(members.len() as f64 / denom as f64);
        }
        let known: Vec<f64> = members.iter().filter_map(|&i| cnrs[i]).collect();
        if !known.is_empty() {
            cnr_outcome[slot] = Some(known.iter().sum::<f64>() / known.len() as f64);
        }
    }

    Ok(AnalysisTable {
        clr,
        cnr_transition,
        lr,
        cnr_outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::rng::{RngStream, StreamId};
    use crate::graph::{Event, TemporalGraph};
    use crate::sequence::SeqEntry;

    fn rng() -> RngStream {
        RngStream::new(0, StreamId::NegativeSampling)
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(),
            1.0
        );
        let ap = average_precision(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.2, 0.9, 0.5], &[1, 1, 1]).unwrap(), 1.0);
        assert!(average_precision(&[0.4], &[0]).is_err());
    }

    #[test]
    fn ap_ties_keep_input_order() {
        // equal scores: stable sort keeps index order, so the positive at
        // index 0 ranks first
        let ap = average_precision(&[0.5, 0.5], &[1, 0]).unwrap();
        assert_eq!(ap, 1.0);
        let ap = average_precision(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(auc_roc(&[0.4, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn rank_metrics_are_invariant_under_monotone_transforms() {
        let mut r = rng();
        for _ in 0..50 {
            let n = 5 + r.below(30);
            let scores: Vec<f64> = (0..n).map(|_| r.uniform(-3.0, 3.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(r.bernoulli(0.4))).collect();
            if !labels.contains(&1) || !labels.contains(&0) {
                continue;
            }
            let squashed: Vec<f64> = scores.iter().map(|s| (s * 0.3).tanh() * 5.0 + 7.0).collect();
            let ap1 = average_precision(&scores, &labels).unwrap();
            let ap2 = average_precision(&squashed, &labels).unwrap();
            assert!((ap1 - ap2).abs() < 1e-12);
            let a1 = auc_roc(&scores, &labels).unwrap();
            let a2 = auc_roc(&squashed, &labels).unwrap();
            assert!((a1 - a2).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_complement_under_score_negation() {
        let mut r = rng();
        for _ in 0..30 {
            let n = 6 + r.below(20);
            // distinct scores to avoid ties
            let scores: Vec<f64> = (0..n).map(|i| i as f64 + r.uniform(0.0, 0.5)).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(r.bernoulli(0.5))).collect();
            if !labels.contains(&1) || !labels.contains(&0) {
                continue;
            }
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let b = auc_roc(&neg, &labels).unwrap();
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    fn seq_of(anchor: usize, neighbors: &[usize]) -> InteractionSequence {
        InteractionSequence {
            anchor,
            anchor_time: 10.0,
            entries: neighbors
                .iter()
                .enumerate()
                .map(|(i, &n)| SeqEntry {
                    neighbor: n,
                    event_index: Some(i),
                    timestamp: i as f64,
                })
                .collect(),
            max_len: 32,
        }
    }

    #[test]
    fn cnr_examples() {
        let a = seq_of(0, &[1, 2]);
        let b = seq_of(9, &[2, 1, 1]);
        assert_eq!(common_neighbor_ratio(&a, &b), Some(1.0));
        // {a,b,a} vs {b,b,a,c} -> |{a,b}| / |{a,b,c}| = 2/3
        let a = seq_of(0, &[1, 2, 1]);
        let b = seq_of(9, &[2, 2, 1, 3]);
        assert!((common_neighbor_ratio(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let a = seq_of(0, &[1, 2]);
        let b = seq_of(9, &[3, 4]);
        assert_eq!(common_neighbor_ratio(&a, &b), Some(0.0));
        let empty = seq_of(0, &[]);
        assert_eq!(common_neighbor_ratio(&empty, &empty), None);
    }

    fn graph_with(events: Vec<(usize, usize, f64)>, num_nodes: usize) -> TemporalGraph {
        TemporalGraph::new(
            events
                .into_iter()
                .map(|(u, v, t)| Event {
                    source: u,
                    destination: v,
                    timestamp: t,
                    link_features: vec![],
                    label: None,
                })
                .collect(),
            num_nodes,
            0,
        )
    }

    #[test]
    fn random_two_node_graph_forces_the_self_pair() {
        let g = graph_with(vec![(0, 1, 1.0)], 2);
        let ctx = SamplingContext::build(&g, 0..1, 1..1);
        let positives = [(0usize, 1usize, 5.0)];
        let negs =
            sample_negatives(NegativeStrategy::Random, &positives, &ctx, &mut rng(), true).unwrap();
        assert_eq!(negs, vec![(0, 0, 5.0)]);
    }

    #[test]
    fn historical_uses_past_pairs_and_falls_back_when_empty() {
        let g = graph_with(vec![(0, 1, 1.0), (0, 2, 2.0), (3, 4, 3.0), (0, 9, 10.0)], 10);
        // pool = first three events
        let ctx = SamplingContext::build(&g, 0..3, 3..4);
        let positives = [(0usize, 9usize, 10.0)];
        for _ in 0..20 {
            let negs = sample_negatives(
                NegativeStrategy::Historical,
                &positives,
                &ctx,
                &mut rng(),
                true,
            )
            .unwrap();
            let (u, v, _) = negs[0];
            assert_eq!(u, 0);
            assert!(v == 1 || v == 2, "candidate {v} not from the past pool");
        }
        // node 5 has no history: fallback to random must kick in
        let positives = [(5usize, 6usize, 10.0)];
        let negs = sample_negatives(
            NegativeStrategy::Historical,
            &positives,
            &ctx,
            &mut rng(),
            true,
        )
        .unwrap();
        assert_eq!(negs.len(), 1);
        // and erroring when forbidden
        assert!(sample_negatives(
            NegativeStrategy::Historical,
            &positives,
            &ctx,
            &mut rng(),
            false,
        )
        .is_err());
    }

    #[test]
    fn historical_negatives_all_appear_earlier_in_stream() {
        let mut r = rng();
        let mut events = Vec::new();
        let mut t = 0.0;
        for _ in 0..200 {
            t += 1.0;
            events.push((r.below(15), r.below(15), t));
        }
        let g = graph_with(events.clone(), 15);
        let ctx = SamplingContext::build(&g, 0..150, 150..200);
        let positives: Vec<(usize, usize, f64)> = g.events[150..170]
            .iter()
            .map(|e| (e.source, e.destination, e.timestamp))
            .collect();
        let negs = sample_negatives(
            NegativeStrategy::Historical,
            &positives,
            &ctx,
            &mut r,
            false,
        )
        .unwrap();
        for (u, v, _) in negs {
            let seen_before = g.events[0..150]
                .iter()
                .any(|e| (e.source == u && e.destination == v) || (e.source == v && e.destination == u));
            assert!(seen_before, "pair ({u},{v}) never observed in the pool");
        }
    }

    #[test]
    fn inductive_pool_excludes_training_pairs() {
        let g = graph_with(
            vec![(0, 1, 1.0), (2, 3, 2.0), (0, 1, 10.0), (0, 4, 11.0), (2, 5, 12.0)],
            6,
        );
        let ctx = SamplingContext::build(&g, 0..2, 2..5);
        // (0,1) reoccurs in eval but was seen in the pool, so only (0,4) counts
        assert_eq!(ctx.inductive_candidates(0), &[4]);
        assert_eq!(ctx.inductive_candidates(2), &[5]);
    }

    #[test]
    fn negatives_never_collide_with_batch_positives_and_replay_per_seed() {
        let mut r = rng();
        let mut events = Vec::new();
        let mut t = 0.0;
        for _ in 0..300 {
            t += 1.0;
            events.push((r.below(12), r.below(12), t));
        }
        let g = graph_with(events, 12);
        let ctx = SamplingContext::build(&g, 0..200, 200..300);
        let positives: Vec<(usize, usize, f64)> = g.events[200..260]
            .iter()
            .map(|e| (e.source, e.destination, e.timestamp))
            .collect();
        let batch: HashSet<(usize, usize, u64)> = positives
            .iter()
            .map(|&(u, v, t)| (u, v, t.to_bits()))
            .collect();
        for strategy in [
            NegativeStrategy::Random,
            NegativeStrategy::Historical,
            NegativeStrategy::Inductive,
        ] {
            let mut r1 = RngStream::new(7, StreamId::NegativeSampling);
            let mut r2 = RngStream::new(7, StreamId::NegativeSampling);
            let n1 = sample_negatives(strategy, &positives, &ctx, &mut r1, true).unwrap();
            let n2 = sample_negatives(strategy, &positives, &ctx, &mut r2, true).unwrap();
            assert_eq!(n1, n2, "strategy {strategy:?} not reproducible");
            for (u, v, t) in n1 {
                assert!(!batch.contains(&(u, v, t.to_bits())));
            }
        }
    }

    #[test]
    fn confusion_analysis_identity_and_full_flip() {
        let labels = [1u8, 1, 0, 0];
        let right = [0.9, 0.8, 0.1, 0.2];
        let wrong = [0.1, 0.2, 0.9, 0.8];
        let cnrs = vec![Some(0.5); 4];
        let same = confusion_analysis(&right, &right, &labels, 0.5, &cnrs).unwrap();
        assert_eq!(same.clr[0], None); // no FNs under A
        assert_eq!(same.clr[2], Some(0.0));
        assert_eq!(same.clr[3], Some(0.0));
        assert_eq!(same.lr[0], Some(1.0));
        assert_eq!(same.lr[1], Some(1.0));

        let fixed = confusion_analysis(&wrong, &right, &labels, 0.5, &cnrs).unwrap();
        assert_eq!(fixed.clr[0], Some(1.0)); // FN->TP
        assert_eq!(fixed.clr[1], Some(1.0)); // FP->TN
        // LR identities
        let lr = fixed.lr;
        assert!((lr[0].unwrap() + lr[2].unwrap() - 1.0).abs() < 1e-12);
        assert!((lr[1].unwrap() + lr[3].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_analysis_matches_recount_oracle() {
        let mut r = rng();
        let n = 200;
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.bernoulli(0.5))).collect();
        let sa: Vec<f64> = (0..n).map(|_| r.unit()).collect();
        let sb: Vec<f64> = (0..n).map(|_| r.unit()).collect();
        let cnrs: Vec<Option<f64>> = (0..n)
            .map(|_| if r.bernoulli(0.9) { Some(r.unit()) } else { None })
            .collect();
        let table = confusion_analysis(&sa, &sb, &labels, 0.5, &cnrs).unwrap();

        // direct four-way recount
        let cls = |s: f64, l: u8| match (s >= 0.5, l == 1) {
            (true, true) => 0,   // TP
            (false, false) => 1, // TN
            (false, true) => 2,  // FN
            (true, false) => 3,  // FP
        };
        let a: Vec<usize> = sa.iter().zip(&labels).map(|(&s, &l)| cls(s, l)).collect();
        let b: Vec<usize> = sb.iter().zip(&labels).map(|(&s, &l)| cls(s, l)).collect();
        let trans = [(2, 0), (3, 1), (0, 2), (1, 3)];
        for (slot, (from, to)) in trans.iter().enumerate() {
            let orig = a.iter().filter(|&&x| x == *from).count();
            let moved = (0..n).filter(|&i| a[i] == *from && b[i] == *to).count();
            let want = if orig > 0 {
                Some(moved as f64 / orig as f64)
            } else {
                None
            };
            assert_eq!(table.clr[slot], want, "transition {slot}");
        }
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let n_neg = n - n_pos;
        for (slot, outcome) in [0usize, 1, 2, 3].iter().enumerate() {
            let members = (0..n).filter(|&i| b[i] == *outcome).count();
            let denom = if *outcome == 0 || *outcome == 2 { n_pos } else { n_neg };
            let want = if denom > 0 {
                Some(members as f64 / denom as f64)
            } else {
                None
            };
            assert_eq!(table.lr[slot], want, "outcome {slot}");
        }
    }

    #[test]
    fn analysis_table_emits_csv() {
        let table = AnalysisTable {
            clr: [Some(0.5), Some(0.25), Some(0.0), None],
            cnr_transition: [Some(0.1), None, None, None],
            lr: [Some(0.9), Some(0.8), Some(0.1), Some(0.2)],
            cnr_outcome: [Some(0.4), Some(0.01), None, None],
        };
        let csv = table.to_csv();
        assert!(csv.starts_with("section,cell,value,mean_cnr\n"));
        assert!(csv.contains("clr,FN->TP,0.5,0.1"));
        assert!(csv.contains("lr,TP,0.9,0.4"));
        assert_eq!(csv.lines().count(), 9);
    }
}

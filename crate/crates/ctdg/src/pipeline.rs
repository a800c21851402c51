//! End-to-end orchestration: batched training with early stopping,
//! chronological evaluation under the three negative-sampling strategies,
//! the edge-memory baseline runner, classifier-head training, and the
//! leakage audit.

use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::rng::{RngStream, StreamId};
use crate::autodiff::tape::Tape;
use crate::autodiff::tensor::Tensor;
use crate::autodiff::{AdamHyper, AdamState};
use crate::config::{HistoryPool, MemorySpan, RunConfig};
use crate::edgebank::{build_memory, edgebank_predict, EdgeBankVariant};
use crate::error::CtdgError;
use crate::eval::{
    auc_roc, average_precision, sample_negatives, MetricReport, NegativeStrategy, SamplingContext,
};
use crate::graph::{build_neighbor_index, SplitView, TemporalGraph};
use crate::model::{
    encode_pair, init_params, link_logit, node_logit, pair_sequences, BindMode, DyGFormerHyper,
    GraphContext, ModelParams, ModelVars,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Val,
    Test,
}

impl EvalSplit {
    pub fn name(&self) -> &'static str {
        match self {
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        }
    }
}

/// Strict-inequality audit over every model input of an evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub links_checked: usize,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Restricted to links touching nodes unseen in training, when any.
    pub inductive: Option<MetricReport>,
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
    pub positives: Vec<(usize, usize, f64)>,
    pub audit: Option<AuditReport>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val: MetricReport,
    pub epoch_train_losses: Vec<f64>,
    pub epoch_val_ap: Vec<f64>,
    pub log: Vec<String>,
}

fn batch_positives(g: &TemporalGraph, range: Range<usize>) -> Vec<(usize, usize, f64)> {
    g.events[range]
        .iter()
        .map(|e| (e.source, e.destination, e.timestamp))
        .collect()
}

fn hyper_for_graph(cfg: &RunConfig, g: &TemporalGraph) -> DyGFormerHyper {
    let mut hyper = cfg.hyper;
    hyper.d_n = g.d_n;
    hyper.d_e = g.d_e;
    hyper
}

/// Score (u, v, t) items with frozen parameters; returns link probabilities.
pub fn score_pairs(
    template: &ModelParams,
    tensors: &[Tensor],
    ctx: &GraphContext,
    items: &[(usize, usize, f64)],
    hyper: &DyGFormerHyper,
    shard_size: usize,
) -> Result<Vec<f64>, CtdgError> {
    let mut rng = RngStream::new(0, StreamId::Dropout); // inert: eval mode
    let mut out = Vec::with_capacity(items.len());
    for shard in items.chunks(shard_size.max(1)) {
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind_from(&mut tape, template, tensors, BindMode::Frozen);
        for &(u, v, t) in shard {
            let (h_u, h_v) = encode_pair(&mut tape, &vars, ctx, u, v, t, hyper, &mut rng)?;
            let logit = link_logit(&mut tape, h_u, h_v, &vars.link);
            let s = tape.value(logit).at(0, 0);
            out.push(1.0 / (1.0 + (-s).exp()));
        }
    }
    Ok(out)
}

fn pool_range(which: EvalSplit, split: &SplitView, pool: HistoryPool) -> Range<usize> {
    match (pool, which) {
        (HistoryPool::AllBeforeEval, EvalSplit::Val) => 0..split.train.end,
        (HistoryPool::AllBeforeEval, EvalSplit::Test) => 0..split.val.end,
        (HistoryPool::TrainOnly, _) => split.train.clone(),
    }
}

fn eval_range(which: EvalSplit, split: &SplitView) -> Range<usize> {
    match which {
        EvalSplit::Val => split.val.clone(),
        EvalSplit::Test => split.test.clone(),
    }
}

/// Stream one split chronologically, score positives against sampled
/// negatives, and compute AP/AUC on the full scored set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_link_prediction(
    template: &ModelParams,
    tensors: &[Tensor],
    g: &TemporalGraph,
    split: &SplitView,
    which: EvalSplit,
    strategy: NegativeStrategy,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Evaluation, CtdgError> {
    let hyper = template.hyper;
    if hyper.d_n != g.d_n || hyper.d_e != g.d_e {
        return Err(CtdgError::Eval(format!(
            "dimension mismatch: model expects d_N={}, d_E={} but graph has d_N={}, d_E={}",
            hyper.d_n, hyper.d_e, g.d_n, g.d_e
        )));
    }
    let index = build_neighbor_index(g);
    let ctx = GraphContext { graph: g, index: &index };
    let range = eval_range(which, split);
    if range.is_empty() {
        return Err(CtdgError::Eval(format!("{} split is empty", which.name())));
    }
    let samp = SamplingContext::build(g, pool_range(which, split, cfg.history_pool), range.clone());
    let mut rng = RngStream::new(seed, StreamId::NegativeSampling);

    let mut positives = Vec::new();
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    let mut audit = cfg.audit.then_some(AuditReport::default());

    let mut start = range.start;
    while start < range.end {
        let end = (start + cfg.batch_size).min(range.end);
        let pos = batch_positives(g, start..end);
        let neg = sample_negatives(strategy, &pos, &samp, &mut rng, cfg.allow_fallback)?;
        let ps = score_pairs(template, tensors, &ctx, &pos, &hyper, cfg.shard_size)?;
        let ns = score_pairs(template, tensors, &ctx, &neg, &hyper, cfg.shard_size)?;
        if let Some(a) = audit.as_mut() {
            for &(u, v, t) in pos.iter().chain(neg.iter()) {
                let (su, sv) = pair_sequences(&ctx, u, v, t, &hyper)?;
                a.links_checked += 1;
                let leaky = su
                    .entries
                    .iter()
                    .chain(sv.entries.iter())
                    .filter(|e| e.event_index.is_some())
                    .any(|e| e.timestamp >= t);
                if leaky {
                    a.violations += 1;
                }
            }
        }
        positives.extend(pos);
        pos_scores.extend(ps);
        neg_scores.extend(ns);
        start = end;
    }

    let report = scored_report(&pos_scores, &neg_scores)?;
    let inductive = {
        let picked: Vec<usize> = positives
            .iter()
            .enumerate()
            .filter(|(_, &(u, v, _))| {
                if cfg.inductive_two_sided {
                    split.new_nodes.contains(&u) && split.new_nodes.contains(&v)
                } else {
                    split.new_nodes.contains(&u) || split.new_nodes.contains(&v)
                }
            })
            .map(|(i, _)| i)
            .collect();
        if picked.is_empty() {
            None
        } else {
            let ps: Vec<f64> = picked.iter().map(|&i| pos_scores[i]).collect();
            let ns: Vec<f64> = picked.iter().map(|&i| neg_scores[i]).collect();
            Some(scored_report(&ps, &ns)?)
        }
    };

    Ok(Evaluation {
        report,
        inductive,
        pos_scores,
        neg_scores,
        positives,
        audit,
    })
}

fn scored_report(pos: &[f64], neg: &[f64]) -> Result<MetricReport, CtdgError> {
    let scores: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    let labels: Vec<u8> = std::iter::repeat(1u8)
        .take(pos.len())
        .chain(std::iter::repeat(0u8).take(neg.len()))
        .collect();
    Ok(MetricReport {
        ap: average_precision(&scores, &labels)?,
        auc_roc: auc_roc(&scores, &labels)?,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

/// Train the link-prediction model on the chronological train range with
/// one random negative per positive, validating each epoch and returning
/// the best-validation parameters.
pub fn train_link_prediction(
    g: &TemporalGraph,
    split: &SplitView,
    cfg: &RunConfig,
    seed: u64,
) -> Result<TrainedModel, CtdgError> {
    if split.train.is_empty() {
        return Err(CtdgError::Data("empty train split".into()));
    }
    let hyper = hyper_for_graph(cfg, g);
    hyper.validate()?;
    let index = build_neighbor_index(g);
    let ctx = GraphContext { graph: g, index: &index };
    let samp_train = SamplingContext::build(g, 0..0, 0..0);

    let template = init_params(&hyper, seed)?;
    let mut tensors = template.tensors();
    let mut adam = AdamState::new(&tensors, AdamHyper::with_lr(cfg.lr));
    let mut rng_neg = RngStream::new(seed, StreamId::NegativeSampling);
    let mut rng_drop = RngStream::new(seed, StreamId::Dropout);

    let mut log = Vec::new();
    let mut epoch_train_losses = Vec::new();
    let mut epoch_val_ap = Vec::new();
    let mut best_ap = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_tensors = tensors.clone();
    let mut best_val = MetricReport {
        ap: f64::NAN,
        auc_roc: f64::NAN,
        n_pos: 0,
        n_neg: 0,
    };

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut start = split.train.start;
        while start < split.train.end {
            let end = (start + cfg.batch_size).min(split.train.end);
            let pos = batch_positives(g, start..end);
            // training always corrupts with the random strategy
            let neg = sample_negatives(
                NegativeStrategy::Random,
                &pos,
                &samp_train,
                &mut rng_neg,
                true,
            )?;
            let total = pos.len() + neg.len();
            let mut items: Vec<((usize, usize, f64), f64)> = Vec::with_capacity(total);
            items.extend(pos.into_iter().map(|p| (p, 1.0)));
            items.extend(neg.into_iter().map(|n| (n, 0.0)));

            let mut grad_acc: Vec<Tensor> = tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            let mut batch_loss = 0.0;
            for shard in items.chunks(cfg.shard_size.max(1)) {
                let mut tape = Tape::new();
                tape.train = true;
                let (vars, leaf_vars) =
                    ModelVars::bind_from(&mut tape, &template, &tensors, BindMode::Trainable);
                let mut logits = Vec::with_capacity(shard.len());
                let mut labels = Vec::with_capacity(shard.len());
                for &((u, v, t), y) in shard {
                    let (h_u, h_v) =
                        encode_pair(&mut tape, &vars, &ctx, u, v, t, &hyper, &mut rng_drop)?;
                    logits.push(link_logit(&mut tape, h_u, h_v, &vars.link));
                    labels.push(y);
                }
                let stacked = tape.concat_rows(&logits);
                let loss = tape.bce_with_logits_mean(stacked, &labels);
                let weight = shard.len() as f64 / total as f64;
                let scaled = tape.scale(loss, weight);
                let loss_val = tape.value(scaled).at(0, 0);
                if !loss_val.is_finite() {
                    return Err(CtdgError::Divergence(format!(
                        "non-finite loss in epoch {epoch} at event {start}"
                    )));
                }
                batch_loss += loss_val;
                let grads = tape.backward(scaled);
                for (acc, var) in grad_acc.iter_mut().zip(leaf_vars.iter()) {
                    if let Some(gradient) = grads.get(*var) {
                        for (a, v) in acc.data_mut().iter_mut().zip(gradient.data().iter()) {
                            *a += v;
                        }
                    }
                }
            }
            adam.step(&mut tensors, &grad_acc);
            epoch_loss += batch_loss;
            batches += 1;
            start = end;
        }
        let mean_loss = epoch_loss / batches as f64;
        epoch_train_losses.push(mean_loss);

        let val = evaluate_link_prediction(
            &template,
            &tensors,
            g,
            split,
            EvalSplit::Val,
            cfg.strategy,
            cfg,
            seed,
        )?;
        epoch_val_ap.push(val.report.ap);
        log.push(format!(
            "epoch,{epoch},train_loss,{mean_loss},val_ap,{},val_auc,{}",
            val.report.ap, val.report.auc_roc
        ));
        if val.report.ap > best_ap {
            best_ap = val.report.ap;
            best_epoch = epoch;
            best_tensors = tensors.clone();
            best_val = val.report;
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let mut params = template;
    params.set_tensors(&best_tensors);
    Ok(TrainedModel {
        params,
        best_epoch,
        best_val,
        epoch_train_losses,
        epoch_val_ap,
        log,
    })
}

/// Evaluate every configured edge-memory variant on the test split. The
/// memory covers train+val (or train only, per config); the window of the
/// test-span variant is the test duration.
pub fn run_edgebank(
    g: &TemporalGraph,
    split: &SplitView,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Vec<(EdgeBankVariant, MetricReport)>, CtdgError> {
    let observed_range = match cfg.memory_span {
        MemorySpan::TrainVal => 0..split.val.end,
        MemorySpan::TrainOnly => split.train.clone(),
    };
    let observed = &g.events[observed_range];
    let test_duration = g.duration(&split.test).max(f64::MIN_POSITIVE);
    let samp = SamplingContext::build(
        g,
        pool_range(EvalSplit::Test, split, cfg.history_pool),
        split.test.clone(),
    );

    let mut out = Vec::new();
    for &variant in &cfg.edgebank_variants {
        let memory = build_memory(
            variant,
            observed,
            Some(test_duration),
            Some(cfg.edgebank_threshold),
        )?;
        let mut rng = RngStream::new(seed, StreamId::NegativeSampling);
        let mut pos_scores = Vec::new();
        let mut neg_scores = Vec::new();
        let mut start = split.test.start;
        while start < split.test.end {
            let end = (start + cfg.batch_size).min(split.test.end);
            let pos = batch_positives(g, start..end);
            let neg = sample_negatives(cfg.strategy, &pos, &samp, &mut rng, cfg.allow_fallback)?;
            pos_scores.extend(edgebank_predict(&memory, &pos).into_iter().map(f64::from));
            neg_scores.extend(edgebank_predict(&memory, &neg).into_iter().map(f64::from));
            start = end;
        }
        out.push((variant, scored_report(&pos_scores, &neg_scores)?));
    }
    Ok(out)
}

/// The best-AP variant of an edge-memory run.
pub fn best_edgebank(results: &[(EdgeBankVariant, MetricReport)]) -> (EdgeBankVariant, MetricReport) {
    let mut best = results[0];
    for &(v, r) in &results[1..] {
        if r.ap > best.1.ap {
            best = (v, r);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct NodeClassifierOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub test_auc: f64,
}

fn labeled_items(g: &TemporalGraph, range: Range<usize>) -> Vec<(usize, usize, f64, f64)> {
    g.events[range]
        .iter()
        .filter_map(|e| {
            e.label
                .map(|l| (e.source, e.destination, e.timestamp, l as f64))
        })
        .collect()
}

fn node_scores(
    template: &ModelParams,
    tensors: &[Tensor],
    ctx: &GraphContext,
    items: &[(usize, usize, f64, f64)],
    hyper: &DyGFormerHyper,
    shard_size: usize,
) -> Result<Vec<f64>, CtdgError> {
    let mut rng = RngStream::new(0, StreamId::Dropout);
    let mut out = Vec::with_capacity(items.len());
    for shard in items.chunks(shard_size.max(1)) {
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind_from(&mut tape, template, tensors, BindMode::Frozen);
        for &(u, v, t, _) in shard {
            let (h_u, _) = encode_pair(&mut tape, &vars, ctx, u, v, t, hyper, &mut rng)?;
            let logit = node_logit(&mut tape, h_u, &vars.node);
            let s = tape.value(logit).at(0, 0);
            out.push(1.0 / (1.0 + (-s).exp()));
        }
    }
    Ok(out)
}

fn auc_of(items: &[(usize, usize, f64, f64)], scores: &[f64]) -> Result<f64, CtdgError> {
    let labels: Vec<u8> = items.iter().map(|&(_, _, _, y)| y as u8).collect();
    auc_roc(scores, &labels)
}

/// Train the node-state classifier on top of a link-prediction backbone.
/// By default the backbone stays frozen and only the head trains.
pub fn train_node_classifier(
    backbone: &ModelParams,
    g: &TemporalGraph,
    split: &SplitView,
    cfg: &RunConfig,
    seed: u64,
) -> Result<NodeClassifierOutcome, CtdgError> {
    let hyper = backbone.hyper;
    if hyper.d_n != g.d_n || hyper.d_e != g.d_e {
        return Err(CtdgError::Eval(
            "dimension mismatch between backbone and graph features".into(),
        ));
    }
    let index = build_neighbor_index(g);
    let ctx = GraphContext { graph: g, index: &index };

    let train_items = labeled_items(g, split.train.clone());
    let val_items = labeled_items(g, split.val.clone());
    let test_items = labeled_items(g, split.test.clone());
    if train_items.is_empty() || val_items.is_empty() || test_items.is_empty() {
        return Err(CtdgError::Data(
            "node classification requires labeled events in every split".into(),
        ));
    }

    let template = backbone.clone();
    let mut tensors = template.tensors();
    let names: Vec<String> = template.flatten().iter().map(|(n, _)| n.clone()).collect();
    let head_idx: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| cfg.node_head_joint || n.starts_with("node."))
        .map(|(i, _)| i)
        .collect();
    let mode = if cfg.node_head_joint {
        BindMode::Trainable
    } else {
        BindMode::OnlyPrefix("node.".into())
    };
    let mut head_tensors: Vec<Tensor> = head_idx.iter().map(|&i| tensors[i].clone()).collect();
    let mut adam = AdamState::new(&head_tensors, AdamHyper::with_lr(cfg.lr));
    let mut rng_drop = RngStream::new(seed, StreamId::Dropout);

    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_tensors = tensors.clone();

    for epoch in 1..=cfg.epochs {
        for batch in train_items.chunks(cfg.batch_size) {
            let mut grad_acc: Vec<Tensor> = head_tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            let total = batch.len();
            for shard in batch.chunks(cfg.shard_size.max(1)) {
                let mut tape = Tape::new();
                tape.train = true;
                let (vars, leaf_vars) =
                    ModelVars::bind_from(&mut tape, &template, &tensors, mode.clone());
                let mut logits = Vec::new();
                let mut labels = Vec::new();
                for &(u, v, t, y) in shard {
                    let (h_u, _) =
                        encode_pair(&mut tape, &vars, &ctx, u, v, t, &hyper, &mut rng_drop)?;
                    logits.push(node_logit(&mut tape, h_u, &vars.node));
                    labels.push(y);
                }
                let stacked = tape.concat_rows(&logits);
                let loss = tape.bce_with_logits_mean(stacked, &labels);
                let scaled = tape.scale(loss, shard.len() as f64 / total as f64);
                if !tape.value(scaled).at(0, 0).is_finite() {
                    return Err(CtdgError::Divergence(format!(
                        "non-finite classifier loss in epoch {epoch}"
                    )));
                }
                let grads = tape.backward(scaled);
                for (slot, &i) in head_idx.iter().enumerate() {
                    if let Some(gradient) = grads.get(leaf_vars[i]) {
                        for (a, v) in grad_acc[slot]
                            .data_mut()
                            .iter_mut()
                            .zip(gradient.data().iter())
                        {
                            *a += v;
                        }
                    }
                }
            }
            adam.step(&mut head_tensors, &grad_acc);
            for (slot, &i) in head_idx.iter().enumerate() {
                tensors[i] = head_tensors[slot].clone();
            }
        }
        let val_scores = node_scores(&template, &tensors, &ctx, &val_items, &hyper, cfg.shard_size)?;
        let val_auc = auc_of(&val_items, &val_scores)?;
        if val_auc > best_auc {
            best_auc = val_auc;
            best_epoch = epoch;
            best_tensors = tensors.clone();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let mut params = template;
    params.set_tensors(&best_tensors);
    let flat = params.tensors();
    let test_scores = node_scores(&params, &flat, &ctx, &test_items, &hyper, cfg.shard_size)?;
    let test_auc = auc_of(&test_items, &test_scores)?;
    Ok(NodeClassifierOutcome {
        params,
        best_epoch,
        best_val_auc: best_auc,
        test_auc,
    })
}

/// Central-difference check of the full link-prediction loss with respect
/// to every parameter tensor. Dropout must be disabled in the hyper.
pub fn grad_check_full_model(
    hyper: &DyGFormerHyper,
    g: &TemporalGraph,
    items: &[((usize, usize, f64), f64)],
    seed: u64,
    eps: f64,
) -> Result<crate::autodiff::GradCheckReport, CtdgError> {
    if hyper.dropout != 0.0 {
        return Err(CtdgError::Config(
            "gradient checking requires dropout = 0".into(),
        ));
    }
    let index = build_neighbor_index(g);
    let ctx = GraphContext { graph: g, index: &index };
    let template = init_params(hyper, seed)?;
    let points = template.tensors();
    let labels: Vec<f64> = items.iter().map(|&(_, y)| y).collect();
    let report = crate::autodiff::grad_check_many(
        |tape, vars| {
            let mv = ModelVars::assemble(&template, vars);
            let mut rng = RngStream::new(0, StreamId::Dropout);
            let mut logits = Vec::with_capacity(items.len());
            for &((u, v, t), _) in items {
                let (h_u, h_v) = encode_pair(tape, &mv, &ctx, u, v, t, hyper, &mut rng)
                    .expect("known nodes");
                logits.push(link_logit(tape, h_u, h_v, &mv.link));
            }
            let stacked = tape.concat_rows(&logits);
            tape.bce_with_logits_mean(stacked, &labels)
        },
        &points,
        eps,
    );
    Ok(report)
}

/// Sample mean and sample standard deviation (n-1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Content hash of the run inputs for the manifest.
pub fn content_hash(paths: &[&Path]) -> Result<String, CtdgError> {
    let mut hasher = Sha256::new();
    for p in paths {
        hasher.update(std::fs::read(p)?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

//! Per-sequence encodings: neighbor features, link features, periodic time
//! intervals, co-occurrence counts; patching and alignment into the model
//! width.
//!
//! All forward functions build onto a [`Tape`] so gradients flow back into
//! the trainable encoders.

use crate::autodiff::tape::{patch_count, Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::graph::TemporalGraph;
use crate::sequence::InteractionSequence;

/// Trainable frequencies of the cos/sin interval encoder; `w` is 1 x d_T/2.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncodingParams {
    pub w: Tensor,
}

impl TimeEncodingParams {
    /// Geometric decay across [1, 1e-9], the usual start for this encoder.
    pub fn geometric_init(d_t: usize) -> Self {
        assert!(d_t >= 2 && d_t % 2 == 0, "d_T must be even and >= 2");
        let m = d_t / 2;
        let freqs: Vec<f64> = (0..m)
            .map(|k| {
                if m == 1 {
                    1.0
                } else {
                    10f64.powf(-9.0 * k as f64 / (m - 1) as f64)
                }
            })
            .collect();
        TimeEncodingParams {
            w: Tensor::row(freqs),
        }
    }
}

/// Two-layer scalar-to-vector perceptron used by the co-occurrence encoder:
/// f(x) = ReLU(x*W_a + b_a)*W_b + b_b.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocEncoderParams {
    pub w_a: Tensor,
    pub b_a: Tensor,
    pub w_b: Tensor,
    pub b_b: Tensor,
}

/// Affine map taking one patched stream (width x P) into the shared width d.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchProjection {
    pub w: Tensor,
    pub b: Tensor,
}

/// Tape handles for one co-occurrence MLP.
#[derive(Debug, Clone, Copy)]
pub struct CoocVars {
    pub w_a: Var,
    pub b_a: Var,
    pub w_b: Var,
    pub b_b: Var,
}

/// Tape handles for everything `encode_sequence` needs.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub time_w: Var,
    pub cooc: CoocVars,
    /// Second MLP for the separate-occurrence variant.
    pub cooc_dst: Option<CoocVars>,
    /// Projection after concatenating the two separate encodings.
    pub sep_proj: Option<(Var, Var)>,
    pub proj_n: (Var, Var),
    pub proj_e: (Var, Var),
    pub proj_t: (Var, Var),
    pub proj_c: (Var, Var),
}

#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub patch_size: usize,
    pub d_t: usize,
    pub d: usize,
    pub use_te: bool,
    pub use_ncoe: bool,
    pub sep_no: bool,
}

/// One encoded sequence: `z` is num_patches x 4d with column blocks
/// [N | E | T | C]; `pad_mask[i]` marks patches made entirely of padding.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub z: Var,
    pub pad_mask: Vec<bool>,
}

/// cos/sin interval encoding: row i is
/// sqrt(1/d_T) * [cos(w_1 dt_i), sin(w_1 dt_i), ..., cos(w_m dt_i), sin(w_m dt_i)]
/// with m = d_T/2 trainable frequencies.
pub fn time_encode(tape: &mut Tape, deltas: &[f64], w: Var, d_t: usize) -> Var {
    assert!(d_t >= 2 && d_t % 2 == 0, "d_T must be even and >= 2");
    let m = d_t / 2;
    assert_eq!(tape.value(w).shape(), (1, m), "frequency vector must be 1x{m}");
    let n = deltas.len();
    let dcol = tape.constant(Tensor::from_vec(n, 1, deltas.to_vec()));
    let phases = tape.matmul(dcol, w);
    let c = tape.cos(phases);
    let s = tape.sin(phases);
    let both = tape.concat_cols(&[c, s]);
    let idx: Vec<usize> = (0..m).flat_map(|k| [k, m + k]).collect();
    let interleaved = tape.gather_cols(both, &idx);
    tape.scale(interleaved, (1.0 / d_t as f64).sqrt())
}

/// f(x) = ReLU(x*W_a + b_a)*W_b + b_b applied to a column of scalar counts.
pub fn cooc_mlp(tape: &mut Tape, x: Var, p: &CoocVars) -> Var {
    let h = tape.linear(x, p.w_a, p.b_a);
    let r = tape.relu(h);
    tape.linear(r, p.w_b, p.b_b)
}

/// Eq-style co-occurrence encoding: each count column goes through the shared
/// scalar MLP and the two images are summed.
pub fn cooccurrence_encode(tape: &mut Tape, counts: &[[u32; 2]], p: &CoocVars) -> Var {
    let n = counts.len();
    let c0 = tape.constant(Tensor::from_vec(
        n,
        1,
        counts.iter().map(|r| r[0] as f64).collect(),
    ));
    let c1 = tape.constant(Tensor::from_vec(
        n,
        1,
        counts.iter().map(|r| r[1] as f64).collect(),
    ));
    let f0 = cooc_mlp(tape, c0, p);
    let f1 = cooc_mlp(tape, c1, p);
    tape.add(f0, f1)
}

/// Separate-occurrence variant: each column gets its own MLP and the
/// concatenation is projected back to d_C.
pub fn cooccurrence_encode_separate(
    tape: &mut Tape,
    counts: &[[u32; 2]],
    src: &CoocVars,
    dst: &CoocVars,
    proj: (Var, Var),
) -> Var {
    let n = counts.len();
    let c0 = tape.constant(Tensor::from_vec(
        n,
        1,
        counts.iter().map(|r| r[0] as f64).collect(),
    ));
    let c1 = tape.constant(Tensor::from_vec(
        n,
        1,
        counts.iter().map(|r| r[1] as f64).collect(),
    ));
    let f0 = cooc_mlp(tape, c0, src);
    let f1 = cooc_mlp(tape, c1, dst);
    let cat = tape.concat_cols(&[f0, f1]);
    tape.linear(cat, proj.0, proj.1)
}

/// Divide rows into non-overlapping groups of P and flatten each group,
/// zero-padding the tail. Returns the patched matrix and the all-padding
/// mask.
pub fn patch(tape: &mut Tape, x: Var, p: usize) -> (Var, Vec<bool>) {
    let n = tape.value(x).rows();
    let l = patch_count(n, p);
    let out = tape.patch_rows(x, p);
    let mask = (0..l).map(|i| i * p >= n).collect();
    (out, mask)
}

/// Row-wise affine alignment into the shared width.
pub fn align(tape: &mut Tape, m: Var, w: Var, b: Var) -> Var {
    tape.linear(m, w, b)
}

fn neighbor_feature_matrix(seq: &InteractionSequence, g: &TemporalGraph) -> Tensor {
    let n = seq.len();
    let mut data = Vec::with_capacity(n * g.d_n);
    for e in &seq.entries {
        data.extend_from_slice(g.node_feature(e.neighbor));
    }
    Tensor::from_vec(n, g.d_n, data)
}

fn link_feature_matrix(seq: &InteractionSequence, g: &TemporalGraph) -> Tensor {
    let n = seq.len();
    let mut data = Vec::with_capacity(n * g.d_e);
    for e in &seq.entries {
        match e.event_index {
            Some(i) => data.extend_from_slice(&g.events[i].link_features),
            None => data.extend(std::iter::repeat(0.0).take(g.d_e)),
        }
    }
    Tensor::from_vec(n, g.d_e, data)
}

fn deltas(seq: &InteractionSequence) -> Vec<f64> {
    seq.entries
        .iter()
        .map(|e| match e.event_index {
            Some(_) => seq.anchor_time - e.timestamp,
            None => 0.0,
        })
        .collect()
}

/// Build the aligned, patched encoding of one sequence: the four streams
/// share patch boundaries and are concatenated as [N | E | T | C]. Disabled
/// streams contribute exactly-zero blocks.
pub fn encode_sequence(
    tape: &mut Tape,
    seq: &InteractionSequence,
    counts: &[[u32; 2]],
    g: &TemporalGraph,
    vars: &EncoderVars,
    opts: &EncodeOptions,
) -> EncodedSequence {
    assert_eq!(counts.len(), seq.len(), "count rows must match sequence length");
    let p = opts.patch_size;
    let l = patch_count(seq.len(), p);

    let x_n = tape.constant(neighbor_feature_matrix(seq, g));
    let (m_n, pad_mask) = patch(tape, x_n, p);
    let z_n = align(tape, m_n, vars.proj_n.0, vars.proj_n.1);

    let x_e = tape.constant(link_feature_matrix(seq, g));
    let (m_e, _) = patch(tape, x_e, p);
    let z_e = align(tape, m_e, vars.proj_e.0, vars.proj_e.1);

    let z_t = if opts.use_te {
        let dt = deltas(seq);
        let x_t = time_encode(tape, &dt, vars.time_w, opts.d_t);
        let (m_t, _) = patch(tape, x_t, p);
        align(tape, m_t, vars.proj_t.0, vars.proj_t.1)
    } else {
        tape.constant(Tensor::zeros(l, opts.d))
    };

    let z_c = if opts.use_ncoe {
        let x_c = if opts.sep_no {
            let dst = vars.cooc_dst.as_ref().expect("sep_no requires a second MLP");
            let proj = vars.sep_proj.expect("sep_no requires a projection");
            cooccurrence_encode_separate(tape, counts, &vars.cooc, dst, proj)
        } else {
            cooccurrence_encode(tape, counts, &vars.cooc)
        };
        let (m_c, _) = patch(tape, x_c, p);
        align(tape, m_c, vars.proj_c.0, vars.proj_c.1)
    } else {
        tape.constant(Tensor::zeros(l, opts.d))
    };

    let z = tape.concat_cols(&[z_n, z_e, z_t, z_c]);
    EncodedSequence { z, pad_mask }
}

//! The sequence-pair transformer: per-pair encodings, a stacked pre-LN
//! encoder over the concatenated source/destination patches, mean-pooled
//! output representations, and the link/node decoder heads.

use crate::autodiff::rng::{RngStream, StreamId};
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::autodiff::Checkpoint;
use crate::encoding::{
    encode_sequence, CoocEncoderParams, CoocVars, EncodeOptions, EncodedSequence, EncoderVars,
    PatchProjection, TimeEncodingParams,
};
use crate::error::CtdgError;
use crate::graph::{NeighborIndex, TemporalGraph};
use crate::sequence::{cooccurrence_counts, extract_first_hop, prepend_self, InteractionSequence};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Component switches. Defaults run the full model with the anchor node
/// included in its own sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationFlags {
    pub use_ncoe: bool,
    pub use_te: bool,
    pub mix_sequences: bool,
    pub sep_no: bool,
    pub include_self: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_ncoe: true,
            use_te: true,
            mix_sequences: true,
            sep_no: false,
            include_self: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyGFormerHyper {
    pub d_n: usize,
    pub d_e: usize,
    pub d_t: usize,
    pub d_c: usize,
    pub d: usize,
    pub d_out: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub patch_size: usize,
    pub dropout: f64,
    pub flags: AblationFlags,
}

impl Default for DyGFormerHyper {
    fn default() -> Self {
        DyGFormerHyper {
            d_n: 0,
            d_e: 0,
            d_t: 100,
            d_c: 50,
            d: 50,
            d_out: 172,
            heads: 2,
            layers: 2,
            max_len: 32,
            patch_size: 1,
            dropout: 0.1,
            flags: AblationFlags::default(),
        }
    }
}

impl DyGFormerHyper {
    pub fn channel_width(&self) -> usize {
        4 * self.d
    }

    pub fn head_width(&self) -> usize {
        self.channel_width() / self.heads
    }

    pub fn validate(&self) -> Result<(), CtdgError> {
        let bad = |msg: String| Err(CtdgError::Config(msg));
        if self.d == 0 || self.d_out == 0 || self.heads == 0 || self.layers == 0 {
            return bad("d, d_out, heads, and layers must be positive".into());
        }
        if self.channel_width() % self.heads != 0 {
            return bad(format!(
                "4d = {} must be divisible by the number of heads {}",
                self.channel_width(),
                self.heads
            ));
        }
        if self.d_t < 2 || self.d_t % 2 != 0 {
            return bad(format!("d_T = {} must be even and >= 2", self.d_t));
        }
        if self.d_c == 0 {
            return bad("d_C must be positive".into());
        }
        if self.max_len == 0 || self.patch_size == 0 {
            return bad("max_len and patch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0,1)", self.dropout));
        }
        Ok(())
    }

    fn manifest(&self) -> Vec<(String, String)> {
        let f = self.flags;
        vec![
            ("d_n".into(), self.d_n.to_string()),
            ("d_e".into(), self.d_e.to_string()),
            ("d_t".into(), self.d_t.to_string()),
            ("d_c".into(), self.d_c.to_string()),
            ("d".into(), self.d.to_string()),
            ("d_out".into(), self.d_out.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("patch_size".into(), self.patch_size.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("use_ncoe".into(), f.use_ncoe.to_string()),
            ("use_te".into(), f.use_te.to_string()),
            ("mix_sequences".into(), f.mix_sequences.to_string()),
            ("sep_no".into(), f.sep_no.to_string()),
            ("include_self".into(), f.include_self.to_string()),
        ]
    }

    fn from_manifest(ckpt: &Checkpoint) -> Result<DyGFormerHyper, CtdgError> {
        let get = |key: &str| -> Result<String, CtdgError> {
            ckpt.manifest_get(key)
                .map(|s| s.to_string())
                .ok_or_else(|| CtdgError::Checkpoint(format!("manifest missing `{key}`")))
        };
        let usize_of = |key: &str| -> Result<usize, CtdgError> {
            get(key)?
                .parse()
                .map_err(|_| CtdgError::Checkpoint(format!("bad manifest value for `{key}`")))
        };
        let bool_of = |key: &str| -> Result<bool, CtdgError> {
            get(key)?
                .parse()
                .map_err(|_| CtdgError::Checkpoint(format!("bad manifest value for `{key}`")))
        };
        Ok(DyGFormerHyper {
            d_n: usize_of("d_n")?,
            d_e: usize_of("d_e")?,
            d_t: usize_of("d_t")?,
            d_c: usize_of("d_c")?,
            d: usize_of("d")?,
            d_out: usize_of("d_out")?,
            heads: usize_of("heads")?,
            layers: usize_of("layers")?,
            max_len: usize_of("max_len")?,
            patch_size: usize_of("patch_size")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| CtdgError::Checkpoint("bad manifest value for `dropout`".into()))?,
            flags: AblationFlags {
                use_ncoe: bool_of("use_ncoe")?,
                use_te: bool_of("use_te")?,
                mix_sequences: bool_of("mix_sequences")?,
                sep_no: bool_of("sep_no")?,
                include_self: bool_of("include_self")?,
            },
        })
    }
}

/// Per-layer weights, shapes as in the encoder equations: per head
/// W_Q/W_K/W_V (4d x 4d/I), W_O (4d x 4d), FFN 4d -> 16d -> 4d, two
/// layer-norm gain/bias pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

/// One-hidden-layer perceptron head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: DyGFormerHyper,
    pub time: TimeEncodingParams,
    pub cooc: CoocEncoderParams,
    pub cooc_dst: Option<CoocEncoderParams>,
    pub sep_proj: Option<(Tensor, Tensor)>,
    pub proj_n: PatchProjection,
    pub proj_e: PatchProjection,
    pub proj_t: PatchProjection,
    pub proj_c: PatchProjection,
    pub layers: Vec<LayerParams>,
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub link_head: MlpParams,
    pub node_head: MlpParams,
}

fn glorot(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    let fan = (rows + cols) as f64;
    let a = (6.0 / fan).sqrt();
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform(-a, a)).collect(),
    )
}

fn ones(cols: usize) -> Tensor {
    Tensor::row(vec![1.0; cols])
}

/// Deterministic fan-scaled initialization: weights uniform with Glorot
/// bounds, biases zero, layer-norm gains one, geometric time frequencies.
pub fn init_params(hyper: &DyGFormerHyper, seed: u64) -> Result<ModelParams, CtdgError> {
    hyper.validate()?;
    let mut rng = RngStream::new(seed, StreamId::ParamInit);
    let d = hyper.d;
    let w4 = hyper.channel_width();
    let dk = hyper.head_width();
    let p = hyper.patch_size;

    let cooc_init = |rng: &mut RngStream| CoocEncoderParams {
        w_a: glorot(rng, 1, hyper.d_c),
        b_a: Tensor::zeros(1, hyper.d_c),
        w_b: glorot(rng, hyper.d_c, hyper.d_c),
        b_b: Tensor::zeros(1, hyper.d_c),
    };
    let proj_init = |rng: &mut RngStream, width: usize| PatchProjection {
        w: glorot(rng, width * p, d),
        b: Tensor::zeros(1, d),
    };

    let time = TimeEncodingParams::geometric_init(hyper.d_t);
    let cooc = cooc_init(&mut rng);
    let (cooc_dst, sep_proj) = if hyper.flags.sep_no {
        (
            Some(cooc_init(&mut rng)),
            Some((
                glorot(&mut rng, 2 * hyper.d_c, hyper.d_c),
                Tensor::zeros(1, hyper.d_c),
            )),
        )
    } else {
        (None, None)
    };
    let proj_n = proj_init(&mut rng, hyper.d_n);
    let proj_e = proj_init(&mut rng, hyper.d_e);
    let proj_t = proj_init(&mut rng, hyper.d_t);
    let proj_c = proj_init(&mut rng, hyper.d_c);

    let layers = (0..hyper.layers)
        .map(|_| LayerParams {
            wq: (0..hyper.heads).map(|_| glorot(&mut rng, w4, dk)).collect(),
            wk: (0..hyper.heads).map(|_| glorot(&mut rng, w4, dk)).collect(),
            wv: (0..hyper.heads).map(|_| glorot(&mut rng, w4, dk)).collect(),
            wo: glorot(&mut rng, hyper.heads * dk, w4),
            w1: glorot(&mut rng, w4, 4 * w4),
            b1: Tensor::zeros(1, 4 * w4),
            w2: glorot(&mut rng, 4 * w4, w4),
            b2: Tensor::zeros(1, w4),
            ln1_g: ones(w4),
            ln1_b: Tensor::zeros(1, w4),
            ln2_g: ones(w4),
            ln2_b: Tensor::zeros(1, w4),
        })
        .collect();

    let out_w = glorot(&mut rng, w4, hyper.d_out);
    let out_b = Tensor::zeros(1, hyper.d_out);
    let link_head = MlpParams {
        w1: glorot(&mut rng, 2 * hyper.d_out, hyper.d_out),
        b1: Tensor::zeros(1, hyper.d_out),
        w2: glorot(&mut rng, hyper.d_out, 1),
        b2: Tensor::zeros(1, 1),
    };
    let node_head = MlpParams {
        w1: glorot(&mut rng, hyper.d_out, hyper.d_out),
        b1: Tensor::zeros(1, hyper.d_out),
        w2: glorot(&mut rng, hyper.d_out, 1),
        b2: Tensor::zeros(1, 1),
    };

    Ok(ModelParams {
        hyper: *hyper,
        time,
        cooc,
        cooc_dst,
        sep_proj,
        proj_n,
        proj_e,
        proj_t,
        proj_c,
        layers,
        out_w,
        out_b,
        link_head,
        node_head,
    })
}

impl ModelParams {
    /// Named tensors in a fixed order shared by binding, gradients, Adam,
    /// and checkpoints.
    pub fn flatten(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("time.w".into(), &self.time.w)];
        for (prefix, c) in [("cooc", Some(&self.cooc)), ("cooc_dst", self.cooc_dst.as_ref())] {
            if let Some(c) = c {
                out.push((format!("{prefix}.w_a"), &c.w_a));
                out.push((format!("{prefix}.b_a"), &c.b_a));
                out.push((format!("{prefix}.w_b"), &c.w_b));
                out.push((format!("{prefix}.b_b"), &c.b_b));
            }
        }
        if let Some((w, b)) = &self.sep_proj {
            out.push(("sep.w".into(), w));
            out.push(("sep.b".into(), b));
        }
        for (name, p) in [
            ("proj_n", &self.proj_n),
            ("proj_e", &self.proj_e),
            ("proj_t", &self.proj_t),
            ("proj_c", &self.proj_c),
        ] {
            out.push((format!("{name}.w"), &p.w));
            out.push((format!("{name}.b"), &p.b));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, t) in layer.wq.iter().enumerate() {
                out.push((format!("layer{l}.wq{h}"), t));
            }
            for (h, t) in layer.wk.iter().enumerate() {
                out.push((format!("layer{l}.wk{h}"), t));
            }
            for (h, t) in layer.wv.iter().enumerate() {
                out.push((format!("layer{l}.wv{h}"), t));
            }
            out.push((format!("layer{l}.wo"), &layer.wo));
            out.push((format!("layer{l}.ffn.w1"), &layer.w1));
            out.push((format!("layer{l}.ffn.b1"), &layer.b1));
            out.push((format!("layer{l}.ffn.w2"), &layer.w2));
            out.push((format!("layer{l}.ffn.b2"), &layer.b2));
            out.push((format!("layer{l}.ln1.g"), &layer.ln1_g));
            out.push((format!("layer{l}.ln1.b"), &layer.ln1_b));
            out.push((format!("layer{l}.ln2.g"), &layer.ln2_g));
            out.push((format!("layer{l}.ln2.b"), &layer.ln2_b));
        }
        out.push(("out.w".into(), &self.out_w));
        out.push(("out.b".into(), &self.out_b));
        for (name, head) in [("link", &self.link_head), ("node", &self.node_head)] {
            out.push((format!("{name}.w1"), &head.w1));
            out.push((format!("{name}.b1"), &head.b1));
            out.push((format!("{name}.w2"), &head.w2));
            out.push((format!("{name}.b2"), &head.b2));
        }
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.flatten().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Overwrite every tensor from a flat list in `flatten` order.
    pub fn set_tensors(&mut self, tensors: &[Tensor]) {
        let names: Vec<String> = self.flatten().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names.len(), tensors.len(), "tensor count mismatch");
        let mut iter = tensors.iter().cloned();
        let mut next = || iter.next().unwrap();
        self.time.w = next();
        self.cooc.w_a = next();
        self.cooc.b_a = next();
        self.cooc.w_b = next();
        self.cooc.b_b = next();
        if let Some(c) = self.cooc_dst.as_mut() {
            c.w_a = next();
            c.b_a = next();
            c.w_b = next();
            c.b_b = next();
        }
        if let Some((w, b)) = self.sep_proj.as_mut() {
            *w = next();
            *b = next();
        }
        for p in [
            &mut self.proj_n,
            &mut self.proj_e,
            &mut self.proj_t,
            &mut self.proj_c,
        ] {
            p.w = next();
            p.b = next();
        }
        for layer in self.layers.iter_mut() {
            for t in layer.wq.iter_mut() {
                *t = next();
            }
            for t in layer.wk.iter_mut() {
                *t = next();
            }
            for t in layer.wv.iter_mut() {
                *t = next();
            }
            layer.wo = next();
            layer.w1 = next();
            layer.b1 = next();
            layer.w2 = next();
            layer.b2 = next();
            layer.ln1_g = next();
            layer.ln1_b = next();
            layer.ln2_g = next();
            layer.ln2_b = next();
        }
        self.out_w = next();
        self.out_b = next();
        for head in [&mut self.link_head, &mut self.node_head] {
            head.w1 = next();
            head.b1 = next();
            head.w2 = next();
            head.b2 = next();
        }
        assert!(iter.next().is_none());
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            manifest: self.hyper.manifest(),
            tensors: self
                .flatten()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ModelParams, CtdgError> {
        let hyper = DyGFormerHyper::from_manifest(ckpt)?;
        let mut params = init_params(&hyper, 0)?;
        let expected = params.flatten();
        if expected.len() != ckpt.tensors.len() {
            return Err(CtdgError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                ckpt.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(ckpt.tensors.len());
        for ((want_name, want), (got_name, got)) in expected.iter().zip(ckpt.tensors.iter()) {
            if want_name != got_name {
                return Err(CtdgError::Checkpoint(format!(
                    "tensor order mismatch: expected `{want_name}`, found `{got_name}`"
                )));
            }
            if want.shape() != got.shape() {
                return Err(CtdgError::Checkpoint(format!(
                    "tensor `{want_name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
            tensors.push(got.clone());
        }
        params.set_tensors(&tensors);
        Ok(params)
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerVars {
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    pub wv: Vec<Var>,
    pub wo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Which parameters record gradients when bound onto a tape.
#[derive(Debug, Clone)]
pub enum BindMode {
    Trainable,
    Frozen,
    /// Only tensors whose flat name starts with the prefix train (e.g.
    /// `node.` for classifier-head training on a frozen backbone).
    OnlyPrefix(String),
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub enc: EncoderVars,
    pub layers: Vec<LayerVars>,
    pub out_w: Var,
    pub out_b: Var,
    pub link: MlpVars,
    pub node: MlpVars,
}

impl ModelVars {
    /// Rebuild the structured view from vars laid out in `flatten` order.
    pub fn assemble(params: &ModelParams, vars: &[Var]) -> ModelVars {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("var list too short");
        let time_w = next();
        let cooc = CoocVars {
            w_a: next(),
            b_a: next(),
            w_b: next(),
            b_b: next(),
        };
        let cooc_dst = params.cooc_dst.as_ref().map(|_| CoocVars {
            w_a: next(),
            b_a: next(),
            w_b: next(),
            b_b: next(),
        });
        let sep_proj = params.sep_proj.as_ref().map(|_| (next(), next()));
        let proj_n = (next(), next());
        let proj_e = (next(), next());
        let proj_t = (next(), next());
        let proj_c = (next(), next());
        let layers = params
            .layers
            .iter()
            .map(|l| LayerVars {
                wq: (0..l.wq.len()).map(|_| next()).collect(),
                wk: (0..l.wk.len()).map(|_| next()).collect(),
                wv: (0..l.wv.len()).map(|_| next()).collect(),
                wo: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln1_g: next(),
                ln1_b: next(),
                ln2_g: next(),
                ln2_b: next(),
            })
            .collect();
        let out_w = next();
        let out_b = next();
        let link = MlpVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let node = MlpVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        assert!(it.next().is_none(), "var list too long");
        ModelVars {
            enc: EncoderVars {
                time_w,
                cooc,
                cooc_dst,
                sep_proj,
                proj_n,
                proj_e,
                proj_t,
                proj_c,
            },
            layers,
            out_w,
            out_b,
            link,
            node,
        }
    }

    /// Insert every parameter on the tape (as leaves when trainable,
    /// constants otherwise) and return the structured view plus the flat var
    /// list aligned with `ModelParams::flatten`.
    pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: bool) -> (ModelVars, Vec<Var>) {
        let tensors = params.tensors();
        let mode = if trainable {
            BindMode::Trainable
        } else {
            BindMode::Frozen
        };
        ModelVars::bind_from(tape, params, &tensors, mode)
    }

    /// Like `bind`, but the parameter values come from an external flat list
    /// (the optimizer's working copy); `template` only supplies structure.
    pub fn bind_from(
        tape: &mut Tape,
        template: &ModelParams,
        tensors: &[Tensor],
        mode: BindMode,
    ) -> (ModelVars, Vec<Var>) {
        let names: Vec<String> = template.flatten().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names.len(), tensors.len(), "tensor count mismatch");
        let vars: Vec<Var> = names
            .iter()
            .zip(tensors.iter())
            .map(|(name, t)| {
                let trainable = match &mode {
                    BindMode::Trainable => true,
                    BindMode::Frozen => false,
                    BindMode::OnlyPrefix(p) => name.starts_with(p.as_str()),
                };
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        (ModelVars::assemble(template, &vars), vars)
    }
}

/// One pre-LN encoder block: O = MSA(LN(z)) + z; out = FFN(LN(O)) + O.
/// Attention is scaled dot-product with per-head projections; the FFN is
/// GELU between two affine maps. Dropout hits the attention probabilities
/// and the FFN hidden activations.
pub fn transformer_layer(
    tape: &mut Tape,
    z: Var,
    layer: &LayerVars,
    heads: usize,
    dropout: f64,
    rng: &mut RngStream,
) -> Var {
    let dk = tape.value(layer.wq[0]).cols();
    let scale = 1.0 / (dk as f64).sqrt();

    let ln1 = tape.layer_norm_rows(z, layer.ln1_g, layer.ln1_b, LAYER_NORM_EPS);
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.matmul(ln1, layer.wq[h]);
        let k = tape.matmul(ln1, layer.wk[h]);
        let v = tape.matmul(ln1, layer.wv[h]);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, scale);
        let probs = tape.softmax_rows(scaled);
        let probs = tape.dropout(probs, dropout, rng);
        head_outs.push(tape.matmul(probs, v));
    }
    let cat = tape.concat_cols(&head_outs);
    let msa = tape.matmul(cat, layer.wo);
    let o = tape.add(msa, z);

    let ln2 = tape.layer_norm_rows(o, layer.ln2_g, layer.ln2_b, LAYER_NORM_EPS);
    let h1 = tape.linear(ln2, layer.w1, layer.b1);
    let act = tape.gelu(h1);
    let act = tape.dropout(act, dropout, rng);
    let ffn = tape.linear(act, layer.w2, layer.b2);
    tape.add(ffn, o)
}

/// Read-only graph context for the forward pass.
#[derive(Clone, Copy)]
pub struct GraphContext<'a> {
    pub graph: &'a TemporalGraph,
    pub index: &'a NeighborIndex,
}

/// The exact inputs the model sees for one scored pair: both truncated
/// first-hop sequences, self entries included when configured.
pub fn pair_sequences(
    ctx: &GraphContext,
    u: usize,
    v: usize,
    t: f64,
    hyper: &DyGFormerHyper,
) -> Result<(InteractionSequence, InteractionSequence), CtdgError> {
    let mut seq_u = extract_first_hop(ctx.index, u, t, hyper.max_len)?;
    let mut seq_v = extract_first_hop(ctx.index, v, t, hyper.max_len)?;
    if hyper.flags.include_self {
        prepend_self(&mut seq_u);
        prepend_self(&mut seq_v);
    }
    Ok((seq_u, seq_v))
}

fn section_rows(offset: usize, pad: &[bool]) -> Vec<usize> {
    let real: Vec<usize> = pad
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| offset + i)
        .collect();
    if real.is_empty() {
        // an all-padding section still yields a bias-derived representation
        (offset..offset + pad.len()).collect()
    } else {
        real
    }
}

/// Encode one (u, v, t) query into the pair of time-aware representations.
/// With sequence mixing on, both patch sequences run through the encoder
/// stack as one stacked input; the ablated variant runs each separately
/// through the same stack. Output means skip padding patches.
pub fn encode_pair(
    tape: &mut Tape,
    vars: &ModelVars,
    ctx: &GraphContext,
    u: usize,
    v: usize,
    t: f64,
    hyper: &DyGFormerHyper,
    rng: &mut RngStream,
) -> Result<(Var, Var), CtdgError> {
    let (seq_u, seq_v) = pair_sequences(ctx, u, v, t, hyper)?;
    let counts = cooccurrence_counts(&seq_u, &seq_v);
    let opts = EncodeOptions {
        patch_size: hyper.patch_size,
        d_t: hyper.d_t,
        d: hyper.d,
        use_te: hyper.flags.use_te,
        use_ncoe: hyper.flags.use_ncoe,
        sep_no: hyper.flags.sep_no,
    };
    let enc_u: EncodedSequence = encode_sequence(tape, &seq_u, &counts.c_src, ctx.graph, &vars.enc, &opts);
    let enc_v: EncodedSequence = encode_sequence(tape, &seq_v, &counts.c_dst, ctx.graph, &vars.enc, &opts);
    let l_u = enc_u.pad_mask.len();

    let (h_u, h_v) = if hyper.flags.mix_sequences {
        let mut z = tape.concat_rows(&[enc_u.z, enc_v.z]);
        for layer in &vars.layers {
            z = transformer_layer(tape, z, layer, hyper.heads, hyper.dropout, rng);
        }
        let rows_u = section_rows(0, &enc_u.pad_mask);
        let rows_v = section_rows(l_u, &enc_v.pad_mask);
        let mean_u = tape.mean_rows_subset(z, &rows_u);
        let mean_v = tape.mean_rows_subset(z, &rows_v);
        (mean_u, mean_v)
    } else {
        let mut zu = enc_u.z;
        let mut zv = enc_v.z;
        for layer in &vars.layers {
            zu = transformer_layer(tape, zu, layer, hyper.heads, hyper.dropout, rng);
        }
        for layer in &vars.layers {
            zv = transformer_layer(tape, zv, layer, hyper.heads, hyper.dropout, rng);
        }
        let rows_u = section_rows(0, &enc_u.pad_mask);
        let rows_v = section_rows(0, &enc_v.pad_mask);
        let mean_u = tape.mean_rows_subset(zu, &rows_u);
        let mean_v = tape.mean_rows_subset(zv, &rows_v);
        (mean_u, mean_v)
    };
    let h_u = tape.linear(h_u, vars.out_w, vars.out_b);
    let h_v = tape.linear(h_v, vars.out_w, vars.out_b);
    Ok((h_u, h_v))
}

/// Link decoder over the concatenated pair representation.
pub fn link_logit(tape: &mut Tape, h_u: Var, h_v: Var, head: &MlpVars) -> Var {
    let cat = tape.concat_cols(&[h_u, h_v]);
    let hidden = tape.linear(cat, head.w1, head.b1);
    let act = tape.relu(hidden);
    tape.linear(act, head.w2, head.b2)
}

/// Node-state classifier over one representation.
pub fn node_logit(tape: &mut Tape, h: Var, head: &MlpVars) -> Var {
    let hidden = tape.linear(h, head.w1, head.b1);
    let act = tape.relu(hidden);
    tape.linear(act, head.w2, head.b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_neighbor_index, generate_synthetic, SynthConfig};

    fn tiny_hyper() -> DyGFormerHyper {
        DyGFormerHyper {
            d_n: 0,
            d_e: 0,
            d_t: 4,
            d_c: 4,
            d: 2,
            d_out: 6,
            heads: 2,
            layers: 2,
            max_len: 8,
            patch_size: 2,
            dropout: 0.0,
            flags: AblationFlags::default(),
        }
    }

    fn rng() -> RngStream {
        RngStream::new(0, StreamId::Dropout)
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let hyper = tiny_hyper();
        let a = init_params(&hyper, 3).unwrap();
        let b = init_params(&hyper, 3).unwrap();
        assert_eq!(a, b);
        let c = init_params(&hyper, 4).unwrap();
        assert_ne!(a, c);
        for layer in &a.layers {
            assert!(layer.b1.data().iter().all(|v| *v == 0.0));
            assert!(layer.b2.data().iter().all(|v| *v == 0.0));
            assert!(layer.ln1_g.data().iter().all(|v| *v == 1.0));
        }
        assert!(a.out_b.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_variance_tracks_fan_based_target() {
        let hyper = DyGFormerHyper::default();
        let params = init_params(&hyper, 0).unwrap();
        // FFN W1 at default width: 200x800 entries, plenty for statistics
        let w = &params.layers[0].w1;
        assert!(w.len() >= 10_000);
        let n = w.len() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = 2.0 / (w.rows() + w.cols()) as f64;
        assert!(
            (var - target).abs() / target < 0.2,
            "var {var} vs target {target}"
        );
    }

    #[test]
    fn zero_weight_layer_is_identity() {
        let hyper = tiny_hyper();
        let mut params = init_params(&hyper, 0).unwrap();
        let w4 = hyper.channel_width();
        for layer in params.layers.iter_mut() {
            for t in layer
                .wq
                .iter_mut()
                .chain(layer.wk.iter_mut())
                .chain(layer.wv.iter_mut())
            {
                *t = Tensor::zeros(w4, hyper.head_width());
            }
            layer.wo = Tensor::zeros(w4, w4);
            layer.w1 = Tensor::zeros(w4, 4 * w4);
            layer.w2 = Tensor::zeros(4 * w4, w4);
        }
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let z0 = Tensor::from_vec(3, w4, (0..3 * w4).map(|i| (i as f64).sin()).collect());
        let z = tape.constant(z0.clone());
        let out = transformer_layer(&mut tape, z, &vars.layers[0], hyper.heads, 0.0, &mut rng());
        for (a, b) in tape.value(out).data().iter().zip(z0.data().iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        let hyper = tiny_hyper();
        let params = init_params(&hyper, 5).unwrap();
        let w4 = hyper.channel_width();
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let z0 = Tensor::from_vec(1, w4, (0..w4).map(|i| 0.3 * i as f64 - 1.0).collect());
        let z = tape.constant(z0.clone());
        let layer = &vars.layers[0];
        // reproduce the MSA branch by hand: softmax over one position is 1,
        // so each head output is LN(z) @ W_V
        let ln = tape.layer_norm_rows(z, layer.ln1_g, layer.ln1_b, LAYER_NORM_EPS);
        let mut heads = Vec::new();
        for h in 0..hyper.heads {
            heads.push(tape.matmul(ln, layer.wv[h]));
        }
        let cat = tape.concat_cols(&heads);
        let msa = tape.matmul(cat, layer.wo);
        let want_o = tape.add(msa, z);
        let ln2 = tape.layer_norm_rows(want_o, layer.ln2_g, layer.ln2_b, LAYER_NORM_EPS);
        let h1 = tape.linear(ln2, layer.w1, layer.b1);
        let act = tape.gelu(h1);
        let ffn = tape.linear(act, layer.w2, layer.b2);
        let want = tape.add(ffn, want_o);

        let got = transformer_layer(&mut tape, z, layer, hyper.heads, 0.0, &mut rng());
        for (a, b) in tape
            .value(got)
            .data()
            .iter()
            .zip(tape.value(want).data().iter())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_matches_straight_line_reimplementation() {
        // independent evaluation of the attention/FFN equations with loops
        let hyper = DyGFormerHyper {
            d: 2,
            heads: 2,
            ..tiny_hyper()
        };
        let params = init_params(&hyper, 11).unwrap();
        let w4 = hyper.channel_width();
        let dk = hyper.head_width();
        let n = 3;
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let z0 = Tensor::from_vec(
            n,
            w4,
            (0..n * w4).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect(),
        );
        let z = tape.constant(z0.clone());
        let got = transformer_layer(&mut tape, z, &vars.layers[0], hyper.heads, 0.0, &mut rng());

        let lp = &params.layers[0];
        let ln = |x: &Tensor, g: &Tensor, b: &Tensor| -> Tensor {
            let mut out = Tensor::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                let row = x.row_slice(i);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let var =
                    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..x.cols() {
                    out.set(i, j, (x.at(i, j) - mean) * inv * g.at(0, j) + b.at(0, j));
                }
            }
            out
        };
        let mm = |a: &Tensor, b: &Tensor| -> Tensor {
            let mut out = Tensor::zeros(a.rows(), b.cols());
            for i in 0..a.rows() {
                for j in 0..b.cols() {
                    let mut s = 0.0;
                    for k in 0..a.cols() {
                        s += a.at(i, k) * b.at(k, j);
                    }
                    out.set(i, j, s);
                }
            }
            out
        };
        let ln1 = ln(&z0, &lp.ln1_g, &lp.ln1_b);
        let mut head_cols: Vec<Tensor> = Vec::new();
        for h in 0..hyper.heads {
            let q = mm(&ln1, &lp.wq[h]);
            let k = mm(&ln1, &lp.wk[h]);
            let v = mm(&ln1, &lp.wv[h]);
            let mut probs = Tensor::zeros(n, n);
            for i in 0..n {
                let mut row = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for kk in 0..dk {
                        s += q.at(i, kk) * k.at(j, kk);
                    }
                    row[j] = s / (dk as f64).sqrt();
                }
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for j in 0..n {
                    probs.set(i, j, exps[j] / sum);
                }
            }
            head_cols.push(mm(&probs, &v));
        }
        let mut cat = Tensor::zeros(n, hyper.heads * dk);
        for (h, t) in head_cols.iter().enumerate() {
            for i in 0..n {
                for j in 0..dk {
                    cat.set(i, h * dk + j, t.at(i, j));
                }
            }
        }
        let msa = mm(&cat, &lp.wo);
        let mut o = Tensor::zeros(n, w4);
        for i in 0..n * w4 {
            o.data_mut()[i] = msa.data()[i] + z0.data()[i];
        }
        let ln2 = ln(&o, &lp.ln2_g, &lp.ln2_b);
        let mut h1 = mm(&ln2, &lp.w1);
        for i in 0..n {
            for j in 0..4 * w4 {
                let v = h1.at(i, j) + lp.b1.at(0, j);
                h1.set(i, j, crate::autodiff::tape::gelu_scalar(v));
            }
        }
        let mut f = mm(&h1, &lp.w2);
        for i in 0..n {
            for j in 0..w4 {
                let v = f.at(i, j) + lp.b2.at(0, j) + o.at(i, j);
                f.set(i, j, v);
            }
        }
        for (a, b) in tape.value(got).data().iter().zip(f.data().iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_are_stochastic_through_softmax() {
        // convexity check: with W_V the identity-ish map the attention output
        // rows stay inside the row convex hull; verified via the softmax rows
        let hyper = tiny_hyper();
        let params = init_params(&hyper, 2).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let w4 = hyper.channel_width();
        let z0 = Tensor::from_vec(4, w4, (0..4 * w4).map(|i| (i as f64 * 0.7).cos()).collect());
        let z = tape.constant(z0);
        let layer = &vars.layers[0];
        let ln1 = tape.layer_norm_rows(z, layer.ln1_g, layer.ln1_b, LAYER_NORM_EPS);
        let q = tape.matmul(ln1, layer.wq[0]);
        let k = tape.matmul(ln1, layer.wk[0]);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 1.0 / (hyper.head_width() as f64).sqrt());
        let probs = tape.softmax_rows(scaled);
        for i in 0..4 {
            let row = tape.value(probs).row_slice(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| *p >= 0.0));
        }
    }

    fn test_ctx(
        cfg: &SynthConfig,
        seed: u64,
    ) -> (crate::graph::TemporalGraph, crate::graph::NeighborIndex) {
        let g = generate_synthetic(cfg, seed).unwrap();
        let idx = build_neighbor_index(&g);
        (g, idx)
    }

    #[test]
    fn identical_node_pair_without_mixing_gives_equal_representations() {
        let cfg = SynthConfig {
            num_nodes: 10,
            num_events: 60,
            recurrence_bias: 0.5,
            d_e: 0,
            d_n: 0,
            seed: 0,
        };
        let (g, idx) = test_ctx(&cfg, 9);
        let mut hyper = tiny_hyper();
        hyper.flags.mix_sequences = false;
        let params = init_params(&hyper, 1).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let ctx = GraphContext {
            graph: &g,
            index: &idx,
        };
        let t = g.events.last().unwrap().timestamp + 1.0;
        let (h_u, h_v) =
            encode_pair(&mut tape, &vars, &ctx, 3, 3, t, &hyper, &mut rng()).unwrap();
        assert_eq!(tape.value(h_u).data(), tape.value(h_v).data());
    }

    #[test]
    fn historyless_pairs_depend_only_on_biases() {
        let cfg = SynthConfig {
            num_nodes: 8,
            num_events: 30,
            recurrence_bias: 0.0,
            d_e: 0,
            d_n: 0,
            seed: 0,
        };
        let (g, idx) = test_ctx(&cfg, 4);
        let mut hyper = tiny_hyper();
        hyper.flags.include_self = false;
        let params = init_params(&hyper, 1).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let ctx = GraphContext {
            graph: &g,
            index: &idx,
        };
        // t = 0 precedes all history for every node
        let (h_a, h_b) = encode_pair(&mut tape, &vars, &ctx, 0, 1, 0.0, &hyper, &mut rng()).unwrap();
        let (h_c, h_d) = encode_pair(&mut tape, &vars, &ctx, 5, 6, 0.0, &hyper, &mut rng()).unwrap();
        assert_eq!(tape.value(h_a).data(), tape.value(h_c).data());
        assert_eq!(tape.value(h_b).data(), tape.value(h_d).data());
        assert_eq!(tape.value(h_a).data(), tape.value(h_b).data());
    }

    #[test]
    fn ncoe_off_ignores_count_changes_te_off_ignores_time_shifts() {
        let cfg = SynthConfig {
            num_nodes: 12,
            num_events: 120,
            recurrence_bias: 0.6,
            d_e: 0,
            d_n: 0,
            seed: 0,
        };
        let (g, idx) = test_ctx(&cfg, 8);
        let ctx = GraphContext {
            graph: &g,
            index: &idx,
        };
        let t = g.events.last().unwrap().timestamp + 5.0;

        // NCoE off: representations across pairs with different co-occurrence
        // profiles but identical (empty) feature streams differ only through
        // sequence content; here we check exact invariance by rescoring the
        // same pair against a graph whose only difference is event repetition
        // counts is impossible to build cheaply, so instead verify the C
        // block is dead: gradients never reach the co-occurrence encoder.
        let mut hyper = tiny_hyper();
        hyper.flags.use_ncoe = false;
        let params = init_params(&hyper, 1).unwrap();
        let mut tape = Tape::new();
        let (vars, flat) = ModelVars::bind(&mut tape, &params, true);
        let (h_u, h_v) =
            encode_pair(&mut tape, &vars, &ctx, 0, 1, t, &hyper, &mut rng()).unwrap();
        let logit = link_logit(&mut tape, h_u, h_v, &vars.link);
        let loss = tape.bce_with_logits_mean(logit, &[1.0]);
        let grads = tape.backward(loss);
        let names: Vec<String> = params.flatten().iter().map(|(n, _)| n.clone()).collect();
        for (name, var) in names.iter().zip(flat.iter()) {
            if name.starts_with("cooc") || name.starts_with("proj_c") {
                assert!(
                    grads.get(*var).is_none()
                        || grads.get(*var).unwrap().data().iter().all(|v| *v == 0.0),
                    "gradient leaked into {name}"
                );
            }
        }

        // TE off: uniform time shift of the whole graph leaves outputs intact
        let mut hyper_te = tiny_hyper();
        hyper_te.flags.use_te = false;
        let params = init_params(&hyper_te, 2).unwrap();
        let score = |g: &crate::graph::TemporalGraph, t: f64| -> Vec<f64> {
            let idx = build_neighbor_index(g);
            let ctx = GraphContext { graph: g, index: &idx };
            let mut tape = Tape::new();
            let (vars, _) = ModelVars::bind(&mut tape, &params, false);
            let (h_u, h_v) =
                encode_pair(&mut tape, &vars, &ctx, 0, 1, t, &hyper_te, &mut rng()).unwrap();
            let logit = link_logit(&mut tape, h_u, h_v, &vars.link);
            vec![tape.value(logit).at(0, 0)]
        };
        let base = score(&g, t);
        let mut shifted = g.clone();
        for e in shifted.events.iter_mut() {
            e.timestamp += 1000.0;
        }
        let moved = score(&shifted, t + 1000.0);
        assert_eq!(base, moved);
    }

    #[test]
    fn decoder_heads_match_direct_evaluation() {
        let hyper = tiny_hyper();
        let params = init_params(&hyper, 7).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let hu = Tensor::row((0..hyper.d_out).map(|i| 0.1 * i as f64 - 0.2).collect());
        let hv = Tensor::row((0..hyper.d_out).map(|i| 0.3 - 0.05 * i as f64).collect());
        let (a, b) = (tape.constant(hu.clone()), tape.constant(hv.clone()));
        let logit = link_logit(&mut tape, a, b, &vars.link);

        let head = &params.link_head;
        let mut cat = hu.data().to_vec();
        cat.extend_from_slice(hv.data());
        let hidden: Vec<f64> = (0..hyper.d_out)
            .map(|j| {
                let mut s = head.b1.at(0, j);
                for (k, x) in cat.iter().enumerate() {
                    s += x * head.w1.at(k, j);
                }
                s.max(0.0)
            })
            .collect();
        let mut want = head.b2.at(0, 0);
        for (k, h) in hidden.iter().enumerate() {
            want += h * head.w2.at(k, 0);
        }
        assert!((tape.value(logit).at(0, 0) - want).abs() < 1e-12);

        // zero second-half weights make the logit invariant to h_v
        let mut params2 = params.clone();
        for r in hyper.d_out..2 * hyper.d_out {
            for c in 0..hyper.d_out {
                params2.link_head.w1.set(r, c, 0.0);
            }
        }
        let mut tape2 = Tape::new();
        let (vars2, _) = ModelVars::bind(&mut tape2, &params2, false);
        let a2 = tape2.constant(hu.clone());
        let b2 = tape2.constant(hv.clone());
        let l1 = link_logit(&mut tape2, a2, b2, &vars2.link);
        let other = tape2.constant(Tensor::row(vec![9.0; hyper.d_out]));
        let l2 = link_logit(&mut tape2, a2, other, &vars2.link);
        assert_eq!(tape2.value(l1).at(0, 0), tape2.value(l2).at(0, 0));
    }

    #[test]
    fn zero_decoder_weights_leave_bias_logit() {
        let hyper = tiny_hyper();
        let mut params = init_params(&hyper, 0).unwrap();
        params.node_head.w1 = Tensor::zeros(hyper.d_out, hyper.d_out);
        params.node_head.w2 = Tensor::zeros(hyper.d_out, 1);
        params.node_head.b2 = Tensor::scalar(0.37);
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);
        let h = tape.constant(Tensor::row(vec![5.0; hyper.d_out]));
        let logit = node_logit(&mut tape, h, &vars.node);
        assert_eq!(tape.value(logit).at(0, 0), 0.37);
    }

    #[test]
    fn checkpoint_round_trip_preserves_params() {
        let mut hyper = tiny_hyper();
        hyper.flags.sep_no = true;
        let params = init_params(&hyper, 13).unwrap();
        let ckpt = params.to_checkpoint();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        let restored = ModelParams::from_checkpoint(&back).unwrap();
        assert_eq!(params, restored);
    }

    #[test]
    fn padding_only_growth_leaves_representations_unchanged_with_zero_mixing_weights() {
        // With all transformer weights zero the stack is the identity, so the
        // output means must ignore appended all-padding patches exactly.
        let hyper = DyGFormerHyper {
            patch_size: 2,
            ..tiny_hyper()
        };
        let mut params = init_params(&hyper, 3).unwrap();
        let w4 = hyper.channel_width();
        for layer in params.layers.iter_mut() {
            for t in layer
                .wq
                .iter_mut()
                .chain(layer.wk.iter_mut())
                .chain(layer.wv.iter_mut())
            {
                *t = Tensor::zeros(w4, hyper.head_width());
            }
            layer.wo = Tensor::zeros(w4, w4);
            layer.w1 = Tensor::zeros(w4, 4 * w4);
            layer.w2 = Tensor::zeros(4 * w4, w4);
        }
        let mut tape = Tape::new();
        let (vars, _) = ModelVars::bind(&mut tape, &params, false);

        // a 4-entry sequence fills two patches exactly at P=2
        let entries: Vec<crate::sequence::SeqEntry> = (0..4)
            .map(|i| crate::sequence::SeqEntry {
                neighbor: i % 2,
                event_index: Some(i),
                timestamp: i as f64,
            })
            .collect();
        let seq = InteractionSequence {
            anchor: 0,
            anchor_time: 10.0,
            entries,
            max_len: 8,
        };
        let g = generate_synthetic(
            &SynthConfig {
                num_nodes: 4,
                num_events: 6,
                recurrence_bias: 0.0,
                d_e: 0,
                d_n: 0,
                seed: 0,
            },
            0,
        )
        .unwrap();
        let counts = cooccurrence_counts(&seq, &seq);
        let opts = EncodeOptions {
            patch_size: hyper.patch_size,
            d_t: hyper.d_t,
            d: hyper.d,
            use_te: true,
            use_ncoe: true,
            sep_no: false,
        };
        let enc = encode_sequence(&mut tape, &seq, &counts.c_src, &g, &vars.enc, &opts);
        // append one pure-padding patch: bias image of a zero patch
        let zero_patch = {
            let zn = tape.constant(Tensor::zeros(1, hyper.d_n * hyper.patch_size));
            let zeros_n = tape.linear(zn, vars.enc.proj_n.0, vars.enc.proj_n.1);
            let ze = tape.constant(Tensor::zeros(1, hyper.d_e * hyper.patch_size));
            let zeros_e = tape.linear(ze, vars.enc.proj_e.0, vars.enc.proj_e.1);
            let zt = tape.constant(Tensor::zeros(1, hyper.d_t * hyper.patch_size));
            let zeros_t = tape.linear(zt, vars.enc.proj_t.0, vars.enc.proj_t.1);
            let zc = tape.constant(Tensor::zeros(1, hyper.d_c * hyper.patch_size));
            let zeros_c = tape.linear(zc, vars.enc.proj_c.0, vars.enc.proj_c.1);
            tape.concat_cols(&[zeros_n, zeros_e, zeros_t, zeros_c])
        };
        let grown = tape.concat_rows(&[enc.z, zero_patch]);

        let run = |tape: &mut Tape, z: Var, pad: &[bool]| -> Vec<f64> {
            let mut cur = z;
            for layer in &vars.layers {
                cur = transformer_layer(tape, cur, layer, hyper.heads, 0.0, &mut rng());
            }
            let rows = section_rows(0, pad);
            let mean = tape.mean_rows_subset(cur, &rows);
            let h = tape.linear(mean, vars.out_w, vars.out_b);
            tape.value(h).data().to_vec()
        };
        let base = run(&mut tape, enc.z, &enc.pad_mask);
        let mut grown_mask = enc.pad_mask.clone();
        grown_mask.push(true);
        let with_pad = run(&mut tape, grown, &grown_mask);
        assert_eq!(base, with_pad);
    }
}

//! Network building blocks: linear maps, 1-D conv stacks, the
//! spatial-temporal graph pose encoder, transformer encoder/decoder stacks
//! with cross-attention, and a bidirectional GRU.
//!
//! Positions are passed explicitly everywhere: the sinusoidal encoding is
//! indexed by the *actual frame index* of each element, not its ordinal,
//! so irregular beat spacing is visible to the attention layers.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{orthogonal, xavier_uniform, Binder, ParamStore};
use super::tape::{PadMode, Tape, Var};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;
const LN_EPS: f64 = 1e-5;

/// Sinusoidal positional encoding, one column per entry of `positions`.
pub fn sinusoidal_positions(dim: usize, positions: &[usize]) -> Array2<f64> {
    let mut pe = Array2::zeros((dim, positions.len()));
    for (t, &pos) in positions.iter().enumerate() {
        for i in 0..dim.div_ceil(2) {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 * freq;
            pe[[2 * i, t]] = angle.sin();
            if 2 * i + 1 < dim {
                pe[[2 * i + 1, t]] = angle.cos();
            }
        }
    }
    pe
}

// ---------------------------------------------------------------- linear

#[derive(Debug, Clone)]
pub struct Linear {
    prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self { prefix: prefix.to_string(), in_dim, out_dim }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert(&format!("{}.w", self.prefix), xavier_uniform(rng, self.out_dim, self.in_dim));
        store.insert(&format!("{}.b", self.prefix), Array2::zeros((self.out_dim, 1)));
    }

    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape();
        let w = b.param(&format!("{}.w", self.prefix));
        let bias = b.param(&format!("{}.b", self.prefix));
        let y = t.matmul(w, x);
        let l = t.shape(y).1;
        t.add(y, t.broadcast_col(bias, l))
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

// ------------------------------------------------------------ conv stack

/// Stride-1, same-length 1-D convolutional encoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvEncoderConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden_channels: usize,
    pub kernel_sizes: Vec<usize>,
    pub strides: Vec<usize>,
}

impl ConvEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("conv encoder needs at least one layer".into()));
        }
        if self.strides.len() != self.kernel_sizes.len() {
            return Err(Error::Config("conv strides/kernels length mismatch".into()));
        }
        if self.strides.iter().any(|&s| s != 1) {
            return Err(Error::Config(
                "conv encoder is length-preserving; all strides must be 1".into(),
            ));
        }
        Ok(())
    }

    fn channel_plan(&self) -> Vec<(usize, usize)> {
        let n = self.kernel_sizes.len();
        (0..n)
            .map(|i| {
                let cin = if i == 0 { self.in_channels } else { self.hidden_channels };
                let cout = if i == n - 1 { self.out_channels } else { self.hidden_channels };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    prefix: String,
    pub cfg: ConvEncoderConfig,
}

impl ConvEncoder {
    pub fn new(prefix: &str, cfg: ConvEncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { prefix: prefix.to_string(), cfg })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for (i, ((cin, cout), &k)) in self
            .cfg
            .channel_plan()
            .iter()
            .zip(&self.cfg.kernel_sizes)
            .enumerate()
        {
            store.insert(&format!("{}.conv{i}.w", self.prefix), xavier_uniform(rng, *cout, cin * k));
            store.insert(&format!("{}.conv{i}.b", self.prefix), Array2::zeros((*cout, 1)));
        }
    }

    /// `(in_channels, L) -> (out_channels, L)`.
    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape();
        let n = self.cfg.kernel_sizes.len();
        let mut cur = x;
        for (i, &k) in self.cfg.kernel_sizes.iter().enumerate() {
            let w = b.param(&format!("{}.conv{i}.w", self.prefix));
            let bias = b.param(&format!("{}.conv{i}.b", self.prefix));
            cur = t.conv1d(cur, w, bias, k, PadMode::Zero);
            if i + 1 < n {
                cur = t.leaky_relu(cur, LEAKY_SLOPE);
            }
        }
        cur
    }

    pub fn param_count(&self) -> usize {
        self.cfg
            .channel_plan()
            .iter()
            .zip(&self.cfg.kernel_sizes)
            .map(|((cin, cout), &k)| cout * cin * k + cout)
            .sum()
    }
}

// ---------------------------------------------------- graph pose encoder

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraphPoseEncoderConfig {
    pub bones: usize,
    pub spatial_channels: (usize, usize),
    pub temporal_kernel: usize,
    pub temporal_hidden: usize,
    pub out_dim: usize,
}

impl GraphPoseEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bones == 0 || self.out_dim == 0 {
            return Err(Error::Config("graph encoder dims must be positive".into()));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::Config("temporal kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Two spatial graph convolutions over the bone adjacency followed by a
/// temporal conv stack. Masked frames carry a learned token; the mask/state
/// row itself joins the temporal stage as an extra feature row.
#[derive(Debug, Clone)]
pub struct GraphPoseEncoder {
    prefix: String,
    pub cfg: GraphPoseEncoderConfig,
    adjacency: Array2<f64>,
}

impl GraphPoseEncoder {
    pub fn new(prefix: &str, cfg: GraphPoseEncoderConfig, adjacency: Array2<f64>) -> Result<Self> {
        cfg.validate()?;
        if adjacency.dim() != (cfg.bones, cfg.bones) {
            return Err(Error::ShapeMismatch {
                context: "graph encoder adjacency".into(),
                expected: format!("({0}, {0})", cfg.bones),
                got: format!("{:?}", adjacency.dim()),
            });
        }
        // Row-normalized with self loops is required for the masked-token
        // broadcast property.
        for (i, row) in adjacency.rows().into_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-9 || adjacency[[i, i]] == 0.0 {
                return Err(Error::Config(
                    "adjacency must be row-normalized with self loops".into(),
                ));
            }
        }
        Ok(Self { prefix: prefix.to_string(), cfg, adjacency })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let (c1, c2) = self.cfg.spatial_channels;
        let nb = self.cfg.bones;
        let k = self.cfg.temporal_kernel;
        store.insert(&format!("{}.mask_token", self.prefix), xavier_uniform(rng, 3 * nb, 1));
        store.insert(&format!("{}.gc1.w", self.prefix), xavier_uniform(rng, c1, 3));
        store.insert(&format!("{}.gc1.b", self.prefix), Array2::zeros((c1, 1)));
        store.insert(&format!("{}.gc2.w", self.prefix), xavier_uniform(rng, c2, c1));
        store.insert(&format!("{}.gc2.b", self.prefix), Array2::zeros((c2, 1)));
        let tin = c2 * nb + 1;
        store.insert(
            &format!("{}.t1.w", self.prefix),
            xavier_uniform(rng, self.cfg.temporal_hidden, tin * k),
        );
        store.insert(&format!("{}.t1.b", self.prefix), Array2::zeros((self.cfg.temporal_hidden, 1)));
        store.insert(
            &format!("{}.t2.w", self.prefix),
            xavier_uniform(rng, self.cfg.out_dim, self.cfg.temporal_hidden * k),
        );
        store.insert(&format!("{}.t2.b", self.prefix), Array2::zeros((self.cfg.out_dim, 1)));
    }

    /// `bones` is `(3 * nb, L)` bone-major; `states[t] == 0` marks a masked
    /// column (no real pose), non-zero values distinguish pose provenance
    /// and are visible to the network as a feature row.
    pub fn forward(&self, b: &Binder, bones: Var, states: &[f64]) -> Var {
        let t = b.tape();
        let (rows, l) = t.shape(bones);
        assert_eq!(rows, 3 * self.cfg.bones, "graph encoder input rows");
        assert_eq!(states.len(), l, "graph encoder state length");
        let token = b.param(&format!("{}.mask_token", self.prefix));
        let x = t.mask_columns(bones, token, states);
        let g1 = t.leaky_relu(
            t.graph_conv(
                x,
                b.param(&format!("{}.gc1.w", self.prefix)),
                b.param(&format!("{}.gc1.b", self.prefix)),
                &self.adjacency,
            ),
            LEAKY_SLOPE,
        );
        let g2 = t.leaky_relu(
            t.graph_conv(
                g1,
                b.param(&format!("{}.gc2.w", self.prefix)),
                b.param(&format!("{}.gc2.b", self.prefix)),
                &self.adjacency,
            ),
            LEAKY_SLOPE,
        );
        let state_row = b.constant(Array2::from_shape_fn((1, l), |(_, c)| states[c]));
        let cat = t.concat_rows(&[g2, state_row]);
        let k = self.cfg.temporal_kernel;
        let h = t.leaky_relu(
            t.conv1d(
                cat,
                b.param(&format!("{}.t1.w", self.prefix)),
                b.param(&format!("{}.t1.b", self.prefix)),
                k,
                PadMode::Replicate,
            ),
            LEAKY_SLOPE,
        );
        t.conv1d(
            h,
            b.param(&format!("{}.t2.w", self.prefix)),
            b.param(&format!("{}.t2.b", self.prefix)),
            k,
            PadMode::Replicate,
        )
    }

    pub fn param_count(&self) -> usize {
        let (c1, c2) = self.cfg.spatial_channels;
        let nb = self.cfg.bones;
        let k = self.cfg.temporal_kernel;
        let tin = c2 * nb + 1;
        3 * nb // mask token
            + c1 * 3 + c1
            + c2 * c1 + c2
            + self.cfg.temporal_hidden * tin * k + self.cfg.temporal_hidden
            + self.cfg.out_dim * self.cfg.temporal_hidden * k + self.cfg.out_dim
    }
}

// ------------------------------------------------------------ transformer

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.blocks == 0 {
            return Err(Error::Config("transformer dims must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Multi-head attention; `mask` is added to the scores before softmax.
#[allow(clippy::too_many_arguments)]
fn attention(
    t: &Tape,
    b: &Binder,
    prefix: &str,
    q_src: Var,
    kv_src: Var,
    heads: usize,
    model_dim: usize,
    mask: Option<&Array2<f64>>,
) -> Var {
    let lq = t.shape(q_src).1;
    let lk = t.shape(kv_src).1;
    let proj = |name: &str, src: Var| -> Var {
        let w = b.param(&format!("{prefix}.{name}.w"));
        let bias = b.param(&format!("{prefix}.{name}.b"));
        let l = t.shape(src).1;
        t.add(t.matmul(w, src), t.broadcast_col(bias, l))
    };
    let q = proj("wq", q_src);
    let k = proj("wk", kv_src);
    let v = proj("wv", kv_src);
    let dk = model_dim / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (r0, r1) = (h * dk, (h + 1) * dk);
        let qh = t.slice_rows(q, r0, r1);
        let kh = t.slice_rows(k, r0, r1);
        let vh = t.slice_rows(v, r0, r1);
        let scaled = t.scale(t.matmul(t.transpose(qh), kh), scale);
        let scores = match mask {
            Some(m) => {
                debug_assert_eq!(m.dim(), (lq, lk));
                t.add(scaled, t.constant(m.clone()))
            }
            None => scaled,
        };
        let attn = t.softmax_rows(scores);
        head_outs.push(t.matmul(vh, t.transpose(attn)));
    }
    let cat = t.concat_rows(&head_outs);
    let wo = b.param(&format!("{prefix}.wo.w"));
    let bo = b.param(&format!("{prefix}.wo.b"));
    t.add(t.matmul(wo, cat), t.broadcast_col(bo, lq))
}

fn init_attention(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, model_dim: usize, kv_dim: usize) {
    for (name, rows, cols) in [
        ("wq", model_dim, model_dim),
        ("wk", model_dim, kv_dim),
        ("wv", model_dim, kv_dim),
        ("wo", model_dim, model_dim),
    ] {
        store.insert(&format!("{prefix}.{name}.w"), xavier_uniform(rng, rows, cols));
        store.insert(&format!("{prefix}.{name}.b"), Array2::zeros((rows, 1)));
    }
}

fn attention_param_count(model_dim: usize, kv_dim: usize) -> usize {
    (model_dim * model_dim + model_dim) * 2 + (model_dim * kv_dim + model_dim) * 2
}

fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(&format!("{prefix}.g"), Array2::ones((dim, 1)));
    store.insert(&format!("{prefix}.b"), Array2::zeros((dim, 1)));
}

fn layer_norm(t: &Tape, b: &Binder, prefix: &str, x: Var) -> Var {
    t.layer_norm(x, b.param(&format!("{prefix}.g")), b.param(&format!("{prefix}.b")), LN_EPS)
}

fn feed_forward(t: &Tape, b: &Binder, prefix: &str, x: Var) -> Var {
    let l = t.shape(x).1;
    let w1 = b.param(&format!("{prefix}.ff1.w"));
    let b1 = b.param(&format!("{prefix}.ff1.b"));
    let w2 = b.param(&format!("{prefix}.ff2.w"));
    let b2 = b.param(&format!("{prefix}.ff2.b"));
    let h = t.gelu(t.add(t.matmul(w1, x), t.broadcast_col(b1, l)));
    t.add(t.matmul(w2, h), t.broadcast_col(b2, l))
}

fn maybe_dropout(t: &Tape, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
    if p <= 0.0 {
        return x;
    }
    let Some(rng) = rng.as_deref_mut() else { return x };
    let dim = t.shape(x);
    let mask = Array2::from_shape_fn(dim, |_| if rng.random_range(0.0..1.0) < p { 0.0 } else { 1.0 });
    t.dropout(x, &mask, p)
}

/// Pre-norm transformer encoder: self-attention over the (position-encoded)
/// input, optional cross-attention to a second feature stream, feed-forward.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    prefix: String,
    pub cfg: TransformerConfig,
    pub in_dim: usize,
    /// Feature dimension of the cross-attended stream, when used.
    pub cross_dim: Option<usize>,
}

impl TransformerEncoder {
    pub fn new(prefix: &str, cfg: TransformerConfig, in_dim: usize, cross_dim: Option<usize>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { prefix: prefix.to_string(), cfg, in_dim, cross_dim })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let d = self.cfg.model_dim;
        store.insert(&format!("{}.inproj.w", self.prefix), xavier_uniform(rng, d, self.in_dim));
        store.insert(&format!("{}.inproj.b", self.prefix), Array2::zeros((d, 1)));
        for blk in 0..self.cfg.blocks {
            let p = format!("{}.blk{blk}", self.prefix);
            init_layer_norm(store, &format!("{p}.ln1"), d);
            init_attention(store, rng, &format!("{p}.self"), d, d);
            if let Some(cd) = self.cross_dim {
                init_layer_norm(store, &format!("{p}.lnc"), d);
                init_attention(store, rng, &format!("{p}.cross"), d, cd);
            }
            init_layer_norm(store, &format!("{p}.ln2"), d);
            store.insert(&format!("{p}.ff1.w"), xavier_uniform(rng, self.cfg.feedforward_dim, d));
            store.insert(&format!("{p}.ff1.b"), Array2::zeros((self.cfg.feedforward_dim, 1)));
            store.insert(&format!("{p}.ff2.w"), xavier_uniform(rng, d, self.cfg.feedforward_dim));
            store.insert(&format!("{p}.ff2.b"), Array2::zeros((d, 1)));
        }
        init_layer_norm(store, &format!("{}.lnf", self.prefix), d);
    }

    /// `seq` is `(in_dim, L)`; `positions` are the actual frame indices of
    /// the L columns; `cross` is an optional `(cross_dim, L')` memory.
    pub fn forward(
        &self,
        b: &Binder,
        seq: Var,
        positions: &[usize],
        cross: Option<Var>,
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let t = b.tape();
        assert_eq!(t.shape(seq).1, positions.len(), "positions per column");
        assert_eq!(cross.is_some(), self.cross_dim.is_some(), "cross stream contract");
        let d = self.cfg.model_dim;
        let l = positions.len();
        let w = b.param(&format!("{}.inproj.w", self.prefix));
        let bias = b.param(&format!("{}.inproj.b", self.prefix));
        let mut x = t.add(t.matmul(w, seq), t.broadcast_col(bias, l));
        x = t.add(x, b.constant(sinusoidal_positions(d, positions)));
        for blk in 0..self.cfg.blocks {
            let p = format!("{}.blk{blk}", self.prefix);
            let normed = layer_norm(t, b, &format!("{p}.ln1"), x);
            let attn = attention(t, b, &format!("{p}.self"), normed, normed, self.cfg.heads, d, None);
            let attn = maybe_dropout(t, attn, self.cfg.dropout, &mut drop_rng);
            x = t.add(x, attn);
            if let Some(mem) = cross {
                let normed = layer_norm(t, b, &format!("{p}.lnc"), x);
                let ca = attention(t, b, &format!("{p}.cross"), normed, mem, self.cfg.heads, d, None);
                let ca = maybe_dropout(t, ca, self.cfg.dropout, &mut drop_rng);
                x = t.add(x, ca);
            }
            let normed = layer_norm(t, b, &format!("{p}.ln2"), x);
            let ff = feed_forward(t, b, &p, normed);
            let ff = maybe_dropout(t, ff, self.cfg.dropout, &mut drop_rng);
            x = t.add(x, ff);
        }
        layer_norm(t, b, &format!("{}.lnf", self.prefix), x)
    }

    pub fn param_count(&self) -> usize {
        let d = self.cfg.model_dim;
        let f = self.cfg.feedforward_dim;
        let mut per_block = 2 * d + attention_param_count(d, d) + 2 * d + (f * d + f) + (d * f + d);
        if let Some(cd) = self.cross_dim {
            per_block += 2 * d + attention_param_count(d, cd);
        }
        (d * self.in_dim + d) + self.cfg.blocks * per_block + 2 * d
    }
}

/// Decoding mode for [`TransformerDecoder::forward`].
#[derive(Debug)]
pub enum DecodeMode<'a> {
    /// Learned query embeddings; the whole sequence is produced at once.
    OneShot,
    /// Causal decoding that consumes its own previous outputs.
    Autoregressive {
        /// Override for the fed-back outputs (teacher forcing). Column `t`
        /// is the output fed back when producing column `t + 1`.
        feedback: Option<&'a Array2<f64>>,
    },
}

/// Pre-norm transformer decoder with cross-attention to a memory sequence
/// and a linear output head.
#[derive(Debug, Clone)]
pub struct TransformerDecoder {
    prefix: String,
    pub cfg: TransformerConfig,
    pub mem_dim: usize,
    pub out_dim: usize,
}

impl TransformerDecoder {
    pub fn new(prefix: &str, cfg: TransformerConfig, mem_dim: usize, out_dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { prefix: prefix.to_string(), cfg, mem_dim, out_dim })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let d = self.cfg.model_dim;
        store.insert(&format!("{}.query_token", self.prefix), xavier_uniform(rng, d, 1));
        store.insert(&format!("{}.start_token", self.prefix), xavier_uniform(rng, d, 1));
        store.insert(&format!("{}.fb.w", self.prefix), xavier_uniform(rng, d, self.out_dim));
        store.insert(&format!("{}.fb.b", self.prefix), Array2::zeros((d, 1)));
        for blk in 0..self.cfg.blocks {
            let p = format!("{}.blk{blk}", self.prefix);
            init_layer_norm(store, &format!("{p}.ln1"), d);
            init_attention(store, rng, &format!("{p}.self"), d, d);
            init_layer_norm(store, &format!("{p}.lnc"), d);
            init_attention(store, rng, &format!("{p}.cross"), d, self.mem_dim);
            init_layer_norm(store, &format!("{p}.ln2"), d);
            store.insert(&format!("{p}.ff1.w"), xavier_uniform(rng, self.cfg.feedforward_dim, d));
            store.insert(&format!("{p}.ff1.b"), Array2::zeros((self.cfg.feedforward_dim, 1)));
            store.insert(&format!("{p}.ff2.w"), xavier_uniform(rng, d, self.cfg.feedforward_dim));
            store.insert(&format!("{p}.ff2.b"), Array2::zeros((d, 1)));
        }
        init_layer_norm(store, &format!("{}.lnf", self.prefix), d);
        store.insert(&format!("{}.out.w", self.prefix), xavier_uniform(rng, self.out_dim, d));
        store.insert(&format!("{}.out.b", self.prefix), Array2::zeros((self.out_dim, 1)));
    }

    fn run_blocks(
        &self,
        b: &Binder,
        mut x: Var,
        memory: Var,
        mask: Option<&Array2<f64>>,
        drop_rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Var {
        let t = b.tape();
        let d = self.cfg.model_dim;
        for blk in 0..self.cfg.blocks {
            let p = format!("{}.blk{blk}", self.prefix);
            let normed = layer_norm(t, b, &format!("{p}.ln1"), x);
            let attn = attention(t, b, &format!("{p}.self"), normed, normed, self.cfg.heads, d, mask);
            let attn = maybe_dropout(t, attn, self.cfg.dropout, drop_rng);
            x = t.add(x, attn);
            let normed = layer_norm(t, b, &format!("{p}.lnc"), x);
            let ca = attention(t, b, &format!("{p}.cross"), normed, memory, self.cfg.heads, d, None);
            let ca = maybe_dropout(t, ca, self.cfg.dropout, drop_rng);
            x = t.add(x, ca);
            let normed = layer_norm(t, b, &format!("{p}.ln2"), x);
            let ff = feed_forward(t, b, &p, normed);
            let ff = maybe_dropout(t, ff, self.cfg.dropout, drop_rng);
            x = t.add(x, ff);
        }
        layer_norm(t, b, &format!("{}.lnf", self.prefix), x)
    }

    fn out_proj(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape();
        let w = b.param(&format!("{}.out.w", self.prefix));
        let bias = b.param(&format!("{}.out.b", self.prefix));
        let l = t.shape(x).1;
        t.add(t.matmul(w, x), t.broadcast_col(bias, l))
    }

    /// Decodes `target_positions.len()` columns of `out_dim` values.
    pub fn forward(
        &self,
        b: &Binder,
        memory: Var,
        target_positions: &[usize],
        mode: DecodeMode<'_>,
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let t = b.tape();
        let d = self.cfg.model_dim;
        let l = target_positions.len();
        assert!(l >= 1, "decoder needs at least one target position");
        match mode {
            DecodeMode::OneShot => {
                let q = b.param(&format!("{}.query_token", self.prefix));
                let x = t.add(
                    t.broadcast_col(q, l),
                    b.constant(sinusoidal_positions(d, target_positions)),
                );
                let y = self.run_blocks(b, x, memory, None, &mut drop_rng);
                self.out_proj(b, y)
            }
            DecodeMode::Autoregressive { feedback: Some(fb) } => {
                assert_eq!(fb.ncols(), l, "feedback column count");
                assert_eq!(fb.nrows(), self.out_dim, "feedback rows");
                let x = self.teacher_inputs(b, fb, target_positions);
                let mask = causal_mask(l);
                let y = self.run_blocks(b, x, memory, Some(&mask), &mut drop_rng);
                self.out_proj(b, y)
            }
            DecodeMode::Autoregressive { feedback: None } => {
                // Sequential decoding: rebuild the causal pass over the
                // prefix at each step, feeding back the produced columns.
                let mut produced: Vec<Var> = Vec::with_capacity(l);
                for step in 0..l {
                    let x = self.self_feedback_inputs(b, &produced, &target_positions[..=step]);
                    let mask = causal_mask(step + 1);
                    let y = self.run_blocks(b, x, memory, Some(&mask), &mut drop_rng);
                    let out = self.out_proj(b, y);
                    let last = t.slice_cols(out, step, step + 1);
                    produced.push(last);
                }
                t.concat_cols(&produced)
            }
        }
    }

    /// Shifted-right inputs: start token, then the embedded feedback.
    fn teacher_inputs(&self, b: &Binder, fb: &Array2<f64>, positions: &[usize]) -> Var {
        let t = b.tape();
        let l = positions.len();
        let start = b.param(&format!("{}.start_token", self.prefix));
        let mut cols = vec![start];
        if l > 1 {
            let prev = b.constant(fb.slice(ndarray::s![.., ..l - 1]).to_owned());
            let w = b.param(&format!("{}.fb.w", self.prefix));
            let bias = b.param(&format!("{}.fb.b", self.prefix));
            let emb = t.add(t.matmul(w, prev), t.broadcast_col(bias, l - 1));
            cols.push(emb);
        }
        let x = t.concat_cols(&cols);
        t.add(x, b.constant(sinusoidal_positions(self.cfg.model_dim, positions)))
    }

    fn self_feedback_inputs(&self, b: &Binder, produced: &[Var], positions: &[usize]) -> Var {
        let t = b.tape();
        let l = positions.len();
        let start = b.param(&format!("{}.start_token", self.prefix));
        let mut cols = vec![start];
        if l > 1 {
            let prev = t.concat_cols(&produced[..l - 1]);
            let w = b.param(&format!("{}.fb.w", self.prefix));
            let bias = b.param(&format!("{}.fb.b", self.prefix));
            cols.push(t.add(t.matmul(w, prev), t.broadcast_col(bias, l - 1)));
        }
        let x = t.concat_cols(&cols);
        t.add(x, b.constant(sinusoidal_positions(self.cfg.model_dim, positions)))
    }

    pub fn param_count(&self) -> usize {
        let d = self.cfg.model_dim;
        let f = self.cfg.feedforward_dim;
        let per_block = 2 * d
            + attention_param_count(d, d)
            + 2 * d
            + attention_param_count(d, self.mem_dim)
            + 2 * d
            + (f * d + f)
            + (d * f + d);
        2 * d // query + start tokens
            + (d * self.out_dim + d) // feedback embedding
            + self.cfg.blocks * per_block
            + 2 * d // final norm
            + (self.out_dim * d + self.out_dim)
    }
}

fn causal_mask(l: usize) -> Array2<f64> {
    Array2::from_shape_fn((l, l), |(i, j)| if j > i { -1e30 } else { 0.0 })
}

// ------------------------------------------------------------------ bigru

#[derive(Debug, Clone)]
pub struct BiGru {
    prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl BiGru {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize) -> Self {
        Self { prefix: prefix.to_string(), in_dim, hidden }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for dir in ["fwd", "bwd"] {
            for gate in ["z", "r", "h"] {
                store.insert(
                    &format!("{}.{dir}.w{gate}", self.prefix),
                    xavier_uniform(rng, self.hidden, self.in_dim),
                );
                store.insert(&format!("{}.{dir}.u{gate}", self.prefix), orthogonal(rng, self.hidden));
                store.insert(&format!("{}.{dir}.b{gate}", self.prefix), Array2::zeros((self.hidden, 1)));
            }
        }
    }

    fn dir_forward(&self, b: &Binder, x: Var, dir: &str) -> Var {
        let t = b.tape();
        let p = |n: &str| b.param(&format!("{}.{dir}.{n}", self.prefix));
        t.gru(
            x,
            p("wz"),
            p("uz"),
            p("bz"),
            p("wr"),
            p("ur"),
            p("br"),
            p("wh"),
            p("uh"),
            p("bh"),
        )
    }

    /// `(in_dim, L) -> (2 * hidden, L)`: forward states stacked on
    /// (time-realigned) backward states.
    pub fn forward(&self, b: &Binder, x: Var) -> Var {
        let t = b.tape();
        let fwd = self.dir_forward(b, x, "fwd");
        let rev_in = t.reverse_cols(x);
        let bwd_rev = self.dir_forward(b, rev_in, "bwd");
        let bwd = t.reverse_cols(bwd_rev);
        t.concat_rows(&[fwd, bwd])
    }

    pub fn param_count(&self) -> usize {
        2 * 3 * (self.hidden * self.in_dim + self.hidden * self.hidden + self.hidden)
    }
}

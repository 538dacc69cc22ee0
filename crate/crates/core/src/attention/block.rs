use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

use super::bias::{BiasIndex, BiasTables};
use super::config::{Activation, BiasKind, BlockConfig};

pub const INIT_STD: f64 = 0.02;

/// Slots of one block's tensors inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w_uqkv: usize,
    pub b_uqkv: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub ln1: (usize, usize),
    pub ln2: (usize, usize),
    pub ln_attn: Option<(usize, usize)>,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
    pub pos_table: Option<usize>,
    pub time_table: Option<usize>,
}

/// The same tensors after they were placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    w_uqkv: Var,
    b_uqkv: Var,
    w_out: Var,
    b_out: Var,
    ln1: (Var, Var),
    ln2: (Var, Var),
    ln_attn: Option<(Var, Var)>,
    ffn_w1: Var,
    ffn_b1: Var,
    ffn_w2: Var,
    ffn_b2: Var,
    pos_table: Option<Var>,
    time_table: Option<Var>,
}

fn add_ln<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, name: &str, d: usize) -> (usize, usize) {
    (
        store.add(format!("{prefix}.{name}.gamma"), Tensor::full(&[d], T::one())),
        store.add(format!("{prefix}.{name}.beta"), Tensor::zeros(&[d])),
    )
}

impl BlockParams {
    pub fn init<T: Scalar>(
        cfg: &BlockConfig,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, f) = (cfg.dim, cfg.ffn_hidden);
        let mut w = |store: &mut ParamStore<T>, name: &str, shape: &[usize]| {
            store.add(format!("{prefix}.{name}"), trunc_normal(rng, shape, INIT_STD))
        };
        let zeros = |store: &mut ParamStore<T>, name: &str, shape: &[usize]| {
            store.add(format!("{prefix}.{name}"), Tensor::zeros(shape))
        };
        let w_uqkv = w(store, "uqkv.weight", &[d, 4 * d]);
        let b_uqkv = zeros(store, "uqkv.bias", &[4 * d]);
        let w_out = w(store, "out.weight", &[d, d]);
        let b_out = zeros(store, "out.bias", &[d]);
        let ln1 = add_ln(store, prefix, "ln1", d);
        let ln2 = add_ln(store, prefix, "ln2", d);
        let ln_attn = cfg
            .feature_interaction
            .then(|| add_ln(store, prefix, "ln_attn", d));
        let ffn_w1 = w(store, "ffn.w1", &[d, f]);
        let ffn_b1 = zeros(store, "ffn.b1", &[f]);
        let ffn_w2 = w(store, "ffn.w2", &[f, d]);
        let ffn_b2 = zeros(store, "ffn.b2", &[d]);
        let pos_table = cfg
            .bias_kind
            .uses_position_table()
            .then(|| zeros(store, "rab.pos", &[cfg.heads, cfg.max_len]));
        let time_table = cfg
            .bias_kind
            .uses_time_table()
            .then(|| zeros(store, "rab.time", &[cfg.heads, cfg.num_buckets]));
        Ok(Self {
            w_uqkv,
            b_uqkv,
            w_out,
            b_out,
            ln1,
            ln2,
            ln_attn,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            pos_table,
            time_table,
        })
    }

    pub fn bind(&self, vars: &[Var]) -> BlockVars {
        let pair = |(a, b): (usize, usize)| (vars[a], vars[b]);
        BlockVars {
            w_uqkv: vars[self.w_uqkv],
            b_uqkv: vars[self.b_uqkv],
            w_out: vars[self.w_out],
            b_out: vars[self.b_out],
            ln1: pair(self.ln1),
            ln2: pair(self.ln2),
            ln_attn: self.ln_attn.map(pair),
            ffn_w1: vars[self.ffn_w1],
            ffn_b1: vars[self.ffn_b1],
            ffn_w2: vars[self.ffn_w2],
            ffn_b2: vars[self.ffn_b2],
            pos_table: self.pos_table.map(|s| vars[s]),
            time_table: self.time_table.map(|s| vars[s]),
        }
    }

    /// Copy of the bias tables, zero-filled where the variant has none.
    pub fn bias_tables<T: Scalar>(&self, cfg: &BlockConfig, store: &ParamStore<T>) -> BiasTables<T> {
        let mut t = BiasTables::zeros(cfg.heads, cfg.max_len, cfg.num_buckets, cfg.time_base);
        if let Some(s) = self.pos_table {
            t.pos_table = store.get(s).clone();
        }
        if let Some(s) = self.time_table {
            t.time_table = store.get(s).clone();
        }
        t
    }

    /// Every slot owned by this block, in registration order.
    pub fn slots(&self) -> Vec<usize> {
        let mut v = vec![self.w_uqkv, self.b_uqkv, self.w_out, self.b_out];
        v.extend([self.ln1.0, self.ln1.1, self.ln2.0, self.ln2.1]);
        if let Some((a, b)) = self.ln_attn {
            v.extend([a, b]);
        }
        v.extend([self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2]);
        v.extend(self.pos_table);
        v.extend(self.time_table);
        v
    }
}

/// Number of scalars in one block, as a closed-form function of the config.
pub fn block_param_count(cfg: &BlockConfig) -> usize {
    let (d, h, f) = (cfg.dim, cfg.heads, cfg.ffn_hidden);
    let mut n = d * 4 * d + 4 * d; // f1
    n += d * d + d; // f2
    n += 2 * (2 * d); // ln1, ln2
    if cfg.feature_interaction {
        n += 2 * d;
    }
    n += d * f + f + f * d + d;
    if cfg.bias_kind.uses_position_table() {
        n += h * cfg.max_len;
    }
    if cfg.bias_kind.uses_time_table() {
        n += h * cfg.num_buckets;
    }
    n
}

/// Number of scalars in a stack of `blocks` blocks including its final norm.
pub fn stack_param_count(cfg: &BlockConfig, blocks: usize) -> usize {
    let final_norm = if cfg.residual.has_final_norm() { 2 * cfg.dim } else { 0 };
    blocks * block_param_count(cfg) + final_norm
}

/// Per-sequence attention inputs shared by every block of a stack.
#[derive(Debug, Clone)]
pub struct AttentionContext {
    positions: Vec<usize>,
    keep: Vec<bool>,
    index: BiasIndex,
    max_len: usize,
    num_buckets: usize,
}

impl AttentionContext {
    /// `valid[j]` marks real tokens. Real queries attend to earlier real keys
    /// and themselves; pad queries attend only to themselves.
    pub fn new(cfg: &BlockConfig, positions: &[usize], timestamps: &[i64], valid: &[bool]) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::EmptyDimension { op: "attention" });
        }
        if timestamps.len() != n || valid.len() != n {
            return Err(Error::Data(format!(
                "attention context: {n} positions, {} timestamps, {} validity flags",
                timestamps.len(),
                valid.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("positions must be strictly increasing".into()));
        }
        let mut keep = vec![false; n * n];
        for i in 0..n {
            keep[i * n + i] = true;
            if valid[i] {
                for j in 0..i {
                    keep[i * n + j] = valid[j];
                }
            }
        }
        let index = BiasIndex::new(positions, timestamps, &keep, cfg.max_len, cfg.num_buckets, cfg.time_base)?;
        Ok(Self {
            positions: positions.to_vec(),
            keep,
            index,
            max_len: cfg.max_len,
            num_buckets: cfg.num_buckets,
        })
    }

    /// Fully valid sequence at positions `0..n`.
    pub fn dense(cfg: &BlockConfig, timestamps: &[i64]) -> Result<Self> {
        let n = timestamps.len();
        let positions: Vec<usize> = (0..n).collect();
        Self::new(cfg, &positions, timestamps, &vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Row-major `n x n` attendance mask.
    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    fn check(&self, cfg: &BlockConfig) -> Result<()> {
        if cfg.max_len != self.max_len || cfg.num_buckets != self.num_buckets {
            return Err(Error::Config(
                "attention context was built for a different table geometry".into(),
            ));
        }
        Ok(())
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn ffn<T: Scalar>(g: &mut Graph<T>, x: Var, p: &BlockVars) -> Result<Var> {
    let h = linear(g, x, p.ffn_w1, p.ffn_b1)?;
    let h = g.silu(h);
    linear(g, h, p.ffn_w2, p.ffn_b2)
}

fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, ln: (Var, Var), eps: f64) -> Result<Var> {
    g.layer_norm(x, ln.0, ln.1, T::from_f64_lossy(eps))
}

/// Attention weights per head, then the pointwise transform `Y`.
fn attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &BlockVars,
    cfg: &BlockConfig,
    ctx: &AttentionContext,
    weights: Option<&mut Vec<Var>>,
) -> Result<Var> {
    ctx.check(cfg)?;
    let (d, dh) = (cfg.dim, cfg.head_dim());
    let n = ctx.len();
    if g.shape(x) != [n, d] {
        return Err(Error::Shape {
            op: "block_forward",
            lhs: g.shape(x).to_vec(),
            rhs: vec![n, d],
        });
    }
    let uqkv = linear(g, x, p.w_uqkv, p.b_uqkv)?;
    let uqkv = g.silu(uqkv);
    let u = g.slice_cols(uqkv, 0, d)?;
    let scale = match cfg.activation {
        Activation::Silu => 1.0 / cfg.max_len as f64,
        Activation::Softmax => 1.0 / (dh as f64).sqrt(),
    };
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = weights;
    for h in 0..cfg.heads {
        let mut q = g.slice_cols(uqkv, d + h * dh, dh)?;
        let mut k = g.slice_cols(uqkv, 2 * d + h * dh, dh)?;
        let v = g.slice_cols(uqkv, 3 * d + h * dh, dh)?;
        if cfg.bias_kind == BiasKind::Rope {
            q = g.rope(q, &ctx.positions, cfg.rope_base)?;
            k = g.rope(k, &ctx.positions, cfg.rope_base)?;
        }
        let qk = g.matmul_bt(q, k)?;
        let mut s = g.scale(qk, T::from_f64_lossy(scale));
        if let Some(table) = p.pos_table {
            let idx = BiasIndex::for_head(&ctx.index.distance, h, cfg.max_len);
            let b = g.gather_scalars(table, idx, vec![n, n])?;
            s = g.add(s, b)?;
        }
        if let Some(table) = p.time_table {
            let idx = BiasIndex::for_head(&ctx.index.bucket, h, cfg.num_buckets);
            let b = g.gather_scalars(table, idx, vec![n, n])?;
            s = g.add(s, b)?;
        }
        g.ensure_finite(s, &format!("attention scores (head {h})"))?;
        let a = match cfg.activation {
            Activation::Silu => {
                let a = g.silu(s);
                g.mask(a, ctx.keep.clone())?
            }
            Activation::Softmax => g.softmax_rows(s, Some(&ctx.keep))?,
        };
        if let Some(w) = weights.as_deref_mut() {
            w.push(a);
        }
        heads.push(g.matmul(a, v)?);
    }
    let o = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let y = match p.ln_attn {
        Some(ln) => {
            let o = layer_norm(g, o, ln, cfg.ln_eps)?;
            g.mul(o, u)?
        }
        None => o,
    };
    linear(g, y, p.w_out, p.b_out)
}

/// One block: self-attention sublayer and feed-forward sublayer composed per
/// the configured residual pattern.
pub fn block_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &BlockVars,
    cfg: &BlockConfig,
    ctx: &AttentionContext,
) -> Result<Var> {
    use super::config::Residual;
    let eps = cfg.ln_eps;
    match cfg.residual {
        Residual::Hstu => {
            let h = layer_norm(g, x, p.ln1, eps)?;
            let h = attention(g, h, p, cfg, ctx, None)?;
            let h = layer_norm(g, h, p.ln2, eps)?;
            let h = ffn(g, h, p)?;
            g.add(x, h)
        }
        Residual::Llama => {
            let h = layer_norm(g, x, p.ln1, eps)?;
            let h = attention(g, h, p, cfg, ctx, None)?;
            let g1 = g.add(x, h)?;
            let h = layer_norm(g, g1, p.ln2, eps)?;
            let h = ffn(g, h, p)?;
            g.add(g1, h)
        }
        Residual::PostNorm => {
            let h = attention(g, x, p, cfg, ctx, None)?;
            let h = g.add(x, h)?;
            let g1 = layer_norm(g, h, p.ln1, eps)?;
            let h = ffn(g, g1, p)?;
            let h = g.add(g1, h)?;
            layer_norm(g, h, p.ln2, eps)
        }
    }
}

/// Per-head attention weight matrices `[n, n]` computed from `x` directly,
/// without the block's input normalization.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &BlockVars,
    cfg: &BlockConfig,
    ctx: &AttentionContext,
) -> Result<Vec<Tensor<T>>> {
    let mut w = Vec::new();
    attention(g, x, p, cfg, ctx, Some(&mut w))?;
    Ok(w.into_iter().map(|v| g.value(v).clone()).collect())
}

/// A stack of identically configured blocks plus the optional final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub cfg: BlockConfig,
    pub blocks: Vec<BlockParams>,
    pub final_norm: Option<(usize, usize)>,
}

/// A bound stack ready for [`stack_forward`].
#[derive(Debug, Clone)]
pub struct StackVars {
    blocks: Vec<BlockVars>,
    final_norm: Option<(Var, Var)>,
}

impl StackParams {
    /// Final norm added when the residual pattern calls for one.
    pub fn init<T: Scalar>(
        cfg: &BlockConfig,
        num_blocks: usize,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let final_norm = cfg.residual.has_final_norm();
        Self::init_with(cfg, num_blocks, final_norm, store, prefix, rng)
    }

    pub fn init_with<T: Scalar>(
        cfg: &BlockConfig,
        num_blocks: usize,
        final_norm: bool,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..num_blocks)
            .map(|l| BlockParams::init(cfg, store, &format!("{prefix}.block{l}"), rng))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = final_norm.then(|| add_ln(store, prefix, "final_ln", cfg.dim));
        Ok(Self {
            cfg: cfg.clone(),
            blocks,
            final_norm,
        })
    }

    pub fn bind(&self, vars: &[Var]) -> StackVars {
        StackVars {
            blocks: self.blocks.iter().map(|b| b.bind(vars)).collect(),
            final_norm: self.final_norm.map(|(a, b)| (vars[a], vars[b])),
        }
    }
}

impl StackVars {
    pub fn blocks(&self) -> &[BlockVars] {
        &self.blocks
    }
}

/// `B_L ∘ ... ∘ B_1`, followed by the final norm when present. An empty stack
/// is the identity only when it has no final norm.
pub fn stack_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    stack: &StackVars,
    cfg: &BlockConfig,
    ctx: &AttentionContext,
) -> Result<Var> {
    if stack.blocks.is_empty() && stack.final_norm.is_some() {
        return Err(Error::Config("stack has no blocks".into()));
    }
    let mut h = x;
    for b in &stack.blocks {
        h = block_forward(g, h, b, cfg, ctx)?;
    }
    match stack.final_norm {
        Some(ln) => layer_norm(g, h, ln, cfg.ln_eps),
        None => Ok(h),
    }
}

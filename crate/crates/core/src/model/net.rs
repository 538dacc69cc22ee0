use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{stack_forward, AttentionContext, StackParams, StackVars, INIT_STD};
use crate::data::{Task, UserSequence};
use crate::error::{Error, Result};
use crate::metrics::{RankingScorer, RecallScorer};
use crate::params::{trunc_normal, ParamStore};
use crate::tensor::{sigmoid, Graph, Scalar, Tensor, Var};

use super::config::{Head, ModelConfig, RecallLoss};

#[derive(Debug, Clone, PartialEq)]
enum HeadSlots {
    Dot,
    Mlp { w1: usize, b1: usize, w2: usize, b2: usize },
    Ffn { w1: usize, b1: usize, w2: usize, b2: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Slots {
    item: usize,
    behavior: Option<usize>,
    attrs: Vec<usize>,
    label: Option<usize>,
    output: Option<usize>,
    stack: StackParams,
    head: HeadSlots,
}

#[derive(Debug, Clone, Copy)]
enum HeadVars {
    Dot,
    Mlp { w1: Var, b1: Var, w2: Var, b2: Var },
    Ffn { w1: Var, b1: Var, w2: Var, b2: Var },
}

/// Model parameters placed on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    item: Var,
    behavior: Option<Var>,
    attrs: Vec<Var>,
    label: Option<Var>,
    output: Var,
    stack: StackVars,
    head: HeadVars,
}

/// Token embeddings of the non-pad part of one sequence.
#[derive(Debug, Clone)]
pub struct Tokens {
    pub x: Var,
    /// Real events.
    pub events: usize,
    /// Tokens per event.
    pub stride: usize,
    pub positions: Vec<usize>,
    pub timestamps: Vec<i64>,
}

/// Sequence model: embeddings, a block stack and a scoring head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    slots: Slots,
}

fn table<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, rows: usize, d: usize, pad: bool) -> usize {
    let mut t = trunc_normal::<T>(rng, &[rows, d], INIT_STD);
    if pad {
        t.row_mut(0).iter_mut().for_each(|v| *v = T::zero());
    }
    store.add(name, t)
}

impl<T: Scalar> Model<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.dim();
        let item = table(&mut store, &mut rng, "emb.item", cfg.num_items + 1, d, true);
        let behavior = cfg
            .behavior_tokens
            .then(|| table(&mut store, &mut rng, "emb.behavior", cfg.num_behaviors + 1, d, true));
        let attrs = if cfg.side_info {
            cfg.attr_sizes
                .iter()
                .enumerate()
                .map(|(c, &s)| table(&mut store, &mut rng, &format!("emb.attr{c}"), s + 1, d, true))
                .collect()
        } else {
            Vec::new()
        };
        let label = (cfg.task == Task::Ranking).then(|| table(&mut store, &mut rng, "emb.label", 2, d, false));
        let output = (!cfg.tie_output).then(|| table(&mut store, &mut rng, "emb.output", cfg.num_items + 1, d, true));
        let stack = StackParams::init(&cfg.block, cfg.blocks, &mut store, "stack", &mut rng)?;
        let hid = cfg.head_hidden;
        let head = match cfg.head {
            Head::Dot => HeadSlots::Dot,
            Head::Mlp => HeadSlots::Mlp {
                w1: store.add("head.mlp.w1", trunc_normal(&mut rng, &[2 * d, hid], INIT_STD)),
                b1: store.add("head.mlp.b1", Tensor::zeros(&[hid])),
                w2: store.add("head.mlp.w2", trunc_normal(&mut rng, &[hid, 1], INIT_STD)),
                b2: store.add("head.mlp.b2", Tensor::zeros(&[1])),
            },
            Head::Ffn => HeadSlots::Ffn {
                w1: store.add("head.ffn.w1", trunc_normal(&mut rng, &[d, hid], INIT_STD)),
                b1: store.add("head.ffn.b1", Tensor::zeros(&[hid])),
                w2: store.add("head.ffn.w2", trunc_normal(&mut rng, &[hid, d], INIT_STD)),
                b2: store.add("head.ffn.b2", Tensor::zeros(&[d])),
            },
        };
        Ok(Self {
            cfg: cfg.clone(),
            params: store,
            slots: Slots {
                item,
                behavior,
                attrs,
                label,
                output,
                stack,
                head,
            },
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Slots of the tables whose row 0 is the pad embedding.
    pub fn pad_tables(&self) -> Vec<usize> {
        let s = &self.slots;
        let mut v = vec![s.item];
        v.extend(s.behavior);
        v.extend(&s.attrs);
        v.extend(s.output);
        v
    }

    /// Slot of the table scored against hidden states.
    pub fn output_slot(&self) -> usize {
        self.slots.output.unwrap_or(self.slots.item)
    }

    pub fn item_slot(&self) -> usize {
        self.slots.item
    }

    pub fn zero_pad_rows(&mut self) {
        for slot in self.pad_tables() {
            self.params.get_mut(slot).row_mut(0).iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self.params.bind(g, trainable);
        self.bound_from(vars)
    }

    /// Wraps tape variables that hold this model's tensors in slot order.
    pub fn bound_from(&self, vars: Vec<Var>) -> Bound {
        let s = &self.slots;
        let head = match s.head {
            HeadSlots::Dot => HeadVars::Dot,
            HeadSlots::Mlp { w1, b1, w2, b2 } => HeadVars::Mlp {
                w1: vars[w1],
                b1: vars[b1],
                w2: vars[w2],
                b2: vars[b2],
            },
            HeadSlots::Ffn { w1, b1, w2, b2 } => HeadVars::Ffn {
                w1: vars[w1],
                b1: vars[b1],
                w2: vars[w2],
                b2: vars[b2],
            },
        };
        Bound {
            item: vars[s.item],
            behavior: s.behavior.map(|b| vars[b]),
            attrs: s.attrs.iter().map(|&a| vars[a]).collect(),
            label: s.label.map(|l| vars[l]),
            output: vars[s.output.unwrap_or(s.item)],
            stack: s.stack.bind(&vars),
            head,
            vars,
        }
    }

    fn check_ids(&self, seq: &UserSequence, start: usize) -> Result<()> {
        let cfg = &self.cfg;
        if seq.len() != cfg.max_len {
            return Err(Error::Data(format!(
                "sequence of user {} has length {}, model expects {}",
                seq.user,
                seq.len(),
                cfg.max_len
            )));
        }
        let over = |channel: &'static str, id: u32, size: usize| {
            if id as usize > size {
                Err(Error::Vocab {
                    channel,
                    id: id as usize,
                    size: size + 1,
                })
            } else {
                Ok(())
            }
        };
        for p in start..seq.len() {
            over("item", seq.items[p], cfg.num_items)?;
            if cfg.behavior_tokens {
                over("behavior", seq.behaviors[p], cfg.num_behaviors)?;
            }
            if cfg.task == Task::Ranking && seq.labels[p] > 1 {
                return Err(Error::Vocab {
                    channel: "label",
                    id: seq.labels[p] as usize,
                    size: 2,
                });
            }
        }
        if cfg.side_info {
            if seq.attrs.len() != cfg.attr_sizes.len() {
                return Err(Error::Data(format!(
                    "sequence has {} attribute channels, model expects {}",
                    seq.attrs.len(),
                    cfg.attr_sizes.len()
                )));
            }
            for (c, &size) in cfg.attr_sizes.iter().enumerate() {
                for p in start..seq.len() {
                    over("attribute", seq.attrs[c][p], size)?;
                }
            }
        }
        Ok(())
    }

    /// Token embeddings for the real events of `seq`; `None` when it is all pad.
    pub fn embed(&self, g: &mut Graph<T>, b: &Bound, seq: &UserSequence) -> Result<Option<Tokens>> {
        let start = seq.start();
        self.check_ids(seq, start)?;
        let m = seq.len() - start;
        if m == 0 {
            return Ok(None);
        }
        let cfg = &self.cfg;
        let some = |v: &[u32]| v[start..].iter().map(|&i| Some(i as usize)).collect::<Vec<_>>();
        let mut x = g.gather_rows(b.item, some(&seq.items))?;
        if cfg.side_info {
            let mut count = vec![1usize; m];
            for (c, &tab) in b.attrs.iter().enumerate() {
                let idx: Vec<Option<usize>> = seq.attrs[c][start..]
                    .iter()
                    .map(|&a| (a != 0).then_some(a as usize))
                    .collect();
                for (k, i) in idx.iter().enumerate() {
                    count[k] += usize::from(i.is_some());
                }
                let a = g.gather_rows(tab, idx)?;
                x = g.add(x, a)?;
            }
            let inv = count
                .iter()
                .map(|&c| T::one() / T::from_usize(c).expect("count fits scalar"))
                .collect();
            x = g.scale_rows(x, inv)?;
        }
        let mut streams = vec![x];
        if let Some(tab) = b.behavior {
            streams.push(g.gather_rows(tab, some(&seq.behaviors))?);
        }
        if let Some(tab) = b.label {
            let idx = seq.labels[start..].iter().map(|&l| Some(l as usize)).collect();
            streams.push(g.gather_rows(tab, idx)?);
        }
        let s = streams.len();
        let x = if s == 1 {
            streams[0]
        } else {
            let wide = g.concat_cols(&streams)?;
            g.reshape(wide, vec![s * m, cfg.dim()])?
        };
        let mut positions = Vec::with_capacity(s * m);
        let mut timestamps = Vec::with_capacity(s * m);
        for k in 0..m {
            for t in 0..s {
                positions.push(s * (start + k) + t);
                timestamps.push(seq.timestamps[start + k]);
            }
        }
        Ok(Some(Tokens {
            x,
            events: m,
            stride: s,
            positions,
            timestamps,
        }))
    }

    /// Hidden states for every token of the real part of `seq`.
    pub fn encode(&self, g: &mut Graph<T>, b: &Bound, seq: &UserSequence) -> Result<Option<(Var, Tokens)>> {
        let Some(tok) = self.embed(g, b, seq)? else {
            return Ok(None);
        };
        let ctx = AttentionContext::new(
            &self.cfg.block,
            &tok.positions,
            &tok.timestamps,
            &vec![true; tok.positions.len()],
        )?;
        let h = stack_forward(g, tok.x, &b.stack, &self.cfg.block, &ctx)?;
        g.ensure_finite(h, "block stack output")?;
        Ok(Some((h, tok)))
    }

    /// Token index whose state predicts the event after event `k`.
    fn recall_read(&self, tok: &Tokens, k: usize) -> usize {
        k * tok.stride + tok.stride - 1
    }

    /// Token index whose state predicts the label of event `k`.
    fn ranking_read(&self, tok: &Tokens, k: usize) -> usize {
        k * tok.stride
    }

    fn head_transform(&self, g: &mut Graph<T>, b: &Bound, h: Var) -> Result<Var> {
        match b.head {
            HeadVars::Ffn { w1, b1, w2, b2 } => {
                let z = g.matmul(h, w1)?;
                let z = g.add_bias(z, b1)?;
                let z = g.silu(z);
                let z = g.matmul(z, w2)?;
                let z = g.add_bias(z, b2)?;
                g.add(h, z)
            }
            _ => Ok(h),
        }
    }

    /// Logits `[r, c]` of every state against every candidate row.
    pub fn score_all(&self, g: &mut Graph<T>, b: &Bound, h: Var, cand: Var) -> Result<Var> {
        match b.head {
            HeadVars::Mlp { w1, b1, w2, b2 } => {
                let d = self.cfg.dim();
                let (r, c) = (g.shape(h)[0], g.shape(cand)[0]);
                let top = g.slice_rows(w1, 0, d)?;
                let bottom = g.slice_rows(w1, d, d)?;
                let a = g.matmul(h, top)?;
                let e = g.matmul(cand, bottom)?;
                let ai = (0..r * c).map(|p| Some(p / c)).collect();
                let ei = (0..r * c).map(|p| Some(p % c)).collect();
                let a = g.gather_rows(a, ai)?;
                let e = g.gather_rows(e, ei)?;
                let z = g.add(a, e)?;
                let z = g.add_bias(z, b1)?;
                let z = g.silu(z);
                let z = g.matmul(z, w2)?;
                let z = g.add_bias(z, b2)?;
                g.reshape(z, vec![r, c])
            }
            _ => {
                let s = self.head_transform(g, b, h)?;
                g.matmul_bt(s, cand)
            }
        }
    }

    /// Logits `[r, 1]` of state row `i` against item row `i`.
    pub fn score_pairs(&self, g: &mut Graph<T>, b: &Bound, h: Var, e: Var) -> Result<Var> {
        match b.head {
            HeadVars::Mlp { w1, b1, w2, b2 } => {
                let z = g.concat_cols(&[h, e])?;
                let z = g.matmul(z, w1)?;
                let z = g.add_bias(z, b1)?;
                let z = g.silu(z);
                let z = g.matmul(z, w2)?;
                g.add_bias(z, b2)
            }
            _ => {
                let s = self.head_transform(g, b, h)?;
                let p = g.mul(s, e)?;
                Ok(g.sum_cols(p))
            }
        }
    }

    /// Summed loss over the prediction slots of `seq` and the slot count.
    pub fn sequence_loss(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        seq: &UserSequence,
        rng: &mut impl Rng,
    ) -> Result<Option<(Var, usize)>> {
        let Some((h, tok)) = self.encode(g, b, seq)? else {
            return Ok(None);
        };
        let start = seq.start();
        match self.cfg.task {
            Task::Recall => {
                if tok.events < 2 {
                    return Ok(None);
                }
                let reads = (0..tok.events - 1).map(|k| Some(self.recall_read(&tok, k))).collect();
                let states = g.gather_rows(h, reads)?;
                let targets: Vec<usize> = seq.items[start + 1..].iter().map(|&i| i as usize).collect();
                let count = targets.len();
                let loss = match self.cfg.recall_loss {
                    RecallLoss::Full => {
                        let cand = g.slice_rows(b.output, 1, self.cfg.num_items)?;
                        let logits = self.score_all(g, b, states, cand)?;
                        g.softmax_cross_entropy(logits, targets.iter().map(|t| t - 1).collect())?
                    }
                    RecallLoss::Sampled(n) => {
                        let mut set: BTreeSet<usize> = targets.iter().copied().collect();
                        for _ in 0..n {
                            set.insert(rng.gen_range(1..=self.cfg.num_items));
                        }
                        let cands: Vec<usize> = set.into_iter().collect();
                        let local = targets
                            .iter()
                            .map(|t| cands.binary_search(t).expect("target is a candidate"))
                            .collect();
                        let cand = g.gather_rows(b.output, cands.into_iter().map(Some).collect())?;
                        let logits = self.score_all(g, b, states, cand)?;
                        g.softmax_cross_entropy(logits, local)?
                    }
                };
                Ok(Some((loss, count)))
            }
            Task::Ranking => {
                let reads = (0..tok.events).map(|k| Some(self.ranking_read(&tok, k))).collect();
                let states = g.gather_rows(h, reads)?;
                let items = seq.items[start..].iter().map(|&i| Some(i as usize)).collect();
                let e = g.gather_rows(b.output, items)?;
                let logits = self.score_pairs(g, b, states, e)?;
                let labels = seq.labels[start..].iter().map(|&l| T::from_f64_lossy(l as f64)).collect();
                Ok(Some((g.bce_with_logits(logits, labels)?, tok.events)))
            }
        }
    }

    /// Mean loss over all prediction slots of the batch.
    pub fn batch_loss(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        seqs: &[UserSequence],
        rng: &mut impl Rng,
    ) -> Result<Option<(Var, usize)>> {
        let mut total: Option<Var> = None;
        let mut count = 0;
        for s in seqs {
            if let Some((l, c)) = self.sequence_loss(g, b, s, rng)? {
                total = Some(match total {
                    Some(t) => g.add(t, l)?,
                    None => l,
                });
                count += c;
            }
        }
        Ok(total.map(|t| {
            let inv = T::one() / T::from_usize(count).expect("count fits scalar");
            (g.scale(t, inv), count)
        }))
    }

    /// Token embeddings before the block stack.
    pub fn embed_sequence(&self, seq: &UserSequence) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        match self.embed(&mut g, &b, seq)? {
            Some(t) => Ok(g.value(t.x).clone()),
            None => Ok(Tensor::zeros(&[0, self.cfg.dim()])),
        }
    }

    /// Final hidden state after the last real token.
    pub fn user_state(&self, seq: &UserSequence) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (h, _) = self
            .encode(&mut g, &b, seq)?
            .ok_or_else(|| Error::Data(format!("sequence of user {} is all pad", seq.user)))?;
        let v = g.value(h);
        Ok(v.row(v.rows() - 1).to_vec())
    }

    /// Next-item logits over the catalog, indexed by item id; entry 0 is `-inf`.
    pub fn forward_recall(&self, seqs: &[UserSequence]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let cand = g.slice_rows(b.output, 1, self.cfg.num_items)?;
        let mut out = Vec::with_capacity(seqs.len());
        for s in seqs {
            let (h, tok) = self
                .encode(&mut g, &b, s)?
                .ok_or_else(|| Error::Data(format!("sequence of user {} is all pad", s.user)))?;
            let read = g.gather_rows(h, vec![Some(self.recall_read(&tok, tok.events - 1))])?;
            let z = self.score_all(&mut g, &b, read, cand)?;
            let mut row = Vec::with_capacity(self.cfg.num_items + 1);
            row.push(f64::NEG_INFINITY);
            row.extend(g.value(z).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
            out.push(row);
        }
        Ok(out)
    }

    /// Label logits at every position (0 at pads).
    pub fn forward_ranking(&self, seqs: &[UserSequence]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let mut out = Vec::with_capacity(seqs.len());
        for s in seqs {
            let mut row = vec![0.0; s.len()];
            if let Some((h, tok)) = self.encode(&mut g, &b, s)? {
                let start = s.start();
                let reads = (0..tok.events).map(|k| Some(self.ranking_read(&tok, k))).collect();
                let states = g.gather_rows(h, reads)?;
                let items = s.items[start..].iter().map(|&i| Some(i as usize)).collect();
                let e = g.gather_rows(b.output, items)?;
                let z = self.score_pairs(&mut g, &b, states, e)?;
                for (k, v) in g.value(z).data().iter().enumerate() {
                    row[start + k] = v.to_f64().unwrap_or(f64::NAN);
                }
            }
            out.push(row);
        }
        Ok(out)
    }
}

impl<T: Scalar> RecallScorer for Model<T> {
    fn recall_scores(&self, inputs: &[UserSequence]) -> Result<Vec<Vec<f64>>> {
        self.forward_recall(inputs)
    }
}

impl<T: Scalar> RankingScorer for Model<T> {
    fn ranking_probs(&self, inputs: &[UserSequence]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .forward_ranking(inputs)?
            .into_iter()
            .map(|r| r.into_iter().map(sigmoid).collect())
            .collect())
    }
}

/// Alternates item and label tokens: `[x1, L(y1), x2, L(y2), ...]`. Label
/// tokens are `label_offset + y`; predictions are read at even indices.
pub fn interleave_ranking(items: &[u32], labels: &[u8], label_offset: u32) -> Result<Vec<u32>> {
    if items.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} items but {} labels",
            items.len(),
            labels.len()
        )));
    }
    Ok(items
        .iter()
        .zip(labels)
        .flat_map(|(&i, &l)| [i, label_offset + l as u32])
        .collect())
}

pub fn deinterleave_ranking(tokens: &[u32], label_offset: u32) -> Result<(Vec<u32>, Vec<u8>)> {
    if tokens.len() % 2 != 0 {
        return Err(Error::Data("interleaved sequence has odd length".into()));
    }
    let items = tokens.iter().step_by(2).copied().collect();
    let labels = tokens
        .iter()
        .skip(1)
        .step_by(2)
        .map(|&t| t.checked_sub(label_offset).filter(|&l| l <= 1).map(|l| l as u8))
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| Error::Data("label token out of range".into()))?;
    Ok((items, labels))
}

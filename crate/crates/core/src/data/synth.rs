//! Planted-structure interaction generators.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::sigmoid;

use super::log::{InteractionEvent, InteractionLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthRule {
    /// Each next item is `succ(current)` for a fixed random permutation,
    /// replaced by a uniform item with probability `noise`.
    MarkovItems,
    /// Items arrive in bursts spaced `burst_period` seconds apart; item `r` of a
    /// burst is `succ_r` of item `r mod m` of the previous burst, so the
    /// informative history is one time-gap bucket back.
    TimeGapDependent,
    /// Uniform item draws with labels `Bernoulli(sigmoid(w . f_item + b))`.
    LogisticRanking,
}

impl SynthRule {
    pub const ALL: [SynthRule; 3] = [
        SynthRule::MarkovItems,
        SynthRule::TimeGapDependent,
        SynthRule::LogisticRanking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthRule::MarkovItems => "markov_items",
            SynthRule::TimeGapDependent => "time_gap_dependent",
            SynthRule::LogisticRanking => "logistic_ranking",
        }
    }
}

impl fmt::Display for SynthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown synth rule `{s}` (expected markov_items, time_gap_dependent or logistic_ranking)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub rule: SynthRule,
    pub num_users: usize,
    pub num_items: usize,
    /// Sequence lengths are uniform on `[min_len, max_len]`.
    pub min_len: usize,
    pub max_len: usize,
    pub noise: f64,
    pub burst_period: i64,
    pub max_burst: usize,
    pub num_features: usize,
    pub weight_scale: f64,
    pub label_bias: f64,
    /// Behavior mixture `(name, weight)`; empty means the default behavior only.
    pub behaviors: Vec<(String, f64)>,
    /// Items are assigned round-robin to this many domains.
    pub num_domains: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            rule: SynthRule::MarkovItems,
            num_users: 200,
            num_items: 50,
            min_len: 10,
            max_len: 30,
            noise: 0.0,
            burst_period: 12_000,
            max_burst: 4,
            num_features: 4,
            weight_scale: 1.5,
            label_bias: 0.0,
            behaviors: Vec::new(),
            num_domains: 1,
        }
    }
}

impl SynthSpec {
    pub fn new(rule: SynthRule, num_users: usize, num_items: usize) -> Self {
        Self {
            rule,
            num_users,
            num_items,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_items < 2 {
            return bad(format!("synth needs at least 2 items, got {}", self.num_items));
        }
        if self.num_users == 0 {
            return bad("synth needs at least 1 user".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("bad length range [{}, {}]", self.min_len, self.max_len));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must be in [0, 1], got {}", self.noise));
        }
        if self.burst_period < 1 || self.max_burst == 0 {
            return bad("burst_period and max_burst must be positive".into());
        }
        if self.num_features == 0 {
            return bad("num_features must be positive".into());
        }
        if self.num_domains == 0 {
            return bad("num_domains must be positive".into());
        }
        if self.behaviors.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite()))
            || (!self.behaviors.is_empty() && self.behaviors.iter().all(|(_, w)| *w == 0.0))
        {
            return bad("behavior weights must be non-negative with a positive total".into());
        }
        Ok(())
    }
}

/// Generating parameters kept alongside the log so oracles can be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Item names in generation order; successor tables index into it.
    pub items: Vec<String>,
    /// One successor permutation per burst slot; markov chains use slot 0.
    pub successor: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    /// True positive-label probability per item.
    pub item_prob: Vec<f64>,
}

impl SynthTruth {
    pub fn prob_of(&self, item: &str) -> Option<f64> {
        self.items.iter().position(|s| s == item).map(|i| self.item_prob[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub log: InteractionLog,
    pub truth: SynthTruth,
}

pub fn item_name(i: usize) -> String {
    format!("i{i:05}")
}

/// Deterministic in `(spec, seed)`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = spec.num_items;
    let items: Vec<String> = (0..nv).map(item_name).collect();
    let slots = if spec.rule == SynthRule::TimeGapDependent { spec.max_burst } else { 1 };
    let successor: Vec<Vec<usize>> = (0..slots)
        .map(|_| {
            let mut p: Vec<usize> = (0..nv).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut weights = Vec::new();
    let mut features = Vec::new();
    let mut item_prob = Vec::new();
    if spec.rule == SynthRule::LogisticRanking {
        weights = (0..spec.num_features)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); spec.weight_scale * z })
            .collect::<Vec<f64>>();
        let scale = 1.0 / (spec.num_features as f64).sqrt();
        for _ in 0..nv {
            let f: Vec<f64> = (0..spec.num_features)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let z: f64 = f.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() * scale + spec.label_bias;
            item_prob.push(sigmoid(z));
            features.push(f);
        }
    }
    let total_w: f64 = spec.behaviors.iter().map(|b| b.1).sum();
    let mut raw = Vec::new();
    for u in 0..spec.num_users {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let user = format!("u{u:05}");
        let start: i64 = 1_000_000 + rng.gen_range(0..86_400);
        let seq: Vec<(usize, i64)> = match spec.rule {
            SynthRule::MarkovItems => {
                let mut t = start;
                let mut cur = rng.gen_range(0..nv);
                let mut out = Vec::with_capacity(len);
                for k in 0..len {
                    if k > 0 {
                        cur = if spec.noise > 0.0 && rng.gen::<f64>() < spec.noise {
                            rng.gen_range(0..nv)
                        } else {
                            successor[0][cur]
                        };
                        t += rng.gen_range(60..3600);
                    }
                    out.push((cur, t));
                }
                out
            }
            SynthRule::TimeGapDependent => {
                let mut out = Vec::with_capacity(len);
                let mut prev: Vec<usize> = Vec::new();
                let mut burst = 0i64;
                while out.len() < len {
                    let m = rng.gen_range(1..=spec.max_burst).min(len - out.len());
                    let mut t = start + burst * spec.burst_period;
                    let mut cur = Vec::with_capacity(m);
                    for r in 0..m {
                        let item = if prev.is_empty() {
                            rng.gen_range(0..nv)
                        } else if spec.noise > 0.0 && rng.gen::<f64>() < spec.noise {
                            rng.gen_range(0..nv)
                        } else {
                            successor[r][prev[r % prev.len()]]
                        };
                        if r > 0 {
                            t += rng.gen_range(1..=30);
                        }
                        cur.push(item);
                        out.push((item, t));
                    }
                    prev = cur;
                    burst += 1;
                }
                out
            }
            SynthRule::LogisticRanking => {
                let mut t = start;
                (0..len)
                    .map(|_| {
                        t += rng.gen_range(60..3600);
                        (rng.gen_range(0..nv), t)
                    })
                    .collect()
            }
        };
        for (item, ts) in seq {
            let mut e = InteractionEvent::new(user.clone(), items[item].clone(), ts);
            if spec.num_domains > 1 {
                e = e.with_domain(format!("d{}", item % spec.num_domains));
            }
            if spec.rule == SynthRule::LogisticRanking {
                let pos = rng.gen::<f64>() < item_prob[item];
                e = e.with_rating(if pos { 5.0 } else { 1.0 });
            }
            if !spec.behaviors.is_empty() {
                let mut x = rng.gen::<f64>() * total_w;
                let mut pick = &spec.behaviors[spec.behaviors.len() - 1].0;
                for (name, w) in &spec.behaviors {
                    if x < *w {
                        pick = name;
                        break;
                    }
                    x -= w;
                }
                e = e.with_behavior(pick.clone());
            }
            raw.push(e);
        }
    }
    Ok(SynthOutput {
        log: InteractionLog::from_events(raw, false)?,
        truth: SynthTruth {
            items,
            successor,
            weights,
            features,
            item_prob,
        },
    })
}

/// Population AUC of scoring by the true probability, items drawn with weights `pi`.
pub fn population_auc(prob: &[f64], pi: &[f64]) -> f64 {
    let z: f64 = pi.iter().sum();
    let pos: f64 = prob.iter().zip(pi).map(|(p, w)| w * p).sum::<f64>() / z;
    let mut num = 0.0;
    for (&pv, &wv) in prob.iter().zip(pi) {
        for (&pu, &wu) in prob.iter().zip(pi) {
            let cmp = if pv > pu {
                1.0
            } else if pv == pu {
                0.5
            } else {
                0.0
            };
            num += wv * pv * wu * (1.0 - pu) * cmp;
        }
    }
    num / (z * z) / (pos * (1.0 - pos))
}

/// Expected log loss of predicting the true probability.
pub fn population_logloss(prob: &[f64], pi: &[f64]) -> f64 {
    let z: f64 = pi.iter().sum();
    prob.iter()
        .zip(pi)
        .map(|(&p, &w)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            -w * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / z
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::attention::{Activation, BiasKind, BlockConfig, Residual};
use crate::data::Task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Dot,
    Mlp,
    Ffn,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Dot, Head::Mlp, Head::Ffn];

    pub fn name(self) -> &'static str {
        match self {
            Head::Dot => "dot",
            Head::Mlp => "mlp",
            Head::Ffn => "ffn",
        }
    }

    /// Conventional hidden width: `d` for the perceptron, `4d` for the feed-forward head.
    pub fn default_hidden(self, dim: usize) -> usize {
        match self {
            Head::Dot | Head::Mlp => dim,
            Head::Ffn => 4 * dim,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown head `{s}` (expected dot, mlp or ffn)")))
    }
}

/// Recall training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallLoss {
    /// Softmax over the full catalog.
    Full,
    /// Softmax over the targets of a sequence plus `n` shared uniform negatives.
    Sampled(usize),
}

impl fmt::Display for RecallLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecallLoss::Full => f.write_str("full"),
            RecallLoss::Sampled(n) => write!(f, "sampled:{n}"),
        }
    }
}

impl FromStr for RecallLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(RecallLoss::Full);
        }
        match s.strip_prefix("sampled:").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(RecallLoss::Sampled(n)),
            _ => Err(Error::Config(format!(
                "unknown recall loss `{s}` (expected full or sampled:<negatives>)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_items: usize,
    pub num_behaviors: usize,
    pub attr_sizes: Vec<usize>,
    pub blocks: usize,
    /// `block.dim` is the model width; `block.max_len` is set from `max_len` and the token layout.
    pub block: BlockConfig,
    /// Events per sequence.
    pub max_len: usize,
    pub task: Task,
    pub head: Head,
    pub head_hidden: usize,
    pub tie_output: bool,
    pub side_info: bool,
    pub behavior_tokens: bool,
    pub recall_loss: RecallLoss,
}

impl ModelConfig {
    pub fn new(num_items: usize, max_len: usize, task: Task) -> Self {
        let mut cfg = Self {
            num_items,
            num_behaviors: 1,
            attr_sizes: Vec::new(),
            blocks: 2,
            block: BlockConfig::default(),
            max_len,
            task,
            head: Head::Dot,
            head_hidden: 0,
            tie_output: true,
            side_info: false,
            behavior_tokens: false,
            recall_loss: RecallLoss::Full,
        };
        cfg.finalize();
        cfg
    }

    /// One narrow block; fast enough for smoke tests and fixtures.
    pub fn tiny(num_items: usize, max_len: usize, task: Task) -> Self {
        let mut cfg = Self::new(num_items, max_len, task);
        cfg.blocks = 1;
        cfg.block.dim = 16;
        cfg.block.heads = 1;
        cfg.block.ffn_hidden = 32;
        cfg.block.num_buckets = 8;
        cfg.head_hidden = 0;
        cfg.finalize();
        cfg
    }

    pub fn dim(&self) -> usize {
        self.block.dim
    }

    /// Tokens emitted per event: the item, then its behavior and label tokens when enabled.
    pub fn tokens_per_event(&self) -> usize {
        1 + usize::from(self.behavior_tokens) + usize::from(self.task == Task::Ranking)
    }

    /// Maximum token sequence length seen by the block stack.
    pub fn token_len(&self) -> usize {
        self.max_len * self.tokens_per_event()
    }

    /// Token ids laid out as `[0 pad] ∪ items ∪ behaviors ∪ labels`; these are
    /// the first id of each non-pad range.
    pub fn token_offsets(&self) -> (usize, usize, usize) {
        let items = 1;
        let behaviors = items + self.num_items;
        let labels = behaviors + self.num_behaviors;
        (items, behaviors, labels)
    }

    /// Re-derives dependent fields after edits: block token length and head width.
    pub fn finalize(&mut self) {
        self.block.max_len = self.token_len().max(1);
        if self.head_hidden == 0 {
            self.head_hidden = self.head.default_hidden(self.block.dim);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.block.validate()?;
        if self.num_items == 0 {
            return fail("model needs at least one item".into());
        }
        if self.blocks == 0 {
            return fail("model needs at least one block".into());
        }
        if self.max_len < 3 {
            return fail(format!("max_len must be at least 3, got {}", self.max_len));
        }
        if self.block.max_len != self.token_len() {
            return fail(format!(
                "block token length {} does not match max_len {} x {} tokens per event",
                self.block.max_len,
                self.max_len,
                self.tokens_per_event()
            ));
        }
        if self.behavior_tokens && self.num_behaviors == 0 {
            return fail("behavior tokens need a behavior vocabulary".into());
        }
        if self.side_info && self.attr_sizes.is_empty() {
            return fail("side_info needs at least one attribute channel".into());
        }
        if self.head != Head::Dot && self.head_hidden == 0 {
            return fail("head_hidden must be positive".into());
        }
        if self.task == Task::Ranking && matches!(self.recall_loss, RecallLoss::Sampled(_)) {
            return fail("sampled softmax applies to recall only".into());
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let b = &self.block;
        let sizes: Vec<String> = self.attr_sizes.iter().map(usize::to_string).collect();
        let pairs: [(&str, String); 24] = [
            ("num_items", self.num_items.to_string()),
            ("num_behaviors", self.num_behaviors.to_string()),
            ("attr_sizes", sizes.join(",")),
            ("blocks", self.blocks.to_string()),
            ("max_len", self.max_len.to_string()),
            ("task", self.task.to_string()),
            ("head", self.head.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("tie_output", self.tie_output.to_string()),
            ("side_info", self.side_info.to_string()),
            ("behavior_tokens", self.behavior_tokens.to_string()),
            ("recall_loss", self.recall_loss.to_string()),
            ("dim", b.dim.to_string()),
            ("heads", b.heads.to_string()),
            ("activation", b.activation.to_string()),
            ("bias", b.bias_kind.to_string()),
            ("feature_interaction", b.feature_interaction.to_string()),
            ("residual", b.residual.to_string()),
            ("ffn_hidden", b.ffn_hidden.to_string()),
            ("token_len", b.max_len.to_string()),
            ("num_buckets", b.num_buckets.to_string()),
            ("time_base", b.time_base.to_string()),
            ("rope_base", b.rope_base.to_string()),
            ("ln_eps", b.ln_eps.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("model config lacks `{k}`")))
        };
        fn parse<V: FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("model config `{k}` has invalid value `{v}`")))
        }
        let p = |k: &str| -> Result<usize> { parse(k, get(k)?) };
        let f = |k: &str| -> Result<f64> { parse(k, get(k)?) };
        let flag = |k: &str| -> Result<bool> { parse(k, get(k)?) };
        let attr = get("attr_sizes")?;
        let attr_sizes = if attr.is_empty() {
            Vec::new()
        } else {
            attr.split(',').map(|s| parse("attr_sizes", s)).collect::<Result<_>>()?
        };
        let block = BlockConfig {
            dim: p("dim")?,
            heads: p("heads")?,
            activation: get("activation")?.parse::<Activation>()?,
            bias_kind: get("bias")?.parse::<BiasKind>()?,
            feature_interaction: flag("feature_interaction")?,
            residual: get("residual")?.parse::<Residual>()?,
            ffn_hidden: p("ffn_hidden")?,
            max_len: p("token_len")?,
            num_buckets: p("num_buckets")?,
            time_base: f("time_base")?,
            rope_base: f("rope_base")?,
            ln_eps: f("ln_eps")?,
        };
        let cfg = Self {
            num_items: p("num_items")?,
            num_behaviors: p("num_behaviors")?,
            attr_sizes,
            blocks: p("blocks")?,
            block,
            max_len: p("max_len")?,
            task: get("task")?.parse()?,
            head: get("head")?.parse()?,
            head_hidden: p("head_hidden")?,
            tie_output: flag("tie_output")?,
            side_info: flag("side_info")?,
            behavior_tokens: flag("behavior_tokens")?,
            recall_loss: get("recall_loss")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

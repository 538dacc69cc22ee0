use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Pointwise map applied to attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Silu,
    Softmax,
}

/// How relative order and time enter the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BiasKind {
    RelPosTime,
    RelTimeOnly,
    RelPosOnly,
    Rope,
    None,
}

impl BiasKind {
    pub const ALL: [BiasKind; 5] = [
        BiasKind::RelPosTime,
        BiasKind::RelTimeOnly,
        BiasKind::RelPosOnly,
        BiasKind::Rope,
        BiasKind::None,
    ];

    pub fn uses_position_table(self) -> bool {
        matches!(self, BiasKind::RelPosTime | BiasKind::RelPosOnly)
    }

    pub fn uses_time_table(self) -> bool {
        matches!(self, BiasKind::RelPosTime | BiasKind::RelTimeOnly)
    }
}

/// Where layer normalization sits relative to the skip connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Residual {
    /// `X + FFN(LN(SA(LN(X))))`
    Hstu,
    /// `g = X + SA(LN(X)); g + FFN(LN(g))`
    Llama,
    /// `g = LN(X + SA(X)); LN(g + FFN(g))`
    PostNorm,
}

impl Residual {
    pub const ALL: [Residual; 3] = [Residual::Hstu, Residual::Llama, Residual::PostNorm];

    /// Pre-norm patterns finish a stack with one more layer norm.
    pub fn has_final_norm(self) -> bool {
        !matches!(self, Residual::PostNorm)
    }
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }

            pub fn names() -> &'static [&'static str] {
                &[$($name),+]
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " `{}` (expected one of {:?})"),
                        other,
                        <$ty>::names()
                    ))),
                }
            }
        }
    };
}

named_enum!(Activation, "activation", {
    Activation::Silu => "silu",
    Activation::Softmax => "softmax",
});

named_enum!(BiasKind, "bias kind", {
    BiasKind::RelPosTime => "rel_pos_time",
    BiasKind::RelTimeOnly => "rel_time_only",
    BiasKind::RelPosOnly => "rel_pos_only",
    BiasKind::Rope => "rope",
    BiasKind::None => "none",
});

named_enum!(Residual, "residual pattern", {
    Residual::Hstu => "hstu",
    Residual::Llama => "llama",
    Residual::PostNorm => "postnorm",
});

/// One coordinate of the block ablation lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub activation: Activation,
    pub bias_kind: BiasKind,
    pub feature_interaction: bool,
    pub residual: Residual,
    pub ffn_hidden: usize,
    /// Token length the relative-position table covers; also the SiLU score scale.
    pub max_len: usize,
    pub num_buckets: usize,
    pub time_base: f64,
    pub rope_base: f64,
    pub ln_eps: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 2,
            activation: Activation::Silu,
            bias_kind: BiasKind::RelPosTime,
            feature_interaction: true,
            residual: Residual::Hstu,
            ffn_hidden: 64,
            max_len: 50,
            num_buckets: 128,
            time_base: std::f64::consts::E,
            rope_base: 10_000.0,
            ln_eps: 1e-5,
        }
    }
}

impl BlockConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 {
            return fail("dim and heads must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return fail(format!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        if self.max_len == 0 {
            return fail("max_len must be at least 1".into());
        }
        if self.bias_kind == BiasKind::Rope && self.head_dim() % 2 != 0 {
            return fail(format!("rope needs an even head dim, got {}", self.head_dim()));
        }
        if self.num_buckets == 0 {
            return fail("num_buckets must be positive".into());
        }
        if self.time_base <= 1.0 {
            return fail(format!("time_base must exceed 1, got {}", self.time_base));
        }
        if self.ffn_hidden == 0 {
            return fail("ffn_hidden must be positive".into());
        }
        if self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }

    /// Every (activation, bias, interaction, residual) corner at this size.
    pub fn corners(&self) -> Vec<BlockConfig> {
        let mut out = Vec::with_capacity(60);
        for activation in [Activation::Silu, Activation::Softmax] {
            for bias_kind in BiasKind::ALL {
                for feature_interaction in [true, false] {
                    for residual in Residual::ALL {
                        out.push(BlockConfig {
                            activation,
                            bias_kind,
                            feature_interaction,
                            residual,
                            ..self.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in BiasKind::ALL {
            assert_eq!(k.name().parse::<BiasKind>().unwrap(), k);
        }
        for r in Residual::ALL {
            assert_eq!(r.to_string().parse::<Residual>().unwrap(), r);
        }
        assert!("gelu".parse::<Activation>().is_err());
    }

    #[test]
    fn validation_rules() {
        let ok = BlockConfig::default();
        ok.validate().unwrap();
        assert!(BlockConfig { heads: 3, ..ok.clone() }.validate().is_err());
        assert!(BlockConfig { max_len: 0, ..ok.clone() }.validate().is_err());
        let odd = BlockConfig {
            dim: 6,
            heads: 2,
            bias_kind: BiasKind::Rope,
            ..ok.clone()
        };
        assert!(odd.validate().is_err());
        assert!(BlockConfig { bias_kind: BiasKind::None, ..odd }.validate().is_ok());
    }

    #[test]
    fn lattice_has_sixty_corners() {
        assert_eq!(BlockConfig::default().corners().len(), 60);
    }
}

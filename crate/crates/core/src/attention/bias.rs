use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::config::BiasKind;

/// Additive logit for causally excluded entries before a softmax.
pub const MASK_SENTINEL: f64 = -1e9;

/// Log-spaced bucket of a time gap: `min(floor(ln(1 + delta) / ln(base)), B - 1)`.
/// Negative gaps count as zero.
pub fn time_bucket(delta: i64, num_buckets: usize, base: f64) -> Result<usize> {
    if num_buckets == 0 {
        return Err(Error::Config("time_bucket needs at least one bucket".into()));
    }
    if base <= 1.0 {
        return Err(Error::Config(format!("time bucket base must exceed 1, got {base}")));
    }
    let delta = delta.max(0) as f64;
    let b = (delta.ln_1p() / base.ln()).floor();
    Ok((b as usize).min(num_buckets - 1))
}

/// Learned per-head bias vectors: one entry per relative distance and one per time bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasTables<T> {
    /// `[heads, max_len]`
    pub pos_table: Tensor<T>,
    /// `[heads, num_buckets]`
    pub time_table: Tensor<T>,
    pub time_base: f64,
}

impl<T: Scalar> BiasTables<T> {
    pub fn zeros(heads: usize, max_len: usize, num_buckets: usize, time_base: f64) -> Self {
        Self {
            pos_table: Tensor::zeros(&[heads, max_len]),
            time_table: Tensor::zeros(&[heads, num_buckets]),
            time_base,
        }
    }

    pub fn heads(&self) -> usize {
        self.pos_table.rows()
    }
}

/// Flat offsets into the position and time tables for one sequence.
/// Entry `i * n + j` is `None` wherever `(i, j)` is not attended.
#[derive(Debug, Clone)]
pub(crate) struct BiasIndex {
    pub distance: Vec<Option<usize>>,
    pub bucket: Vec<Option<usize>>,
}

impl BiasIndex {
    pub fn new(
        positions: &[usize],
        timestamps: &[i64],
        keep: &[bool],
        max_len: usize,
        num_buckets: usize,
        time_base: f64,
    ) -> Result<Self> {
        let n = positions.len();
        let mut distance = vec![None; n * n];
        let mut bucket = vec![None; n * n];
        for i in 0..n {
            for j in 0..=i {
                if !keep[i * n + j] {
                    continue;
                }
                let d = positions[i].saturating_sub(positions[j]).min(max_len - 1);
                distance[i * n + j] = Some(d);
                bucket[i * n + j] = Some(time_bucket(
                    timestamps[i] - timestamps[j],
                    num_buckets,
                    time_base,
                )?);
            }
        }
        Ok(Self { distance, bucket })
    }

    /// Shifts every offset into the row of `head` in a `[heads, width]` table.
    pub fn for_head(idx: &[Option<usize>], head: usize, width: usize) -> Vec<Option<usize>> {
        idx.iter().map(|o| o.map(|v| head * width + v)).collect()
    }
}

fn check_order(positions: &[usize], timestamps: &[i64]) -> Result<()> {
    if positions.len() != timestamps.len() {
        return Err(Error::Data(format!(
            "{} positions but {} timestamps",
            positions.len(),
            timestamps.len()
        )));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data("positions must be strictly increasing".into()));
    }
    if timestamps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Data("timestamps must be nondecreasing".into()));
    }
    Ok(())
}

/// Dense `[heads, n, n]` bias matrix. Entries above the diagonal hold
/// [`MASK_SENTINEL`].
pub fn build_bias<T: Scalar>(
    kind: BiasKind,
    positions: &[usize],
    timestamps: &[i64],
    tables: &BiasTables<T>,
) -> Result<Tensor<T>> {
    if kind == BiasKind::Rope {
        return Err(Error::Config(
            "rope rotates queries and keys; it has no additive bias matrix".into(),
        ));
    }
    check_order(positions, timestamps)?;
    let n = positions.len();
    let heads = tables.heads();
    let max_len = tables.pos_table.cols();
    let num_buckets = tables.time_table.cols();
    if max_len == 0 {
        return Err(Error::EmptyDimension { op: "build_bias" });
    }
    let keep = vec![true; n * n];
    let index = BiasIndex::new(positions, timestamps, &keep, max_len, num_buckets, tables.time_base)?;
    let sentinel = T::from_f64_lossy(MASK_SENTINEL);
    let mut out = Tensor::zeros(&[heads, n, n]);
    let data = out.data_mut();
    for h in 0..heads {
        let pos = tables.pos_table.row(h);
        let time = tables.time_table.row(h);
        for i in 0..n {
            for j in 0..n {
                let e = &mut data[(h * n + i) * n + j];
                if j > i {
                    *e = sentinel;
                    continue;
                }
                let k = i * n + j;
                let mut v = T::zero();
                if kind.uses_position_table() {
                    v += pos[index.distance[k].expect("causal entry")];
                }
                if kind.uses_time_table() {
                    v += time[index.bucket[k].expect("causal entry")];
                }
                *e = v;
            }
        }
    }
    Ok(out)
}

/// Rotates each row of a `[heads, n, d_h]` tensor by its position.
pub fn rope_rotate<T: Scalar>(qk: &Tensor<T>, positions: &[usize], base: f64) -> Result<Tensor<T>> {
    let shape = qk.shape().to_vec();
    if shape.len() != 3 || shape[1] != positions.len() {
        return Err(Error::Shape {
            op: "rope_rotate",
            lhs: shape,
            rhs: vec![positions.len()],
        });
    }
    let dh = shape[2];
    if dh % 2 != 0 {
        return Err(Error::Config(format!("rope needs an even per-head dim, got {dh}")));
    }
    let mut out = qk.clone();
    let n = shape[1];
    for r in 0..shape[0] * n {
        let p = positions[r % n] as f64;
        let row = out.row_mut(r);
        for i in 0..dh / 2 {
            let angle = p * base.powf(-2.0 * i as f64 / dh as f64);
            let (c, s) = (T::from_f64_lossy(angle.cos()), T::from_f64_lossy(angle.sin()));
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = a * c - b * s;
            row[2 * i + 1] = a * s + b * c;
        }
    }
    Ok(out)
}

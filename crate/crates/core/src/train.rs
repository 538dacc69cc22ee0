//! Seeded mini-batch training with Adam, global-norm clipping and checkpoints.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::UserSequence;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{Graph, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine decay from `lr` to zero over all steps.
    Cosine,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(Error::Config(format!(
                "unknown schedule `{other}` (expected constant or cosine)"
            ))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to every gradient.
    pub weight_decay: f64,
    /// Global gradient norm bound; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 512,
            epochs: 10,
            seed: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip_norm: 1.0,
            schedule: Schedule::Constant,
        }
    }
}

impl TrainConfig {
    /// Small-batch, high-rate settings paired with [`ModelConfig::tiny`](crate::model::ModelConfig::tiny).
    pub fn tiny(seed: u64) -> Self {
        Self {
            lr: 1e-2,
            batch_size: 16,
            epochs: 5,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 || self.grad_clip_norm < 0.0 {
            return fail("eps must be positive; weight_decay and grad_clip_norm non-negative".into());
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Adam moments for every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        let zeros = |t: &Tensor<T>| vec![T::zero(); t.len()];
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: store.tensors().iter().map(zeros).collect(),
            v: store.tensors().iter().map(zeros).collect(),
        }
    }

    /// One update. `grads[i]` of `None` is treated as a zero gradient.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let c = |x: f64| T::from_f64_lossy(x);
        let (b1, b2, eps, wd) = (c(self.beta1), c(self.beta2), c(self.eps), c(self.weight_decay));
        let (one, lr, bc1, bc2) = (T::one(), c(lr), c(bc1), c(bc2));
        for (i, param) in store.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].as_deref();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let mut gj = g.map_or(T::zero(), |g| g[j]);
                if wd > T::zero() {
                    gj += wd * *p;
                }
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Option<Vec<T>>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub metrics: Metrics,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!("epoch={} loss={:.6} seconds={:.3}", self.epoch, self.loss, self.seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub num_params: usize,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn log_text(&self) -> String {
        self.epochs.iter().map(|e| e.log_line() + "\n").collect()
    }
}

/// Per-epoch callback: receives the epoch index and the current model, returns metrics to record.
pub type EpochHook<'a, T> = dyn FnMut(usize, &Model<T>) -> Result<Metrics> + 'a;

/// Trains `model` in place. Deterministic for a fixed `cfg.seed`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &[UserSequence],
    cfg: &TrainConfig,
    mut hook: Option<&mut EpochHook<'_, T>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        num_params: model.num_params(),
    };
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let usable: Vec<&UserSequence> = data.iter().filter(|s| s.num_valid() > 0).collect();
    if usable.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg);
    let batches_per_epoch = usable.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut batch_index = 0usize;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut count_sum) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<UserSequence> = chunk.iter().map(|&i| usable[i].clone()).collect();
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let Some((loss, count)) = model.batch_loss(&mut g, &bound, &batch, &mut rng)? else {
                batch_index += 1;
                continue;
            };
            let lv = g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
            if !lv.is_finite() {
                return Err(Error::Diverged { batch: batch_index });
            }
            g.backward(loss)?;
            let mut grads: Vec<Option<Vec<T>>> = bound
                .vars
                .iter()
                .map(|&v| g.grad(v).ok().map(|t| t.data().to_vec()))
                .collect();
            drop(g);
            let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged { batch: batch_index });
            }
            adam.update(&mut model.params, &grads, cfg.lr_at(batch_index, total_steps));
            model.zero_pad_rows();
            loss_sum += lv * count as f64;
            count_sum += count;
            batch_index += 1;
        }
        let metrics = match hook.as_mut() {
            Some(h) => h(epoch, model)?,
            None => Vec::new(),
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss: if count_sum > 0 { loss_sum / count_sum as f64 } else { f64::NAN },
            seconds: started.elapsed().as_secs_f64(),
            metrics,
        });
    }
    Ok(history)
}

/// Mean loss of `model` over `data` without updating it.
pub fn evaluate_loss<T: Scalar>(model: &Model<T>, data: &[UserSequence], batch_size: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in data.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        if let Some((l, c)) = model.batch_loss(&mut g, &b, chunk, &mut rng)? {
            sum += g.value(l).data()[0].to_f64().unwrap_or(f64::NAN) * c as f64;
            count += c;
        }
    }
    if count == 0 {
        return Err(Error::Data("no prediction slots to evaluate".into()));
    }
    Ok(sum / count as f64)
}

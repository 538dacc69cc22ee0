//! Randomized finite-difference checks over every corner of the block lattice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::gradcheck::{self, GradCheck};
use crate::tensor::{Graph, Scalar, Tensor, Var};

use super::block::{block_forward, AttentionContext, BlockParams};
use super::config::BlockConfig;

/// Small geometry used by the lattice checks.
pub fn small_config() -> BlockConfig {
    BlockConfig {
        dim: 4,
        heads: 2,
        ffn_hidden: 6,
        max_len: 4,
        num_buckets: 5,
        ..BlockConfig::default()
    }
}

/// Overwrites every parameter with uniform noise in `[-scale, scale]`;
/// layer-norm gains are centred on one.
pub fn randomize<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, scale: f64) {
    for slot in 0..store.len() {
        let gain = store.name(slot).ends_with(".gamma");
        for v in store.get_mut(slot).data_mut() {
            let r = rng.gen_range(-scale..=scale);
            *v = T::from_f64_lossy(if gain { 1.0 + r } else { r });
        }
    }
}

struct Instance<T> {
    params: BlockParams,
    inputs: Vec<Tensor<T>>,
    ctx: AttentionContext,
}

fn instance<T: Scalar>(cfg: &BlockConfig, rng: &mut ChaCha8Rng) -> Result<Instance<T>> {
    let n = rng.gen_range(1..=cfg.max_len);
    let mut store = ParamStore::new();
    let params = BlockParams::init(cfg, &mut store, "b", rng)?;
    randomize(&mut store, rng, 0.5);
    // occasionally lead with a pad token so pad handling is differentiated too
    let pads = if n > 1 && rng.gen_bool(0.3) { 1 } else { 0 };
    let valid: Vec<bool> = (0..n).map(|i| i >= pads).collect();
    let mut t = 0i64;
    let timestamps: Vec<i64> = (0..n)
        .map(|_| {
            t += rng.gen_range(0..400);
            t
        })
        .collect();
    let positions: Vec<usize> = (0..n).collect();
    let ctx = AttentionContext::new(cfg, &positions, &timestamps, &valid)?;
    let x = gradcheck::random(rng, &[n, cfg.dim], 1.0);
    let mut inputs = vec![x];
    inputs.extend(store.tensors().iter().cloned());
    Ok(Instance { params, inputs, ctx })
}

/// Worst finite-difference agreement of `block_forward` for one config.
pub fn check_block<T: Scalar>(cfg: &BlockConfig, instances: usize, seed: u64, h: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for k in 0..instances {
        let inst = instance::<T>(cfg, &mut rng)?;
        let f = |g: &mut Graph<T>, vars: &[Var]| -> Result<Var> {
            let p = inst.params.bind(&vars[1..]);
            let y = block_forward(g, vars[0], &p, cfg, &inst.ctx)?;
            gradcheck::project(g, y, seed ^ k as u64)
        };
        let r = gradcheck::check(f, &inst.inputs, h)?;
        worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
        worst.max_abs_error = worst.max_abs_error.max(r.max_abs_error);
        worst.checked += r.checked;
    }
    Ok(worst)
}

/// Runs [`check_block`] on all 60 corners of `base`.
pub fn corner_suite<T: Scalar>(
    base: &BlockConfig,
    instances: usize,
    seed: u64,
    h: f64,
) -> Result<Vec<(BlockConfig, GradCheck)>> {
    base.corners()
        .into_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let r = check_block::<T>(&cfg, instances, seed.wrapping_add(i as u64), h)?;
            Ok((cfg, r))
        })
        .collect()
}

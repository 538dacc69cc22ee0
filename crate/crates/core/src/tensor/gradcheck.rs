//! Central finite-difference checking of tape gradients.
//!
//! The numeric side only ever calls the forward closure, so it stays
//! independent of every backward rule it is used to verify.

use rand::Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::Result;

/// Builds a scalar loss from leaf variables created for `inputs`.
pub trait LossFn<T: Scalar>: Fn(&mut Graph<T>, &[Var]) -> Result<Var> {}
impl<T: Scalar, F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>> LossFn<T> for F {}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Denominator floor of the relative error: tight for `f64`, unit for
/// `f32` where single-precision cancellation dominates small gradients.
pub fn rel_floor<T: Scalar>() -> f64 {
    match T::DTYPE {
        super::DType::F32 => 1.0,
        _ => 1e-3,
    }
}

fn eval<T: Scalar>(f: &impl LossFn<T>, inputs: &[Tensor<T>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN))
}

/// Compares reverse-mode gradients of `f` against central differences with step `h`.
pub fn check<T: Scalar>(f: impl LossFn<T>, inputs: &[Tensor<T>], h: f64) -> Result<GradCheck> {
    check_with_floor(f, inputs, h, rel_floor::<T>())
}

pub fn check_with_floor<T: Scalar>(
    f: impl LossFn<T>,
    inputs: &[Tensor<T>],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Option<Vec<f64>>> = vars
        .iter()
        .map(|&v| g.grad(v).ok().map(|t| t.to_f64().into_data()))
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let x0 = input.data()[e];
            let (xp, xm) = (x0 + T::from_f64_lossy(h), x0 - T::from_f64_lossy(h));
            probe[i].data_mut()[e] = xp;
            let up = eval(&f, &probe)?;
            probe[i].data_mut()[e] = xm;
            let down = eval(&f, &probe)?;
            probe[i].data_mut()[e] = x0;
            let step = (xp - xm).to_f64().unwrap_or(2.0 * h);
            let numeric = (up - down) / step;
            let a = analytic[i].as_ref().map_or(0.0, |g| g[e]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Random tensor with entries uniform in `[-scale, scale]`.
pub fn random<T: Scalar>(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-scale..=scale)))
}

/// Reduces an arbitrary tensor to a scalar with fixed random weights so every
/// output entry contributes a distinct amount to the loss.
pub fn project<T: Scalar>(g: &mut Graph<T>, out: Var, seed: u64) -> Result<Var> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let w = g.constant(random(&mut rng, &shape, 1.0));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// Names of the ops covered by [`op_suite`].
pub const SUITE_OPS: &[&str] = &[
    "matmul",
    "matmul_bt",
    "transpose",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale",
    "scale_rows",
    "mask",
    "silu",
    "layer_norm",
    "softmax_rows",
    "gather_rows",
    "gather_scalars",
    "slice_cols",
    "slice_rows",
    "concat_cols",
    "reshape",
    "rope",
    "sum",
    "mean",
    "sum_cols",
    "softmax_cross_entropy",
    "bce_with_logits",
];

/// Runs `instances` random small-shape gradient checks for every op in
/// [`SUITE_OPS`] and returns the worst result per op.
pub fn op_suite<T: Scalar>(instances: usize, seed: u64, h: f64) -> Result<Vec<(&'static str, GradCheck)>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (op_index, &op) in SUITE_OPS.iter().enumerate() {
        let mut worst = GradCheck {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        };
        for inst in 0..instances {
            let m = rng.gen_range(1..=4);
            let k = rng.gen_range(1..=4);
            let n = rng.gen_range(1..=5);
            let pseed = seed ^ ((op_index as u64) << 32) ^ inst as u64;
            let r = run_op::<T>(op, &mut rng, m, k, n, pseed, h)?;
            worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
            worst.max_abs_error = worst.max_abs_error.max(r.max_abs_error);
            worst.checked += r.checked;
        }
        out.push((op, worst));
    }
    Ok(out)
}

fn run_op<T: Scalar>(
    op: &str,
    rng: &mut impl Rng,
    m: usize,
    k: usize,
    n: usize,
    pseed: u64,
    h: f64,
) -> Result<GradCheck> {
    let a = random::<T>(rng, &[m, k], 1.5);
    match op {
        "matmul" => {
            let b = random::<T>(rng, &[k, n], 1.5);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.matmul(v[0], v[1])?;
                    project(g, y, pseed)
                },
                &[a, b],
                h,
            )
        }
        "matmul_bt" => {
            let b = random::<T>(rng, &[n, k], 1.5);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.matmul_bt(v[0], v[1])?;
                    project(g, y, pseed)
                },
                &[a, b],
                h,
            )
        }
        "transpose" => check(
            |g: &mut Graph<T>, v: &[Var]| {
                let y = g.transpose(v[0])?;
                project(g, y, pseed)
            },
            &[a],
            h,
        ),
        "add" | "sub" | "mul" => {
            let b = random::<T>(rng, &[m, k], 1.5);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = match op {
                        "add" => g.add(v[0], v[1])?,
                        "sub" => g.sub(v[0], v[1])?,
                        _ => g.mul(v[0], v[1])?,
                    };
                    project(g, y, pseed)
                },
                &[a, b],
                h,
            )
        }
        "add_bias" => {
            let b = random::<T>(rng, &[k], 1.5);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.add_bias(v[0], v[1])?;
                    project(g, y, pseed)
                },
                &[a, b],
                h,
            )
        }
        "scale" => {
            let c = T::from_f64_lossy(rng.gen_range(-2.0..2.0));
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.scale(v[0], c);
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "scale_rows" => {
            let f: Vec<T> = (0..m).map(|_| T::from_f64_lossy(rng.gen_range(-2.0..2.0))).collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.scale_rows(v[0], f.clone())?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "mask" => {
            let keep: Vec<bool> = (0..m * k).map(|_| rng.gen_bool(0.6)).collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.mask(v[0], keep.clone())?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "silu" => check(
            |g: &mut Graph<T>, v: &[Var]| {
                let y = g.silu(v[0]);
                project(g, y, pseed)
            },
            &[a],
            h,
        ),
        "layer_norm" => {
            // A per-row ramp keeps every row's variance well away from zero,
            // where normalization becomes steep enough to defeat differencing.
            let w = k + 2;
            let noise = random::<T>(rng, &[m, w], 0.5);
            let x = Tensor::from_fn(&[m, w], |i| {
                noise.data()[i] + T::from_usize(i % w).expect("small index")
            });
            let k = w - 1;
            let gamma = random::<T>(rng, &[k + 1], 1.5);
            let beta = random::<T>(rng, &[k + 1], 1.5);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.layer_norm(v[0], v[1], v[2], T::from_f64_lossy(1e-5))?;
                    project(g, y, pseed)
                },
                &[x, gamma, beta],
                h,
            )
        }
        "softmax_rows" => {
            let mut keep: Vec<bool> = (0..m * k).map(|_| rng.gen_bool(0.7)).collect();
            for r in 0..m {
                keep[r * k] = true;
            }
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.softmax_rows(v[0], Some(&keep))?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "gather_rows" => {
            let idx: Vec<Option<usize>> = (0..n)
                .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..m)))
                .collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.gather_rows(v[0], idx.clone())?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "gather_scalars" => {
            let idx: Vec<Option<usize>> = (0..n * 2)
                .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..m * k)))
                .collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.gather_scalars(v[0], idx.clone(), vec![n, 2])?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "slice_cols" => {
            let start = rng.gen_range(0..k);
            let len = rng.gen_range(1..=k - start);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.slice_cols(v[0], start, len)?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "slice_rows" => {
            let start = rng.gen_range(0..m);
            let len = rng.gen_range(1..=m - start);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.slice_rows(v[0], start, len)?;
                    project(g, y, pseed)
                },
                &[a],
                h,
            )
        }
        "concat_cols" => {
            let b = random::<T>(rng, &[m, n], 1.5);
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.concat_cols(&[v[0], v[1], v[0]])?;
                    project(g, y, pseed)
                },
                &[a, b],
                h,
            )
        }
        "reshape" => check(
            |g: &mut Graph<T>, v: &[Var]| {
                let y = g.reshape(v[0], vec![k, m])?;
                let y = g.matmul(y, v[0])?;
                project(g, y, pseed)
            },
            &[a],
            h,
        ),
        "rope" => {
            let x = random::<T>(rng, &[m, 2 * k], 1.5);
            let positions: Vec<usize> = (0..m).map(|_| rng.gen_range(0..50)).collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| {
                    let y = g.rope(v[0], &positions, 10_000.0)?;
                    project(g, y, pseed)
                },
                &[x],
                h,
            )
        }
        "sum" | "mean" => check(
            |g: &mut Graph<T>, v: &[Var]| {
                let sq = g.mul(v[0], v[0])?;
                Ok(if op == "sum" { g.sum(sq) } else { g.mean(sq) })
            },
            &[a],
            h,
        ),
        "sum_cols" => check(
            |g: &mut Graph<T>, v: &[Var]| {
                let y = g.sum_cols(v[0]);
                project(g, y, pseed)
            },
            &[a],
            h,
        ),
        "softmax_cross_entropy" => {
            let targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| g.softmax_cross_entropy(v[0], targets.clone()),
                &[a],
                h,
            )
        }
        "bce_with_logits" => {
            let labels: Vec<T> = (0..m * k)
                .map(|_| if rng.gen_bool(0.5) { T::one() } else { T::zero() })
                .collect();
            check(
                |g: &mut Graph<T>, v: &[Var]| g.bce_with_logits(v[0], labels.clone()),
                &[a],
                h,
            )
        }
        other => Err(crate::error::Error::Config(format!("unknown op {other}"))),
    }
}

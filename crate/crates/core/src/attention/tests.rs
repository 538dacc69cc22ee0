use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::suite::{check_block, randomize, small_config};
use super::*;
use crate::params::ParamStore;
use crate::tensor::{gradcheck, silu, Graph, Tensor};
use crate::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn run(
    cfg: &BlockConfig,
    store: &ParamStore<f64>,
    p: &BlockParams,
    x: &Tensor<f64>,
    ctx: &AttentionContext,
) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = block_forward(&mut g, xv, &p.bind(&vars), cfg, ctx).unwrap();
    g.value(y).clone()
}

fn timestamps(n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| i * i * 37 + i * 5).collect()
}

#[test]
fn param_count_matches_store() {
    for base in [small_config(), BlockConfig::default()] {
        for cfg in base.corners() {
            let mut store = ParamStore::<f32>::new();
            StackParams::init(&cfg, 3, &mut store, "s", &mut rng(1)).unwrap();
            assert_eq!(store.num_scalars(), stack_param_count(&cfg, 3), "{cfg:?}");
        }
    }
    let cfg = BlockConfig {
        dim: 8,
        heads: 2,
        ffn_hidden: 16,
        max_len: 10,
        num_buckets: 128,
        ..BlockConfig::default()
    };
    // 8*32+32 + 8*8+8 + 32 + 16 + (8*16+16+16*8+8) + 2*10 + 2*128
    assert_eq!(block_param_count(&cfg), 288 + 72 + 32 + 16 + 280 + 20 + 256);
}

#[test]
fn zero_tables_match_no_bias_bitwise() {
    let n = 6;
    for base in small_config().corners() {
        if base.bias_kind == BiasKind::Rope {
            continue;
        }
        let x = gradcheck::random(&mut rng(5), &[n, base.dim], 1.0);
        let none = BlockConfig {
            bias_kind: BiasKind::None,
            max_len: n,
            ..base.clone()
        };
        let cfg = BlockConfig { max_len: n, ..base };
        let mut s1 = ParamStore::new();
        let p1 = BlockParams::init(&cfg, &mut s1, "b", &mut rng(9)).unwrap();
        let mut s0 = ParamStore::new();
        let p0 = BlockParams::init(&none, &mut s0, "b", &mut rng(9)).unwrap();
        let ts = timestamps(n);
        let c1 = AttentionContext::dense(&cfg, &ts).unwrap();
        let c0 = AttentionContext::dense(&none, &ts).unwrap();
        assert_eq!(run(&cfg, &s1, &p1, &x, &c1), run(&none, &s0, &p0, &x, &c0), "{cfg:?}");
    }
}

#[test]
fn llama_with_zero_sublayers_is_identity() {
    let cfg = BlockConfig {
        activation: Activation::Softmax,
        bias_kind: BiasKind::None,
        feature_interaction: false,
        residual: Residual::Llama,
        ..small_config()
    };
    let mut store = ParamStore::new();
    let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(2)).unwrap();
    randomize(&mut store, &mut rng(3), 0.5);
    for slot in [p.w_out, p.b_out, p.ffn_w2, p.ffn_b2] {
        store.get_mut(slot).data_mut().fill(0.0);
    }
    let x = gradcheck::random(&mut rng(4), &[4, 4], 2.0);
    let ctx = AttentionContext::dense(&cfg, &timestamps(4)).unwrap();
    assert_eq!(run(&cfg, &store, &p, &x, &ctx), x);
}

#[test]
fn single_token_attends_to_itself() {
    for activation in [Activation::Silu, Activation::Softmax] {
        let cfg = BlockConfig {
            activation,
            heads: 1,
            ..small_config()
        };
        let mut store = ParamStore::<f64>::new();
        let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(6)).unwrap();
        randomize(&mut store, &mut rng(7), 0.8);
        let x = gradcheck::random(&mut rng(8), &[1, 4], 1.0);
        let ctx = AttentionContext::dense(&cfg, &[100]).unwrap();
        let mut g = Graph::new();
        let vars = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let w = attention_weights(&mut g, xv, &p.bind(&vars), &cfg, &ctx).unwrap();
        // recompute q and k for the lone token by hand
        let wq = store.get(p.w_uqkv);
        let bq = store.get(p.b_uqkv);
        let proj = |c: usize| {
            let z: f64 = (0..4).map(|r| x.data()[r] * wq.at(r, c)).sum::<f64>() + bq.data()[c];
            silu(z)
        };
        let qk: f64 = (0..4).map(|c| proj(4 + c) * proj(8 + c)).sum();
        let rab = store.get(p.pos_table.unwrap()).data()[0] + store.get(p.time_table.unwrap()).data()[0];
        let want = match activation {
            Activation::Silu => silu(qk / cfg.max_len as f64 + rab),
            Activation::Softmax => 1.0,
        };
        assert!((w[0].data()[0] - want).abs() < 1e-12, "{activation}");
    }
}

fn ln(v: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    let s = (var + 1e-5).sqrt();
    v.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(x, (g, b))| (x - m) / s * g + b)
        .collect()
}

fn affine(v: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    (0..w.cols())
        .map(|c| (0..v.len()).map(|r| v[r] * w.at(r, c)).sum::<f64>() + b.data()[c])
        .collect()
}

#[test]
fn two_token_softmax_block_matches_scalar_oracle() {
    let cfg = BlockConfig {
        dim: 2,
        heads: 1,
        ffn_hidden: 3,
        max_len: 2,
        activation: Activation::Softmax,
        bias_kind: BiasKind::None,
        feature_interaction: false,
        residual: Residual::Llama,
        ..BlockConfig::default()
    };
    let mut store = ParamStore::new();
    let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(11)).unwrap();
    randomize(&mut store, &mut rng(12), 0.9);
    let x = Tensor::new(vec![2, 2], vec![0.3, -1.1, 0.8, 0.25]).unwrap();
    let ctx = AttentionContext::dense(&cfg, &[0, 60]).unwrap();
    let got = run(&cfg, &store, &p, &x, &ctx);

    let t = |s: usize| store.get(s).data().to_vec();
    let rows: Vec<Vec<f64>> = (0..2).map(|r| x.row(r).to_vec()).collect();
    let h: Vec<Vec<f64>> = rows.iter().map(|r| ln(r, &t(p.ln1.0), &t(p.ln1.1))).collect();
    let f1: Vec<Vec<f64>> = h
        .iter()
        .map(|r| affine(r, store.get(p.w_uqkv), store.get(p.b_uqkv)).into_iter().map(silu).collect())
        .collect();
    let (q, k, v) = (|i: usize| &f1[i][2..4], |i: usize| &f1[i][4..6], |i: usize| &f1[i][6..8]);
    let dot = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1];
    let scale = 1.0 / 2f64.sqrt();
    let mut want = Vec::new();
    for i in 0..2 {
        let logits: Vec<f64> = (0..=i).map(|j| dot(q(i), k(j)) * scale).collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let o: Vec<f64> = (0..2)
            .map(|c| (0..=i).map(|j| e[j] / z * v(j)[c]).sum())
            .collect();
        let y = affine(&o, store.get(p.w_out), store.get(p.b_out));
        let g1: Vec<f64> = rows[i].iter().zip(&y).map(|(a, b)| a + b).collect();
        let n2 = ln(&g1, &t(p.ln2.0), &t(p.ln2.1));
        let hid: Vec<f64> = affine(&n2, store.get(p.ffn_w1), store.get(p.ffn_b1))
            .into_iter()
            .map(silu)
            .collect();
        let out = affine(&hid, store.get(p.ffn_w2), store.get(p.ffn_b2));
        want.extend(g1.iter().zip(&out).map(|(a, b)| a + b));
    }
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn future_rows_never_reach_the_past() {
    let n = 5;
    for cfg in small_config().corners() {
        let cfg = BlockConfig { max_len: n, ..cfg };
        let mut store = ParamStore::new();
        let stack = StackParams::init(&cfg, 2, &mut store, "s", &mut rng(21)).unwrap();
        randomize(&mut store, &mut rng(22), 0.7);
        let ctx = AttentionContext::dense(&cfg, &timestamps(n)).unwrap();
        let x = gradcheck::random::<f64>(&mut rng(23), &[n, cfg.dim], 1.0);
        let forward = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let vars = store.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let y = stack_forward(&mut g, xv, &stack.bind(&vars), &cfg, &ctx).unwrap();
            g.value(y).clone()
        };
        let base = forward(&x);
        for t in 0..n - 1 {
            let mut y = x.clone();
            for r in t + 1..n {
                y.row_mut(r).iter_mut().for_each(|v| *v = *v * 3.0 - 7.0);
            }
            let out = forward(&y);
            for r in 0..=t {
                assert_eq!(out.row(r), base.row(r), "{cfg:?} t={t}");
            }
        }
    }
}

#[test]
fn softmax_rows_are_stochastic() {
    let cfg = BlockConfig {
        activation: Activation::Softmax,
        max_len: 7,
        ..small_config()
    };
    let mut store = ParamStore::new();
    let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(31)).unwrap();
    randomize(&mut store, &mut rng(32), 1.0);
    let positions: Vec<usize> = (0..7).collect();
    let valid = [false, false, true, true, true, true, true];
    let ctx = AttentionContext::new(&cfg, &positions, &timestamps(7), &valid).unwrap();
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let x = g.constant(gradcheck::random(&mut rng(33), &[7, 4], 2.0));
    for w in attention_weights(&mut g, x, &p.bind(&vars), &cfg, &ctx).unwrap() {
        for i in 0..7 {
            let row = w.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (j, &a) in row.iter().enumerate() {
                assert!((0.0..=1.0).contains(&a));
                if !ctx.keep()[i * 7 + j] {
                    assert_eq!(a, 0.0);
                }
            }
        }
    }
}

#[test]
fn silu_scores_grow_while_softmax_stays_bounded() {
    let mut last_silu = f64::MIN;
    for scale in [1.0, 2.0, 4.0, 8.0, 16.0] {
        for activation in [Activation::Silu, Activation::Softmax] {
            let cfg = BlockConfig {
                activation,
                heads: 1,
                max_len: 4,
                ..small_config()
            };
            let mut store = ParamStore::new();
            let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(41)).unwrap();
            randomize(&mut store, &mut rng(42), 1.0);
            store.get_mut(p.b_uqkv).data_mut().fill(0.0);
            let x = gradcheck::random::<f64>(&mut rng(43), &[4, 4], 1.0).map(|v| v.abs() * scale);
            let ctx = AttentionContext::dense(&cfg, &timestamps(4)).unwrap();
            let mut g = Graph::new();
            let vars = store.bind(&mut g, false);
            let xv = g.constant(x);
            let w = attention_weights(&mut g, xv, &p.bind(&vars), &cfg, &ctx).unwrap();
            let max = w[0].data().iter().cloned().fold(f64::MIN, f64::max);
            match activation {
                Activation::Silu => {
                    assert!(max > last_silu, "scale {scale}: {max} <= {last_silu}");
                    last_silu = max;
                }
                Activation::Softmax => assert!(max <= 1.0),
            }
        }
    }
    assert!(last_silu > 1.0);
}

#[test]
fn stack_composition() {
    let cfg = small_config();
    let ctx = AttentionContext::dense(&cfg, &timestamps(3)).unwrap();
    let x = gradcheck::random::<f64>(&mut rng(51), &[3, 4], 1.0);

    let mut store = ParamStore::<f64>::new();
    let empty = StackParams::init_with(&cfg, 0, false, &mut store, "s", &mut rng(1)).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = stack_forward(&mut g, xv, &empty.bind(&[]), &cfg, &ctx).unwrap();
    assert_eq!(g.value(y), &x);

    let mut store = ParamStore::new();
    let with_norm = StackParams::init(&cfg, 0, &mut store, "s", &mut rng(1)).unwrap();
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    assert!(stack_forward(&mut g, xv, &with_norm.bind(&vars), &cfg, &ctx).is_err());

    let mut store = ParamStore::new();
    let two = StackParams::init_with(&cfg, 2, false, &mut store, "s", &mut rng(52)).unwrap();
    randomize(&mut store, &mut rng(53), 0.5);
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let stacked = stack_forward(&mut g, xv, &two.bind(&vars), &cfg, &ctx).unwrap();
    let once = block_forward(&mut g, xv, &two.blocks[0].bind(&vars), &cfg, &ctx).unwrap();
    let twice = block_forward(&mut g, once, &two.blocks[1].bind(&vars), &cfg, &ctx).unwrap();
    assert_eq!(g.value(stacked), g.value(twice));
    assert_eq!(&run(&cfg, &store, &two.blocks[0], &x, &ctx), g.value(once));
}

#[test]
fn nan_input_is_reported_by_stage() {
    let cfg = BlockConfig {
        residual: Residual::PostNorm,
        ..small_config()
    };
    let mut store = ParamStore::<f64>::new();
    let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(61)).unwrap();
    let mut x = Tensor::<f64>::zeros(&[2, 4]);
    x.data_mut()[1] = f64::NAN;
    let ctx = AttentionContext::dense(&cfg, &[0, 1]).unwrap();
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let xv = g.constant(x);
    match block_forward(&mut g, xv, &p.bind(&vars), &cfg, &ctx) {
        Err(Error::Numeric { stage }) => assert!(stage.contains("attention scores")),
        other => panic!("expected numeric failure, got {other:?}"),
    }
}

#[test]
fn leading_pads_leave_real_rows_alone() {
    let n = 4;
    for cfg in small_config().corners() {
        let cfg = BlockConfig { max_len: n + 2, ..cfg };
        let mut store = ParamStore::new();
        let p = BlockParams::init(&cfg, &mut store, "b", &mut rng(71)).unwrap();
        randomize(&mut store, &mut rng(72), 0.6);
        let x = gradcheck::random::<f64>(&mut rng(73), &[n, 4], 1.0);
        let ts = timestamps(n);
        let plain = run(&cfg, &store, &p, &x, &AttentionContext::dense(&cfg, &ts).unwrap());
        let mut padded = Tensor::zeros(&[n + 2, 4]);
        padded.data_mut()[8..].copy_from_slice(x.data());
        let pts: Vec<i64> = [0, 0].iter().chain(&ts).copied().collect();
        let positions: Vec<usize> = (0..n + 2).collect();
        let valid: Vec<bool> = (0..n + 2).map(|i| i >= 2).collect();
        let ctx = AttentionContext::new(&cfg, &positions, &pts, &valid).unwrap();
        let out = run(&cfg, &store, &p, &padded, &ctx);
        for (a, b) in out.data()[8..].iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-9, "{cfg:?}");
        }
    }
}

#[test]
fn every_corner_passes_gradient_check() {
    for (i, cfg) in small_config().corners().into_iter().enumerate() {
        let r = check_block::<f64>(&cfg, 3, 100 + i as u64, 3e-6).unwrap();
        assert!(r.max_rel_error < 1e-5, "{cfg:?}: {r:?}");
    }
}

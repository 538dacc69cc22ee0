use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::BiasKind;
use crate::container::Container;
use crate::data::{Task, UserSequence};
use crate::error::Error;
use crate::tensor::{gradcheck, Graph, Tensor};

fn seq(items: &[u32], n: usize) -> UserSequence {
    let pad = n - items.len();
    let mut s = UserSequence {
        user: 0,
        items: vec![0; n],
        behaviors: vec![0; n],
        timestamps: vec![0; n],
        labels: vec![0; n],
        attrs: Vec::new(),
        domains: vec![0; n],
    };
    for (k, &i) in items.iter().enumerate() {
        s.items[pad + k] = i;
        s.behaviors[pad + k] = 1 + (i % 2);
        s.timestamps[pad + k] = 100 + 37 * k as i64 * k as i64;
        s.labels[pad + k] = (i % 3 == 0) as u8;
    }
    s
}

fn tiny(num_items: usize, n: usize, task: Task) -> ModelConfig {
    let mut c = ModelConfig::new(num_items, n, task);
    c.blocks = 1;
    c.block.dim = 4;
    c.block.heads = 2;
    c.block.ffn_hidden = 6;
    c.block.num_buckets = 8;
    c.num_behaviors = 2;
    c.head_hidden = 0;
    c.finalize();
    c
}

fn set_table(m: &mut Model<f64>, name: &str, rows: &[Vec<f64>]) {
    *m.params.by_name_mut(name).unwrap() = Tensor::from_rows(rows).unwrap();
}

#[test]
fn embedding_without_side_info_is_item_rows() {
    let m = Model::<f64>::init(&tiny(6, 5, Task::Recall), 1).unwrap();
    let s = seq(&[3, 1, 5], 5);
    let e = m.embed_sequence(&s).unwrap();
    let table = m.params.by_name("emb.item").unwrap();
    for (k, &i) in [3usize, 1, 5].iter().enumerate() {
        assert_eq!(e.row(k), table.row(i));
    }
}

#[test]
fn side_info_mean_pooling() {
    let mut c = tiny(2, 3, Task::Recall);
    c.side_info = true;
    c.attr_sizes = vec![1];
    c.block.dim = 2;
    c.block.heads = 1;
    c.finalize();
    let mut m = Model::<f64>::init(&c, 1).unwrap();
    set_table(&mut m, "emb.item", &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.25, -2.0]]);
    set_table(&mut m, "emb.attr0", &[vec![0.0, 0.0], vec![0.0, 1.0]]);
    let mut s = seq(&[1, 2, 1], 3);
    s.attrs = vec![vec![1, 0, 1]];
    let e = m.embed_sequence(&s).unwrap();
    assert_eq!(e.row(0), &[0.5, 0.5]);
    // absent attribute: item row alone
    assert_eq!(e.row(1), &[0.25, -2.0]);
    set_table(&mut m, "emb.attr0", &[vec![0.0, 0.0], vec![1.0, 0.0]]);
    assert_eq!(m.embed_sequence(&s).unwrap().row(2), &[1.0, 0.0]);
}

#[test]
fn behavior_tokens_interleave_after_items() {
    let mut c = tiny(6, 4, Task::Recall);
    c.behavior_tokens = true;
    c.finalize();
    assert_eq!(c.block.max_len, 8);
    let m = Model::<f64>::init(&c, 2).unwrap();
    let s = seq(&[4, 3], 4);
    let e = m.embed_sequence(&s).unwrap();
    let items = m.params.by_name("emb.item").unwrap();
    let beh = m.params.by_name("emb.behavior").unwrap();
    assert_eq!(e.rows(), 4);
    assert_eq!(e.row(0), items.row(4));
    assert_eq!(e.row(1), beh.row(1));
    assert_eq!(e.row(2), items.row(3));
    assert_eq!(e.row(3), beh.row(2));
}

#[test]
fn out_of_range_ids_name_their_channel() {
    let m = Model::<f64>::init(&tiny(4, 4, Task::Recall), 1).unwrap();
    match m.forward_recall(&[seq(&[1, 9], 4)]) {
        Err(Error::Vocab { channel, id, .. }) => assert_eq!((channel, id), ("item", 9)),
        other => panic!("{other:?}"),
    }
    assert!(m.forward_recall(&[seq(&[], 4)]).is_err());
}

#[test]
fn singleton_catalog() {
    let m = Model::<f64>::init(&tiny(1, 3, Task::Recall), 1).unwrap();
    let scores = m.forward_recall(&[seq(&[1, 1], 3)]).unwrap();
    assert_eq!(scores[0].len(), 2);
    assert_eq!(crate::metrics::top_k(&scores[0], 1, |j| j != 0), vec![1]);
}

#[test]
fn dot_scores_are_inner_products_with_orthonormal_rows() {
    let mut c = tiny(4, 3, Task::Recall);
    c.block.dim = 4;
    c.finalize();
    let mut m = Model::<f64>::init(&c, 1).unwrap();
    let mut rows = vec![vec![0.0; 4]];
    for i in 0..4 {
        let mut r = vec![0.0; 4];
        r[i] = 1.0;
        rows.push(r);
    }
    set_table(&mut m, "emb.item", &rows);
    let mut g = Graph::new();
    let b = m.bind(&mut g, false);
    let h = g.constant(Tensor::from_rows(&[rows[3].clone()]).unwrap());
    let cand = g.slice_rows(b.vars[m.output_slot()], 1, 4).unwrap();
    let z = m.score_all(&mut g, &b, h, cand).unwrap();
    assert_eq!(g.value(z).data(), &[0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn top_k_matches_explicit_dot_products() {
    let m = Model::<f64>::init(&tiny(5, 4, Task::Recall), 9).unwrap();
    let s = seq(&[2, 5, 1], 4);
    let scores = m.forward_recall(&[s.clone()]).unwrap().remove(0);
    let state = m.user_state(&s).unwrap();
    let table = m.params.by_name("emb.item").unwrap();
    let mut oracle = vec![f64::NEG_INFINITY];
    for v in 1..=5 {
        oracle.push(state.iter().zip(table.row(v)).map(|(a, b)| a * b).sum());
    }
    for v in 1..=5 {
        assert!((scores[v] - oracle[v]).abs() < 1e-15);
    }
    let keep = |j: usize| j != 0;
    assert_eq!(crate::metrics::top_k(&scores, 3, keep), crate::metrics::top_k(&oracle, 3, keep));
}

#[test]
fn interleaving_layout() {
    assert!(interleave_ranking(&[], &[], 100).unwrap().is_empty());
    let t = interleave_ranking(&[7, 9], &[1, 0], 100).unwrap();
    assert_eq!(t, vec![7, 101, 9, 100]);
    assert_eq!(deinterleave_ranking(&t, 100).unwrap(), (vec![7, 9], vec![1, 0]));
    assert!(interleave_ranking(&[1], &[], 100).is_err());
}

#[test]
fn ranking_reads_item_positions() {
    let m = Model::<f64>::init(&tiny(6, 4, Task::Ranking), 4).unwrap();
    let s = seq(&[2, 3, 6], 4);
    let logits = m.forward_ranking(&[s.clone()]).unwrap().remove(0);
    assert_eq!(logits[0], 0.0);
    // changing a label never moves the logit of its own item
    let mut t = s.clone();
    t.labels[3] ^= 1;
    let again = m.forward_ranking(&[t]).unwrap().remove(0);
    assert_eq!(logits[3], again[3]);
    let mut u = s;
    u.labels[2] ^= 1;
    let moved = m.forward_ranking(&[u]).unwrap().remove(0);
    assert_eq!(logits[2], moved[2]);
    assert_ne!(logits[3], moved[3]);
}

#[test]
fn heads_closed_forms() {
    let mut c = tiny(3, 3, Task::Ranking);
    c.head = Head::Mlp;
    c.head_hidden = 3;
    c.block.dim = 2;
    c.block.heads = 1;
    c.finalize();
    let m = Model::<f64>::init(&c, 5).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g, false);
    let hs = [0.3, -1.2];
    let es = [0.7, 0.4];
    let h = g.constant(Tensor::new(vec![1, 2], hs.to_vec()).unwrap());
    let e = g.constant(Tensor::new(vec![1, 2], es.to_vec()).unwrap());
    let z = m.score_pairs(&mut g, &b, h, e).unwrap();
    let w1 = m.params.by_name("head.mlp.w1").unwrap();
    let b1 = m.params.by_name("head.mlp.b1").unwrap();
    let w2 = m.params.by_name("head.mlp.w2").unwrap();
    let b2 = m.params.by_name("head.mlp.b2").unwrap();
    let input = [hs[0], hs[1], es[0], es[1]];
    let mut out = b2.data()[0];
    for j in 0..3 {
        let pre: f64 = (0..4).map(|i| input[i] * w1.at(i, j)).sum::<f64>() + b1.data()[j];
        out += crate::tensor::silu(pre) * w2.at(j, 0);
    }
    assert!((g.value(z).data()[0] - out).abs() < 1e-15);
    // same pair through the all-candidates path
    let all = m.score_all(&mut g, &b, h, e).unwrap();
    assert!((g.value(all).data()[0] - out).abs() < 1e-15);

    let d = Model::<f64>::init(&tiny(3, 3, Task::Ranking), 5).unwrap();
    let mut g = Graph::new();
    let b = d.bind(&mut g, false);
    let zero = g.constant(Tensor::zeros(&[1, 4]));
    let unit = g.constant(Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap());
    let z0 = d.score_pairs(&mut g, &b, zero, unit).unwrap();
    let z1 = d.score_pairs(&mut g, &b, unit, unit).unwrap();
    assert_eq!(g.value(z0).data()[0], 0.0);
    assert_eq!(crate::tensor::sigmoid(g.value(z0).data()[0]), 0.5);
    assert_eq!(g.value(z1).data()[0], 1.0);
}

#[test]
fn loss_closed_forms() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap());
    let l = g.bce_with_logits(z, vec![1.0, 0.0]).unwrap();
    let l = g.scale(l, 0.5);
    assert_eq!(format!("{:.6}", g.value(l).data()[0]), "1.410038");
    let z = g.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
    let l = g.bce_with_logits(z, vec![1.0]).unwrap();
    assert_eq!(format!("{:.6}", g.value(l).data()[0]), "0.693147");
    let s = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let l = g.softmax_cross_entropy(s, vec![2]).unwrap();
    assert_eq!(format!("{:.6}", g.value(l).data()[0]), "0.407606");
    let u = g.constant(Tensor::zeros(&[1, 4]));
    let l = g.softmax_cross_entropy(u, vec![1]).unwrap();
    assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn tied_output_is_one_table() {
    let mut m = Model::<f64>::init(&tiny(4, 4, Task::Recall), 3).unwrap();
    assert_eq!(m.output_slot(), m.item_slot());
    let s = seq(&[1, 2], 4);
    let before = m.forward_recall(&[s.clone()]).unwrap().remove(0);
    let emb_before = m.embed_sequence(&s).unwrap();
    m.params.by_name_mut("emb.item").unwrap().row_mut(2)[0] += 0.5;
    let after = m.forward_recall(&[s.clone()]).unwrap().remove(0);
    assert_ne!(before[2], after[2]);
    assert_ne!(m.embed_sequence(&s).unwrap().row(1), emb_before.row(1));

    let mut c = tiny(4, 4, Task::Recall);
    c.tie_output = false;
    let u = Model::<f64>::init(&c, 3).unwrap();
    assert_ne!(u.output_slot(), u.item_slot());
}

#[test]
fn all_pad_sequences_do_not_change_the_batch_loss() {
    let m = Model::<f64>::init(&tiny(6, 5, Task::Recall), 3).unwrap();
    let batch = vec![seq(&[1, 2, 3], 5), seq(&[4, 5, 6, 1, 2], 5)];
    let mut padded = batch.clone();
    padded.insert(1, seq(&[], 5));
    padded.push(seq(&[], 5));
    let loss = |b: &[UserSequence]| {
        let mut g = Graph::new();
        let bound = m.bind(&mut g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l, n) = m.batch_loss(&mut g, &bound, b, &mut rng).unwrap().unwrap();
        (g.value(l).data()[0], n)
    };
    assert_eq!(loss(&batch), loss(&padded));
    assert_eq!(loss(&batch).1, 2 + 4);
}

#[test]
fn future_events_never_touch_past_outputs() {
    for task in [Task::Recall, Task::Ranking] {
        for behavior_tokens in [false, true] {
            let mut c = tiny(8, 6, task);
            c.behavior_tokens = behavior_tokens;
            c.block.bias_kind = BiasKind::RelPosTime;
            c.finalize();
            let m = Model::<f64>::init(&c, 11).unwrap();
            let s = seq(&[3, 1, 4, 1, 5], 6);
            let mut t = s.clone();
            t.items[5] = 8;
            t.timestamps[5] += 1000;
            t.labels[5] ^= 1;
            t.behaviors[5] = 1;
            let mut g = Graph::new();
            let b = m.bind(&mut g, false);
            let (ha, _) = m.encode(&mut g, &b, &s).unwrap().unwrap();
            let (hb, _) = m.encode(&mut g, &b, &t).unwrap().unwrap();
            let stride = c.tokens_per_event();
            let rows = 4 * stride;
            let (va, vb) = (g.value(ha), g.value(hb));
            assert_eq!(&va.data()[..rows * 4], &vb.data()[..rows * 4]);
        }
    }
}

fn grad_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for task in [Task::Recall, Task::Ranking] {
        for head in Head::ALL {
            let mut c = tiny(5, 4, task);
            c.head = head;
            c.head_hidden = 0;
            c.tie_output = head != Head::Mlp;
            c.behavior_tokens = head == Head::Ffn;
            c.side_info = head == Head::Mlp;
            c.attr_sizes = vec![2];
            c.finalize();
            out.push(c);
        }
    }
    let mut s = tiny(6, 4, Task::Recall);
    s.recall_loss = RecallLoss::Sampled(3);
    out.push(s);
    out
}

#[test]
fn model_loss_gradients_match_finite_differences() {
    for (i, cfg) in grad_configs().iter().enumerate() {
        let mut m = Model::<f64>::init(cfg, 20 + i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        for t in m.params.tensors_mut() {
            let noise = gradcheck::random::<f64>(&mut rng, t.shape(), 0.3);
            for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
        m.zero_pad_rows();
        let mut batch = vec![seq(&[2, 5, 1, 3], 4), seq(&[4, 2], 4)];
        for s in &mut batch {
            s.attrs = vec![s.items.iter().map(|&i| (i % 3).min(2)).collect()];
        }
        let inputs = m.params.tensors().to_vec();
        let f = |g: &mut Graph<f64>, vars: &[crate::tensor::Var]| {
            let b = m.bound_from(vars.to_vec());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            Ok(m.batch_loss(g, &b, &batch, &mut rng)?.expect("targets").0)
        };
        let r = gradcheck::check(f, &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-5, "config {i}: {r:?}");
    }
}

#[test]
fn checkpoint_round_trip_and_guards() {
    for (i, cfg) in grad_configs().iter().enumerate() {
        let m = Model::<f32>::init(cfg, i as u64).unwrap();
        let bytes = m.to_container().to_bytes();
        let back = Model::<f32>::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        let bits = |x: &Model<f32>| -> Vec<u32> {
            x.params.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&m));
    }
    let m = Model::<f32>::init(&tiny(5, 4, Task::Recall), 0).unwrap();
    let mut bytes = m.to_container().to_bytes();
    let k = bytes.len() - 10;
    bytes[k] ^= 1;
    let err = Container::from_bytes(&bytes).unwrap_err().to_string();
    assert!(err.contains("checksum"), "{err}");
    let mut wide = tiny(5, 4, Task::Recall);
    wide.block.dim = 8;
    wide.finalize();
    let mut other = Model::<f32>::init(&wide, 0).unwrap();
    let err = other.load_params(&m.to_container()).unwrap_err().to_string();
    assert!(err.contains("shape"), "{err}");
    assert!(Model::<f64>::from_container(&m.to_container()).is_err());
}

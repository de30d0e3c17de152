use super::*;
use crate::diffmath::{grad_check_many, logit, LevelLayout, ParamStore, Tape, Tensor, Var};
use crate::error::Error;
use crate::geometry::{CubicBezier, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_sample_points: 2,
        n_enc_layers: 1,
        n_dec_layers: 2,
        k: 2,
        n: 3,
        n_levels: 2,
        vocab_size: 3,
        ffn_dim: 16,
        stem_channels: [4, 4, 8],
        pos_temperature: 20.0,
        ..ModelConfig::default()
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(vec![h, w, 3], (0..h * w * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn build(cfg: ModelConfig, seed: u64) -> (SpotterModel, ParamStore<f64>) {
    SpotterModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Hand-built two-level pyramid over a leaf memory tensor.
fn synthetic_pyramid(tape: &mut Tape<f64>, memory: Var, sizes: Vec<(usize, usize)>) -> Pyramid<f64> {
    let mut coords = Vec::new();
    for &(h, w) in &sizes {
        for i in 0..h {
            for j in 0..w {
                coords.push((j as f64 + 0.5) / w as f64);
                coords.push((i as f64 + 0.5) / h as f64);
            }
        }
    }
    let n = coords.len() / 2;
    let _ = tape;
    Pyramid { levels: vec![], flat: memory, layout: LevelLayout::new(sizes), coords, valid: vec![true; n], value_mask: None }
}

/// Fixed random projection of several outputs to one scalar.
fn probe(tape: &mut Tape<f64>, vars: &[Var], seed: u64) -> crate::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for &v in vars {
        let n = tape.value(v).len();
        let w = (0..n).map(|_| rng.gen_range(-1.0..1.0) / n as f64).collect();
        parts.push(tape.weighted_sum(v, w)?);
    }
    tape.add_n(&parts)
}

#[test]
fn stem_level_shapes() {
    let cfg = ModelConfig { d_model: 16, n_heads: 4, ..tiny() };
    let cfg = ModelConfig { n_levels: 3, ..cfg };
    let (model, store) = build(cfg, 0);
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 64, 64);
    let pyr = model.stem_forward(&mut tape, &img, None).unwrap();
    let shapes: Vec<Vec<usize>> = pyr.levels.iter().map(|&v| tape.shape(v).to_vec()).collect();
    assert_eq!(shapes, vec![vec![8, 8, 16], vec![4, 4, 16], vec![2, 2, 16]]);
    assert_eq!(tape.shape(pyr.flat), &[84, 16]);
    assert!(pyr.value_mask.is_none());
}

#[test]
fn stem_pads_and_masks_uneven_sizes() {
    let (model, store) = build(tiny(), 0);
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 20, 40);
    let pyr = model.stem_forward(&mut tape, &img, None).unwrap();
    // padded to 32 × 48
    assert_eq!(pyr.layout.sizes, vec![(4, 6), (2, 3)]);
    assert!(pyr.value_mask.is_some());
    // level 0 row centers sit at 4, 12, 20, 28 px; only the first two are inside 20 rows
    let valid_rows: Vec<bool> = (0..4).map(|i| pyr.valid[i * 6]).collect();
    assert_eq!(valid_rows, vec![true, true, false, false]);
}

#[test]
fn stem_is_finite_and_deterministic() {
    let (model, store) = build(tiny(), 3);
    let run = |img: &Tensor<f64>| {
        let mut tape = Tape::new();
        store.bind(&mut tape).unwrap();
        let pyr = model.stem_forward(&mut tape, img, None).unwrap();
        tape.value(pyr.flat).to_vec()
    };
    let zero = Tensor::zeros(&[32, 32, 3]);
    assert!(run(&zero).iter().all(|v| v.is_finite()));
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(2), 32, 32);
    assert_eq!(run(&img), run(&img));
    let (model2, store2) = build(tiny(), 3);
    let mut tape = Tape::new();
    store2.bind(&mut tape).unwrap();
    let pyr = model2.stem_forward(&mut tape, &img, None).unwrap();
    assert_eq!(tape.value(pyr.flat), run(&img).as_slice());
}

#[test]
fn encoder_preserves_shape_and_normalizes_attention() {
    let (model, store) = build(tiny(), 4);
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(5), 32, 32);
    let pyr = model.stem_forward(&mut tape, &img, None).unwrap();
    let mem = model.encoder_forward(&mut tape, &pyr).unwrap();
    assert_eq!(tape.shape(mem), tape.shape(pyr.flat));

    // perturb the weight projection so the softmax is not trivially uniform
    let attn = layers::DeformableAttention::new(&mut ParamStore::<f64>::new(), "x", 8, 2, 2, 2, &mut ChaCha8Rng::seed_from_u64(0));
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = layers::DeformableAttention::new(&mut store, "a", 8, 2, 2, 2, &mut rng);
    store.get_mut(a.weights.w).data.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    let _ = attn;
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let q = tape.constant(Tensor::new(vec![5, 8], (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let refs: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
    let (_, w) = a.sampling(&mut tape, q, &refs, &LevelLayout::new(vec![(4, 4), (2, 2)])).unwrap();
    for row in tape.value(w).chunks(4) {
        assert!(row.iter().all(|&x| x >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn encoder_gradient_check() {
    let cfg = ModelConfig { n_enc_layers: 1, ..tiny() };
    let (model, store) = build(cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sizes = vec![(3, 3), (2, 2)];
    let mut inputs: Vec<Tensor<f64>> = store.tensors().to_vec();
    // give zero-initialized projections some signal
    for t in inputs.iter_mut() {
        if t.data.iter().all(|&v| v == 0.0) {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    inputs.push(Tensor::new(vec![13, 8], (0..104).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let mem_slot = inputs.len() - 1;
    let report = grad_check_many(
        |t, v| {
            let pyr = synthetic_pyramid(t, v[mem_slot], sizes.clone());
            let out = model.encoder_forward(t, &pyr)?;
            probe(t, &[out], 1)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn bezier_offset_identity() {
    let eps: f64 = 1e-3;
    let c = bezier_from_offsets(&[0.0; 8], Point2::new(0.5, 0.5), eps);
    assert!(c.points.iter().all(|p| *p == Point2::new(0.5, 0.5)));
    let mut d = [0.0; 8];
    d[0] = logit(0.7, eps);
    let c = bezier_from_offsets(&d, Point2::new(0.5, 0.5), eps);
    assert!((c.points[0].x - 0.7).abs() < 1e-9);
    let c = bezier_from_offsets(&[0.0; 8], Point2::new(0.0, 0.3), eps);
    assert!(c.points.iter().all(|p| p.is_finite()));
    assert!((c.points[0].x - eps).abs() < 1e-12);
    for x in [0.05f64, 0.31, 0.5, 0.77, 0.95] {
        let c = bezier_from_offsets(&[0.0; 8], Point2::new(x, 1.0 - x), eps);
        assert!((c.points[2].x - x).abs() < 1e-9 && (c.points[2].y - (1.0 - x)).abs() < 1e-9);
    }
}

#[test]
fn zeroed_proposal_offsets_return_anchors() {
    let (model, mut store) = build(tiny(), 9);
    let last = store.find("proposal.offsets.2.b").unwrap();
    store.get_mut(last).data.iter_mut().for_each(|v| *v = 0.0);
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 32, 32);
    let pyr = model.stem_forward(&mut tape, &img, None).unwrap();
    let mem = model.encoder_forward(&mut tape, &pyr).unwrap();
    let (enc, props) = model.propose_bezier(&mut tape, mem, &pyr).unwrap();
    let ctrl = tape.value(enc.control);
    for i in 0..pyr.valid.len() {
        for j in 0..4 {
            assert!((ctrl[8 * i + 2 * j] - pyr.coords[2 * i]).abs() < 1e-9);
            assert!((ctrl[8 * i + 2 * j + 1] - pyr.coords[2 * i + 1]).abs() < 1e-9);
        }
    }
    assert_eq!(props.curves.len(), 2);
    assert!(props.scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn top_k_ties_and_limits() {
    let scores = [0.5, 0.9, 0.5, 0.9, 0.1];
    assert_eq!(select_top_k(&scores, &[true; 5], 3).unwrap(), vec![1, 3, 0]);
    assert_eq!(select_top_k(&scores, &[true, false, true, true, true], 2).unwrap(), vec![3, 0]);
    assert!(matches!(select_top_k(&scores, &[true; 5], 6), Err(Error::Config(_))));
}

#[test]
fn query_construction() {
    let (model, store) = build(tiny(), 10);
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let curve = CubicBezier::new(Point2::new(0.1, 0.4), Point2::new(0.3, 0.3), Point2::new(0.6, 0.5), Point2::new(0.9, 0.4));
    let props = ProposalSet { pixels: vec![0, 1], scores: vec![0.5, 0.5], curves: vec![curve, curve] };
    let coords: Vec<f64> = model.sample_proposals(&props);
    let q = model.init_queries(&mut tape, coords).unwrap();
    let (p, c, comp) = (tape.value(q.positional), tape.value(q.content), tape.value(q.composite));
    let w = 3 * 8;
    assert_eq!(p[..w], p[w..]);
    for i in 0..p.len() {
        assert_eq!(comp[i], c[i] + p[i]);
    }
    // content rows are the learned table, whatever the proposals
    let table = &store.get(store.find("query.content").unwrap()).data;
    assert_eq!(&c[..w], table.as_slice());
    assert_eq!(&c[w..], table.as_slice());
}

#[test]
fn zero_coordinate_head_keeps_references() {
    let (model, store) = build(tiny(), 11);
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 32, 32);
    let out = model.forward(&mut tape, &img, None).unwrap();
    let first = out.layers[0];
    assert_eq!(tape.shape(first.char_logits), &[2, 3, 4]);
    assert_eq!(tape.shape(first.instance_logits), &[2, 3]);
    assert_eq!(tape.shape(first.top), &[2, 3, 2]);
    let center = tape.value(first.center);
    for (a, b) in center.iter().zip(&out.queries.coords) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn references_stay_in_unit_square() {
    let (model, mut store) = build(tiny(), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for name in ["dec.0.coord.2.w", "dec.0.coord.2.b", "dec.1.coord.2.w", "dec.1.coord.2.b"] {
        let id = store.find(name).unwrap();
        store.get_mut(id).data.iter_mut().for_each(|v| *v = rng.gen_range(-5.0..5.0));
    }
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let img = random_image(&mut rng, 32, 32);
    let out = model.forward(&mut tape, &img, None).unwrap();
    for layer in &out.layers {
        assert!(tape.value(layer.center).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn decoder_layer_gradient_check() {
    let cfg = ModelConfig { n_dec_layers: 1, ..tiny() };
    let (model, store) = build(cfg, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut inputs: Vec<Tensor<f64>> = store.tensors().to_vec();
    for t in inputs.iter_mut() {
        if t.data.iter().all(|&v| v == 0.0) {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    let sizes = vec![(3, 3), (2, 2)];
    inputs.push(Tensor::new(vec![13, 8], (0..104).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let mem_slot = inputs.len() - 1;
    let coords: Vec<f64> = (0..12).map(|_| rng.gen_range(0.1..0.9)).collect();
    let report = grad_check_many(
        |t, v| {
            let pyr = synthetic_pyramid(t, v[mem_slot], sizes.clone());
            let state = model.init_queries(t, coords.clone())?;
            let (pred, next) = model.decoder_layer(t, 0, &state, v[mem_slot], &pyr)?;
            probe(t, &[pred.instance_logits, pred.char_logits, pred.center, pred.top, pred.bot, next.content], 2)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn permuting_proposals_permutes_outputs() {
    let (model, mut store) = build(ModelConfig { k: 4, ..tiny() }, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for t in store.tensors_mut() {
        if t.data.iter().all(|&v| v == 0.0) {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    let img = random_image(&mut rng, 32, 32);
    let coords: Vec<f64> = (0..4 * 3 * 2).map(|_| rng.gen_range(0.1..0.9)).collect();
    let perm = [2, 0, 3, 1];
    let group = 3 * 2;
    let permuted: Vec<f64> = perm.iter().flat_map(|&q| coords[q * group..(q + 1) * group].to_vec()).collect();
    let run = |c: Vec<f64>| {
        let mut tape = Tape::new();
        store.bind(&mut tape).unwrap();
        let pyr = model.stem_forward(&mut tape, &img, None).unwrap();
        let mem = model.encoder_forward(&mut tape, &pyr).unwrap();
        let (_, layers) = model.decode(&mut tape, c, mem, &pyr).unwrap();
        layers.iter().map(|l| (tape.value(l.char_logits).to_vec(), tape.value(l.center).to_vec())).collect::<Vec<_>>()
    };
    let (a, b) = (run(coords), run(permuted));
    for ((ca, pa), (cb, pb)) in a.iter().zip(&b) {
        let (wc, wp) = (ca.len() / 4, pa.len() / 4);
        for (j, &q) in perm.iter().enumerate() {
            for i in 0..wc {
                assert!((ca[q * wc + i] - cb[j * wc + i]).abs() < 1e-10);
            }
            for i in 0..wp {
                assert!((pa[q * wp + i] - pb[j * wp + i]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn forward_is_deterministic_and_finite() {
    let (model, store) = build(tiny(), 18);
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(19), 32, 32);
    let run = || {
        let mut tape = Tape::new();
        store.bind(&mut tape).unwrap();
        let out = model.forward(&mut tape, &img, None).unwrap();
        let l = out.layers[1];
        [l.instance_logits, l.char_logits, l.center, l.top, l.bot].iter().flat_map(|&v| tape.value(v).to_vec()).collect::<Vec<f64>>()
    };
    let a = run();
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, run());
}

#[test]
fn toy_forward_backward_budget() {
    let (model, store) = SpotterModel::new::<f32, _>(ModelConfig::toy(), &mut ChaCha8Rng::seed_from_u64(20)).unwrap();
    let img = Tensor::new(vec![128, 128, 3], (0..128 * 128 * 3).map(|i| ((i % 7) as f32) * 0.1 - 0.3).collect()).unwrap();
    let start = std::time::Instant::now();
    let mut tape = Tape::new();
    store.bind(&mut tape).unwrap();
    let out = model.forward(&mut tape, &img, None).unwrap();
    let mut parts = Vec::new();
    for l in &out.layers {
        for v in [l.instance_logits, l.char_logits, l.center, l.top, l.bot] {
            parts.push(tape.sum(v));
        }
    }
    let s = tape.add_n(&parts).unwrap();
    tape.backward(s).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 2.0, "{elapsed:?}");
}

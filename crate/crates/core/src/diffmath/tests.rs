use super::*;
use crate::error::Error;
use approx_eq::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod approx_eq {
    pub fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }
}

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = numel(shape);
    t64(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Direct bilinear interpolation with zero padding, written independently
/// of the tap table used by the tape ops.
fn bilinear_oracle(map: &[f64], height: usize, width: usize, channels: usize, x: f64, y: f64) -> Vec<f64> {
    let px = x * width as f64 - 0.5;
    let py = y * height as f64 - 0.5;
    let read = |iy: i64, ix: i64, ch: usize| -> f64 {
        if iy < 0 || ix < 0 || iy >= height as i64 || ix >= width as i64 {
            0.0
        } else {
            map[(iy as usize * width + ix as usize) * channels + ch]
        }
    };
    let (x0, y0) = (px.floor() as i64, py.floor() as i64);
    let (ax, ay) = (px - x0 as f64, py - y0 as f64);
    (0..channels)
        .map(|ch| {
            let top = read(y0, x0, ch) * (1.0 - ax) + read(y0, x0 + 1, ch) * ax;
            let bottom = read(y0 + 1, x0, ch) * (1.0 - ax) + read(y0 + 1, x0 + 1, ch) * ax;
            top * (1.0 - ay) + bottom * ay
        })
        .collect()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(t64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let a_data = [1., 2., 3., 4., 5., 6.];
    let a = tape.constant(t64(&[3, 2], &a_data));
    let c = tape.matmul(eye, a).unwrap();
    assert_eq!(tape.value(c), &a_data);
    assert_eq!(tape.shape(c), &[3, 2]);
}

#[test]
fn sigmoid_and_logit_fixed_points() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(t64(&[1], &[0.0]));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s), &[0.5]);
    let h = tape.constant(t64(&[1], &[0.5]));
    let l = tape.logit(h, 1e-3);
    assert_eq!(tape.value(l), &[0.0]);
    // clamp keeps the boundary finite
    let edge = tape.constant(t64(&[2], &[0.0, 1.0]));
    let l = tape.logit(edge, 1e-3);
    assert!(tape.value(l).iter().all(|v| v.is_finite()));
}

#[test]
fn logit_inverts_sigmoid() {
    let mut tape = Tape::<f64>::new();
    let xs: Vec<f64> = (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect();
    let x = tape.constant(t64(&[xs.len()], &xs));
    let s = tape.sigmoid(x);
    let back = tape.logit(s, 1e-3);
    for (a, b) in xs.iter().zip(tape.value(back)) {
        assert!(close(*a, *b, 1e-9), "{a} vs {b}");
    }
}

#[test]
fn layer_norm_standardizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[5, 16], &mut rng));
    let g = tape.constant(Tensor::filled(&[16], 1.0));
    let b = tape.constant(Tensor::zeros(&[16]));
    let y = tape.layer_norm(x, g, b, 0.0).unwrap();
    for row in tape.value(y).chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(close(mean, 0.0, 1e-9));
        assert!(close(var, 1.0, 1e-9));
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[3], &[0.5, -1.0, 2.0]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), vec![1.0; 3]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), vec![2.0, 4.0]);
}

#[test]
fn backward_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::Domain(_))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::Tape(_))));
    // constants never receive gradients
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(t64(&[2], &[1.0, 2.0]));
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
}

#[test]
fn shape_errors_name_the_op() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2, 3]"));
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    let c = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.add(a, c), Err(Error::Shape { op: "add", .. })));
}

#[test]
fn bilinear_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w, c) = (4, 5, 3);
    let map = random(&[h, w, c], &mut rng);
    let mut tape = Tape::<f64>::new();
    let m = tape.constant(map.clone());
    // cell (row 2, col 1)
    let loc = tape.constant(t64(&[2], &[1.5 / w as f64, 2.5 / h as f64]));
    let s = tape.bilinear_sample(m, loc).unwrap();
    assert_eq!(tape.value(s), &map.data[(2 * w + 1) * c..(2 * w + 2) * c]);
    // corner shared by cells (1,1), (1,2), (2,1), (2,2)
    let loc = tape.constant(t64(&[2], &[2.0 / w as f64, 2.0 / h as f64]));
    let s = tape.bilinear_sample(m, loc).unwrap();
    for ch in 0..c {
        let mean = [(1, 1), (1, 2), (2, 1), (2, 2)]
            .iter()
            .map(|&(r, q)| map.data[(r * w + q) * c + ch])
            .sum::<f64>()
            / 4.0;
        assert!(close(tape.value(s)[ch], mean, 1e-12));
    }
    for _ in 0..50 {
        let (x, y) = (rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2));
        let loc = tape.constant(t64(&[2], &[x, y]));
        let s = tape.bilinear_sample(m, loc).unwrap();
        let want = bilinear_oracle(&map.data, h, w, c, x, y);
        for (a, b) in tape.value(s).iter().zip(want) {
            assert!(close(*a, b, 1e-12));
        }
    }
}

#[test]
fn deformable_attention_reduces_to_weighted_bilinear() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let layout = LevelLayout::new(vec![(4, 4), (2, 3)]);
    let (heads, dh, q, pts) = (2, 3, 2, 2);
    let value = random(&[layout.total(), heads, dh], &mut rng);
    let locs: Vec<f64> = (0..q * heads * 2 * pts * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ws: Vec<f64> = (0..q * heads * 2 * pts).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(value.clone());
    let l = tape.constant(t64(&[q, heads, 2, pts, 2], &locs));
    let w = tape.constant(t64(&[q, heads, 2, pts], &ws));
    let out = tape.deformable_attention(v, &layout, l, w).unwrap();
    for qi in 0..q {
        for h in 0..heads {
            let mut want = vec![0.0; dh];
            for lvl in 0..2 {
                let (lh, lw) = layout.sizes[lvl];
                // per-level, per-head map [lh, lw, dh]
                let mut map = Vec::new();
                for cell in 0..lh * lw {
                    let base = ((layout.starts[lvl] + cell) * heads + h) * dh;
                    map.extend_from_slice(&value.data[base..base + dh]);
                }
                for p in 0..pts {
                    let s = ((qi * heads + h) * 2 + lvl) * pts + p;
                    let sampled = bilinear_oracle(&map, lh, lw, dh, locs[2 * s], locs[2 * s + 1]);
                    for k in 0..dh {
                        want[k] += ws[s] * sampled[k];
                    }
                }
            }
            let got = &tape.value(out)[(qi * heads + h) * dh..(qi * heads + h + 1) * dh];
            for (a, b) in got.iter().zip(&want) {
                assert!(close(*a, *b, 1e-12));
            }
        }
    }
}

#[test]
fn grad_check_reference_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random(&[4, 3], &mut rng);
    let x = random(&[2, 4], &mut rng);
    let err = grad_check(
        |tape, x| {
            let w = tape.constant(w.clone());
            let y = tape.matmul(x, w)?;
            tape.weighted_sum(y, vec![0.3, -0.2, 0.5, 1.0, 0.1, -0.7])
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-10, "linear map error {err}");

    let x = random(&[6], &mut rng);
    let err = grad_check(
        |tape, x| {
            let a = tape.sigmoid(x);
            let b = tape.scale(a, 3.0);
            let c = tape.sigmoid(b);
            let d = tape.mul(c, a)?;
            Ok(tape.sum(d))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "sigmoid chain error {err}");
}

#[test]
fn adamw_examples() {
    let cfg = |lr, wd| AdamWConfig {
        lr,
        weight_decay: wd,
        ..AdamWConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    store.add("p", t64(&[2], &[1.0, -2.0]));
    let mut opt = AdamW::new(cfg(0.1, 0.0), &store).unwrap();
    opt.step(&mut store, &[vec![0.0, 0.0]], None).unwrap();
    assert_eq!(store.tensors()[0].data, vec![1.0, -2.0]);

    let mut store = ParamStore::<f64>::new();
    store.add("p", t64(&[1], &[1.0]));
    let mut opt = AdamW::new(cfg(0.1, 0.0), &store).unwrap();
    opt.step(&mut store, &[vec![1.0]], None).unwrap();
    // bias-corrected moments are exactly g and g², so the step is lr·g/(|g| + eps)
    assert!(close(store.tensors()[0].data[0], 0.9, 1e-8));
    assert_eq!(opt.step, 1);

    let mut store = ParamStore::<f64>::new();
    store.add("p", t64(&[1], &[2.0]));
    let mut opt = AdamW::new(cfg(0.1, 0.5), &store).unwrap();
    opt.step(&mut store, &[vec![0.0]], None).unwrap();
    assert!(close(store.tensors()[0].data[0], 2.0 * (1.0 - 0.1 * 0.5), 1e-15));

    assert!(matches!(AdamW::new(cfg(0.0, 0.0), &store), Err(Error::Config(_))));
    assert!(matches!(AdamW::new(cfg(-1.0, 0.0), &store), Err(Error::Config(_))));
}

#[test]
fn clip_scales_to_norm() {
    let mut g = vec![vec![3.0f64], vec![4.0]];
    let n = clip_grad_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!(close(g[0][0], 0.6, 1e-15) && close(g[1][0], 0.8, 1e-15));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f32>::new();
    store.uniform("a.weight", &[3, 4], 1.0, &mut rng);
    store.uniform("a.bias", &[4], 1.0, &mut rng);
    save(&path, &store, 17, serde_json::json!({"note": "x"})).unwrap();
    let manifest = read_manifest(&path).unwrap();
    assert_eq!(manifest.step, 17);
    assert_eq!(manifest.precision, "f32");
    assert_eq!(manifest.params[1].name, "a.bias");

    let mut fresh = ParamStore::<f32>::new();
    fresh.zeros("a.weight", &[3, 4]);
    fresh.zeros("a.bias", &[4]);
    load_into(&path, &mut fresh).unwrap();
    assert_eq!(fresh.tensors(), store.tensors());

    let mut wide = ParamStore::<f64>::new();
    wide.zeros("a.weight", &[3, 4]);
    wide.zeros("a.bias", &[4]);
    load_into(&path, &mut wide).unwrap();
    assert_eq!(wide.tensors()[0].data[0], store.tensors()[0].data[0] as f64);

    let mut wrong = ParamStore::<f32>::new();
    wrong.zeros("a.weight", &[4, 3]);
    wrong.zeros("a.bias", &[4]);
    assert!(matches!(load_into(&path, &mut wrong), Err(Error::Checkpoint(_))));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in proptest::collection::vec(-30.0..30.0f64, 12)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[3, 4], &data));
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).chunks(4) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

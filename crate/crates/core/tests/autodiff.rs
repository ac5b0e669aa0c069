use std::sync::Arc;

use monet::autodiff::{GradMap, Graph, GraphError, ParamId, ParamStore, Tensor, Var};
use monet::optim::{AdamW, AdamWConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Graph, &[Var]) -> Result<Var, GraphError>;

fn random_store(shapes: &[(usize, usize)], lo: f64, hi: f64, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let data = (0..r * c).map(|_| rng.random_range(lo..hi)).collect();
        ps.push(format!("p{i}"), Tensor::matrix(r, c, data), true);
    }
    ps
}

/// `Σ w ⊙ op(params)` for fixed random weights, so every output coordinate matters.
fn weighted(ps: &ParamStore, build: Build, trainable: bool) -> (f64, Option<GradMap>) {
    let mut g = Graph::new();
    let inputs: Vec<Var> = ps
        .ids()
        .map(|id| if trainable { g.param(id, ps.shared(id)) } else { g.constant(ps.get(id).clone()) })
        .collect();
    let y = build(&mut g, &inputs).unwrap();
    let shape = g.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n: usize = shape.iter().product();
    let w = g.constant(Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    let loss = g.dot(y, w).unwrap();
    let value = g.value(loss).item();
    (value, trainable.then(|| g.backward(loss).unwrap().into_params()))
}

fn central_difference(ps: &ParamStore, build: Build) -> Vec<(ParamId, usize, f64)> {
    let h = 1e-6;
    let mut out = Vec::new();
    for id in ps.ids() {
        for i in 0..ps.get(id).len() {
            let mut up = ps.clone();
            up.get_mut(id).data_mut()[i] += h;
            let mut down = ps.clone();
            down.get_mut(id).data_mut()[i] -= h;
            out.push((id, i, (weighted(&up, build, false).0 - weighted(&down, build, false).0) / (2.0 * h)));
        }
    }
    out
}

fn assert_gradients(name: &str, shapes: &[(usize, usize)], lo: f64, hi: f64, build: Build) {
    let ps = random_store(shapes, lo, hi, name.len() as u64);
    let analytic = weighted(&ps, build, true).1.unwrap();
    for (id, i, numeric) in central_difference(&ps, build) {
        let a = analytic.coord(id, i);
        let err = (a - numeric).abs();
        assert!(
            err <= 1e-7 || err / a.abs().max(numeric.abs()) < 1e-5,
            "{name}: param {} coord {i}: analytic {a}, numeric {numeric}",
            id.0
        );
    }
}

#[test]
fn binary_op_gradients() {
    let cases: [(&str, [(usize, usize); 2], Build); 8] = [
        ("matmul", [(3, 4), (4, 2)], |g, v| g.matmul(v[0], v[1])),
        ("matmul_t", [(3, 4), (5, 4)], |g, v| g.matmul_t(v[0], v[1])),
        ("add", [(2, 3), (2, 3)], |g, v| g.add(v[0], v[1])),
        ("sub", [(2, 3), (2, 3)], |g, v| g.sub(v[0], v[1])),
        ("mul", [(2, 3), (2, 3)], |g, v| g.mul(v[0], v[1])),
        ("cosine_rows", [(3, 5), (3, 5)], |g, v| g.cosine_rows(v[0], v[1])),
        ("sq_dist_rows", [(3, 5), (3, 5)], |g, v| g.sq_dist_rows(v[0], v[1])),
        ("concat_cols", [(2, 3), (2, 1)], |g, v| g.concat_cols(&[v[0], v[1]])),
    ];
    for (name, shapes, build) in cases {
        assert_gradients(name, &shapes, -1.0, 1.0, build);
    }
    assert_gradients("concat_rows", &[(2, 3), (1, 3)], -1.0, 1.0, |g, v| g.concat_rows(&[v[0], v[1]]));
    assert_gradients("add_row", &[(3, 4), (1, 4)], -1.0, 1.0, |g, v| {
        let r = g.reshape(v[1], &[4])?;
        g.add_row(v[0], r)
    });
    assert_gradients("layer_norm", &[(3, 6), (1, 6), (1, 6)], -1.0, 1.0, |g, v| {
        let gamma = g.reshape(v[1], &[6])?;
        let beta = g.reshape(v[2], &[6])?;
        g.layer_norm(v[0], gamma, beta)
    });
}

#[test]
fn unary_op_gradients() {
    let cases: [(&str, Build); 14] = [
        ("transpose", |g, v| g.transpose(v[0])),
        ("scale", |g, v| Ok(g.scale(v[0], -2.5))),
        ("exp", |g, v| Ok(g.exp(v[0]))),
        ("tanh", |g, v| Ok(g.tanh(v[0]))),
        ("gelu", |g, v| Ok(g.gelu(v[0]))),
        ("softmax", |g, v| g.softmax(v[0])),
        ("log_softmax", |g, v| g.log_softmax(v[0])),
        ("logsumexp_rows", |g, v| g.logsumexp_rows(v[0], None)),
        ("select_rows", |g, v| g.select_rows(v[0], &[2, 0, 2])),
        ("pick_cols", |g, v| g.pick_cols(v[0], &[1, 0, 3])),
        ("slice_rows", |g, v| g.slice_rows(v[0], 1, 2)),
        ("slice_cols", |g, v| g.slice_cols(v[0], 1, 2)),
        ("mean", |g, v| Ok(g.mean(v[0]))),
        ("reshape", |g, v| g.reshape(v[0], &[4, 3])),
    ];
    for (name, build) in cases {
        assert_gradients(name, &[(3, 4)], -1.0, 1.0, build);
    }
    assert_gradients("log", &[(3, 4)], 0.5, 2.0, |g, v| Ok(g.log(v[0])));
    assert_gradients("masked_softmax", &[(2, 3)], -1.0, 1.0, |g, v| {
        g.masked_softmax(v[0], Arc::new(vec![true, false, true, true, true, false]))
    });
    assert_gradients("logsumexp_excluded", &[(2, 3)], -1.0, 1.0, |g, v| {
        g.logsumexp_rows(v[0], Some(Arc::new(vec![false, true, false])))
    });
}

#[test]
fn piecewise_ops_away_from_kinks() {
    // Entries kept clear of the clip bounds and of ties between operands.
    assert_gradients("clip", &[(3, 4)], -0.45, 0.45, |g, v| Ok(g.clip(v[0], -0.5, 0.5)));
    assert_gradients("minimum", &[(2, 3), (2, 3)], -1.0, 1.0, |g, v| {
        let shifted = g.scale(v[1], 0.3);
        g.minimum(v[0], shifted)
    });
}

#[test]
fn stop_gradient_blocks_parameters() {
    let ps = random_store(&[(2, 2), (2, 2)], -1.0, 1.0, 3);
    let mut g = Graph::new();
    let a = g.param(ParamId(0), ps.shared(ParamId(0)));
    let b = g.param(ParamId(1), ps.shared(ParamId(1)));
    let frozen = g.stop_gradient(b);
    assert!(g.is_barrier(frozen));
    let p = g.mul(a, frozen).unwrap();
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert!(grads.params().get(ParamId(1)).is_none());
    assert_eq!(grads.params().get(ParamId(0)).unwrap().data(), ps.get(ParamId(1)).data());
}

#[test]
fn shared_node_gradients_accumulate() {
    let mut ps = ParamStore::new();
    let id = ps.push("x", Tensor::scalar(3.0), false);
    let mut g = Graph::new();
    let x = g.param(id, ps.shared(id));
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.params().get(id).unwrap().item(), 7.0);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(GraphError::NonScalarLoss { .. })));
}

#[test]
fn backward_is_deterministic() {
    let ps = random_store(&[(4, 5), (5, 3)], -1.0, 1.0, 8);
    let build: Build = |g, v| {
        let m = g.matmul(v[0], v[1])?;
        let s = g.softmax(m)?;
        g.log_softmax(s)
    };
    let a = weighted(&ps, build, true).1.unwrap();
    let b = weighted(&ps, build, true).1.unwrap();
    assert!(a.bit_eq(&b));
}

/// Scalar AdamW written out by hand for two steps.
#[test]
fn adamw_matches_hand_computation() {
    let (lr, b1, b2, eps, wd) = (0.01, 0.9, 0.999, 1e-8, 0.1);
    let mut ps = ParamStore::new();
    let id = ps.push("w", Tensor::vector(vec![0.5]), true);
    let mut opt = AdamW::new(AdamWConfig {
        lr,
        beta1: b1,
        beta2: b2,
        eps,
        weight_decay: wd,
        max_grad_norm: None,
    });
    let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for (t, grad) in [(1, 0.2f64), (2, -0.7)] {
        let mut gm = GradMap::new();
        gm.insert(id, Tensor::vector(vec![grad]));
        opt.step(&mut ps, &gm);
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        w -= lr * wd * w;
        w -= lr * mhat / (vhat.sqrt() + eps);
        assert!((ps.get(id).data()[0] - w).abs() < 1e-15, "step {t}");
    }
}

#[test]
fn adamw_clips_global_norm() {
    let mut ps = ParamStore::new();
    let id = ps.push("w", Tensor::vector(vec![0.0, 0.0]), false);
    let mut gm = GradMap::new();
    gm.insert(id, Tensor::vector(vec![3.0, 4.0]));
    let mut opt = AdamW::new(AdamWConfig {
        max_grad_norm: Some(1.0),
        ..AdamWConfig::default()
    });
    assert_eq!(opt.step(&mut ps, &gm), 5.0);
    // Adam normalizes magnitude, so the first step is lr·sign either way.
    for x in ps.get(id).data() {
        assert!((x + 1e-3).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-20.0f64..20.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, data));
        let s = g.softmax(x).unwrap();
        let t = g.value(s);
        for r in 0..3 {
            let row = t.row(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_is_shift_invariant(data in prop::collection::vec(-5.0f64..5.0, 6), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 6, data.clone()));
        let y = g.constant(Tensor::matrix(1, 6, data.iter().map(|v| v + shift).collect()));
        let (a, b) = (g.log_softmax(x).unwrap(), g.log_softmax(y).unwrap());
        for (p, q) in g.value(a).data().iter().zip(g.value(b).data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(data in prop::collection::vec(-3.0f64..3.0, 8)) {
        prop_assume!(data.iter().any(|v| (v - data[0]).abs() > 1e-3));
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 8, data));
        let gamma = g.constant(Tensor::full(&[8], 1.0));
        let beta = g.constant(Tensor::zeros(&[8]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        let row = g.value(y).row(0).to_vec();
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn cosine_is_bounded_and_scale_free(a in prop::collection::vec(-2.0f64..2.0, 5), b in prop::collection::vec(-2.0f64..2.0, 5), c in 0.1f64..10.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 5, a.clone()));
        let y = g.constant(Tensor::matrix(1, 5, b));
        let xs = g.constant(Tensor::matrix(1, 5, a.iter().map(|v| v * c).collect()));
        let (p, q) = (g.cosine_rows(x, y).unwrap(), g.cosine_rows(xs, y).unwrap());
        let (p, q) = (g.value(p).data()[0], g.value(q).data()[0]);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&p));
        prop_assert!((p - q).abs() < 1e-6);
    }

    #[test]
    fn matmul_gradient_is_outer_product(a in prop::collection::vec(-1.0f64..1.0, 6), b in prop::collection::vec(-1.0f64..1.0, 6)) {
        // d/dA sum(A·B) = 1·Bᵀ, so each row of the gradient is B's row sums.
        let mut ps = ParamStore::new();
        let ia = ps.push("a", Tensor::matrix(2, 3, a), false);
        let mut g = Graph::new();
        let va = g.param(ia, ps.shared(ia));
        let vb = g.constant(Tensor::matrix(3, 2, b.clone()));
        let m = g.matmul(va, vb).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        let ga = grads.params().get(ia).unwrap();
        for r in 0..2 {
            for k in 0..3 {
                prop_assert!((ga.row(r)[k] - (b[2 * k] + b[2 * k + 1])).abs() < 1e-12);
            }
        }
    }
}

use dualcodec_autodiff::{EmaState, Error, Graph, Init, NdArray, ParamBuilder};
use proptest::prelude::*;

fn arr(shape: &[usize], v: &[f64]) -> NdArray<f64> {
    NdArray::from_vec(shape, v.to_vec()).unwrap()
}

#[test]
fn matmul_and_conv_shapes() {
    let mut g = Graph::<f32>::inference();
    let a = g.constant(NdArray::zeros(&[2, 3]));
    let b = g.constant(NdArray::zeros(&[3, 4]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 4]);

    let x = g.constant(NdArray::zeros(&[1, 64, 16, 16]));
    let w = g.constant(NdArray::zeros(&[128, 64, 3, 3]));
    let y = g.conv2d(x, w, None, (2, 2), (1, 1)).unwrap();
    assert_eq!(g.shape(y), &[1, 128, 8, 8]);
}

#[test]
fn shape_error_names_both_shapes() {
    let mut g = Graph::<f32>::inference();
    let a = g.constant(NdArray::zeros(&[2, 3]));
    let b = g.constant(NdArray::zeros(&[4, 5]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
}

#[test]
fn tanh_at_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(NdArray::scalar(0.0), true);
    let y = g.tanh(x);
    assert_eq!(g.value(y).item(), 0.0);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(arr(&[3], &[1.0, 2.0, 3.0]), true);
    let sq = g.mul(x, x).unwrap();
    let l = g.sum(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn second_backward_is_a_state_error() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(arr(&[2], &[1.0, 2.0]), true);
    let l = g.sum(x);
    g.backward(l).unwrap();
    assert!(matches!(g.backward(l), Err(Error::State(_))));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(arr(&[2], &[1.0, 2.0]), true);
    assert!(g.backward(x).is_err());
}

#[test]
fn ste_round_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(arr(&[3], &[0.43, 0.0, -1.0]), true);
    let y = g.ste_round(x, 5);
    assert_eq!(g.value(y).data(), &[0.4, 0.0, -1.0]);
    let w = g.constant(arr(&[3], &[0.7, -1.5, 2.0]));
    let p = g.mul(y, w).unwrap();
    let l = g.sum(p);
    g.backward(l).unwrap();
    // straight-through: upstream gradient reaches x unchanged
    assert_eq!(g.grad(x).unwrap(), &[0.7, -1.5, 2.0]);
}

#[test]
fn ste_round_half_away_from_zero() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(arr(&[2], &[0.1, -0.1]));
    let y = g.ste_round(x, 5);
    assert_eq!(g.value(y).data(), &[0.2, -0.2]);
}

#[test]
fn detached_branch_gets_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(arr(&[2], &[1.0, 2.0]), true);
    let d = g.detach(x);
    let s = g.mul(x, d).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    assert!(g.grad(d).is_none());
}

#[test]
fn grad_disabled_region_records_nothing() {
    let mut b = ParamBuilder::new();
    let id = b.add("w", &[2], Init::Ones);
    let mut store = b.materialize::<f64>(0);
    let mut g = Graph::new();
    let w = g.param(&store, id);
    let prev = g.set_grad_enabled(false);
    let w_const = g.param(&store, id);
    let t = g.scale(w_const, 3.0);
    g.set_grad_enabled(prev);
    assert!(!g.requires_grad(t));
    let s = g.mul(w, t).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    store.accumulate_grads(&g);
    assert_eq!(store.grad(id).unwrap(), &[3.0, 3.0]);
}

fn chunk_mask(nl: usize, nr: usize) -> NdArray<f64> {
    let n = nl + nr;
    let mut m = vec![0.0; n * n];
    for i in 0..nl {
        for j in nl..n {
            m[i * n + j] = f64::NEG_INFINITY;
        }
    }
    NdArray::from_vec(&[n, n], m).unwrap()
}

proptest! {
    #[test]
    fn ste_round_idempotent(x in -1.0f64..=1.0, n in 1u32..12) {
        let mut g = Graph::<f64>::inference();
        let v = g.constant(NdArray::scalar(x));
        let once = g.ste_round(v, n);
        let twice = g.ste_round(once, n);
        prop_assert_eq!(g.value(once).item(), g.value(twice).item());
    }

    #[test]
    fn masked_keys_do_not_reach_left_queries(
        seed in 0u64..1000,
        scale in 1.0f64..1e3,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (nl, nr, d) = (3, 2, 4);
        let n = nl + nr;
        let q = r(n * d);
        let k = r(n * d);
        let v = r(n * d);
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        for j in nl * d..n * d {
            k2[j] *= scale;
            v2[j] = -v2[j] * scale;
        }
        let mask = chunk_mask(nl, nr);
        let run = |k: &[f64], v: &[f64]| {
            let mut g = Graph::<f64>::inference();
            let q = g.constant(arr(&[1, n, d], &q));
            let k = g.constant(arr(&[1, n, d], k));
            let v = g.constant(arr(&[1, n, d], v));
            let o = g.attention(q, k, v, Some(&mask)).unwrap();
            g.value(o).data()[..nl * d].to_vec()
        };
        let a = run(&k, &v);
        let b = run(&k2, &v2);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn ema_stays_in_hull(vals in proptest::collection::vec(-3.0f64..5.0, 1..40), mu in 0.5f64..0.9999) {
        let mut b = ParamBuilder::new();
        let id = b.add("p", &[1], Init::Zeros);
        let mut store = b.materialize::<f64>(0);
        store.set(id, NdArray::scalar(vals[0]).reshaped(&[1]).unwrap()).unwrap();
        let mut ema = EmaState::new(&store, mu).unwrap();
        let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for &v in &vals {
            store.set(id, NdArray::scalar(v).reshaped(&[1]).unwrap()).unwrap();
            ema.update(&store).unwrap();
            let s = ema.shadow()[0].item();
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }

    #[test]
    fn permute_inverse_round_trips(seed in 0u64..100) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..24).map(|_| rng.gen()).collect();
        let mut g = Graph::<f64>::inference();
        let x = g.constant(arr(&[2, 3, 4], &data));
        let p = g.permute(x, &[1, 2, 0]).unwrap();
        let back = g.permute(p, &[2, 0, 1]).unwrap();
        prop_assert_eq!(g.value(back).data(), &data[..]);
    }
}

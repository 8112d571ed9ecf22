//! Finite-difference checks for every tape operation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn central_difference(store: &ParamStore, f: &dyn Fn(&ParamStore) -> f64, h: f64) -> Vec<f64> {
    let mut work = store.clone();
    let mut out = Vec::new();
    for id in store.ids() {
        for k in 0..store.get(id).len() {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = f(&work);
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = f(&work);
            work.get_mut(id).data_mut()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

fn check(store: &ParamStore, build: impl Fn(&mut Graph) -> Var) {
    let f = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let v = build(&mut g);
        g.scalar(v)
    };
    let mut g = Graph::new(store);
    let loss = build(&mut g);
    let analytic = g.backward(loss).flatten(store);
    let numeric = central_difference(store, &f, 1e-6);
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt())
        .max(1e-12);
    assert!(
        diff / scale < 1e-6,
        "relative error {} (analytic {:?} numeric {:?})",
        diff / scale,
        analytic,
        numeric
    );
}

/// Reduces any output to a scalar with fixed random weights.
fn weighted_sum(g: &mut Graph, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let (r, c) = g.value(v).shape();
    let w = g.input(Tensor::randn(r, c, 1.0, rng));
    let p = g.mul(v, w);
    g.sum(p)
}

fn setup(seed: u64) -> (ParamStore, ParamId, ParamId, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::randn(3, 4, 1.0, &mut rng));
    let b = store.add("b", Tensor::randn(4, 2, 1.0, &mut rng));
    (store, a, b, rng)
}

#[test]
fn matmul_and_elementwise_ops() {
    let (store, a, b, rng) = setup(1);
    check(&store, |g| {
        let mut rng = rng.clone();
        let x = g.param(a);
        let y = g.param(b);
        let m = g.matmul(x, y);
        let t = g.tanh(m);
        let s = g.sigmoid(m);
        let p = g.mul(t, s);
        let q = g.sub(p, m);
        let q = g.scale(q, 0.7);
        let q = g.add(q, t);
        weighted_sum(g, q, &mut rng)
    });
}

#[test]
fn softmax_normalize_scale_by() {
    let (store, a, b, rng) = setup(2);
    check(&store, |g| {
        let mut rng = rng.clone();
        let x = g.param(a);
        let sm = g.softmax_rows(x);
        let y = g.param(b);
        let n = g.normalize(y);
        let s = g.slice_rows(y, 1, 1);
        let s = g.slice_cols(s, 0, 1);
        let n = g.scale_by(n, s);
        let m = g.matmul(sm, n);
        weighted_sum(g, m, &mut rng)
    });
}

#[test]
fn structural_ops() {
    let (store, a, b, rng) = setup(3);
    check(&store, |g| {
        let mut rng = rng.clone();
        let x = g.param(a);
        let y = g.param(b);
        let yt = g.transpose(y);
        let rows = g.concat_rows(&[x, yt]);
        let gathered = g.gather_rows(rows, &[0, 4, 4, 2]);
        let stacked = g.shift_stack(gathered, 3, 1);
        let cols = g.concat_cols(&[stacked, gathered]);
        let up = g.upsample_rows(cols, 3);
        let r = g.relu(up);
        let row = g.slice_rows(y, 0, 1);
        let row = g.concat_cols(&[row, row, row, row, row, row, row, row]);
        let r = g.add_row(r, row);
        weighted_sum(g, r, &mut rng)
    });
}

#[test]
fn loss_ops() {
    let (store, a, _b, mut rng) = setup(4);
    let target = Tensor::randn(3, 4, 1.0, &mut rng);
    check(&store, |g| {
        let x = g.param(a);
        let l1 = g.l1_loss(x, target.clone());
        let bce = g.bce_with_logits(x, &[1.0, 0.0, 0.0, 1.0, 0., 0., 0., 0., 1., 0., 0., 0.], 5.0);
        let ce = g.cross_entropy(x, &[0, 3, 2]);
        let s = g.add(l1, bce);
        g.add(s, ce)
    });
}

#[test]
fn upsample_of_constant_is_constant() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::filled(4, 2, 0.3));
    let y = g.upsample_rows(x, 5);
    assert_eq!(g.value(y).rows(), 20);
    assert!(g.value(y).data().iter().all(|v| (v - 0.3).abs() < 1e-15));
}

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Two-layer SiLU MLP written once against the backend trait.
fn mlp<B: Backend>(b: &mut B, params: &BTreeMap<String, Tensor>, x: &B::Value) -> Result<B::Value, Error> {
    let w1 = b.param("w1", &params["w1"]);
    let b1 = b.param("b1", &params["b1"]);
    let w2 = b.param("w2", &params["w2"]);
    let b2 = b.param("b2", &params["b2"]);
    let h = b.matmul_t(x, &w1)?;
    let h = b.add_broadcast(&h, &b1)?;
    let h = b.silu(&h);
    let o = b.matmul_t(&h, &w2)?;
    b.add_broadcast(&o, &b2)
}

fn mlp_params(rng: &mut ChaCha8Rng, d_in: usize, hidden: usize, d_out: usize) -> BTreeMap<String, Tensor> {
    BTreeMap::from([
        ("w1".to_string(), random(rng, &[hidden, d_in])),
        ("b1".to_string(), random(rng, &[1, hidden])),
        ("w2".to_string(), random(rng, &[d_out, hidden])),
        ("b2".to_string(), random(rng, &[1, d_out])),
    ])
}

fn mlp_loss_value(params: &BTreeMap<String, Tensor>, x: &Tensor) -> f64 {
    let mut e = Eval;
    let o = mlp(&mut e, params, x).unwrap();
    o.data().iter().map(|v| v * v).sum::<f64>() * 0.5 + o.data().iter().map(|v| v.sin()).sum::<f64>()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn grad_of_sum_of_squares() {
    let p = t(&[2], &[1.0, 2.0]);
    let mut g = Graph::new();
    let pv = g.param("p", &p);
    let sq = g.mul(&pv, &pv).unwrap();
    let loss = g.sum(&sq);
    let grads = g.grad(loss, [("p", &p)]).unwrap();
    assert_eq!(grads["p"].data(), &[2.0, 4.0]);
}

#[test]
fn stop_gradient_blocks_flow() {
    let (p, q) = (Tensor::scalar(3.0), Tensor::scalar(2.0));
    let mut g = Graph::new();
    let pv = g.param("p", &p);
    let qv = g.param("q", &q);
    let sp = g.stop_gradient(&pv);
    let prod = g.mul(&sp, &qv).unwrap();
    let grads = g.grad(prod, [("p", &p), ("q", &q)]).unwrap();
    assert_eq!(grads["p"].item().unwrap(), 0.0);
    assert_eq!(grads["q"].item().unwrap(), 3.0);

    // d/dx [sg(x) * x] at x = 2 sees only the free factor.
    let x = Tensor::scalar(2.0);
    let mut g = Graph::new();
    let xv = g.param("x", &x);
    let sx = g.stop_gradient(&xv);
    assert_eq!(g.get(sx).data(), g.get(xv).data());
    let prod = g.mul(&sx, &xv).unwrap();
    assert_eq!(g.grad(prod, [("x", &x)]).unwrap()["x"].item().unwrap(), 2.0);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let p = t(&[2], &[1.0, 2.0]);
    let mut g = Graph::new();
    let pv = g.param("p", &p);
    let sq = g.square(&pv);
    assert!(matches!(g.grad(sq, [("p", &p)]), Err(Error::Contract(_))));
}

#[test]
fn unreachable_and_frozen_params_get_zero() {
    let p = t(&[3], &[1.0, 2.0, 3.0]);
    let q = t(&[2, 2], &[1.0; 4]);
    let mut g = Graph::with_trainable(Trainable::Prefixes(vec!["q".into()]));
    let pv = g.param("p", &p);
    let loss = g.sum(&pv);
    let grads = g.grad(loss, [("p", &p), ("q", &q), ("missing", &q)]).unwrap();
    assert!(grads.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
    assert_eq!(grads["q"].shape(), &[2, 2]);
}

#[test]
fn jvp_of_square_and_linear_map() {
    let (y, dy) = jvp(|b, x| Ok(b.square(x)), &Tensor::scalar(3.0), &Tensor::scalar(1.0)).unwrap();
    assert_eq!((y.item().unwrap(), dy.item().unwrap()), (9.0, 6.0));

    let w = t(&[2, 3], &[1., 2., 3., -1., 0.5, 4.]);
    let x = t(&[1, 3], &[0.3, -0.2, 1.5]);
    let v = t(&[1, 3], &[1.0, 2.0, -1.0]);
    let (y, dy) = jvp(
        |b, x| {
            let wv = b.constant(w.clone());
            b.matmul_t(x, &wv)
        },
        &x,
        &v,
    )
    .unwrap();
    let wt = w.transpose().unwrap();
    assert_eq!(y.data(), x.matmul(&wt).unwrap().data());
    assert_eq!(dy.data(), v.matmul(&wt).unwrap().data());
}

#[test]
fn jvp_rejects_shape_mismatch() {
    let r = jvp(|_, x| Ok(x.clone()), &t(&[2], &[1., 2.]), &t(&[3], &[1., 2., 3.]));
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn jvp_joint_time_tangents() {
    let point = JointPoint {
        x: t(&[1, 2], &[2.0, 5.0]),
        s: t(&[1, 1], &[0.25]),
        t: t(&[1, 1], &[0.75]),
    };
    // f = t x, tangent (0, 0, 1) -> x
    let dt = JointTangent { dx: None, ds: 0.0, dt: 1.0 };
    let (_, d) = jvp_joint(|b, x, _s, t| b.mul_broadcast(x, t), &point, &dt).unwrap();
    assert_eq!(d.data(), &[2.0, 5.0]);
    // f = x - (t - s) x, tangent (0, 1, 0) -> x
    let ds = JointTangent { dx: None, ds: 1.0, dt: 0.0 };
    let (_, d) = jvp_joint(
        |b, x, s, t| {
            let gap = b.sub(t, s)?;
            let scaled = b.mul_broadcast(x, &gap)?;
            b.sub(x, &scaled)
        },
        &point,
        &ds,
    )
    .unwrap();
    assert_eq!(d.data(), &[2.0, 5.0]);
}

#[test]
fn mlp_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = mlp_params(&mut rng, 3, 5, 2);
    let x = random(&mut rng, &[4, 3]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let o = mlp(&mut g, &params, &xv).unwrap();
    let sq = g.square(&o);
    let half = g.sum(&sq);
    let half = g.scale(&half, 0.5);
    let so = g.sin(&o);
    let s = g.sum(&so);
    let loss = g.add(&half, &s).unwrap();
    let grads = g
        .grad(loss, params.iter().map(|(k, v)| (k.as_str(), v)))
        .unwrap();
    let h = 1e-5;
    for (name, p) in &params {
        for i in 0..p.numel() {
            let bump = |delta: f64| {
                let mut d = p.data().to_vec();
                d[i] += delta;
                let mut q = params.clone();
                q.insert(name.clone(), t(p.shape(), &d));
                mlp_loss_value(&q, &x)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = grads[name].data()[i];
            assert!(rel_err(an, fd) < 1e-6, "{name}[{i}]: {an} vs {fd}");
        }
    }
}

#[test]
fn mlp_jvp_matches_central_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = mlp_params(&mut rng, 4, 6, 3);
    let x = random(&mut rng, &[2, 4]);
    let v = random(&mut rng, &[2, 4]);
    let (_, d) = jvp(|b, x| mlp(b, &params, x), &x, &v).unwrap();
    let h = 1e-5;
    let f = |x: &Tensor| mlp(&mut Eval, &params, x).unwrap();
    let fd = f(&x.axpy(h, &v).unwrap())
        .sub(&f(&x.axpy(-h, &v).unwrap()))
        .unwrap()
        .scale(0.5 / h);
    for (a, b) in d.data().iter().zip(fd.data()) {
        assert!(rel_err(*a, *b) < 1e-5, "{a} vs {b}");
    }
}

/// Reverse and forward derivatives of every pointwise op against central
/// differences over 100 random points each.
#[test]
fn elementary_ops_agree_with_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    for op in Unary::ALL {
        for _ in 0..100 {
            let mut x0: f64 = rng.random_range(-2.0..2.0);
            if op == Unary::Log {
                x0 = rng.random_range(0.1..3.0);
            }
            if op == Unary::Abs && x0.abs() < 1e-3 {
                x0 = 0.5;
            }
            let fd = (op.apply(x0 + h) - op.apply(x0 - h)) / (2.0 * h);
            let x = Tensor::scalar(x0);
            let mut g = Graph::new();
            let xv = g.param("x", &x);
            let y = g.unary(op, &xv);
            let rev = g.grad(y, [("x", &x)]).unwrap()["x"].item().unwrap();
            let (_, fwd) = jvp(|b, x| Ok(b.unary(op, x)), &x, &Tensor::scalar(1.0)).unwrap();
            assert!(rel_err(rev, fd) < 1e-5, "{op:?} at {x0}: {rev} vs {fd}");
            assert!(rel_err(fwd.item().unwrap(), fd) < 1e-5);
        }
    }
}

#[test]
fn structural_ops_have_correct_adjoints() {
    // loss = sum(w * concat(slice(a), broadcast(b))) has gradient that is
    // easy to derive by hand.
    let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
    let b = t(&[1, 2], &[10., 20.]);
    let w = t(&[2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]);
    let mut g = Graph::new();
    let av = g.param("a", &a);
    let bv = g.param("b", &b);
    let wv = g.constant(w.clone());
    let sl = g.slice(&av, 1, 1, 2).unwrap();
    let bb = g.broadcast(&bv, &[2, 2]).unwrap();
    let cat = g.concat(&[sl, bb], 1).unwrap();
    let prod = g.mul(&cat, &wv).unwrap();
    let rows = g.sum_axis(&prod, 1).unwrap();
    let loss = g.mean(&rows);
    let grads = g.grad(loss, [("a", &a), ("b", &b)]).unwrap();
    assert_eq!(grads["a"].data(), &[0., 0.5, 1., 0., 2.5, 3.]);
    assert_eq!(grads["b"].data(), &[(3. + 7.) / 2., (4. + 8.) / 2.]);
}

proptest! {
    #[test]
    fn jvp_is_linear_in_the_tangent(
        seed in 0u64..1000,
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = mlp_params(&mut rng, 3, 4, 2);
        let x = random(&mut rng, &[2, 3]);
        let v = random(&mut rng, &[2, 3]);
        let w = random(&mut rng, &[2, 3]);
        let combo = v.scale(alpha).axpy(beta, &w).unwrap();
        let f = |b: &mut Forward, x: &DualTensor| mlp(b, &params, x);
        let (_, dc) = jvp(f, &x, &combo).unwrap();
        let (_, dv) = jvp(f, &x, &v).unwrap();
        let (_, dw) = jvp(f, &x, &w).unwrap();
        let expect = dv.scale(alpha).axpy(beta, &dw).unwrap();
        for (a, b) in dc.data().iter().zip(expect.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stop_gradient_preserves_bits(vals in proptest::collection::vec(-1e6f64..1e6, 1..16)) {
        let x = t(&[vals.len()], &vals);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let s = g.stop_gradient(&xv);
        let same = g.get(s).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}

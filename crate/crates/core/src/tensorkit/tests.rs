use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Fixed random weighting so every output coordinate matters to the scalar.
fn probe_weights(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    random(&mut rng, shape)
}

fn reduce(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let w = g.constant(probe_weights(g.shape(out), seed));
    g.dot(out, w)
}

fn check_unary(name: &str, shape: &[usize], op: impl Fn(&mut Graph, Var) -> Result<Var>) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, shape);
        let err = finite_diff_grad_check(
            |g, v| {
                let y = op(g, v)?;
                reduce(g, y, seed)
            },
            &x,
            STEP,
        )
        .unwrap();
        assert!(err <= TOL, "{name} seed {seed}: rel err {err}");
    }
}

fn check_many(name: &str, shapes: &[&[usize]], op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let r = grad_check_many(
            |g, v| {
                let y = op(g, v)?;
                reduce(g, y, seed)
            },
            &xs,
            STEP,
        )
        .unwrap();
        assert!(r.max_rel_error <= TOL, "{name} seed {seed}: {r:?}");
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4]));
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.25; 4]);

    let c = 0.3;
    let x = g.constant(Tensor::from_vec(vec![c, c + 2f64.ln()]));
    let s = g.softmax(x, 0).unwrap();
    assert!((g.value(s).data()[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((g.value(s).data()[1] - 2.0 / 3.0).abs() < 1e-12);

    assert!(g.softmax(x, 1).is_err());
}

#[test]
fn softmax_is_shift_invariant_and_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = random(&mut rng, &[2, 5, 3, 3]);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(x.map(|v| v + 7.0));
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        assert!(g.value(sa).max_abs_diff(g.value(sb)) <= 1e-12);
    }
    // Magnitude-1e3 logits stay a valid distribution.
    let x = random(&mut rng, &[3, 6]).map(|v| v * 1e3);
    let mut g = Graph::new();
    let a = g.constant(x);
    let s = g.softmax(a, 1).unwrap();
    for row in g.value(s).data().chunks(6) {
        assert!(row.iter().all(|&p| p >= 0.0 && p.is_finite()));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn grad_check_simple_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[7]);
    let quad = finite_diff_grad_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        },
        &x,
        STEP,
    )
    .unwrap();
    assert!(quad <= 1e-7, "{quad}");
    let lin = finite_diff_grad_check(|g, v| Ok(g.sum(v)), &x, STEP).unwrap();
    assert!(lin <= 1e-9, "{lin}");

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let s = g.sum(v);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(v).unwrap().data(), &[1.0; 7]);
}

#[test]
fn grad_check_rejects_non_finite() {
    let x = Tensor::from_vec(vec![1.0, 2.0]);
    let r = finite_diff_grad_check(
        |g, v| {
            let e = g.scale(v, 1e308);
            let e = g.scale(e, 10.0);
            Ok(g.sum(e))
        },
        &x,
        STEP,
    );
    assert!(matches!(r, Err(crate::Error::Evaluation(_))));
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    check_many("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]));
    check_many("sub", &[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    check_many("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
    check_unary("scale", &[5], |g, v| Ok(g.scale(v, -2.5)));
    check_unary("add_scalar", &[5], |g, v| Ok(g.add_scalar(v, 0.7)));
    check_unary("exp", &[5], |g, v| Ok(g.exp(v)));
    check_unary("log", &[5], |g, v| {
        let e = g.exp(v);
        g.log(e)
    });
    check_unary("tanh", &[6], |g, v| Ok(g.tanh(v)));
    check_unary("relu", &[6], |g, v| Ok(g.relu(v)));
    check_unary("clamp_min", &[6], |g, v| Ok(g.clamp_min(v, 0.05)));
    check_unary("mean", &[6], |g, v| Ok(g.mean(v)));
}

#[test]
fn structural_primitives_match_finite_differences() {
    check_unary("softmax axis1", &[2, 4, 3], |g, v| g.softmax(v, 1));
    check_unary("softmax axis0", &[4, 3], |g, v| g.softmax(v, 0));
    check_many("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1]));
    check_many("conv3x3 s1", &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
    });
    check_many("conv3x3 s2", &[&[1, 2, 6, 5], &[2, 2, 3, 3]], |g, v| {
        g.conv2d(v[0], v[1], None, 2, 1)
    });
    check_many("conv1x1", &[&[2, 3, 4, 4], &[2, 3, 1, 1], &[2]], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), 1, 0)
    });
    check_unary("bilinear", &[2, 2, 3, 4], |g, v| g.resize(v, 6, 8, UpsampleMode::Bilinear));
    check_unary("bilinear odd", &[1, 1, 3, 3], |g, v| g.resize(v, 5, 7, UpsampleMode::Bilinear));
    check_unary("nearest", &[1, 2, 3, 3], |g, v| g.resize(v, 6, 6, UpsampleMode::Nearest));
    let labels: Rc<[usize]> = vec![0, 2, IGNORE_INDEX, 1, 1, 0, 2, 2].into();
    check_unary("gather", &[2, 3, 2, 2], move |g, v| g.gather_classes(v, labels.clone()));
    let pixels: Rc<[usize]> = vec![0, 3, 5, 7, 2].into();
    check_unary("select", &[2, 3, 2, 2], move |g, v| g.select_pixels(v, pixels.clone()));
    check_many("cosine", &[&[5, 4], &[5, 4]], |g, v| g.cosine_rows(v[0], v[1]));
    let mask = Tensor::new(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    check_unary("scale_channels", &[2, 3, 2, 2], move |g, v| g.scale_channels(v, mask.clone()));
}

#[test]
fn cosine_handles_zero_vectors() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[1, 3]));
    let b = g.constant(Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let c = g.cosine_rows(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[0.0]);
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(a).unwrap().all_finite());
}

#[test]
fn conv_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[2, 3, 7, 6]);
    let w = random(&mut rng, &[4, 3, 3, 3]);
    let b = random(&mut rng, &[4]);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(xv, wv, Some(bv), 2, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[2, 4, 4, 3]);
    let at = |n: usize, c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= 7 || j >= 6 {
            0.0
        } else {
            x.data()[((n * 3 + c) * 7 + i as usize) * 6 + j as usize]
        }
    };
    for n in 0..2 {
        for o in 0..4 {
            for oy in 0..4 {
                for ox in 0..3 {
                    let mut s = b.data()[o];
                    for c in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                s += w.data()[((o * 3 + c) * 3 + ky) * 3 + kx] * at(n, c, iy, ix);
                            }
                        }
                    }
                    let got = out.data()[((n * 4 + o) * 4 + oy) * 3 + ox];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let p = g.param(Tensor::ones(&[3]));
    let c = g.constant(Tensor::full(&[3], 2.0));
    let cc = g.exp(c);
    assert!(!g.requires_grad(cc));
    let m = g.mul(p, cc).unwrap();
    let s = g.sum(m);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(c).is_none());
    assert!(grads.get(cc).is_none());
    assert!(grads.get(p).is_some());
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::ones(&[2, 3]));
    let b = g.constant(Tensor::ones(&[3, 2]));
    assert!(g.add(a, b).is_err());
    assert!(g.matmul(a, a).is_err());
    assert!(g.backward(a).is_err());
    let z = g.constant(Tensor::zeros(&[2]));
    assert!(g.log(z).is_err());
}

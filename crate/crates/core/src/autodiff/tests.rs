use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Central-difference oracle (h = 1e-5). Returns the relative error
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|)` over the concatenated gradient of all inputs.
pub(crate) fn grad_check<F>(inputs: &[Matrix], build: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Tensor<'t>,
{
    let h = 1e-5;
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = build(&tape, &vars);
    tape.backward(loss).unwrap();
    let eval = |ins: &[Matrix]| {
        let t = Tape::new();
        let v: Vec<_> = ins.iter().map(|m| t.constant(m.clone())).collect();
        build(&t, &v).scalar()
    };
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (k, input) in inputs.iter().enumerate() {
        let analytic = vars[k].grad().unwrap_or_else(|| Matrix::zeros(input.rows(), input.cols()));
        for e in 0..input.as_slice().len() {
            let mut plus = inputs.to_vec();
            plus[k].as_mut_slice()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].as_mut_slice()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice()[e];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-300)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

#[test]
fn matmul_identity_and_small_product() {
    let tape = Tape::new();
    let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
    let i3 = tape.constant(Matrix::identity(3));
    assert_eq!(i3.matmul(tape.constant(m.clone())).unwrap().value(), m);
    let a = tape.constant(Matrix::from_rows(&[[1.0, 2.0]]));
    let b = tape.constant(Matrix::from_rows(&[[3.0], [4.0]]));
    assert_eq!(a.matmul(b).unwrap().scalar(), 11.0);
    let err = a.matmul(a).unwrap_err().to_string();
    assert!(err.contains("1x2") && err.contains("by 1x2"), "{err}");
}

#[test]
fn matmul_gradient_is_ones_times_bt() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random(3, 4, &mut rng), random(4, 2, &mut rng));
    let tape = Tape::new();
    let ta = tape.param(a);
    let tb = tape.constant(b.clone());
    tape.backward(ta.matmul(tb).unwrap().sum()).unwrap();
    let expected = Matrix::filled(3, 2, 1.0).matmul_t(&b).unwrap();
    let g = ta.grad().unwrap();
    assert!(g.zip_map(&expected, |x, y| (x - y).abs()).unwrap().max_abs() < 1e-15);
}

#[test]
fn selu_values() {
    assert_eq!(selu(0.0), 0.0);
    assert_eq!(selu(1.0), 1.0507009873554805);
    assert!((selu(-1.0) - SELU_SCALE * SELU_ALPHA * ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
}

#[test]
fn sigmoid_values() {
    assert_eq!(sigmoid(0.0), 0.5);
    let s = sigmoid(50.0);
    assert!(1.0 - s < 1e-20 && s <= 1.0);
    assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
}

#[test]
fn primitive_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, k, c) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let a = random(r, k, &mut rng);
        let b = random(k, c, &mut rng);
        let e = random(r, k, &mut rng);
        let row = random(1, k, &mut rng);
        let checks: Vec<(&str, f64)> = vec![
            ("matmul", grad_check(&[a.clone(), b.clone()], |_, v| v[0].matmul(v[1]).unwrap().sum())),
            ("add", grad_check(&[a.clone(), e.clone()], |_, v| v[0].add(v[1]).unwrap().mul(v[0]).unwrap().sum())),
            ("sub", grad_check(&[a.clone(), e.clone()], |_, v| v[0].sub(v[1]).unwrap().mul(v[1]).unwrap().sum())),
            ("mul", grad_check(&[a.clone(), e.clone()], |_, v| v[0].mul(v[1]).unwrap().sum())),
            ("scale", grad_check(std::slice::from_ref(&a), |_, v| v[0].scale(-2.5).mul(v[0]).unwrap().sum())),
            ("add_row", grad_check(&[a.clone(), row.clone()], |_, v| v[0].add_row(v[1]).unwrap().selu().sum())),
            ("selu", grad_check(std::slice::from_ref(&a), |_, v| v[0].selu().mul(v[0]).unwrap().sum())),
            ("sigmoid", grad_check(std::slice::from_ref(&a), |_, v| v[0].sigmoid().mul(v[0]).unwrap().sum())),
            ("column_sum", grad_check(std::slice::from_ref(&a), |_, v| v[0].column_sum().selu().sum())),
            ("layer_norm", {
                let g = random(1, k, &mut rng);
                let bt = random(1, k, &mut rng);
                grad_check(&[a.clone(), g, bt, e.clone()], |_, v| {
                    v[0].layer_norm(v[1], v[2]).unwrap().mul(v[3]).unwrap().sum()
                })
            }),
        ];
        for (name, err) in checks {
            assert!(err <= 1e-6, "seed {seed} {name}: rel err {err:e}");
        }
    }
}

#[test]
fn selu_gradient_at_minus_one() {
    let x = Matrix::filled(1, 1, -1.0);
    assert!(grad_check(&[x], |_, v| v[0].selu().sum()) <= 1e-6);
}

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let group = rng.random_range(1..5);
        let groups = rng.random_range(1..4);
        let rows = group * groups;
        let d = rng.random_range(1..5);
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.75)).collect();
        mask[0] = true;
        let mask = Rc::new(mask);
        let (q, k, v, w) = (
            random(rows, d, &mut rng),
            random(rows, d, &mut rng),
            random(rows, 3, &mut rng),
            random(rows, 3, &mut rng),
        );
        let err = grad_check(&[q, k, v, w], |_, t| {
            softmax_attention(t[0], t[1], t[2], mask.clone(), group).unwrap().mul(t[3]).unwrap().sum()
        });
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn group_sum_and_row_scale_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(6, 3, &mut rng);
    let w = random(2, 3, &mut rng);
    let err = grad_check(&[a.clone(), w], |_, v| v[0].group_row_sum(3).unwrap().mul(v[1]).unwrap().sum());
    assert!(err <= 1e-6);
    let scales = Rc::new(vec![1.0, 0.0, 2.0, -1.0, 0.5, 3.0]);
    let err = grad_check(&[a], |_, v| v[0].row_scale(scales.clone()).unwrap().selu().sum());
    assert!(err <= 1e-6);
}

#[test]
fn multilabel_loss_gradient() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let o = rng.random_range(1..6);
        let z = Matrix::from_fn(1, o, |_, _| rng.random_range(-4.0..4.0));
        let t: Vec<f64> = (0..o).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let w: Vec<f64> = (0..o).map(|_| rng.random_range(0.1..1.0)).collect();
        let err = grad_check(&[z], |_, v| multilabel_loss(v[0], &t, &w, 1e-9).unwrap());
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn attention_examples() {
    let tape = Tape::new();
    let v = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    // One valid row: output is that row of V.
    let q = tape.constant(Matrix::from_rows(&[[0.3], [0.1], [0.2]]));
    let out = softmax_attention(q, q, tape.constant(v.clone()), Rc::new(vec![true, false, false]), 3).unwrap();
    assert_eq!(out.value(), Matrix::from_rows(&[[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]));
    // Identical keys: output rows are the mean of V.
    let k = tape.constant(Matrix::filled(3, 1, 0.7));
    let out = softmax_attention(q, k, tape.constant(v.clone()), Rc::new(vec![true; 3]), 3).unwrap().value();
    for i in 0..3 {
        assert!((out[(i, 0)] - 3.0).abs() < 1e-12 && (out[(i, 1)] - 4.0).abs() < 1e-12);
    }
    // Fully masked: zeros.
    let out = softmax_attention(q, k, tape.constant(v), Rc::new(vec![false; 3]), 3).unwrap();
    assert_eq!(out.value(), Matrix::zeros(3, 2));
    // Zero key width.
    let empty = tape.constant(Matrix::zeros(3, 0));
    assert!(softmax_attention(empty, empty, q, Rc::new(vec![true; 3]), 3).is_err());
}

#[test]
fn transformer_block_identity_with_zero_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let block = TransformerBlock::register(&mut store, "b", 8, &mut rng);
    block.zero_outputs(&mut store);
    let x = random(5, 8, &mut rng);
    let tape = Tape::new();
    let vars = store.bind(&tape);
    let out = block.forward(&vars, tape.constant(x.clone()), &Rc::new(vec![true; 5]), 5).unwrap();
    assert_eq!(out.shape(), (5, 8));
    assert_eq!(out.value(), x);
}

#[test]
fn stacked_transformer_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let blocks: Vec<_> =
        (0..4).map(|i| TransformerBlock::register(&mut store, &format!("b{i}"), 8, &mut rng)).collect();
    let x = random(5, 8, &mut rng);
    let mask = Rc::new(vec![true, true, true, true, false]);
    let mut inputs: Vec<Matrix> = store.iter().map(|p| p.value.clone()).collect();
    inputs.push(x);
    let err = grad_check(&inputs, |_, v| {
        let mut h = *v.last().unwrap();
        for b in &blocks {
            h = b.forward(v, h, &mask, 5).unwrap();
        }
        h.mul(h).unwrap().sum()
    });
    assert!(err <= 1e-4, "{err:e}");
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.param(Matrix::from_rows(&[[1.0, -2.0, 3.0]]));
    tape.backward(x.sum()).unwrap();
    assert_eq!(x.grad().unwrap(), Matrix::filled(1, 3, 1.0));

    let tape = Tape::new();
    let x = tape.param(Matrix::from_rows(&[[1.0, -2.0, 3.0]]));
    tape.backward(x.mul(x).unwrap().sum()).unwrap();
    assert_eq!(x.grad().unwrap(), Matrix::from_rows(&[[2.0, -4.0, 6.0]]));

    let tape = Tape::new();
    let x = tape.param(Matrix::from_rows(&[[0.5]]));
    tape.backward(x.add(x).unwrap()).unwrap();
    assert_eq!(x.grad().unwrap(), Matrix::from_rows(&[[2.0]]));
}

#[test]
fn backward_requires_scalar() {
    let tape = Tape::new();
    let x = tape.param(Matrix::zeros(2, 2));
    assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
}

#[test]
fn backward_twice_doubles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tape = Tape::new();
    let a = tape.param(random(3, 3, &mut rng));
    let b = tape.param(random(3, 2, &mut rng));
    let loss = a.matmul(b).unwrap().selu().sigmoid().sum();
    tape.backward(loss).unwrap();
    let (ga, gb) = (a.grad().unwrap(), b.grad().unwrap());
    tape.backward(loss).unwrap();
    assert_eq!(a.grad().unwrap(), ga.scale(2.0));
    assert_eq!(b.grad().unwrap(), gb.scale(2.0));
}

#[test]
fn ops_do_not_mutate_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = random(3, 3, &mut rng);
    let tape = Tape::new();
    let a = tape.param(m.clone());
    let g = tape.param(Matrix::filled(1, 3, 1.0));
    let bt = tape.param(Matrix::zeros(1, 3));
    let y = a.layer_norm(g, bt).unwrap().matmul(a).unwrap().selu().column_sum().sum();
    tape.backward(y).unwrap();
    assert_eq!(a.value(), m);
}

#[test]
fn constants_get_no_gradient() {
    let tape = Tape::new();
    let c = tape.constant(Matrix::filled(2, 2, 1.0));
    let p = tape.param(Matrix::filled(2, 2, 3.0));
    tape.backward(c.mul(p).unwrap().sum()).unwrap();
    assert!(c.grad().is_none());
    assert_eq!(p.grad().unwrap(), Matrix::filled(2, 2, 1.0));
}

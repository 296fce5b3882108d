use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Central-difference oracle: compares backward gradients of
/// `sum(weights ⊙ f(inputs))` against finite differences for every input
/// element.
fn fd_check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars);
        random(&mut rng, g.value(out).shape())
    };
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars);
    let w = g.constant(probe.clone());
    let weighted = g.mul(out, w).unwrap();
    let loss = g.sum(weighted);
    g.backward(loss).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        for i in 0..inputs[which].numel() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (numeric - analytic[i]).abs();
            let rel = err / numeric.abs().max(analytic[i].abs()).max(1e-8);
            if err > 1e-7 {
                worst = worst.max(rel);
            }
        }
    }
    worst
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::<f64>::new();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
    let p = g.matmul(a, b).unwrap();
    assert_eq!(g.value(p).shape(), &[1, 1]);
    assert_eq!(g.value(p).data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 2]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn grad_of_summed_product_is_ones_times_b_transpose() {
    let mut g = Graph::<f64>::new();
    let a = g.param(t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]));
    let b = g.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let p = g.matmul(a, b).unwrap();
    let loss = g.sum(p);
    g.backward(loss).unwrap();
    // (ones[2×2] · Bᵀ)[i][k] = Σ_j B[k][j]
    assert_eq!(g.grad(a).unwrap(), &[3.0, 7.0, 11.0, 3.0, 7.0, 11.0]);
}

#[test]
fn conv_zero_input_gives_bias() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(vec![4, 5]));
    let f = g.constant(t(&[1, 12], &[0.3; 12]));
    let b = g.constant(t(&[1], &[0.7]));
    let c = g.conv1d_same(x, f, b, 3).unwrap();
    assert_eq!(g.value(c).data(), &[0.7; 5]);
}

#[test]
fn conv_pointwise_and_window_sums() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let zero = g.constant(t(&[1], &[0.0]));
    let f1 = g.constant(t(&[1, 1], &[2.0]));
    let c = g.conv1d_same(x, f1, zero, 1).unwrap();
    assert_eq!(g.value(c).data(), &[2.0, 4.0, 6.0]);

    let f3 = g.constant(t(&[1, 3], &[1.0, 1.0, 1.0]));
    let c = g.conv1d_same(x, f3, zero, 3).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv_even_window_pads_left_by_half() {
    // window 2: one column of left padding, none on the right.
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let f = g.constant(t(&[1, 2], &[10.0, 1.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let c = g.conv1d_same(x, f, b, 2).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 12.0, 23.0]);
}

#[test]
fn activations_at_reference_points() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[0.0, -1.0, 3.0]));
    let s = g.sigmoid(x);
    let r = g.relu(x);
    assert_eq!(g.value(s).data()[0], 0.5);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap()[0], 0.25);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[1], &[0.0]));
    let r = g.relu(x);
    let loss = g.sum(r);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0]);
}

#[test]
fn softmax_reference_rows() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(
        &[3, 3],
        &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 5.0, 1005.0, 5.0],
    ));
    let s = g.softmax_rows(x).unwrap();
    let v = g.value(s).data();
    for &u in &v[0..3] {
        assert!((u - 1.0 / 3.0).abs() < 1e-12);
    }
    for (got, want) in v[3..6].iter().zip([0.0900, 0.2447, 0.6652]) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
    assert!(v[7] > 1.0 - 1e-12 && v[6] < 1e-12);
}

#[test]
fn softmax_extreme_row_in_f32_has_no_overflow() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![1, 2], vec![3.0, 1003.0]).unwrap());
    let s = g.softmax_rows(x).unwrap();
    let v = g.value(s).data();
    assert!(v.iter().all(|u| u.is_finite()));
    assert!(v[0] < 1e-30 && (v[1] - 1.0).abs() < 1e-6);
}

#[test]
fn cross_entropy_reference_values() {
    let mut g = Graph::<f64>::new();
    let uniform = g.constant(Tensor::zeros(vec![6]));
    let l = g.cross_entropy(uniform, 2).unwrap();
    assert!((g.value(l).item() - 6f64.ln()).abs() < 1e-12);

    let sharp = g.constant(t(&[2], &[200.0, -200.0]));
    let l = g.cross_entropy(sharp, 0).unwrap();
    assert!(g.value(l).item() < 1e-12);

    let two = g.constant(t(&[2], &[1.0, 2.0]));
    let l = g.cross_entropy(two, 0).unwrap();
    assert!((g.value(l).item() - 1.3133).abs() < 1e-4);

    assert!(matches!(g.cross_entropy(two, 2), Err(Error::Index(_))));
}

#[test]
fn backward_simple_losses() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[3], &[4.0, -1.0, 0.5]));
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn unreachable_param_gets_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let unused = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(unused).unwrap(), &[0.0; 3]);
}

#[test]
fn embed_accumulates_repeated_rows() {
    let mut g = Graph::<f64>::new();
    let table = g.param(t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
    let x = g.embed(table, &[2, 1, 2]).unwrap();
    assert_eq!(g.value(x).shape(), &[2, 3]);
    assert_eq!(g.value(x).data(), &[0.5, 0.3, 0.5, 0.6, 0.4, 0.6]);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(table).unwrap(), &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
    assert!(matches!(g.embed(table, &[3]), Err(Error::Index(_))));
}

#[test]
fn valve_passes_closed_band_only() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[4], &[0.5, 0.56, 0.45, 0.9]));
    let v = g.valve(x, 0.05);
    assert_eq!(g.value(v).data(), &[0.5, 0.0, 0.45, 0.0]);
    let loss = g.sum(v);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::<f32>::new();
        let a = g.param(random(&mut rng, &[4, 6]).cast());
        let b = g.param(random(&mut rng, &[6, 3]).cast());
        let p = g.matmul(a, b).unwrap();
        let s = g.softmax_rows(p).unwrap();
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        (g.value(s).clone(), g.grad(a).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn finite_differences_per_operation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-6;
    let checks: Vec<(&str, f64)> = vec![
        (
            "matmul",
            fd_check(
                vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])],
                |g, v| g.matmul(v[0], v[1]).unwrap(),
            ),
        ),
        (
            "matvec",
            fd_check(
                vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4])],
                |g, v| g.matmul(v[0], v[1]).unwrap(),
            ),
        ),
        (
            "add_col_bias",
            fd_check(
                vec![random(&mut rng, &[3, 4]), random(&mut rng, &[3])],
                |g, v| g.add_col_bias(v[0], v[1]).unwrap(),
            ),
        ),
        (
            "mul",
            fd_check(
                vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])],
                |g, v| g.mul(v[0], v[1]).unwrap(),
            ),
        ),
        (
            "sigmoid",
            fd_check(vec![random(&mut rng, &[5])], |g, v| g.sigmoid(v[0])),
        ),
        (
            "tanh",
            fd_check(vec![random(&mut rng, &[5])], |g, v| g.tanh(v[0])),
        ),
        (
            "relu",
            fd_check(vec![t(&[4], &[-0.7, 0.3, 1.2, -0.1])], |g, v| g.relu(v[0])),
        ),
        (
            "softmax_rows",
            fd_check(vec![random(&mut rng, &[3, 5])], |g, v| {
                g.softmax_rows(v[0]).unwrap()
            }),
        ),
        (
            "sum_cols",
            fd_check(vec![random(&mut rng, &[3, 5])], |g, v| {
                g.sum_cols(v[0]).unwrap()
            }),
        ),
        (
            "conv1d_same",
            fd_check(
                vec![
                    random(&mut rng, &[3, 6]),
                    random(&mut rng, &[2, 12]),
                    random(&mut rng, &[2]),
                ],
                |g, v| g.conv1d_same(v[0], v[1], v[2], 4).unwrap(),
            ),
        ),
        (
            "embed",
            fd_check(vec![random(&mut rng, &[4, 3])], |g, v| {
                g.embed(v[0], &[1, 3, 1]).unwrap()
            }),
        ),
        (
            "cross_entropy",
            fd_check(vec![random(&mut rng, &[4])], |g, v| {
                g.cross_entropy(v[0], 2).unwrap()
            }),
        ),
        (
            "column_stack_slice",
            fd_check(vec![random(&mut rng, &[4, 3])], |g, v| {
                let c0 = g.column(v[0], 0).unwrap();
                let c2 = g.column(v[0], 2).unwrap();
                let s = g.slice(c2, 1, 2).unwrap();
                let s0 = g.slice(c0, 0, 2).unwrap();
                g.stack_columns(&[s, s0]).unwrap()
            }),
        ),
        (
            "concat_rows",
            fd_check(
                vec![random(&mut rng, &[2, 3]), random(&mut rng, &[1, 3])],
                |g, v| g.concat_rows(&[v[0], v[1]]).unwrap(),
            ),
        ),
        (
            "mean",
            fd_check(
                vec![random(&mut rng, &[1]), random(&mut rng, &[1])],
                |g, v| g.mean(&[v[0], v[1], v[0]]).unwrap(),
            ),
        ),
    ];
    for (name, worst) in checks {
        assert!(worst < tol, "{name}: relative error {worst}");
    }
}

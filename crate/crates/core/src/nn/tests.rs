use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, sparsity: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalar objective `sum_i c_i * y_i` through `predict`.
fn objective(net: &Network, x: &Tensor, c: &[f64]) -> f64 {
    net.predict(x).unwrap().data().iter().zip(c).map(|(y, c)| y * c).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences on every parameter and every input coordinate.
fn check_grads(mut net: Network, x: Tensor, rng: &mut ChaCha8Rng) {
    const EPS: f64 = 1e-4;
    let c: Vec<f64> = (0..net.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.zero_grad();
    net.forward(&x).unwrap();
    let dx = net.backward(&Tensor::vector(c.clone())).unwrap();
    let analytic = net.export_grads();
    let params = net.export_params();

    for i in 0..params.len() {
        let mut p = params.clone();
        p.0[i] += EPS;
        net.import_params(&p).unwrap();
        let up = objective(&net, &x, &c);
        p.0[i] -= 2.0 * EPS;
        net.import_params(&p).unwrap();
        let down = objective(&net, &x, &c);
        let fd = (up - down) / (2.0 * EPS);
        let e = rel_err(analytic.0[i], fd);
        assert!(e <= 1e-4, "param {i}: analytic {} vs fd {fd} ({})", analytic.0[i], net.describe());
    }
    net.import_params(&params).unwrap();

    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += EPS;
        let up = objective(&net, &xp, &c);
        xp.data_mut()[i] -= 2.0 * EPS;
        let down = objective(&net, &xp, &c);
        let fd = (up - down) / (2.0 * EPS);
        let e = rel_err(dx.data()[i], fd);
        assert!(e <= 1e-4, "input {i}: analytic {} vs fd {fd} ({})", dx.data()[i], net.describe());
    }
}

/// Smallest |pre-activation| of the first layer; finite differences across a
/// ReLU kink are meaningless, so inputs that land near one are redrawn.
fn kink_margin(net: &Network, prefix: NetworkBuilder, x: &Tensor) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut first = prefix.build(&mut rng).unwrap();
    let n = first.param_count();
    first.import_params(&ParamVector(net.export_params().0[..n].to_vec())).unwrap();
    first.predict(x).unwrap().data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn kink_free_input(net: &Network, prefix: NetworkBuilder, shape: Vec<usize>, sparsity: f64, rng: &mut ChaCha8Rng) -> Tensor {
    loop {
        let x = rand_tensor(shape.clone(), rng, sparsity);
        if kink_margin(net, prefix.clone(), &x) > 1e-3 {
            return x;
        }
    }
}

#[test]
fn finite_differences_every_layer_type_20_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = NetworkBuilder::new(vec![5]).dense(4).relu().dense(3).softmax().build(&mut rng).unwrap();
        let x = kink_free_input(&dense, NetworkBuilder::new(vec![5]).dense(4), vec![5], 0.0, &mut rng);
        check_grads(dense, x, &mut rng);

        let conv = NetworkBuilder::new(vec![2, 6, 6])
            .conv2d(3, 3)
            .relu()
            .avg_pool(2)
            .conv2d(1, 1)
            .softmax()
            .build(&mut rng)
            .unwrap();
        let x = kink_free_input(&conv, NetworkBuilder::new(vec![2, 6, 6]).conv2d(3, 3), vec![2, 6, 6], 0.6, &mut rng);
        check_grads(conv, x, &mut rng);

        let mixed = NetworkBuilder::new(vec![1, 4, 4]).conv2d(2, 3).avg_pool(4).dense(2).build(&mut rng).unwrap();
        let x = rand_tensor(vec![1, 4, 4], &mut rng, 0.0);
        check_grads(mixed, x, &mut rng);

        let fused = NetworkBuilder::new(vec![2, 8, 8]).conv_relu_pool(3, 3, 4).conv2d(1, 1).build(&mut rng).unwrap();
        let x = kink_free_input(&fused, NetworkBuilder::new(vec![2, 8, 8]).conv2d(3, 3), vec![2, 8, 8], 0.8, &mut rng);
        check_grads(fused, x, &mut rng);
    }
}

#[test]
fn fused_conv_pool_matches_unfused_stack() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fused = NetworkBuilder::new(vec![2, 12, 12]).conv_relu_pool(4, 3, 3).build(&mut rng).unwrap();
        let mut plain = NetworkBuilder::new(vec![2, 12, 12]).conv2d(4, 3).relu().avg_pool(3).build(&mut rng).unwrap();
        plain.import_params(&fused.export_params()).unwrap();
        let x = rand_tensor(vec![2, 12, 12], &mut rng, 0.9);
        let (a, b) = (fused.forward(&x).unwrap(), plain.forward(&x).unwrap());
        assert_eq!(a.shape(), b.shape());
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
        let g = rand_tensor(a.shape().to_vec(), &mut rng, 0.0);
        let (dxa, dxb) = (fused.backward(&g).unwrap(), plain.backward(&g).unwrap());
        for (u, v) in dxa.data().iter().zip(dxb.data()) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in fused.export_grads().0.iter().zip(&plain.export_grads().0) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn sparse_input_path_matches_dense_exactly() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut dense = NetworkBuilder::new(vec![2, 12, 12]).conv_relu_pool(3, 3, 4).conv2d(1, 1).build(&mut rng).unwrap();
        let mut sparse = dense.clone();
        let x = rand_tensor(vec![2, 12, 12], &mut rng, 0.95);
        let s = SparseTensor::from_dense(&x);
        assert_eq!(s.to_dense(), x);
        let y = dense.forward(&x).unwrap();
        assert_eq!(sparse.predict_sparse(&s).unwrap(), y);
        assert_eq!(sparse.forward_sparse(&s).unwrap(), y);
        let g = rand_tensor(y.shape().to_vec(), &mut rng, 0.0);
        let dx = dense.backward(&g).unwrap();
        assert_eq!(sparse.backward(&g).unwrap(), dx);
        assert_eq!(sparse.export_grads(), dense.export_grads());
        sparse.forward_sparse(&s).unwrap();
        sparse.zero_grad();
        sparse.backward_params(&g).unwrap();
        assert_eq!(sparse.export_grads(), dense.export_grads());
    }
}

#[test]
fn sparse_tensor_rejects_unordered_or_out_of_range_entries() {
    assert!(SparseTensor::new(vec![2, 2], vec![(1, 1.0), (3, 2.0)]).is_ok());
    assert!(SparseTensor::new(vec![2, 2], vec![(3, 1.0), (1, 2.0)]).is_err());
    assert!(SparseTensor::new(vec![2, 2], vec![(4, 1.0)]).is_err());
}

#[test]
fn input_gradient_matches_backward_without_side_effects() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut net = NetworkBuilder::new(vec![6]).dense(5).relu().dense(2).build(&mut rng).unwrap();
    let x = rand_tensor(vec![6], &mut rng, 0.0);
    let g = Tensor::vector(vec![0.7, -1.3]);
    let (y, dx) = net.input_gradient(&x, &g).unwrap();
    assert_eq!(net.grad_norm_sq(), 0.0);
    assert_eq!(y, net.predict(&x).unwrap());
    net.forward(&x).unwrap();
    assert_eq!(net.backward(&g).unwrap(), dx);
}

#[test]
fn identity_dense_passes_input_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![3]).dense(3).build(&mut rng).unwrap();
    net.import_params(&ParamVector(vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0.])).unwrap();
    let x = Tensor::vector(vec![0.5, -2.0, 7.0]);
    assert_eq!(net.predict(&x).unwrap(), x);
}

#[test]
fn softmax_is_a_distribution_even_for_large_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = NetworkBuilder::new(vec![6]).dense(8).softmax().build(&mut rng).unwrap();
    for scale in [1.0, 1e3, 1e6] {
        let x = Tensor::vector((0..6).map(|i| scale * (i as f64 - 2.5)).collect());
        let y = net.predict(&x).unwrap();
        let sum: f64 = y.data().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!(y.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
    let x = Tensor::vector(vec![0.1, -0.3, 0.2, 0.0, 0.5, -0.1]);
    assert!(net.predict(&x).unwrap().data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn avg_pool_of_constant_map_is_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = NetworkBuilder::new(vec![2, 4, 4]).avg_pool(2).build(&mut rng).unwrap();
    let y = net.predict(&Tensor::new(vec![2, 4, 4], vec![3.25; 32]).unwrap()).unwrap();
    assert_eq!(y.shape(), &[2, 2, 2]);
    assert!(y.data().iter().all(|&v| (v - 3.25).abs() < 1e-15));
}

#[test]
fn zero_output_grad_gives_zero_param_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = NetworkBuilder::new(vec![4]).dense(3).relu().dense(2).build(&mut rng).unwrap();
    net.forward(&Tensor::vector(vec![1.0, 2.0, -1.0, 0.5])).unwrap();
    net.backward(&Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(net.grad_norm_sq(), 0.0);
}

#[test]
fn dense_weight_grad_is_outer_product() {
    // 2x2 by hand: y = W x + b, dL/dW[o][i] = g[o] * x[i], dL/db = g.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![2]).dense(2).build(&mut rng).unwrap();
    net.forward(&Tensor::vector(vec![3.0, -2.0])).unwrap();
    net.backward(&Tensor::vector(vec![0.5, 4.0])).unwrap();
    assert_eq!(net.export_grads().0, vec![1.5, -1.0, 12.0, -8.0, 0.5, 4.0]);
}

#[test]
fn backward_without_forward_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![2]).dense(2).build(&mut rng).unwrap();
    assert!(matches!(net.backward(&Tensor::vector(vec![1.0, 1.0])), Err(Error::MissingCache)));
    net.forward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
    net.backward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
    assert!(matches!(net.backward(&Tensor::vector(vec![1.0, 1.0])), Err(Error::MissingCache)));
}

#[test]
fn forward_rejects_wrong_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![2, 4, 4]).conv2d(1, 3).build(&mut rng).unwrap();
    assert!(matches!(net.forward(&Tensor::zeros(vec![2, 4, 5])), Err(Error::ShapeMismatch { .. })));
    assert!(NetworkBuilder::new(vec![1, 5, 5]).avg_pool(2).build(&mut rng).is_err());
}

#[test]
fn sgd_zero_rate_leaves_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![3]).dense(2).build(&mut rng).unwrap();
    let before = net.export_params();
    net.forward(&Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    net.backward(&Tensor::vector(vec![1.0, -1.0])).unwrap();
    net.sgd_step(&SgdConfig { learning_rate: 0.0 });
    assert_eq!(net.export_params(), before);
    assert_eq!(net.grad_norm_sq(), 0.0);
    assert!(SgdConfig::new(0.0).is_err());
}

#[test]
fn one_sgd_step_on_w_squared() {
    // f(w) = w^2 via a 1->1 dense unit fed x = 1; gradient 2w.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![1]).dense(1).build(&mut rng).unwrap();
    net.import_params(&ParamVector(vec![1.0, 0.0])).unwrap();
    let y = net.forward(&Tensor::vector(vec![1.0])).unwrap().data()[0];
    net.backward(&Tensor::vector(vec![2.0 * y])).unwrap();
    net.sgd_step(&SgdConfig::new(0.1).unwrap());
    assert!((net.export_params().0[0] - 0.8).abs() < 1e-15);
}

#[test]
fn sgd_converges_on_convex_quadratic() {
    // f(w) = (w - 3)^2 with lr 0.1: error contracts by exactly 0.8 per step.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![1]).dense(1).build(&mut rng).unwrap();
    net.import_params(&ParamVector(vec![0.0, 0.0])).unwrap();
    let cfg = SgdConfig::new(0.05).unwrap();
    let steps = 200;
    for _ in 0..steps {
        let y = net.forward(&Tensor::vector(vec![1.0])).unwrap().data()[0];
        net.backward(&Tensor::vector(vec![2.0 * (y - 3.0)])).unwrap();
        net.sgd_step(&cfg);
    }
    let p = net.export_params().0;
    // w + b moves as e_{n+1} = (1 - 4 lr) e_n with e_0 = -3.
    let predicted = -3.0 * (1.0f64 - 4.0 * 0.05).powi(steps);
    assert!(((p[0] + p[1] - 3.0) - predicted).abs() < 1e-12);
    assert!((p[0] + p[1] - 3.0).abs() < 1e-6);
}

#[test]
fn export_import_roundtrip_and_param_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut a = NetworkBuilder::new(vec![2, 6, 6])
        .conv2d(4, 3)
        .relu()
        .avg_pool(3)
        .conv2d(1, 1)
        .build(&mut rng)
        .unwrap();
    // conv 2->4 k3: 4*2*9 + 4 = 76; conv 4->1 k1: 4 + 1 = 5
    assert_eq!(a.param_count(), 81);
    let v = a.export_params();
    a.import_params(&v).unwrap();
    assert_eq!(a.export_params(), v);

    let mut b = NetworkBuilder::new(vec![2, 6, 6])
        .conv2d(4, 3)
        .relu()
        .avg_pool(3)
        .conv2d(1, 1)
        .build(&mut rng)
        .unwrap();
    b.import_params(&v).unwrap();
    let x = rand_tensor(vec![2, 6, 6], &mut rng, 0.3);
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    assert!(matches!(b.import_params(&ParamVector(vec![0.0; 3])), Err(Error::LengthMismatch { .. })));

    let mlp = NetworkBuilder::new(vec![33]).dense(64).relu().dense(5).softmax().build(&mut rng).unwrap();
    assert_eq!(mlp.param_count(), 33 * 64 + 64 + 64 * 5 + 5);
}

#[test]
fn same_seed_same_init() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        NetworkBuilder::new(vec![4]).dense(8).relu().dense(2).build(&mut rng).unwrap().export_params()
    };
    assert_eq!(build(), build());
}

#[test]
fn init_within_fan_in_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = NetworkBuilder::new(vec![16]).dense(4).build(&mut rng).unwrap();
    assert!(net.export_params().0.iter().all(|v| v.abs() <= 0.25));
}

#[test]
fn grad_norm_sq_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new(vec![1]).dense(1).build(&mut rng).unwrap();
    assert_eq!(net.grad_norm_sq(), 0.0);
    // x = 0.75, g = 4: grads (3, 4) -> 25
    net.forward(&Tensor::vector(vec![0.75])).unwrap();
    net.backward(&Tensor::vector(vec![4.0])).unwrap();
    assert!((net.grad_norm_sq() - 25.0).abs() < 1e-12);

    let mut big = NetworkBuilder::new(vec![6]).dense(5).relu().dense(3).build(&mut rng).unwrap();
    big.forward(&rand_tensor(vec![6], &mut rng, 0.0)).unwrap();
    big.backward(&Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
    let g = big.export_grads();
    assert!((big.grad_norm_sq() - g.dot(&g)).abs() < 1e-12);
}

#[test]
fn checkpoint_file_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = NetworkBuilder::new(vec![3]).dense(4).relu().dense(2).build(&mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actor.params");
    net.export_params().write_file(&path, &net.arch_hash()).unwrap();
    let (hash, v) = ParamVector::read_file(&path).unwrap();
    assert_eq!(hash, net.arch_hash());
    assert_eq!(v, net.export_params());
}

#[test]
fn mse_gradient() {
    let (l, g) = mse(&[1.0, 3.0], &[0.0, 1.0]);
    assert_eq!(l, 2.5);
    assert_eq!(g, vec![1.0, 2.0]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn import_export_is_lossless(values in proptest::collection::vec(-1e6f64..1e6, 21)) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut net = NetworkBuilder::new(vec![3]).dense(4).relu().dense(1).build(&mut rng).unwrap();
            let v = ParamVector(values);
            net.import_params(&v).unwrap();
            prop_assert_eq!(net.export_params(), v);
        }
    }
}

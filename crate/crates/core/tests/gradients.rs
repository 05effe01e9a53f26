use baldwin::net::{
    backward, forward_batch, infer, meta_grad, mse_on, sgd_step, Activation, Head, HeadActivation,
    Mask, NetworkArch, ParamVector, RegressionSplit, Unroll,
};
use baldwin::rng::rng_from;
use baldwin::sine::{regression_mse, train_step};
use baldwin::tensor::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn linear_arch(widths: Vec<usize>) -> NetworkArch {
    NetworkArch::new(
        widths,
        Activation::Identity,
        vec![Head {
            name: "out".into(),
            output_dim: 1,
            activation: HeadActivation::Identity,
        }],
    )
    .unwrap()
}

fn data(seed: u64, n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from(&[seed, 5]);
    let xs = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (xs, ys)
}

fn loss(arch: &NetworkArch, p: &ParamVector, xs: &[f64], ys: &[f64]) -> f64 {
    let dim = arch.input_dim();
    let x = Matrix::new(ys.len(), dim, xs.to_vec()).unwrap();
    let mut rec = forward_batch(arch, p, &x).unwrap();
    let out = rec.heads[0].out;
    let l = mse_on(&mut rec.tape, out, ys).unwrap();
    rec.tape.value(l).get(0, 0)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn backward_matches_central_differences(
        seed in any::<u64>(),
        input in 1usize..4,
        hidden in proptest::collection::vec(1usize..8, 0..3),
        n in 1usize..12,
    ) {
        let mut widths = vec![input];
        widths.extend(hidden);
        let arch = linear_arch(widths);
        let p = ParamVector::gaussian(&arch, 0.7, &mut rng_from(&[seed]));
        let (xs, ys) = data(seed, n, input);
        let x = Matrix::new(n, input, xs.clone()).unwrap();
        let mut rec = forward_batch(&arch, &p, &x).unwrap();
        let out = rec.heads[0].out;
        let l = mse_on(&mut rec.tape, out, &ys).unwrap();
        let g = backward(&mut rec, l).unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut up = p.values.clone();
            up[i] += h;
            let mut down = p.values.clone();
            down[i] -= h;
            let fd = (loss(&arch, &p.with_values(up), &xs, &ys) - loss(&arch, &p.with_values(down), &xs, &ys)) / (2.0 * h);
            prop_assert!(relative(g.values[i], fd) < 1e-4, "coordinate {i}: {} vs {fd}", g.values[i]);
        }
    }

    #[test]
    fn meta_grad_matches_adapted_loss_differences(seed in any::<u64>(), alpha in 0.01f64..0.2) {
        let arch = linear_arch(vec![1, 3, 2]);
        let p = ParamVector::gaussian(&arch, 0.5, &mut rng_from(&[seed]));
        let (tx, ty) = data(seed, 6, 1);
        let (vx, vy) = data(seed ^ 1, 6, 1);
        let split = RegressionSplit { train_x: tx.clone(), train_y: ty.clone(), val_x: vx.clone(), val_y: vy.clone() };
        let g = meta_grad(&arch, &p, &[split], Unroll::new(alpha, 1)).unwrap();
        let adapted = |v: Vec<f64>| {
            let q = train_step(&arch, &p.with_values(v), &tx, &ty, alpha, None).unwrap();
            regression_mse(&arch, &q, &vx, &vy).unwrap()
        };
        let h = 1e-5;
        for i in 0..p.len() {
            let mut up = p.values.clone();
            up[i] += h;
            let mut down = p.values.clone();
            down[i] -= h;
            let fd = (adapted(up) - adapted(down)) / (2.0 * h);
            prop_assert!(relative(g.values[i], fd) < 1e-3, "coordinate {i}: {} vs {fd}", g.values[i]);
        }
    }

    #[test]
    fn masked_coordinates_never_move(seed in any::<u64>(), lr in 1e-4f64..1.0) {
        let arch = NetworkArch::sine_regressor();
        let mut rng = rng_from(&[seed, 1]);
        let p = ParamVector::he_normal(&arch, &mut rng);
        let mask = Mask((0..p.len()).map(|_| rng.random_bool(0.3)).collect());
        let (xs, ys) = data(seed, 10, 1);
        let next = train_step(&arch, &p, &xs, &ys, lr, Some(&mask)).unwrap();
        for (i, &learn) in mask.0.iter().enumerate() {
            if !learn {
                prop_assert_eq!(next.values[i].to_bits(), p.values[i].to_bits());
            }
        }
        let g = p.with_values(vec![1.0; p.len()]);
        let stepped = sgd_step(&p, &g, lr, Some(&mask)).unwrap();
        for (i, &learn) in mask.0.iter().enumerate() {
            prop_assert_eq!(stepped.values[i] == p.values[i], !learn);
        }
    }

    #[test]
    fn policy_heads_are_distributions(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let arch = NetworkArch::actor_critic(3, 12);
        let mut rng = rng_from(&[seed, 2]);
        let p = ParamVector::he_normal(&arch, &mut rng);
        let obs: Vec<f64> = (0..3).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let heads = infer(&arch, &p, &obs);
        let pi = &heads[arch.head_index("policy").unwrap()];
        prop_assert!(pi.iter().all(|&x| x >= 0.0));
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn forward_is_replayable() {
    let arch = NetworkArch::sine_regressor();
    let p = ParamVector::he_normal(&arch, &mut rng_from(&[3]));
    let x = Matrix::column(&[-1.0, 0.5, 4.0]);
    let a = forward_batch(&arch, &p, &x).unwrap();
    let b = forward_batch(&arch, &p, &x).unwrap();
    assert_eq!(a.head_values(), b.head_values());
    assert_eq!(a.tape, b.tape);
    assert_eq!(a.tape.replay(), a.tape);
}

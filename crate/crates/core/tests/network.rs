mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pat_core::linop::assemble_dense;
use pat_core::nn::{landweber, mae};
use pat_core::rng::SeededRng;
use pat_core::{
    bernoulli_matrix, full_circle, mse, nullspace_recon, residual_recon, subsampling_matrix, train, unet_forward,
    vessel_phantom, CSData, CSOperator, Image, ImageGrid, NetArch, NetParams, PatError, TrainConfig,
};

fn arch() -> NetArch {
    NetArch {
        levels: 2,
        base_channels: 4,
        ..NetArch::default()
    }
}

/// Randomly initialized network with a nonzero final layer, so that the
/// residual branch actually changes its input.
fn random_net(seed: u64) -> NetParams {
    let mut p = NetParams::init(arch(), seed).unwrap();
    let mut rng = SeededRng::new(seed ^ 0xabc);
    for name in ["final.weight", "final.bias"] {
        p.get_mut(name).unwrap().mapv_inplace(|_| 0.05 * rng.normal());
    }
    p
}

fn step_for(a: &CSOperator) -> f64 {
    0.9 / (1.02 * a.norm_estimate().unwrap()).powi(2)
}

fn data_residual(a: &CSOperator, f: &Image, g: &CSData) -> f64 {
    (&a.forward(f).unwrap().values - &g.values)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[test]
fn zero_network_reduces_to_backprojection() {
    let a = CSOperator::new(subsampling_matrix(4, 16).unwrap(), &tiny_wave(16, 16)).unwrap();
    let f = smooth_phantom(*a.grid());
    let g = a.forward(&f).unwrap();
    let zero = NetParams::zeros(arch()).unwrap();
    assert_eq!(residual_recon(&g, &a, &zero).unwrap(), a.backproject(&g).unwrap());
    let theta = random_net(1);
    let r = residual_recon(&g, &a, &theta).unwrap();
    assert_eq!(nullspace_recon(&g, &a, &theta, 0, step_for(&a)).unwrap(), r);
}

#[test]
fn zero_data_and_zero_bias_give_zero() {
    let a = CSOperator::new(bernoulli_matrix(4, 16, 2).unwrap(), &tiny_wave(16, 16)).unwrap();
    let mut theta = random_net(3);
    for (name, t) in theta.tensors.iter_mut() {
        if name.ends_with(".bias") {
            t.fill(0.0);
        }
    }
    let g = CSData::zeros(a.measurements(), a.time().q);
    assert_eq!(residual_recon(&g, &a, &theta).unwrap().norm(), 0.0);
    assert_eq!(nullspace_recon(&g, &a, &theta, 5, step_for(&a)).unwrap().norm(), 0.0);
}

#[test]
fn invalid_step_is_rejected_with_norm() {
    let a = CSOperator::new(subsampling_matrix(4, 16).unwrap(), &tiny_wave(16, 16)).unwrap();
    let g = a.forward(&smooth_phantom(*a.grid())).unwrap();
    let theta = random_net(0);
    let too_big = 1.5 / a.norm_estimate().unwrap().powi(2);
    for s in [0.0, -1.0, too_big] {
        match nullspace_recon(&g, &a, &theta, 3, s) {
            Err(PatError::StepSize { step, norm }) => {
                assert_eq!(step, s);
                assert!(norm > 0.0);
            }
            other => panic!("expected step-size error, got {other:?}"),
        }
    }
}

#[test]
fn landweber_is_monotone_on_exact_data() {
    let w = tiny_wave(16, 16);
    for s in [subsampling_matrix(4, 16).unwrap(), bernoulli_matrix(4, 16, 5).unwrap()] {
        let a = CSOperator::new(s, &w).unwrap();
        let step = step_for(&a);
        for seed in 0..4 {
            let truth = vessel_phantom(a.grid(), seed);
            let g = a.forward(&truth).unwrap();
            let theta = random_net(seed);
            let res = residual_recon(&g, &a, &theta).unwrap();
            let flat: ndarray::Array1<f64> = g.values.iter().copied().collect();
            let mut f = res.to_flat();
            let mut prev_err = (&f - &truth.to_flat()).iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut prev_res = data_residual(&a, &res, &g);
            for _ in 0..30 {
                f = landweber(&a, &flat, f, step, 1).unwrap();
                let err = (&f - &truth.to_flat()).iter().map(|v| v * v).sum::<f64>().sqrt();
                let img = Image::from_flat(*a.grid(), f.clone()).unwrap();
                let dres = data_residual(&a, &img, &g);
                assert!(err <= prev_err * (1.0 + 1e-12), "{prev_err} -> {err}");
                assert!(dres <= prev_res * (1.0 + 1e-12), "{prev_res} -> {dres}");
                prev_err = err;
                prev_res = dres;
            }
            let null = nullspace_recon(&g, &a, &theta, 30, step).unwrap();
            assert!(rel_err(&truth, &null) <= rel_err(&truth, &res));
        }
    }
}

#[test]
fn landweber_limit_is_affine_projection() {
    // 8x8 image, 4 sensors, one Bernoulli row: rank 10 with a clean gap to
    // the numerical null space, so Landweber converges in ~1e5 steps.
    let w = tiny_wave(8, 4);
    let a = CSOperator::new(bernoulli_matrix(1, 4, 4).unwrap(), &w).unwrap();
    let dense = assemble_dense(&a).unwrap();
    let am = DMatrix::from_fn(dense.nrows(), dense.ncols(), |i, j| dense[[i, j]]);
    let svd = am.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let tol = 1e-9 * sigma.max();
    let smin = sigma.iter().copied().filter(|&v| v > tol).fold(f64::INFINITY, f64::min);

    let mut rng = SeededRng::new(8);
    let truth = Image::from_fn(*a.grid(), |_, _| rng.uniform());
    let g = a.forward(&truth).unwrap();
    let g_vec = DVector::from_iterator(dense.nrows(), g.values.iter().copied());

    let theta = random_net(9);
    let f0 = residual_recon(&g, &a, &theta).unwrap();
    let f0v = DVector::from_iterator(64, f0.to_flat().iter().copied());
    let pinv = am.clone().pseudo_inverse(tol).unwrap();
    let projected = &f0v - pinv * (&am * &f0v - &g_vec);

    let s = step_for(&a);
    let k = ((1e-10f64).ln() / (1.0 - s * smin * smin).ln()).ceil() as usize;
    assert!(k < 500_000, "k = {k}");
    let lim = nullspace_recon(&g, &a, &theta, k, s).unwrap();
    let diff = (DVector::from_iterator(64, lim.to_flat().iter().copied()) - &projected).norm();
    assert!(diff <= 1e-6 * projected.norm(), "k = {k}, diff {diff}");
    // The limit is data consistent.
    assert!(data_residual(&a, &lim, &g) <= 1e-8 * g.norm());
}

fn toy_geometry() -> CSOperator {
    let grid = ImageGrid::centered(32, 1.0).unwrap();
    let w = wave_for(grid, full_circle(64, 24.0).unwrap(), 1.0);
    CSOperator::new(subsampling_matrix(16, 64).unwrap(), &w).unwrap()
}

fn pairs(a: &CSOperator, seeds: std::ops::Range<u64>) -> Vec<(Image, Image)> {
    seeds
        .map(|seed| {
            let f = vessel_phantom(a.grid(), seed);
            let b = a.backproject(&a.forward(&f).unwrap()).unwrap();
            (b, f)
        })
        .collect()
}

#[test]
fn toy_training_improves_on_backprojection() {
    let a = toy_geometry();
    let data = pairs(&a, 0..200);
    let cfg = TrainConfig {
        epochs: 20,
        lr_start: 0.02,
        lr_end: 0.01,
        seed: 3,
        ..TrainConfig::default()
    };
    let arch = NetArch {
        levels: 3,
        base_channels: 8,
        ..NetArch::default()
    };
    let result = train(&data, arch, &cfg).unwrap();
    assert_eq!(result.loss_trace.len(), 21);
    // Training MAE of the final parameters over the whole set.
    let first = result.loss_trace[0];
    let last = data
        .iter()
        .map(|(b, f)| mae(&result.params, b, f).unwrap())
        .sum::<f64>()
        / data.len() as f64;
    assert!(last <= 0.5 * first, "MAE {first} -> {last}");

    let held_out = pairs(&a, 10_000..10_020);
    let better = held_out
        .iter()
        .filter(|(b, f)| {
            let out = b.add_scaled(1.0, &unet_forward(b, &result.params).unwrap());
            mse(f, &out).unwrap() < mse(f, b).unwrap()
        })
        .count();
    assert!(better >= 18, "network beats backprojection on {better}/20");

    // Same seed and config: bitwise identical parameters.
    let again = train(&data[..10], arch, &TrainConfig { epochs: 2, ..cfg }).unwrap();
    let twice = train(&data[..10], arch, &TrainConfig { epochs: 2, ..cfg }).unwrap();
    assert_eq!(again.params.tensors, twice.params.tensors);
}

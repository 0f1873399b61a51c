use ndarray::{Array3, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use super::net::{backward, forward_tensor, Gradients};
use super::{NetArch, NetParams};
use crate::error::{shape_err, PatError, Result};
use crate::image::Image;
use crate::rng::SeededRng;

/// Momentum SGD settings. The learning rate decays linearly from
/// `lr_start` in the first epoch to `lr_end` in the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 1,
            momentum: 0.9,
            lr_start: 0.005,
            lr_end: 0.0025,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(PatError::InvalidArgument("batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(PatError::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr_end >= 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(PatError::InvalidArgument(format!(
                "need lr_start >= lr_end >= 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start + (self.lr_end - self.lr_start) * t
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: NetParams,
    /// Mean absolute error over the dataset: entry 0 before training, entry
    /// `e + 1` accumulated while training epoch `e`.
    pub loss_trace: Vec<f64>,
}

/// Mean absolute error per pixel of the residual network output
/// `x + U(x)` against `target`.
pub fn mae(p: &NetParams, input: &Image, target: &Image) -> Result<f64> {
    input.ensure_same_shape(target)?;
    let (out, _) = forward_tensor(p, tensor(input), false);
    Ok(abs_mean(&out, input, target))
}

fn tensor(x: &Image) -> Array3<f64> {
    x.values.clone().insert_axis(Axis(0))
}

fn abs_mean(out: &Array3<f64>, input: &Image, target: &Image) -> f64 {
    let n = target.values.len() as f64;
    let mut acc = 0.0;
    for ((o, x), t) in out.iter().zip(input.values.iter()).zip(target.values.iter()) {
        acc += (o + x - t).abs();
    }
    acc / n
}

/// Loss and parameter gradient for one sample. The subgradient at exact
/// zeros of the residual is zero.
pub(crate) fn loss_and_grad(p: &NetParams, input: &Image, target: &Image) -> (f64, Gradients) {
    let (out, tape) = forward_tensor(p, tensor(input), true);
    let n = target.values.len() as f64;
    let loss = abs_mean(&out, input, target);
    let mut dout = out;
    ndarray::Zip::from(dout.index_axis_mut(Axis(0), 0))
        .and(&input.values)
        .and(&target.values)
        .for_each(|o, &x, &t| {
            let r = *o + x - t;
            *o = if r > 0.0 {
                1.0 / n
            } else if r < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        });
    (loss, backward(p, tape.expect("recorded"), dout))
}

fn check_dataset(dataset: &[(Image, Image)], arch: &NetArch) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| PatError::InvalidArgument("training set is empty".into()))?;
    let dim = first.0.values.dim();
    arch.check_input(dim.0, dim.1)?;
    for (x, y) in dataset {
        if x.values.dim() != dim || y.values.dim() != dim {
            return Err(shape_err(format!("{dim:?}"), format!("{:?}", x.values.dim())));
        }
    }
    Ok(())
}

/// Trains freshly initialized parameters (seeded from `cfg.seed`).
pub fn train(dataset: &[(Image, Image)], arch: NetArch, cfg: &TrainConfig) -> Result<TrainResult> {
    train_from(NetParams::init(arch, cfg.seed)?, dataset, cfg)
}

/// Mean absolute error training of the residual network from given
/// parameters with momentum SGD `v <- m v - lr g`, `theta <- theta + v`.
pub fn train_from(mut params: NetParams, dataset: &[(Image, Image)], cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    check_dataset(dataset, &params.arch)?;
    let mut losses = vec![0.0; dataset.len()];
    for (i, (x, y)) in dataset.iter().enumerate() {
        losses[i] = mae(&params, x, y)?;
    }
    let mut trace = vec![losses.iter().sum::<f64>() / dataset.len() as f64];
    if !trace[0].is_finite() {
        return Err(PatError::TrainingDiverged { epoch: 0 });
    }
    let mut velocity: Gradients = params.tensors.iter().map(|(_, t)| ArrayD::zeros(t.raw_dim())).collect();
    let mut rng = SeededRng::new(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch) {
            let mut acc: Option<Gradients> = None;
            for &i in batch {
                let (loss, grad) = loss_and_grad(&params, &dataset[i].0, &dataset[i].1);
                if !loss.is_finite() {
                    return Err(PatError::TrainingDiverged { epoch });
                }
                losses[i] = loss;
                match acc.as_mut() {
                    None => acc = Some(grad),
                    Some(a) => a.iter_mut().zip(grad).for_each(|(a, g)| *a += &g),
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((v, g), (_, t)) in velocity
                .iter_mut()
                .zip(acc.expect("nonempty batch"))
                .zip(params.tensors.iter_mut())
            {
                v.zip_mut_with(&g, |v, &g| *v = cfg.momentum * *v - lr * scale * g);
                *t += &*v;
            }
        }
        let mean = losses.iter().sum::<f64>() / dataset.len() as f64;
        if !mean.is_finite() || params.tensors.iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(PatError::TrainingDiverged { epoch });
        }
        log::debug!("epoch {epoch}: lr {lr:.3e} mae {mean:.4e}");
        trace.push(mean);
    }
    Ok(TrainResult {
        params,
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    /// Largest change of a finite-difference estimate when the step doubles.
    pub max_step_change: f64,
    pub passed: bool,
}

const FD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

/// Compares backpropagated gradients of the MAE loss against central
/// finite differences on 50 random parameters of a random network.
pub fn grad_check(arch: NetArch, seed: u64) -> Result<GradCheckReport> {
    arch.validate()?;
    let side = 4usize << arch.levels;
    let grid = crate::geometry::ImageGrid::centered(side, 1.0)?;
    let mut rng = SeededRng::new(seed);
    let mut p = NetParams::init(arch, seed)?;
    for (name, t) in p.tensors.iter_mut() {
        if name.ends_with("bias") || name.starts_with("final") {
            t.mapv_inplace(|_| 0.1 * rng.normal());
        }
    }
    let input = Image::from_fn(grid, |_, _| rng.normal());
    let (out, _) = forward_tensor(&p, tensor(&input), false);
    // Keep every residual at least 1e-2 away from the kink.
    let mut offsets = out.index_axis(Axis(0), 0).to_owned();
    offsets.mapv_inplace(|_| {
        let m = rng.uniform_in(0.01, 0.5);
        if rng.sign() > 0.0 {
            m
        } else {
            -m
        }
    });
    let target_values = &out.index_axis(Axis(0), 0) + &input.values + &offsets;
    let target = Image::new(grid, target_values)?;
    let (_, grads) = loss_and_grad(&p, &input, &target);
    let flat_grad: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();

    // Central difference of the loss evaluated as the difference of the
    // per-pixel absolute residuals, which avoids cancellation against the
    // loss level. Equal to the plain difference while no residual changes
    // sign.
    let n = target.values.len() as f64;
    let fd = |p: &mut NetParams, idx: usize, step: f64| -> f64 {
        let orig = p.flat_get(idx);
        p.flat_set(idx, orig + step);
        let (up, _) = forward_tensor(p, tensor(&input), false);
        p.flat_set(idx, orig - step);
        let (down, _) = forward_tensor(p, tensor(&input), false);
        p.flat_set(idx, orig);
        let mut acc = 0.0;
        for ((u, d), o) in up.iter().zip(down.iter()).zip(offsets.iter()) {
            debug_assert!(o.abs() >= 0.01);
            acc += -o.signum() * (u - d);
        }
        acc / (n * 2.0 * step)
    };
    let probes = 50.min(p.len());
    let mut max_rel: f64 = 0.0;
    let mut max_change: f64 = 0.0;
    for _ in 0..probes {
        let idx = rng.below(p.len());
        let a = flat_grad[idx];
        let f1 = fd(&mut p, idx, FD_STEP);
        let f2 = fd(&mut p, idx, 2.0 * FD_STEP);
        max_rel = max_rel.max((a - f1).abs() / a.abs().max(f1.abs()).max(1e-7));
        max_change = max_change.max((f1 - f2).abs());
    }
    Ok(GradCheckReport {
        probes,
        max_rel_error: max_rel,
        max_step_change: max_change,
        passed: max_rel <= GRAD_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImageGrid;

    fn tiny_arch() -> NetArch {
        NetArch {
            levels: 1,
            base_channels: 2,
            kernel: 3,
            convs_per_block: 1,
            negative_slope: 0.1,
        }
    }

    fn sample(seed: u64, n: usize) -> (Image, Image) {
        let grid = ImageGrid::centered(n, 1.0).unwrap();
        let mut rng = SeededRng::new(seed);
        let x = Image::from_fn(grid, |_, _| rng.uniform());
        let y = x.map(|v| 0.5 * v + 0.1);
        (x, y)
    }

    #[test]
    fn gradient_check_passes() {
        for arch in [tiny_arch(), NetArch::default()] {
            let r = grad_check(arch, 11).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.max_step_change < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn zero_net_bias_gradient_is_sign_mean() {
        let arch = tiny_arch();
        let p = NetParams::zeros(arch).unwrap();
        let (x, y) = sample(2, 8);
        let (_, grads) = loss_and_grad(&p, &x, &y);
        let expected = x
            .values
            .iter()
            .zip(y.values.iter())
            .map(|(a, b)| (a - b).signum())
            .sum::<f64>()
            / 64.0;
        let last = grads.len() - 1;
        assert_eq!(grads[last][[0]], expected);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let arch = tiny_arch();
        let data: Vec<_> = (0..3).map(|s| sample(s, 8)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 1,
            momentum: 0.9,
            lr_start: 0.0,
            lr_end: 0.0,
            seed: 1,
        };
        let start = NetParams::init(arch, 1).unwrap();
        let r = train_from(start.clone(), &data, &cfg).unwrap();
        assert_eq!(r.params, start);
        assert!(r.loss_trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn overfits_single_sample() {
        let arch = NetArch {
            base_channels: 4,
            ..tiny_arch()
        };
        let data = vec![sample(7, 8)];
        for seed in 0..3 {
            let cfg = TrainConfig {
                epochs: 500,
                batch: 1,
                momentum: 0.9,
                lr_start: 0.05,
                lr_end: 0.0005,
                seed,
            };
            let r = train(&data, arch, &cfg).unwrap();
            let first = r.loss_trace[0];
            let last = mae(&r.params, &data[0].0, &data[0].1).unwrap();
            assert!(last < 0.1 * first, "seed {seed}: {first} -> {last}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..4).map(|s| sample(s, 8)).collect();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, tiny_arch(), &cfg).unwrap();
        let b = train(&data, tiny_arch(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr_end: 0.01,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        let c = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        assert_eq!(c.learning_rate(0), 0.005);
        assert!((c.learning_rate(199) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train(&[], tiny_arch(), &TrainConfig::default()).is_err());
    }
}

//! Convolutional post-processor and learned reconstructions.
//!
//! The network is a small Unet-like map on single-channel images: blocks of
//! `k x k` convolutions with leaky-linear activations, 2x average pooling on
//! the way down, nearest upsampling followed by a convolution on the way up,
//! skip concatenation, and a final 1x1 convolution to one channel.

mod layers;
mod net;
mod recon;
mod train;

pub use net::{unet_forward, Gradients};
pub use recon::{landweber, nullspace_recon, residual_recon};
pub use train::{grad_check, mae, train, train_from, GradCheckReport, TrainConfig, TrainResult};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, PatError, Result};
use crate::rng::SeededRng;

fn default_slope() -> f64 {
    0.1
}

fn default_convs() -> usize {
    2
}

fn default_kernel() -> usize {
    3
}

/// Architecture descriptor. Channel count at level `l` is
/// `base_channels * 2^l`; the input side must be divisible by `2^levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub levels: usize,
    pub base_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_convs")]
    pub convs_per_block: usize,
    #[serde(default = "default_slope")]
    pub negative_slope: f64,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            levels: 2,
            base_channels: 8,
            kernel: 3,
            convs_per_block: 2,
            negative_slope: 0.1,
        }
    }
}

/// One convolution of the network in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl NetArch {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.convs_per_block == 0 {
            return Err(PatError::InvalidArgument(
                "base_channels and convs_per_block must be positive".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(PatError::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if !self.negative_slope.is_finite() {
            return Err(PatError::InvalidArgument("negative_slope must be finite".into()));
        }
        if self.levels > 8 {
            return Err(PatError::InvalidArgument(format!("too many levels: {}", self.levels)));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Checks that an `ny x nx` input fits the pooling depth.
    pub fn check_input(&self, ny: usize, nx: usize) -> Result<()> {
        let d = 1usize << self.levels;
        if ny == 0 || nx == 0 || !ny.is_multiple_of(d) || !nx.is_multiple_of(d) {
            return Err(shape_err(format!("image sides divisible by {d}"), format!("{ny}x{nx}")));
        }
        Ok(())
    }

    pub(crate) fn convs(&self) -> Vec<ConvSpec> {
        let k = self.kernel;
        let cpb = self.convs_per_block;
        let mut out = Vec::new();
        let mut push = |name: String, cin: usize, cout: usize, k: usize| out.push(ConvSpec { name, cin, cout, k });
        let mut cin = 1;
        for l in 0..self.levels {
            for j in 0..cpb {
                push(
                    format!("enc{l}.conv{j}"),
                    if j == 0 { cin } else { self.channels(l) },
                    self.channels(l),
                    k,
                );
            }
            cin = self.channels(l);
        }
        let lm = self.levels;
        for j in 0..cpb {
            push(
                format!("mid.conv{j}"),
                if j == 0 { cin } else { self.channels(lm) },
                self.channels(lm),
                k,
            );
        }
        for l in (0..self.levels).rev() {
            push(format!("up{l}"), self.channels(l + 1), self.channels(l), k);
            for j in 0..cpb {
                let cin = if j == 0 { 2 * self.channels(l) } else { self.channels(l) };
                push(format!("dec{l}.conv{j}"), cin, self.channels(l), k);
            }
        }
        push("final".to_string(), self.channels(0), 1, 1);
        out
    }
}

/// Named tensors of the network in a fixed order: for each convolution a
/// `name.weight` of shape `[cout, cin, k, k]` followed by `name.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub arch: NetArch,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl NetParams {
    pub fn zeros(arch: NetArch) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .convs()
            .into_iter()
            .flat_map(|c| {
                [
                    (
                        format!("{}.weight", c.name),
                        ArrayD::zeros(IxDyn(&[c.cout, c.cin, c.k, c.k])),
                    ),
                    (format!("{}.bias", c.name), ArrayD::zeros(IxDyn(&[c.cout]))),
                ]
            })
            .collect();
        Ok(Self { arch, tensors })
    }

    /// Uniform fan-in scaled weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases, and a zero final layer so the residual network starts
    /// as the identity.
    pub fn init(arch: NetArch, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = SeededRng::new(seed);
        let specs = arch.convs();
        let last = specs.len() - 1;
        for (i, c) in specs.iter().enumerate() {
            if i == last {
                continue;
            }
            let bound = (6.0 / (c.cin * c.k * c.k) as f64).sqrt();
            p.tensors[2 * i].1.mapv_inplace(|_| rng.uniform_in(-bound, bound));
        }
        Ok(p)
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the architecture.
    pub fn from_tensors(arch: NetArch, tensors: Vec<(String, ArrayD<f64>)>) -> Result<Self> {
        let template = Self::zeros(arch)?;
        if tensors.len() != template.tensors.len() {
            return Err(PatError::Format(format!(
                "expected {} tensors, found {}",
                template.tensors.len(),
                tensors.len()
            )));
        }
        for ((name, t), (want, w)) in tensors.iter().zip(&template.tensors) {
            if name != want || t.shape() != w.shape() {
                return Err(PatError::Format(format!(
                    "tensor {name} {:?} does not match {want} {:?}",
                    t.shape(),
                    w.shape()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(PatError::Format(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rounds every parameter to single precision, the storage format.
    pub fn round_to_f32(&mut self) {
        for (_, t) in &mut self.tensors {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub(crate) fn flat_get(&self, idx: usize) -> f64 {
        let (t, off) = self.locate(idx);
        self.tensors[t].1.as_slice().expect("standard layout")[off]
    }

    pub(crate) fn flat_set(&mut self, idx: usize, v: f64) {
        let (t, off) = self.locate(idx);
        self.tensors[t].1.as_slice_mut().expect("standard layout")[off] = v;
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (i, (_, t)) in self.tensors.iter().enumerate() {
            if idx < t.len() {
                return (i, idx);
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }
}

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView2, Ix1};

use super::layers::*;
use super::{ConvSpec, NetParams};
use crate::error::Result;
use crate::image::Image;

/// Parameter gradients, aligned with [`NetParams::tensors`].
pub type Gradients = Vec<ArrayD<f64>>;

struct ConvCache {
    cols: Array2<f64>,
    pre: Option<Array3<f64>>,
}

pub(crate) struct Tape {
    convs: Vec<ConvCache>,
    skip_channels: Vec<usize>,
}

fn weight_view<'a>(p: &'a NetParams, i: usize, spec: &ConvSpec) -> ArrayView2<'a, f64> {
    p.tensors[2 * i]
        .1
        .view()
        .into_shape_with_order((spec.cout, spec.cin * spec.k * spec.k))
        .expect("weight layout")
}

fn bias(p: &NetParams, i: usize) -> Array1<f64> {
    p.tensors[2 * i + 1]
        .1
        .clone()
        .into_dimensionality::<Ix1>()
        .expect("bias is 1-d")
}

struct Runner<'a> {
    p: &'a NetParams,
    specs: Vec<ConvSpec>,
    next: usize,
    tape: Option<Tape>,
}

impl Runner<'_> {
    fn conv(&mut self, x: Array3<f64>, activate: bool) -> Array3<f64> {
        let i = self.next;
        self.next += 1;
        let spec = &self.specs[i];
        let (mut y, cols) = conv_forward(x.view(), weight_view(self.p, i, spec), &bias(self.p, i), spec.k);
        let pre = if activate {
            let pre = self.tape.as_ref().map(|_| y.clone());
            leaky(&mut y, self.p.arch.negative_slope);
            pre
        } else {
            None
        };
        if let Some(t) = self.tape.as_mut() {
            t.convs.push(ConvCache { cols, pre });
        }
        y
    }
}

pub(crate) fn forward_tensor(p: &NetParams, x: Array3<f64>, record: bool) -> (Array3<f64>, Option<Tape>) {
    let arch = p.arch;
    let mut r = Runner {
        p,
        specs: arch.convs(),
        next: 0,
        tape: record.then(|| Tape {
            convs: Vec::new(),
            skip_channels: Vec::new(),
        }),
    };
    let mut h = x;
    let mut skips = Vec::with_capacity(arch.levels);
    for _ in 0..arch.levels {
        for _ in 0..arch.convs_per_block {
            h = r.conv(h, true);
        }
        let pooled = avg_pool(h.view());
        skips.push(h);
        h = pooled;
    }
    for _ in 0..arch.convs_per_block {
        h = r.conv(h, true);
    }
    for l in (0..arch.levels).rev() {
        h = r.conv(upsample(h.view()), true);
        let skip = &skips[l];
        if let Some(t) = r.tape.as_mut() {
            t.skip_channels.push(skip.dim().0);
        }
        h = concat(skip.view(), h.view());
        for _ in 0..arch.convs_per_block {
            h = r.conv(h, true);
        }
    }
    let out = r.conv(h, false);
    (out, r.tape)
}

/// Backpropagates `dout` (gradient w.r.t. the network output) through a
/// recorded forward pass.
pub(crate) fn backward(p: &NetParams, tape: Tape, dout: Array3<f64>) -> Gradients {
    let arch = p.arch;
    let specs = arch.convs();
    let slope = arch.negative_slope;
    let mut grads: Gradients = p.tensors.iter().map(|(_, t)| ArrayD::zeros(t.raw_dim())).collect();
    let mut caches = tape.convs;
    let mut idx = specs.len();
    let mut conv_back = |dy: Array3<f64>, grads: &mut Gradients| -> Array3<f64> {
        idx -= 1;
        let cache = caches.pop().expect("tape entry");
        let mut dy = dy;
        if let Some(pre) = &cache.pre {
            leaky_backward(&mut dy, pre, slope);
        }
        let spec = &specs[idx];
        let (dx, dw, db) = conv_backward(dy.view(), &cache.cols, weight_view(p, idx, spec), spec.cin, spec.k);
        let shape = grads[2 * idx].raw_dim();
        grads[2 * idx] += &dw.into_shape_with_order(shape).expect("weight grad");
        grads[2 * idx + 1] += &db.into_dyn();
        dx
    };

    let mut d = conv_back(dout, &mut grads);
    let mut dskips: Vec<Option<Array3<f64>>> = vec![None; arch.levels];
    let mut skip_ch = tape.skip_channels;
    for slot in dskips.iter_mut() {
        for _ in 0..arch.convs_per_block {
            d = conv_back(d, &mut grads);
        }
        let ch = skip_ch.pop().expect("skip record");
        let (ds, du) = split(d.view(), ch);
        *slot = Some(ds);
        d = upsample_backward(conv_back(du, &mut grads).view());
    }
    for _ in 0..arch.convs_per_block {
        d = conv_back(d, &mut grads);
    }
    for l in (0..arch.levels).rev() {
        d = avg_pool_backward(d.view());
        d += dskips[l].as_ref().expect("skip gradient");
        for _ in 0..arch.convs_per_block {
            d = conv_back(d, &mut grads);
        }
    }
    grads
}

/// Applies the network `U_theta` to a single-channel image. The residual
/// composition `x + U_theta(x)` is left to the caller.
pub fn unet_forward(x: &Image, p: &NetParams) -> Result<Image> {
    let (ny, nx) = x.values.dim();
    p.arch.check_input(ny, nx)?;
    let input = x.values.clone().insert_axis(ndarray::Axis(0));
    let (out, _) = forward_tensor(p, input, false);
    Image::new(x.grid, out.index_axis_move(ndarray::Axis(0), 0))
}

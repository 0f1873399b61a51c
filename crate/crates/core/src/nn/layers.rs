//! Single-sample tensor kernels on `(channels, height, width)` arrays.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Zero-padded "same" im2col: row `(ci, ky, kx)`, column `y * w + x`.
pub fn im2col(x: ArrayView3<f64>, k: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let pad = (k / 2) as isize;
    let mut cols = Array2::zeros((c * k * k, h * w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().expect("contiguous");
                let (oy, ox) = (ky as isize - pad, kx as isize - pad);
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + ox;
                        if sx >= 0 && sx < w as isize {
                            dst[y * w + xx] = x[[ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im(cols: ArrayView2<f64>, c: usize, h: usize, w: usize, k: usize) -> Array3<f64> {
    let pad = (k / 2) as isize;
    let mut x = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = cols.row((ci * k + ky) * k + kx);
                let (oy, ox) = (ky as isize - pad, kx as isize - pad);
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + ox;
                        if sx >= 0 && sx < w as isize {
                            x[[ci, sy as usize, sx as usize]] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `weight` is `(cout, cin * k * k)`; returns the `(cout, h, w)` response
/// and the im2col matrix for the backward pass.
pub fn conv_forward(
    x: ArrayView3<f64>,
    weight: ArrayView2<f64>,
    bias: &Array1<f64>,
    k: usize,
) -> (Array3<f64>, Array2<f64>) {
    let (_, h, w) = x.dim();
    let cols = im2col(x, k);
    let mut y = weight.dot(&cols);
    for (mut row, &b) in y.outer_iter_mut().zip(bias.iter()) {
        row += b;
    }
    let y = y
        .into_shape_with_order((weight.nrows(), h, w))
        .expect("conv output shape");
    (y, cols)
}

/// Returns `(d input, d weight, d bias)` for an upstream gradient `dy`.
pub fn conv_backward(
    dy: ArrayView3<f64>,
    cols: &Array2<f64>,
    weight: ArrayView2<f64>,
    cin: usize,
    k: usize,
) -> (Array3<f64>, Array2<f64>, Array1<f64>) {
    let (cout, h, w) = dy.dim();
    let dy2 = dy.to_shape((cout, h * w)).expect("contiguous gradient");
    let dw = dy2.dot(&cols.t());
    let db = dy2.sum_axis(Axis(1));
    let dcols = weight.t().dot(&dy2);
    (col2im(dcols.view(), cin, h, w, k), dw, db)
}

pub fn leaky(x: &mut Array3<f64>, slope: f64) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
}

/// Multiplies `grad` by the activation slope at the pre-activation `pre`.
pub fn leaky_backward(grad: &mut Array3<f64>, pre: &Array3<f64>, slope: f64) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g *= slope;
        }
    });
}

pub fn avg_pool(x: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        0.25 * (x[[ci, 2 * y, 2 * xx]]
            + x[[ci, 2 * y + 1, 2 * xx]]
            + x[[ci, 2 * y, 2 * xx + 1]]
            + x[[ci, 2 * y + 1, 2 * xx + 1]])
    })
}

pub fn avg_pool_backward(dy: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = dy.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, x)| 0.25 * dy[[ci, y / 2, x / 2]])
}

pub fn upsample(x: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, xx)| x[[ci, y / 2, xx / 2]])
}

pub fn upsample_backward(dy: ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = dy.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, x)| {
        dy[[ci, 2 * y, 2 * x]]
            + dy[[ci, 2 * y + 1, 2 * x]]
            + dy[[ci, 2 * y, 2 * x + 1]]
            + dy[[ci, 2 * y + 1, 2 * x + 1]]
    })
}

pub fn concat(a: ArrayView3<f64>, b: ArrayView3<f64>) -> Array3<f64> {
    ndarray::concatenate(Axis(0), &[a, b]).expect("matching spatial size")
}

pub fn split(x: ArrayView3<f64>, first: usize) -> (Array3<f64>, Array3<f64>) {
    (
        x.slice(s![..first, .., ..]).to_owned(),
        x.slice(s![first.., .., ..]).to_owned(),
    )
}

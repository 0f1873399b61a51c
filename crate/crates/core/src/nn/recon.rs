use ndarray::Array1;

use super::net::unet_forward;
use super::NetParams;
use crate::cs::{CSData, CSOperator};
use crate::error::{shape_err, PatError, Result};
use crate::image::Image;
use crate::linop::LinearOperator;

/// `(Id + U_theta) A# g` with `A#` the backprojection layer.
pub fn residual_recon(g: &CSData, a: &CSOperator, theta: &NetParams) -> Result<Image> {
    let b = a.backproject(g)?;
    let u = unet_forward(&b, theta)?;
    Ok(b.add_scaled(1.0, &u))
}

/// `k` Landweber steps `f <- f - s A^T (A f - g)` from `f0`.
pub fn landweber(op: &dyn LinearOperator, g: &Array1<f64>, f0: Array1<f64>, s: f64, k: usize) -> Result<Array1<f64>> {
    if f0.len() != op.input_len() {
        return Err(shape_err(op.input_len(), f0.len()));
    }
    if g.len() != op.output_len() {
        return Err(shape_err(op.output_len(), g.len()));
    }
    let mut f = f0;
    for _ in 0..k {
        let r = op.apply(&f)? - g;
        f.scaled_add(-s, &op.apply_transpose(&r)?);
    }
    Ok(f)
}

/// Residual reconstruction followed by `k` Landweber steps with step size
/// `0 < s < 1/|A|^2`, approximating the projection onto `{f : A f = g}`.
pub fn nullspace_recon(g: &CSData, a: &CSOperator, theta: &NetParams, k: usize, s: f64) -> Result<Image> {
    let norm = a.norm_estimate()?;
    if !(s > 0.0 && s * norm * norm < 1.0) {
        return Err(PatError::StepSize { step: s, norm });
    }
    let f0 = residual_recon(g, a, theta)?;
    if k == 0 {
        return Ok(f0);
    }
    let flat: Array1<f64> = g.values.iter().copied().collect();
    let f = landweber(a, &flat, f0.to_flat(), s, k)?;
    Image::from_flat(*a.grid(), f)
}

//! Filtered backprojection for circular detection geometries.
//!
//! Discretizes
//!
//! ```text
//! f(r) = -1/(pi R) * oint_{|s| = R} int_{|r - s|}^{inf} (d/dt t p)(s, t) / sqrt(t^2 - |r - s|^2) dt dS(s)
//! ```
//!
//! (written for unit sound speed; time is converted to travel distance
//! `ct`). The derivative is a second-order finite difference, the inner
//! integral treats `d/dt (t p)` as piecewise linear and integrates the
//! inverse-square-root singularity exactly per cell, and the outer integral
//! is the sensor quadrature of [`SensorArray::arc_weights`]. Data beyond the
//! last time sample are taken as zero.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::{SensorData, Stencil};
use crate::error::{shape_err, Result};
use crate::geometry::{ImageGrid, Medium, SensorArray};
use crate::image::Image;

/// Filtered backprojection of full-array traces onto `grid`.
pub fn fbp(d: &SensorData, grid: &ImageGrid, medium: &Medium) -> Result<Image> {
    if d.values.dim() != (d.sensors.len(), d.time.q) {
        return Err(shape_err(
            format!("{}x{}", d.sensors.len(), d.time.q),
            format!("{:?}", d.values.dim()),
        ));
    }
    let c = medium.sound_speed;
    let step = c * d.time.dt;
    let q = d.time.q;
    warn_if_truncated(&d.sensors, grid, c * d.time.t_final);

    let filtered = filter_traces(&d.values, step, q);
    Ok(backproject(&filtered, &d.sensors, grid, step))
}

fn warn_if_truncated(sensors: &SensorArray, grid: &ImageGrid, reach: f64) {
    let needed = sensors.radius() + grid.footprint_radius();
    if reach < needed {
        log::warn!(
            "time axis covers travel distance {reach:.4e} but pixels lie up to {needed:.4e} \
             from the sensors; backprojection is truncated"
        );
    }
}

/// For every sensor, `I(rho_j) = int_{rho_j}^{tau_max} w(tau) / sqrt(tau^2 - rho_j^2) d tau`
/// on the radial nodes `rho_j = j * step`, where `w = d/dtau (tau p)`.
fn filter_traces(values: &Array2<f64>, step: f64, q: usize) -> Array2<f64> {
    let derivative = Stencil::first_derivative(q, step);
    let taus: Vec<f64> = (0..q).map(|l| l as f64 * step).collect();
    let mut out = Array2::zeros(values.dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(values.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut row, trace)| {
            let weighted: Array1<f64> = trace.iter().zip(&taus).map(|(p, t)| p * t).collect();
            let mut w = Array1::zeros(q);
            derivative.apply(weighted.view(), w.view_mut());
            let mut g0 = vec![0.0; q];
            let mut g1 = vec![0.0; q];
            for j in 1..q {
                let rho = taus[j];
                for i in j..q {
                    let t = taus[i];
                    let root = (t * t - rho * rho).max(0.0).sqrt();
                    g0[i] = ((t + root) / rho).ln();
                    g1[i] = root;
                }
                let mut acc = 0.0;
                for i in j..q - 1 {
                    let (a, b) = (taus[i], taus[i + 1]);
                    let i0 = g0[i + 1] - g0[i];
                    let i1 = g1[i + 1] - g1[i];
                    let slope = (w[i + 1] - w[i]) / (b - a);
                    acc += (w[i] - slope * a) * i0 + slope * i1;
                }
                row[j] = acc;
            }
            if q > 1 {
                row[0] = row[1];
            }
        });
    out
}

fn backproject(filtered: &Array2<f64>, sensors: &SensorArray, grid: &ImageGrid, step: f64) -> Image {
    let q = filtered.ncols();
    let positions = sensors.positions();
    let weights = sensors.arc_weights();
    let mut values = Array2::zeros((grid.ny, grid.nx));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(iy, mut row)| {
            let y = grid.y(iy);
            for ix in 0..grid.nx {
                let x = grid.x(ix);
                let mut acc = 0.0;
                for (k, s) in positions.iter().enumerate() {
                    let rho = (x - s[0]).hypot(y - s[1]);
                    let g = rho / step;
                    let j = g.floor();
                    if j >= (q - 1) as f64 {
                        continue;
                    }
                    let j = j as usize;
                    let frac = g - j as f64;
                    let v = (1.0 - frac) * filtered[[k, j]] + frac * filtered[[k, j + 1]];
                    acc += weights[k] * v;
                }
                // -(1/(pi R)) * sum_k R dphi_k * I_k
                row[ix] = -acc / std::f64::consts::PI;
            }
        });
    Image { grid: *grid, values }
}

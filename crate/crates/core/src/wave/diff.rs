use ndarray::{s, Array2, ArrayView2, Zip};

use super::WaveOperator;
use crate::error::{PatError, Result};
use crate::image::Image;

/// Five-point Laplacian with zero values assumed outside the grid.
///
/// As a matrix this is symmetric negative definite on every grid.
pub fn laplacian(f: &Image) -> Result<Image> {
    let h = f.grid.pixel_size()?;
    let inv = 1.0 / (h * h);
    let (ny, nx) = f.values.dim();
    let v = &f.values;
    let out = Array2::from_shape_fn((ny, nx), |(iy, ix)| {
        let mut acc = -4.0 * v[[iy, ix]];
        if ix > 0 {
            acc += v[[iy, ix - 1]];
        }
        if ix + 1 < nx {
            acc += v[[iy, ix + 1]];
        }
        if iy > 0 {
            acc += v[[iy - 1, ix]];
        }
        if iy + 1 < ny {
            acc += v[[iy + 1, ix]];
        }
        acc * inv
    });
    Ok(Image {
        grid: f.grid,
        values: out,
    })
}

/// Second derivative along the time axis (columns) of a trace matrix.
///
/// Central differences inside; four-point one-sided second-order formulas
/// at the ends when at least four samples exist, otherwise the three-point
/// formula.
pub fn second_time_derivative(values: ArrayView2<f64>, dt: f64) -> Result<Array2<f64>> {
    let q = values.ncols();
    if q < 3 {
        return Err(PatError::InvalidAxis(format!(
            "second time derivative needs at least 3 samples, got {q}"
        )));
    }
    let inv = 1.0 / (dt * dt);
    let mut out = Array2::zeros(values.dim());
    for (mut o, d) in out.outer_iter_mut().zip(values.outer_iter()) {
        for l in 1..q - 1 {
            o[l] = (d[l + 1] - 2.0 * d[l] + d[l - 1]) * inv;
        }
        if q >= 4 {
            o[0] = (2.0 * d[0] - 5.0 * d[1] + 4.0 * d[2] - d[3]) * inv;
            o[q - 1] = (2.0 * d[q - 1] - 5.0 * d[q - 2] + 4.0 * d[q - 3] - d[q - 4]) * inv;
        } else {
            o[0] = (d[0] - 2.0 * d[1] + d[2]) * inv;
            o[2] = o[0];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub image: Image,
    pub iterations: usize,
    /// `||L f - h|| / ||h||` on the interior pixels.
    pub residual: f64,
}

const POISSON_TOL: f64 = 1e-8;

/// Solves `L f = h` on the interior pixels with `f = 0` on the boundary ring
/// by conjugate gradients on the five-point system.
pub fn solve_poisson(h: &Image) -> Result<PoissonSolution> {
    let px = h.grid.pixel_size()?;
    let (ny, nx) = h.values.dim();
    let mut image = Image::zeros(h.grid);
    if nx < 3 || ny < 3 {
        return Ok(PoissonSolution {
            image,
            iterations: 0,
            residual: 0.0,
        });
    }
    let (my, mx) = (ny - 2, nx - 2);
    let inv = 1.0 / (px * px);
    // Negated interior operator, symmetric positive definite.
    let apply = |x: &Array2<f64>| -> Array2<f64> {
        Array2::from_shape_fn((my, mx), |(i, j)| {
            let mut acc = 4.0 * x[[i, j]];
            if j > 0 {
                acc -= x[[i, j - 1]];
            }
            if j + 1 < mx {
                acc -= x[[i, j + 1]];
            }
            if i > 0 {
                acc -= x[[i - 1, j]];
            }
            if i + 1 < my {
                acc -= x[[i + 1, j]];
            }
            acc * inv
        })
    };
    let dot = |a: &Array2<f64>, b: &Array2<f64>| Zip::from(a).and(b).fold(0.0, |s, x, y| s + x * y);

    let rhs = h.values.slice(s![1..ny - 1, 1..nx - 1]).mapv(|v| -v);
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(PoissonSolution {
            image,
            iterations: 0,
            residual: 0.0,
        });
    }
    let max_iter = 10 * my * mx;
    let mut x = Array2::<f64>::zeros((my, mx));
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut residual = 1.0;
    while iterations < max_iter {
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        iterations += 1;
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= 0.5 * POISSON_TOL * rhs_norm {
            // The recursive residual drifts; confirm with the true one.
            let true_r = &rhs - &apply(&x);
            residual = dot(&true_r, &true_r).sqrt() / rhs_norm;
            if residual <= POISSON_TOL {
                break;
            }
            r = true_r;
            rr = dot(&r, &r);
            p = r.clone();
            continue;
        }
        p = &r + &(&p * (rr_new / rr));
        rr = rr_new;
    }
    if residual > POISSON_TOL {
        let true_r = &rhs - &apply(&x);
        residual = dot(&true_r, &true_r).sqrt() / rhs_norm;
        if residual > POISSON_TOL {
            return Err(PatError::Convergence { iterations, residual });
        }
    }
    image.values.slice_mut(s![1..ny - 1, 1..nx - 1]).assign(&x);
    Ok(PoissonSolution {
        image,
        iterations,
        residual,
    })
}

/// Relative defect `||D_t^2 W f - W (c^2 L f)|| / ||W (c^2 L f)||` of the
/// identity between differentiated data and the Laplacian-filtered source.
/// Returns 0 when both sides vanish.
pub fn commutation_defect(f: &Image, op: &WaveOperator) -> Result<f64> {
    let c2 = op.medium().sound_speed.powi(2);
    let lhs = op.forward(f)?.dtt()?;
    let rhs = op.forward(&laplacian(f)?.map(|v| c2 * v))?;
    let num = (&lhs.values - &rhs.values).iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = rhs.norm();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

//! Spatial grid, circular sensor array, temporal sampling and medium.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{PatError, Result};

/// Cartesian pixel grid. Pixel `(ix, iy)` has its center at
/// `(x0 + ix * dx, y0 + iy * dy)`; images are stored row-major with `iy` as
/// the row index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(PatError::InvalidGeometry(format!(
                "grid must be non-empty, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(PatError::InvalidGeometry(format!(
                "grid spacings must be positive, got dx = {dx}, dy = {dy}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(PatError::InvalidGeometry("grid origin must be finite".into()));
        }
        Ok(Self { nx, ny, x0, y0, dx, dy })
    }

    /// Grid of `nx * ny` pixels exactly tiling the rectangle
    /// `[x_min, x_max] x [y_min, y_max]`.
    pub fn from_extent(nx: usize, ny: usize, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(PatError::InvalidGeometry(format!(
                "degenerate extent [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        let nx_f = nx.max(1) as f64;
        let ny_f = ny.max(1) as f64;
        let dx = (x_max - x_min) / nx_f;
        let dy = (y_max - y_min) / ny_f;
        Self::new(nx, ny, x_min + 0.5 * dx, y_min + 0.5 * dy, dx, dy)
    }

    /// Square grid of `n x n` pixels of side `h`, centered at the origin.
    pub fn centered(n: usize, h: f64) -> Result<Self> {
        let half = 0.5 * n as f64 * h;
        Self::from_extent(n, n, -half, half, -half, half)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.y0 + iy as f64 * self.dy
    }

    /// The common pixel size, or an error for anisotropic grids.
    pub fn pixel_size(&self) -> Result<f64> {
        if (self.dx - self.dy).abs() > 1e-12 * self.dx.max(self.dy) {
            return Err(PatError::AnisotropicGrid {
                dx: self.dx,
                dy: self.dy,
            });
        }
        Ok(self.dx)
    }

    /// Radius of the smallest origin-centered disc containing the support of
    /// the bilinear interpolant of any image on this grid.
    pub fn footprint_radius(&self) -> f64 {
        let x_far = self.x(0).abs().max(self.x(self.nx - 1).abs()) + self.dx;
        let y_far = self.y(0).abs().max(self.y(self.ny - 1).abs()) + self.dy;
        x_far.hypot(y_far)
    }
}

/// Detector positions on a circle of radius `radius` around the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    radius: f64,
    angles: Vec<f64>,
    positions: Vec<[f64; 2]>,
    arc_weights: Vec<f64>,
    full_circle: bool,
}

impl SensorArray {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Angular quadrature weight of each sensor (radians). Uniform `2 pi / M`
    /// on the full circle, trapezoidal on an arc.
    pub fn arc_weights(&self) -> &[f64] {
        &self.arc_weights
    }

    pub fn is_full_circle(&self) -> bool {
        self.full_circle
    }

    /// A new array keeping only the sensors at `indices`, in order. Arc
    /// weights are carried over unchanged.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            radius: self.radius,
            angles: indices.iter().map(|&i| self.angles[i]).collect(),
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            arc_weights: indices.iter().map(|&i| self.arc_weights[i]).collect(),
            full_circle: false,
        }
    }
}

/// `count` equidistant sensors on the arc `[angle_start, angle_end]` of the
/// circle of radius `radius`.
///
/// An arc of exactly `2 pi` is the full circle: the end point coincides with
/// the start and is excluded, giving angles `angle_start + 2 pi k / count`.
/// Any shorter arc includes both end points.
pub fn make_sensors(count: usize, radius: f64, angle_start: f64, angle_end: f64) -> Result<SensorArray> {
    if count < 2 {
        return Err(PatError::InvalidGeometry(format!(
            "need at least two sensors, got {count}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(PatError::InvalidGeometry(format!(
            "sensor radius must be positive, got {radius}"
        )));
    }
    let span = angle_end - angle_start;
    if !(span > 0.0 && span.is_finite()) || span > 2.0 * PI * (1.0 + 1e-12) {
        return Err(PatError::InvalidGeometry(format!(
            "degenerate arc [{angle_start}, {angle_end}]"
        )));
    }
    let full_circle = (span - 2.0 * PI).abs() <= 1e-12 * 2.0 * PI;
    let (step, weights) = if full_circle {
        let step = 2.0 * PI / count as f64;
        (step, vec![step; count])
    } else {
        let step = span / (count - 1) as f64;
        let mut w = vec![step; count];
        w[0] *= 0.5;
        w[count - 1] *= 0.5;
        (step, w)
    };
    let angles: Vec<f64> = (0..count).map(|k| angle_start + k as f64 * step).collect();
    let positions = angles.iter().map(|&a| [radius * a.cos(), radius * a.sin()]).collect();
    Ok(SensorArray {
        radius,
        angles,
        positions,
        arc_weights: weights,
        full_circle,
    })
}

/// `count` equidistant sensors covering the whole circle.
pub fn full_circle(count: usize, radius: f64) -> Result<SensorArray> {
    make_sensors(count, radius, 0.0, 2.0 * PI)
}

/// Uniform temporal sampling `t_l = l * t_final / (q - 1)`, `l = 0..q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub q: usize,
    pub t_final: f64,
    pub dt: f64,
}

impl TimeAxis {
    pub fn t(&self, l: usize) -> f64 {
        if l + 1 == self.q {
            self.t_final
        } else {
            l as f64 * self.dt
        }
    }

    pub fn samples(&self) -> Vec<f64> {
        (0..self.q).map(|l| self.t(l)).collect()
    }
}

pub fn make_time_axis(q: usize, t_final: f64) -> Result<TimeAxis> {
    if q < 2 {
        return Err(PatError::InvalidAxis(format!("need at least two samples, got {q}")));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(PatError::InvalidAxis(format!(
            "final time must be positive, got {t_final}"
        )));
    }
    Ok(TimeAxis {
        q,
        t_final,
        dt: t_final / (q - 1) as f64,
    })
}

/// Homogeneous acoustic medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub sound_speed: f64,
}

impl Medium {
    pub fn new(sound_speed: f64) -> Result<Self> {
        if !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(PatError::InvalidArgument(format!(
                "sound speed must be positive, got {sound_speed}"
            )));
        }
        Ok(Self { sound_speed })
    }
}

/// Spatial sampling condition for equally spaced detectors: a source with
/// essential bandwidth `bandwidth` supported in the disc of radius
/// `support_radius` is stably recoverable when `count >= 2 * R0 * lambda0`.
pub fn check_sampling(count: usize, support_radius: f64, bandwidth: f64) -> Result<bool> {
    if !(support_radius > 0.0 && bandwidth > 0.0) {
        return Err(PatError::InvalidArgument(format!(
            "support radius and bandwidth must be positive, got {support_radius}, {bandwidth}"
        )));
    }
    Ok(count as f64 >= 2.0 * support_radius * bandwidth)
}

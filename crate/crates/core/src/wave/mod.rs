//! Discrete 2D wave forward operator, its exact transpose, filtered
//! backprojection and the differential operators used for sparsification.
//!
//! The forward operator evaluates the causal solution of the free-space wave
//! equation with initial pressure `f` and zero initial velocity through
//! circular means:
//!
//! ```text
//! p(s, t) = d/dt [ (1/c) * integral_0^{ct} rho * M f(s, rho) / sqrt(c^2 t^2 - rho^2) d rho ]
//! ```
//!
//! where `M f(s, rho)` is the mean of `f` over the circle of radius `rho`
//! around `s`. Circular means use a midpoint rule over the arc that meets
//! the grid and bilinear interpolation of `f`; the radial integral treats
//! `M f` as piecewise linear and integrates the singular kernel exactly per
//! cell; the outer time derivative is a second-order finite difference. Every
//! stage is linear with an explicit transpose, so [`WaveOperator::transpose`]
//! is the exact algebraic adjoint of [`WaveOperator::forward`].

mod diff;
mod fbp;

pub use diff::{commutation_defect, laplacian, second_time_derivative, solve_poisson, PoissonSolution};
pub use fbp::fbp;

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::geometry::{ImageGrid, Medium, SensorArray, TimeAxis};
use crate::image::Image;

/// Pressure traces `p(s_k, t_l)`, one row per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    pub sensors: SensorArray,
    pub time: TimeAxis,
    pub values: Array2<f64>,
}

impl SensorData {
    pub fn new(sensors: SensorArray, time: TimeAxis, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (sensors.len(), time.q) {
            return Err(shape_err(
                format!("{}x{}", sensors.len(), time.q),
                format!("{:?}", values.dim()),
            ));
        }
        Ok(Self { sensors, time, values })
    }

    pub fn zeros(sensors: SensorArray, time: TimeAxis) -> Self {
        let values = Array2::zeros((sensors.len(), time.q));
        Self { sensors, time, values }
    }

    /// Second time derivative of every trace.
    pub fn dtt(&self) -> Result<SensorData> {
        Ok(SensorData {
            sensors: self.sensors.clone(),
            time: self.time,
            values: second_time_derivative(self.values.view(), self.time.dt)?,
        })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SensorData) -> f64 {
        self.values.iter().zip(other.values.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Sparse banded matrix stored by rows; used for the first time derivative.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Stencil {
    /// Second-order first derivative on a uniform axis with spacing `step`:
    /// central differences inside, one-sided three-point formulas at the
    /// ends. Two-point axes fall back to the forward difference.
    pub(crate) fn first_derivative(len: usize, step: f64) -> Self {
        let mut rows = Vec::with_capacity(len);
        if len == 2 {
            let d = 1.0 / step;
            rows.push(vec![(0, -d), (1, d)]);
            rows.push(vec![(0, -d), (1, d)]);
            return Self { rows };
        }
        let h2 = 0.5 / step;
        for l in 0..len {
            let row = if l == 0 {
                vec![(0, -3.0 * h2), (1, 4.0 * h2), (2, -h2)]
            } else if l + 1 == len {
                vec![(l - 2, h2), (l - 1, -4.0 * h2), (l, 3.0 * h2)]
            } else {
                vec![(l - 1, -h2), (l + 1, h2)]
            };
            rows.push(row);
        }
        Self { rows }
    }

    pub(crate) fn apply(&self, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        for (l, row) in self.rows.iter().enumerate() {
            out[l] = row.iter().map(|&(j, c)| c * x[j]).sum();
        }
    }

    pub(crate) fn apply_transpose(&self, y: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        out.fill(0.0);
        for (l, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                out[j] += c * y[l];
            }
        }
    }
}

/// Angular sampling of one circle of the circular-mean quadrature, in a
/// frame relative to the inward sensor normal.
#[derive(Debug, Clone)]
struct Ring {
    radius: f64,
    weight: f64,
    dirs: Vec<[f64; 2]>,
}

/// Bilinear interpolation stencil: up to four `(flat index, weight)` pairs.
#[inline]
fn bilinear_taps(grid: &ImageGrid, x: f64, y: f64, taps: &mut [(usize, f64); 4]) -> usize {
    let gx = (x - grid.x0) / grid.dx;
    let gy = (y - grid.y0) / grid.dy;
    let fx = gx.floor();
    let fy = gy.floor();
    if fx < -1.0 || fy < -1.0 || fx >= grid.nx as f64 || fy >= grid.ny as f64 {
        return 0;
    }
    let (ix, iy) = (fx as isize, fy as isize);
    let (wx, wy) = (gx - fx, gy - fy);
    let mut count = 0;
    for (oy, ay) in [(0isize, 1.0 - wy), (1, wy)] {
        let jy = iy + oy;
        if jy < 0 || jy >= grid.ny as isize || ay == 0.0 {
            continue;
        }
        for (ox, ax) in [(0isize, 1.0 - wx), (1, wx)] {
            let jx = ix + ox;
            if jx < 0 || jx >= grid.nx as isize || ax == 0.0 {
                continue;
            }
            taps[count] = (jy as usize * grid.nx + jx as usize, ax * ay);
            count += 1;
        }
    }
    count
}

const SENSORS_PER_CHUNK: usize = 8;

/// Matrix-free discrete wave forward operator `W` for a fixed geometry.
#[derive(Debug, Clone)]
pub struct WaveOperator {
    grid: ImageGrid,
    sensors: SensorArray,
    time: TimeAxis,
    medium: Medium,
    rings: Vec<Ring>,
    /// Radial integral with exact singular weights, `Q x Q`, lower triangular.
    abel: Array2<f64>,
    derivative: Stencil,
    frames: Vec<[f64; 4]>,
}

impl WaveOperator {
    pub fn new(grid: ImageGrid, sensors: SensorArray, time: TimeAxis, medium: Medium) -> Result<Self> {
        let footprint = grid.footprint_radius();
        if footprint >= sensors.radius() {
            log::warn!(
                "image footprint radius {footprint:.4e} reaches the sensor circle (radius {:.4e}); \
                 sources outside the detection disc are not modeled faithfully",
                sensors.radius()
            );
        }
        let c = medium.sound_speed;
        let h = grid.dx.min(grid.dy);
        let radii: Vec<f64> = (0..time.q).map(|l| c * time.t(l)).collect();
        let rings = radii
            .iter()
            .map(|&rho| build_ring(rho, sensors.radius(), footprint, h))
            .collect();
        let abel = abel_matrix(&radii, c);
        let derivative = Stencil::first_derivative(time.q, time.dt);
        let frames = sensors
            .positions()
            .iter()
            .map(|p| {
                let r = p[0].hypot(p[1]);
                let (ux, uy) = (-p[0] / r, -p[1] / r);
                [ux, uy, -uy, ux]
            })
            .collect();
        Ok(Self {
            grid,
            sensors,
            time,
            medium,
            rings,
            abel,
            derivative,
            frames,
        })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn sensors(&self) -> &SensorArray {
        &self.sensors
    }

    pub fn time(&self) -> &TimeAxis {
        &self.time
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    /// Total number of angular samples per sensor, summed over all radii.
    pub fn samples_per_sensor(&self) -> usize {
        self.rings.iter().map(|r| r.dirs.len()).sum()
    }

    fn check_image(&self, f: &Image) -> Result<()> {
        if f.values.dim() != (self.grid.ny, self.grid.nx) {
            return Err(shape_err(
                format!("{}x{} image", self.grid.ny, self.grid.nx),
                format!("{:?}", f.values.dim()),
            ));
        }
        Ok(())
    }

    /// Circular means of `f` around sensor `k` at every radius.
    fn circular_means(&self, k: usize, f: &[f64], out: &mut [f64]) {
        let s = self.sensors.positions()[k];
        let [ux, uy, vx, vy] = self.frames[k];
        let mut taps = [(0usize, 0.0f64); 4];
        for (ring, m) in self.rings.iter().zip(out.iter_mut()) {
            let mut acc = 0.0;
            for &[cp, sp] in &ring.dirs {
                let x = s[0] + ring.radius * (cp * ux + sp * vx);
                let y = s[1] + ring.radius * (cp * uy + sp * vy);
                let n = bilinear_taps(&self.grid, x, y, &mut taps);
                for &(idx, w) in &taps[..n] {
                    acc += w * f[idx];
                }
            }
            *m = ring.weight * acc;
        }
    }

    /// Transpose of [`Self::circular_means`], accumulated into `img`.
    fn scatter_means(&self, k: usize, means: &[f64], img: &mut [f64]) {
        let s = self.sensors.positions()[k];
        let [ux, uy, vx, vy] = self.frames[k];
        let mut taps = [(0usize, 0.0f64); 4];
        for (ring, &m) in self.rings.iter().zip(means.iter()) {
            if m == 0.0 {
                continue;
            }
            let wm = ring.weight * m;
            for &[cp, sp] in &ring.dirs {
                let x = s[0] + ring.radius * (cp * ux + sp * vx);
                let y = s[1] + ring.radius * (cp * uy + sp * vy);
                let n = bilinear_taps(&self.grid, x, y, &mut taps);
                for &(idx, w) in &taps[..n] {
                    img[idx] += w * wm;
                }
            }
        }
    }

    fn forward_trace(&self, k: usize, f: &[f64], mut out: ArrayViewMut1<f64>) {
        let mut means = vec![0.0; self.time.q];
        self.circular_means(k, f, &mut means);
        let abel = self.abel.dot(&ArrayView1::from(&means));
        self.derivative.apply(abel.view(), out.view_mut());
    }

    /// Discrete pressure traces `W f`.
    pub fn forward(&self, f: &Image) -> Result<SensorData> {
        self.check_image(f)?;
        let flat = f.values.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        let mut values = Array2::zeros((self.sensors.len(), self.time.q));
        values
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(k, row)| self.forward_trace(k, flat, row));
        Ok(SensorData {
            sensors: self.sensors.clone(),
            time: self.time,
            values,
        })
    }

    /// Exact transpose `W^T d`.
    pub fn transpose(&self, d: &SensorData) -> Result<Image> {
        self.transpose_values(&d.values)
    }

    pub(crate) fn transpose_values(&self, values: &Array2<f64>) -> Result<Image> {
        if values.dim() != (self.sensors.len(), self.time.q) {
            return Err(shape_err(
                format!("{}x{} traces", self.sensors.len(), self.time.q),
                format!("{:?}", values.dim()),
            ));
        }
        let n = self.grid.len();
        let chunks: Vec<Vec<f64>> = (0..self.sensors.len())
            .collect::<Vec<_>>()
            .par_chunks(SENSORS_PER_CHUNK)
            .map(|ks| {
                let mut img = vec![0.0; n];
                let mut u = ndarray::Array1::zeros(self.time.q);
                for &k in ks {
                    self.derivative.apply_transpose(values.row(k), u.view_mut());
                    let means = self.abel.t().dot(&u);
                    self.scatter_means(k, means.as_slice().expect("contiguous"), &mut img);
                }
                img
            })
            .collect();
        let mut total = vec![0.0; n];
        for chunk in &chunks {
            for (t, c) in total.iter_mut().zip(chunk) {
                *t += c;
            }
        }
        Image::from_flat(self.grid, total.into())
    }
}

/// Midpoint angular nodes on the part of the circle of radius `rho` around a
/// sensor at distance `sensor_radius` that can meet the disc of radius
/// `footprint`. The node count does not depend on `rho`, which keeps the
/// circular means smooth in time.
fn build_ring(rho: f64, sensor_radius: f64, footprint: f64, h: f64) -> Ring {
    if rho == 0.0 {
        return Ring {
            radius: 0.0,
            weight: 1.0,
            dirs: vec![[1.0, 0.0]],
        };
    }
    let cos_max = (sensor_radius * sensor_radius + rho * rho - footprint * footprint) / (2.0 * sensor_radius * rho);
    if cos_max >= 1.0 {
        return Ring {
            radius: rho,
            weight: 0.0,
            dirs: Vec::new(),
        };
    }
    let (half, count) = if cos_max <= -1.0 || sensor_radius <= footprint {
        let reach = footprint.max(rho);
        (PI, ((2.0 * PI * reach) / (0.5 * h)).ceil().max(16.0) as usize)
    } else {
        // Any arc inside the footprint disc is shorter than a half circle of
        // radius `footprint`.
        (cos_max.acos(), ((PI * footprint) / (0.5 * h)).ceil().max(16.0) as usize)
    };
    let step = 2.0 * half / count as f64;
    let dirs = (0..count)
        .map(|i| {
            let psi = -half + (i as f64 + 0.5) * step;
            [psi.cos(), psi.sin()]
        })
        .collect();
    Ring {
        radius: rho,
        weight: step / (2.0 * PI),
        dirs,
    }
}

/// `U_l = (1/c) * integral_0^{rho_l} rho m(rho) / sqrt(rho_l^2 - rho^2) d rho` for
/// `m` piecewise linear on the nodes `radii`, as a matrix acting on nodal
/// values.
fn abel_matrix(radii: &[f64], c: f64) -> Array2<f64> {
    let q = radii.len();
    let mut k = Array2::zeros((q, q));
    let mut f0 = vec![0.0; q];
    let mut f1 = vec![0.0; q];
    for l in 1..q {
        let r = radii[l];
        let r2 = r * r;
        for i in 0..=l {
            let p = radii[i];
            let root = (r2 - p * p).max(0.0).sqrt();
            f0[i] = -root;
            f1[i] = 0.5 * r2 * (p / r).min(1.0).asin() - 0.5 * p * root;
        }
        for i in 0..l {
            let (a, b) = (radii[i], radii[i + 1]);
            let i0 = f0[i + 1] - f0[i];
            let i1 = f1[i + 1] - f1[i];
            let width = b - a;
            k[[l, i]] += (b * i0 - i1) / width / c;
            k[[l, i + 1]] += (i1 - a * i0) / width / c;
        }
    }
    k
}

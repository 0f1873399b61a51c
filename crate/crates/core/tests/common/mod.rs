#![allow(dead_code)]

use ndarray::Array2;
use pat_core::rng::SeededRng;
use pat_core::{full_circle, make_time_axis, CSData, Image, ImageGrid, Medium, SensorArray, WaveOperator};

/// Grid over `[-1, 1]^2` with `n` pixels per side.
pub fn unit_grid(n: usize) -> ImageGrid {
    ImageGrid::centered(n, 2.0 / n as f64).unwrap()
}

/// Wave operator for sensors at radius `radius`, with a time axis long
/// enough to see the whole grid and spacing `dt = h / oversample`.
pub fn wave_for(grid: ImageGrid, sensors: SensorArray, oversample: f64) -> WaveOperator {
    let h = grid.dx;
    let reach = sensors.radius() + grid.footprint_radius();
    let dt = h / oversample;
    let q = (reach / dt).ceil() as usize + 1;
    let time = make_time_axis(q, (q - 1) as f64 * dt).unwrap();
    WaveOperator::new(grid, sensors, time, Medium::new(1.0).unwrap()).unwrap()
}

/// Small 16x16 geometry used by the adjoint tests.
pub fn tiny_wave(n: usize, count: usize) -> WaveOperator {
    let grid = unit_grid(n);
    wave_for(grid, full_circle(count, 1.5).unwrap(), 1.0)
}

pub fn random_image(grid: ImageGrid, rng: &mut SeededRng) -> Image {
    Image::from_fn(grid, |_, _| rng.normal())
}

pub fn random_data(m: usize, q: usize, rng: &mut SeededRng) -> CSData {
    CSData {
        values: Array2::from_shape_simple_fn((m, q), || rng.normal()),
    }
}

/// Smooth compactly supported bump `(1 - r^2/a^2)^4` centered at `c`.
pub fn bump(grid: ImageGrid, c: [f64; 2], a: f64) -> Image {
    Image::from_fn(grid, |x, y| {
        let r2 = ((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (a * a);
        if r2 < 1.0 {
            (1.0 - r2).powi(4)
        } else {
            0.0
        }
    })
}

/// Sum of a few smooth bumps inside the unit disc.
pub fn smooth_phantom(grid: ImageGrid) -> Image {
    let a = bump(grid, [0.2, -0.1], 0.35);
    let b = bump(grid, [-0.3, 0.25], 0.25).map(|v| 0.6 * v);
    let c = bump(grid, [0.05, 0.4], 0.2).map(|v| 0.8 * v);
    a.add_scaled(1.0, &b).add_scaled(1.0, &c)
}

pub fn rel_err(truth: &Image, approx: &Image) -> f64 {
    approx.add_scaled(-1.0, truth).norm() / truth.norm()
}

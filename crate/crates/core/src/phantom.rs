//! Deterministic test objects. All phantoms are nonnegative.

use crate::geometry::ImageGrid;
use crate::image::Image;
use crate::rng::SeededRng;

fn center_and_half_widths(grid: &ImageGrid) -> ([f64; 2], [f64; 2]) {
    let xc = 0.5 * (grid.x(0) + grid.x(grid.nx - 1));
    let yc = 0.5 * (grid.y(0) + grid.y(grid.ny - 1));
    (
        [xc, yc],
        [0.5 * grid.nx as f64 * grid.dx, 0.5 * grid.ny as f64 * grid.dy],
    )
}

/// Disc of height `value` whose edge ramps linearly over two pixels
/// centered on `radius`.
pub fn disc_phantom(grid: &ImageGrid, center: [f64; 2], radius: f64, value: f64) -> Image {
    if radius <= 0.0 {
        return Image::zeros(*grid);
    }
    let h = grid.dx.min(grid.dy);
    Image::from_fn(*grid, |x, y| {
        let d = (x - center[0]).hypot(y - center[1]);
        value * ((radius - d) / (2.0 * h) + 0.5).clamp(0.0, 1.0)
    })
}

/// Isotropic Gaussian bump `amplitude * exp(-|r - center|^2 / (2 sigma^2))`.
pub fn gaussian_blob(grid: &ImageGrid, center: [f64; 2], sigma: f64, amplitude: f64) -> Image {
    Image::from_fn(*grid, |x, y| {
        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
        amplitude * (-r2 / (2.0 * sigma * sigma)).exp()
    })
}

/// Synthetic vessel tree: a few smooth tubes with Gaussian cross-section
/// along random-walk centerlines, later tubes often branching off earlier
/// ones. Normalized to maximal intensity one.
pub fn vessel_phantom(grid: &ImageGrid, seed: u64) -> Image {
    let mut rng = SeededRng::new(seed);
    let (center, half) = center_and_half_widths(grid);
    let scale = half[0].min(half[1]);
    let limit = 0.85 * scale;
    let h = grid.dx.min(grid.dy);
    let mut img = Image::zeros(*grid);
    let mut centerlines: Vec<Vec<[f64; 2]>> = Vec::new();

    let vessels = 3 + rng.below(4);
    for v in 0..vessels {
        let mut pos = if v > 0 && rng.uniform() < 0.5 {
            let parent = &centerlines[rng.below(centerlines.len())];
            parent[rng.below(parent.len())]
        } else {
            let r = 0.6 * scale * rng.uniform().sqrt();
            let a = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
            [center[0] + r * a.cos(), center[1] + r * a.sin()]
        };
        let mut heading = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
        let mut turn = 0.0;
        let base_width = rng.uniform_in(0.012, 0.03) * scale;
        let amplitude = rng.uniform_in(0.5, 1.0);
        let phase = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
        let steps = 80 + rng.below(160);
        let step = 0.5 * h;
        let mut line = Vec::with_capacity(steps);
        for i in 0..steps {
            let dist = (pos[0] - center[0]).hypot(pos[1] - center[1]);
            if dist > limit {
                break;
            }
            line.push(pos);
            let width = base_width * (1.0 + 0.3 * (phase + 0.05 * i as f64).sin());
            stamp_tube(&mut img, pos, width, amplitude);
            turn = 0.9 * turn + 0.04 * rng.normal();
            heading += turn;
            pos = [pos[0] + step * heading.cos(), pos[1] + step * heading.sin()];
        }
        if !line.is_empty() {
            centerlines.push(line);
        }
    }
    let max = img.max();
    if max > 0.0 {
        img.values.mapv_inplace(|v| v / max);
    }
    img
}

fn stamp_tube(img: &mut Image, pos: [f64; 2], width: f64, amplitude: f64) {
    let grid = img.grid;
    let reach = 3.0 * width;
    let ix0 = (((pos[0] - reach - grid.x0) / grid.dx).floor().max(0.0)) as usize;
    let ix1 = (((pos[0] + reach - grid.x0) / grid.dx).ceil().max(0.0) as usize).min(grid.nx - 1);
    let iy0 = (((pos[1] - reach - grid.y0) / grid.dy).floor().max(0.0)) as usize;
    let iy1 = (((pos[1] + reach - grid.y0) / grid.dy).ceil().max(0.0) as usize).min(grid.ny - 1);
    let inv = 1.0 / (2.0 * width * width);
    for iy in iy0..=iy1 {
        for ix in ix0..=ix1 {
            let d2 = (grid.x(ix) - pos[0]).powi(2) + (grid.y(iy) - pos[1]).powi(2);
            let v = amplitude * (-d2 * inv).exp();
            let cell = &mut img.values[[iy, ix]];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// One ellipse of the head phantom in normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Ten-ellipse Shepp-Logan table with the high-contrast intensities.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse {
        intensity: 1.0,
        a: 0.69,
        b: 0.92,
        x0: 0.0,
        y0: 0.0,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: -0.8,
        a: 0.6624,
        b: 0.874,
        x0: 0.0,
        y0: -0.0184,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: -0.2,
        a: 0.11,
        b: 0.31,
        x0: 0.22,
        y0: 0.0,
        phi_deg: -18.0,
    },
    Ellipse {
        intensity: -0.2,
        a: 0.16,
        b: 0.41,
        x0: -0.22,
        y0: 0.0,
        phi_deg: 18.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.21,
        b: 0.25,
        x0: 0.0,
        y0: 0.35,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.046,
        x0: 0.0,
        y0: 0.1,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.046,
        x0: 0.0,
        y0: -0.1,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.023,
        x0: -0.08,
        y0: -0.605,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.023,
        b: 0.023,
        x0: 0.0,
        y0: -0.606,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.023,
        b: 0.046,
        x0: 0.06,
        y0: -0.605,
        phi_deg: 0.0,
    },
];

/// Normalized coordinates of a pixel: the grid maps onto `[-1, 1]^2`.
pub fn normalized_coords(grid: &ImageGrid, x: f64, y: f64) -> (f64, f64) {
    let (c, half) = center_and_half_widths(grid);
    ((x - c[0]) / half[0], (y - c[1]) / half[1])
}

/// Point-sampled Shepp-Logan head phantom, clipped at zero and scaled to
/// maximal intensity one.
pub fn shepp_logan(grid: &ImageGrid) -> Image {
    let mut img = Image::from_fn(*grid, |x, y| {
        let (u, v) = normalized_coords(grid, x, y);
        SHEPP_LOGAN
            .iter()
            .filter(|e| e.contains(u, v))
            .map(|e| e.intensity)
            .sum::<f64>()
            .max(0.0)
    });
    let max = img.max();
    if max > 0.0 {
        img.values.mapv_inplace(|v| v / max);
    }
    img
}

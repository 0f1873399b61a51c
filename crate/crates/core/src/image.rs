use ndarray::{Array1, Array2, Zip};

use crate::error::{shape_err, PatError, Result};
use crate::geometry::ImageGrid;

/// A discrete source on an [`ImageGrid`]; `values[[iy, ix]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub grid: ImageGrid,
    pub values: Array2<f64>,
}

impl Image {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            values: Array2::zeros((grid.ny, grid.nx)),
        }
    }

    pub fn new(grid: ImageGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.ny, grid.nx) {
            return Err(shape_err(
                format!("{}x{}", grid.ny, grid.nx),
                format!("{:?}", values.dim()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PatError::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    /// Image from a flat row-major vector.
    pub fn from_flat(grid: ImageGrid, flat: Array1<f64>) -> Result<Self> {
        let n = flat.len();
        let values = flat
            .into_shape_with_order((grid.ny, grid.nx))
            .map_err(|_| shape_err(grid.len(), n))?;
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.ny, grid.nx), |(iy, ix)| f(grid.x(ix), grid.y(iy)));
        Self { grid, values }
    }

    pub fn to_flat(&self) -> Array1<f64> {
        self.values.iter().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        Zip::from(&self.values)
            .and(&other.values)
            .fold(0.0, |acc, a, b| acc + a * b)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(shape_err(
                format!("{:?}", self.values.dim()),
                format!("{:?}", other.values.dim()),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Image {
        Image {
            grid: self.grid,
            values: self.values.mapv(f),
        }
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &Image) -> Image {
        let mut values = self.values.clone();
        values.scaled_add(scale, &other.values);
        Image {
            grid: self.grid,
            values,
        }
    }
}

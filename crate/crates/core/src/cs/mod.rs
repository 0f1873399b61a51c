//! Compressive measurement matrices and the composed forward map
//! `A = (S (x) I) W`.

mod certify;

pub use certify::{check_source_condition, op_norm, rip_constant, SourceConditionReport, SourceVerdict};

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, PatError, Result};
use crate::image::Image;
use crate::linop::LinearOperator;
use crate::rng::SeededRng;
use crate::wave::{fbp, SensorData, WaveOperator};

/// Default row stride of the deterministic subsampling matrix.
pub const SUBSAMPLING_STRIDE: usize = 4;
/// Default nonzero value of the deterministic subsampling matrix.
pub const SUBSAMPLING_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasKind {
    Subsampling,
    Bernoulli,
    Identity,
}

impl MeasKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasKind::Subsampling => "sparse",
            MeasKind::Bernoulli => "bernoulli",
            MeasKind::Identity => "identity",
        }
    }
}

/// An `m x M` matrix combining the `M` sensor channels into `m` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasMatrix {
    pub entries: Array2<f64>,
    pub kind: MeasKind,
    pub seed: Option<u64>,
}

impl MeasMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Sensor channels that enter at least one measurement.
    pub fn used_columns(&self) -> Vec<usize> {
        (0..self.cols())
            .filter(|&j| self.entries.column(j).iter().any(|&v| v != 0.0))
            .collect()
    }

    pub fn identity(count: usize) -> Self {
        Self {
            entries: Array2::eye(count),
            kind: MeasKind::Identity,
            seed: None,
        }
    }
}

/// Deterministic sparse subsampling: row `i` keeps channel `4 i` with
/// weight 2 (zero-based indices).
pub fn subsampling_matrix(m: usize, count: usize) -> Result<MeasMatrix> {
    subsampling_matrix_with(m, count, SUBSAMPLING_STRIDE, SUBSAMPLING_WEIGHT)
}

/// Subsampling with explicit stride and weight: `S[i, j] = weight` when
/// `j = stride * i`, zero otherwise.
pub fn subsampling_matrix_with(m: usize, count: usize, stride: usize, weight: f64) -> Result<MeasMatrix> {
    if m == 0 || stride == 0 {
        return Err(PatError::InvalidArgument(
            "subsampling needs m >= 1 and stride >= 1".into(),
        ));
    }
    if count < stride * (m - 1) + 1 {
        return Err(PatError::InvalidArgument(format!(
            "subsampling {m} rows with stride {stride} needs at least {} channels, got {count}",
            stride * (m - 1) + 1
        )));
    }
    let mut entries = Array2::zeros((m, count));
    for i in 0..m {
        entries[[i, stride * i]] = weight;
    }
    Ok(MeasMatrix {
        entries,
        kind: MeasKind::Subsampling,
        seed: None,
    })
}

/// Random Bernoulli matrix with independent entries `+-1/sqrt(m)`, drawn
/// row-major from [`SeededRng::sign`].
pub fn bernoulli_matrix(m: usize, count: usize, seed: u64) -> Result<MeasMatrix> {
    if m == 0 || m > count {
        return Err(PatError::InvalidArgument(format!(
            "bernoulli matrix needs 1 <= m <= M, got m = {m}, M = {count}"
        )));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut rng = SeededRng::new(seed);
    let entries = Array2::from_shape_simple_fn((m, count), || scale * rng.sign());
    Ok(MeasMatrix {
        entries,
        kind: MeasKind::Bernoulli,
        seed: Some(seed),
    })
}

/// Compressed data `g`, one row per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CSData {
    pub values: Array2<f64>,
}

impl CSData {
    pub fn zeros(m: usize, q: usize) -> Self {
        Self {
            values: Array2::zeros((m, q)),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &CSData) -> f64 {
        self.values.iter().zip(other.values.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma * max|g|`.
pub fn add_noise(g: &CSData, sigma: f64, seed: u64) -> Result<CSData> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(PatError::InvalidArgument(format!(
            "noise level must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(g.clone());
    }
    let std = sigma * g.max_abs();
    let mut rng = SeededRng::new(seed);
    let mut values = g.values.clone();
    values.iter_mut().for_each(|v| *v += std * rng.normal());
    Ok(CSData { values })
}

/// The compressed-sensing forward map `A = (S (x) I) W` on a fixed geometry.
///
/// Only the sensor channels that `S` actually uses are simulated.
#[derive(Debug)]
pub struct CSOperator {
    matrix: MeasMatrix,
    used: Vec<usize>,
    reduced: Array2<f64>,
    wave: WaveOperator,
    full_sensors: crate::geometry::SensorArray,
    norm: OnceLock<f64>,
}

impl CSOperator {
    /// `wave` must describe the full `M`-sensor array.
    pub fn new(matrix: MeasMatrix, wave: &WaveOperator) -> Result<Self> {
        let count = wave.sensors().len();
        if matrix.cols() != count {
            return Err(shape_err(
                format!("measurement matrix with {count} columns"),
                format!("{} columns", matrix.cols()),
            ));
        }
        let used = matrix.used_columns();
        let reduced = matrix.entries.select(ndarray::Axis(1), &used);
        let sensors = wave.sensors().select(&used);
        let reduced_wave = WaveOperator::new(*wave.grid(), sensors, *wave.time(), *wave.medium())?;
        Ok(Self {
            matrix,
            used,
            reduced,
            wave: reduced_wave,
            full_sensors: wave.sensors().clone(),
            norm: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &MeasMatrix {
        &self.matrix
    }

    pub fn wave(&self) -> &WaveOperator {
        &self.wave
    }

    pub fn grid(&self) -> &crate::geometry::ImageGrid {
        self.wave.grid()
    }

    pub fn time(&self) -> &crate::geometry::TimeAxis {
        self.wave.time()
    }

    pub fn sound_speed(&self) -> f64 {
        self.wave.medium().sound_speed
    }

    pub fn measurements(&self) -> usize {
        self.matrix.rows()
    }

    fn check_data(&self, g: &CSData) -> Result<()> {
        let dim = (self.matrix.rows(), self.time().q);
        if g.values.dim() != dim {
            return Err(shape_err(format!("{dim:?}"), format!("{:?}", g.values.dim())));
        }
        Ok(())
    }

    /// `g[j, l] = sum_k S[j, k] p(s_k, t_l)`.
    pub fn forward(&self, f: &Image) -> Result<CSData> {
        let traces = self.wave.forward(f)?;
        Ok(CSData {
            values: self.reduced.dot(&traces.values),
        })
    }

    /// Exact transpose `W^T (S^T (x) I) g`.
    pub fn transpose(&self, g: &CSData) -> Result<Image> {
        self.check_data(g)?;
        self.wave.transpose_values(&self.reduced.t().dot(&g.values))
    }

    /// Expands `g` to full-array traces `(S^T (x) I) g`.
    pub fn expand(&self, g: &CSData) -> Result<SensorData> {
        self.check_data(g)?;
        let reduced = self.reduced.t().dot(&g.values);
        let mut full = Array2::zeros((self.full_sensors.len(), self.time().q));
        for (row, &k) in self.used.iter().enumerate() {
            full.row_mut(k).assign(&reduced.row(row));
        }
        SensorData::new(self.full_sensors.clone(), *self.time(), full)
    }

    /// Backprojection layer `B (S^T (x) I) g` with `B` the filtered
    /// backprojection; unused channels are zero and skipped.
    pub fn backproject(&self, g: &CSData) -> Result<Image> {
        self.check_data(g)?;
        let traces = SensorData::new(
            self.wave.sensors().clone(),
            *self.time(),
            self.reduced.t().dot(&g.values),
        )?;
        fbp(&traces, self.grid(), self.wave.medium())
    }

    /// Cached power-iteration estimate of `||A||` (40 iterations, seed 0).
    pub fn norm_estimate(&self) -> Result<f64> {
        if let Some(&n) = self.norm.get() {
            return Ok(n);
        }
        let n = op_norm(self, 40, 0)?;
        Ok(*self.norm.get_or_init(|| n))
    }

    pub fn data_from_flat(&self, flat: Array1<f64>) -> Result<CSData> {
        let dim = (self.matrix.rows(), self.time().q);
        let len = flat.len();
        let values = flat
            .into_shape_with_order(dim)
            .map_err(|_| shape_err(dim.0 * dim.1, len))?;
        Ok(CSData { values })
    }
}

impl LinearOperator for CSOperator {
    fn input_len(&self) -> usize {
        self.grid().len()
    }

    fn output_len(&self) -> usize {
        self.matrix.rows() * self.time().q
    }

    fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        let f = Image::from_flat(*self.grid(), x.clone())?;
        Ok(self.forward(&f)?.values.iter().copied().collect())
    }

    fn apply_transpose(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        let g = self.data_from_flat(y.clone())?;
        Ok(self.transpose(&g)?.to_flat())
    }
}

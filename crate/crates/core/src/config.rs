//! JSON experiment configuration.
//!
//! A config file may name a `preset`; its remaining keys are merged
//! recursively over the preset (objects merge key by key, everything else
//! replaces). Unknown keys are rejected with the path of the offending
//! field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cs::{bernoulli_matrix, subsampling_matrix, MeasKind, MeasMatrix};
use crate::error::{PatError, Result};
use crate::geometry::{make_sensors, make_time_axis, ImageGrid, Medium, SensorArray, TimeAxis};
use crate::l1::JointParams;
use crate::nn::{NetArch, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub count: usize,
    pub radius: f64,
    pub arc_start_deg: f64,
    pub arc_end_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub samples: usize,
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub grid: GridConfig,
    pub sensors: SensorConfig,
    pub time: TimeConfig,
    pub sound_speed: f64,
}

impl GeometryConfig {
    pub fn grid(&self) -> Result<ImageGrid> {
        let g = &self.grid;
        ImageGrid::from_extent(g.nx, g.ny, g.x_min, g.x_max, g.y_min, g.y_max)
    }

    pub fn sensors(&self) -> Result<SensorArray> {
        let s = &self.sensors;
        make_sensors(
            s.count,
            s.radius,
            s.arc_start_deg.to_radians(),
            s.arc_end_deg.to_radians(),
        )
    }

    pub fn time(&self) -> Result<TimeAxis> {
        make_time_axis(self.time.samples, self.time.t_final)
    }

    pub fn medium(&self) -> Result<Medium> {
        Medium::new(self.sound_speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub kind: MeasKind,
    pub m: usize,
    /// Seed of the Bernoulli matrix.
    pub seed: u64,
    /// Noise standard deviation relative to `max |g|`.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl MeasurementConfig {
    pub fn matrix(&self, kind: MeasKind, count: usize) -> Result<MeasMatrix> {
        match kind {
            MeasKind::Subsampling => subsampling_matrix(self.m, count),
            MeasKind::Bernoulli => bernoulli_matrix(self.m, count, self.seed),
            MeasKind::Identity => Ok(MeasMatrix::identity(count)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IstaConfig {
    pub beta: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    pub iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub joint: JointParams,
    pub two_stage: IstaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: NetArch,
    pub train: TrainConfig,
    /// Pretrained weights; when absent `bench` trains one network per
    /// measurement matrix.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Number of vessel phantoms in the generated training set.
    pub training_samples: usize,
    /// Seed of the first training phantom.
    pub training_seed: u64,
    /// Relative noise added to training data (zero by default).
    #[serde(default)]
    pub training_noise: f64,
    pub landweber_iters: usize,
    /// Landweber step; `None` selects `0.9 / |A|^2`.
    #[serde(default)]
    pub landweber_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PhantomSpec {
    Disc {
        center: [f64; 2],
        radius: f64,
        value: f64,
    },
    Vessel {
        seed: u64,
    },
    /// `count` vessel phantoms with consecutive seeds.
    Vessels {
        count: usize,
        first_seed: u64,
    },
    Shepp,
}

impl PhantomSpec {
    /// Expands into single phantoms with their table names.
    pub fn expand(&self) -> Vec<(String, PhantomSpec)> {
        match *self {
            PhantomSpec::Vessels { count, first_seed } => (0..count as u64)
                .map(|i| {
                    let seed = first_seed + i;
                    (format!("vessel-{seed}"), PhantomSpec::Vessel { seed })
                })
                .collect(),
            PhantomSpec::Vessel { seed } => vec![(format!("vessel-{seed}"), *self)],
            PhantomSpec::Disc { .. } => vec![("disc".to_string(), *self)],
            PhantomSpec::Shepp => vec![("shepp".to_string(), *self)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fbp,
    L1Joint,
    L1Twostage,
    NetRes,
    NetNull,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::L1Joint => "l1-joint",
            Method::L1Twostage => "l1-twostage",
            Method::NetRes => "net-res",
            Method::NetNull => "net-null",
        }
    }

    pub fn needs_network(&self) -> bool {
        matches!(self, Method::NetRes | Method::NetNull)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub phantoms: Vec<PhantomSpec>,
    pub matrices: Vec<MeasKind>,
    pub methods: Vec<Method>,
    pub metrics_csv: PathBuf,
    /// Where reconstructions and trained weights are written.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// When false the `seconds` column is written as 0 so repeated runs
    /// are byte-identical.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub geometry: GeometryConfig,
    pub measurement: MeasurementConfig,
    pub solver: SolverConfig,
    pub network: NetworkConfig,
    pub evaluation: EvaluationConfig,
}

pub const PRESETS: [&str; 3] = ["paper-2d", "paper-2d-shepp", "paper-desk"];

/// The raw JSON of a named preset.
pub fn preset(name: &str) -> Result<Value> {
    let network = json!({
        "arch": { "levels": 2, "base_channels": 8, "kernel": 3, "convs_per_block": 2, "negative_slope": 0.1 },
        "landweber_iters": 10,
        "landweber_step": null,
        "training_noise": 0.0,
        "weights": null
    });
    let paper = json!({
        "preset": "paper-2d",
        "geometry": {
            "grid": { "nx": 256, "ny": 256, "x_min": -5e-6, "x_max": 9e-6, "y_min": -12.5e-6, "y_max": 1.5e-6 },
            "sensors": { "count": 240, "radius": 40e-6, "arc_start_deg": 35.0, "arc_end_deg": 324.0 },
            "time": { "samples": 747, "t_final": 4.9749e-8 },
            "sound_speed": 1490.7
        },
        "measurement": { "kind": "subsampling", "m": 60, "seed": 0, "noise_sigma": 0.0, "noise_seed": 0 },
        "solver": {
            "joint": { "alpha": 0.001, "beta": 0.005, "mu": 0.125, "iters": 70 },
            "two_stage": { "beta": 0.005, "mu": null, "iters": 70 }
        },
        "network": merge_values(network.clone(), json!({
            "train": { "epochs": 200, "batch": 1, "momentum": 0.9, "lr_start": 0.005, "lr_end": 0.0025, "seed": 0 },
            "training_samples": 5000,
            "training_seed": 0
        })),
        "evaluation": {
            "phantoms": [ { "kind": "vessels", "count": 50, "first_seed": 100000 } ],
            "matrices": ["subsampling", "bernoulli"],
            "methods": ["fbp", "l1-joint", "net-res", "net-null"],
            "metrics_csv": "metrics.csv",
            "output_dir": null,
            "record_timing": true
        }
    });
    match name {
        "paper-2d" => Ok(paper),
        "paper-2d-shepp" => Ok(merge_values(
            paper,
            json!({
                "preset": "paper-2d-shepp",
                "solver": { "joint": { "mu": 0.1, "iters": 50 } },
                "evaluation": { "phantoms": [ { "kind": "shepp" } ] }
            }),
        )),
        "paper-desk" => Ok(json!({
            "preset": "paper-desk",
            "geometry": {
                "grid": { "nx": 64, "ny": 64, "x_min": -32.0, "x_max": 32.0, "y_min": -32.0, "y_max": 32.0 },
                "sensors": { "count": 60, "radius": 48.0, "arc_start_deg": 0.0, "arc_end_deg": 360.0 },
                "time": { "samples": 129, "t_final": 96.0 },
                "sound_speed": 1.0
            },
            "measurement": { "kind": "subsampling", "m": 15, "seed": 7, "noise_sigma": 0.0, "noise_seed": 0 },
            "solver": {
                "joint": { "alpha": 0.001, "beta": 0.005, "mu": null, "iters": 70 },
                "two_stage": { "beta": 0.001, "mu": null, "iters": 70 }
            },
            "network": merge_values(network, json!({
                "train": { "epochs": 10, "batch": 1, "momentum": 0.9, "lr_start": 0.01, "lr_end": 0.005, "seed": 1 },
                "training_samples": 200,
                "training_seed": 0
            })),
            "evaluation": {
                "phantoms": [ { "kind": "vessels", "count": 20, "first_seed": 1000 } ],
                "matrices": ["subsampling", "bernoulli"],
                "methods": ["fbp", "l1-joint", "net-res", "net-null"],
                "metrics_csv": "metrics.csv",
                "output_dir": null,
                "record_timing": true
            }
        })),
        other => Err(PatError::Config {
            path: "preset".into(),
            message: format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
        }),
    }
}

/// Recursive merge of `over` into `base`.
pub fn merge_values(mut base: Value, over: Value) -> Value {
    match (&mut base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge_values(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            base
        }
        (_, over) => over,
    }
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let value = match value.get("preset").and_then(Value::as_str) {
            Some(name) => merge_values(preset(name)?, value),
            None => value,
        };
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| PatError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let value: Value = serde_path_to_error::deserialize(de).map_err(|e| PatError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_value(value)
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.evaluation.metrics_csv);
        if let Some(p) = cfg.evaluation.output_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.network.weights.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_value(preset(name)?)
    }

    fn validate(&self) -> Result<()> {
        let field = |path: &str, r: Result<()>| {
            r.map_err(|e| PatError::Config {
                path: path.to_string(),
                message: e.to_string(),
            })
        };
        field("geometry.grid", self.geometry.grid().map(|_| ()))?;
        field("geometry.sensors", self.geometry.sensors().map(|_| ()))?;
        field("geometry.time", self.geometry.time().map(|_| ()))?;
        field("geometry.sound_speed", self.geometry.medium().map(|_| ()))?;
        let count = self.geometry.sensors.count;
        for kind in [self.measurement.kind].iter().chain(&self.evaluation.matrices) {
            field("measurement.m", self.measurement.matrix(*kind, count).map(|_| ()))?;
        }
        if !(self.measurement.noise_sigma >= 0.0 && self.measurement.noise_sigma.is_finite()) {
            return Err(PatError::Config {
                path: "measurement.noise_sigma".into(),
                message: "must be a nonnegative number".into(),
            });
        }
        field("solver.joint", self.solver.joint.validate())?;
        let ts = &self.solver.two_stage;
        if ts.beta.is_nan() || ts.beta < 0.0 || ts.mu.is_some_and(|m| m <= 0.0) || ts.iters == 0 {
            return Err(PatError::Config {
                path: "solver.two_stage".into(),
                message: "need beta >= 0, mu > 0 and iters >= 1".into(),
            });
        }
        field("network.arch", self.network.arch.validate())?;
        field("network.train", self.network.train.validate())?;
        let grid = self.geometry.grid;
        field("network.arch", self.network.arch.check_input(grid.ny, grid.nx))?;
        if self.network.landweber_step.is_some_and(|s| s <= 0.0) {
            return Err(PatError::Config {
                path: "network.landweber_step".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_is_verbatim() {
        let cfg = ExperimentConfig::preset("paper-2d").unwrap();
        let g = &cfg.geometry;
        assert_eq!((g.grid.nx, g.grid.ny), (256, 256));
        assert_eq!((g.grid.x_min, g.grid.x_max), (-5e-6, 9e-6));
        assert_eq!((g.grid.y_min, g.grid.y_max), (-12.5e-6, 1.5e-6));
        assert_eq!(g.sensors.count, 240);
        assert_eq!(g.sensors.radius, 40e-6);
        assert_eq!((g.sensors.arc_start_deg, g.sensors.arc_end_deg), (35.0, 324.0));
        assert_eq!(g.time.samples, 747);
        assert_eq!(g.time.t_final, 4.9749e-8);
        assert_eq!(g.sound_speed, 1490.7);
        assert_eq!(cfg.measurement.m, 60);
        let j = cfg.solver.joint;
        assert_eq!((j.alpha, j.beta, j.mu, j.iters), (0.001, 0.005, Some(0.125), 70));
        assert_eq!(cfg.network.landweber_iters, 10);
        let t = cfg.network.train;
        assert_eq!(
            (t.epochs, t.batch, t.momentum, t.lr_start, t.lr_end),
            (200, 1, 0.9, 0.005, 0.0025)
        );

        let shepp = ExperimentConfig::preset("paper-2d-shepp").unwrap();
        assert_eq!((shepp.solver.joint.mu, shepp.solver.joint.iters), (Some(0.1), 50));
        assert_eq!(shepp.geometry, cfg.geometry);
    }

    #[test]
    fn desk_preset_loads() {
        let cfg = ExperimentConfig::preset("paper-desk").unwrap();
        assert_eq!(cfg.geometry.sensors.count, 60);
        assert_eq!(cfg.measurement.m, 15);
        assert!(cfg.geometry.grid().unwrap().footprint_radius() < cfg.geometry.sensors.radius);
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = ExperimentConfig::from_json(
            r#"{"preset": "paper-desk", "solver": {"joint": {"beta": 0.01}}, "measurement": {"kind": "bernoulli"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.solver.joint.beta, 0.01);
        assert_eq!(cfg.solver.joint.alpha, 0.001);
        assert_eq!(cfg.measurement.kind, MeasKind::Bernoulli);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = ExperimentConfig::from_json(r#"{"preset": "paper-desk", "solver": {"joint": {"alpah": 1.0}}}"#)
            .unwrap_err();
        match err {
            PatError::Config { path, .. } => assert_eq!(path, "solver.joint.alpah"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            r#"{"preset": "paper-desk", "solver": {"joint": {"alpha": -1.0}}}"#,
            r#"{"preset": "paper-desk", "measurement": {"m": 16}}"#,
            r#"{"preset": "paper-desk", "geometry": {"time": {"samples": 1}}}"#,
            r#"{"preset": "nope"}"#,
            r#"{"preset": "paper-desk", "network": {"train": {"momentum": 1.5}}}"#,
            "{ not json",
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(PatError::Config { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn phantom_list_expands() {
        let spec = PhantomSpec::Vessels {
            count: 3,
            first_seed: 10,
        };
        let names: Vec<String> = spec.expand().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["vessel-10", "vessel-11", "vessel-12"]);
    }

    #[test]
    fn merge_replaces_scalars_and_arrays() {
        let merged = merge_values(json!({"a": {"b": 1, "c": [1, 2]}, "d": 1}), json!({"a": {"c": [3]}}));
        assert_eq!(merged, json!({"a": {"b": 1, "c": [3]}, "d": 1}));
    }
}

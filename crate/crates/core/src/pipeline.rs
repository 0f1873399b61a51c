//! End-to-end experiment pipelines driven by an [`ExperimentConfig`].

use std::path::Path;
use std::time::Instant;

use crate::config::{ExperimentConfig, Method, PhantomSpec};
use crate::cs::{add_noise, CSData, CSOperator, MeasKind, MeasMatrix};
use crate::error::{shape_err, Result};
use crate::geometry::ImageGrid;
use crate::image::Image;
use crate::io::{save_image, save_metrics_csv, save_weights, MetricsRow};
use crate::l1::{joint_solve, two_stage, JointState};
use crate::metrics::evaluate;
use crate::nn::{nullspace_recon, residual_recon, train, NetParams, TrainResult};
use crate::phantom::{disc_phantom, shepp_logan, vessel_phantom};
use crate::wave::{SensorData, WaveOperator};

/// Geometry and full-array wave operator built from a config.
#[derive(Debug)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub grid: ImageGrid,
    pub wave: WaveOperator,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let geo = &config.geometry;
        let grid = geo.grid()?;
        let wave = WaveOperator::new(grid, geo.sensors()?, geo.time()?, geo.medium()?)?;
        Ok(Self {
            config: config.clone(),
            grid,
            wave,
        })
    }

    pub fn matrix(&self, kind: MeasKind) -> Result<MeasMatrix> {
        self.config.measurement.matrix(kind, self.wave.sensors().len())
    }

    pub fn operator(&self, kind: MeasKind) -> Result<CSOperator> {
        CSOperator::new(self.matrix(kind)?, &self.wave)
    }

    pub fn simulate(&self, f: &Image) -> Result<SensorData> {
        self.wave.forward(f)
    }
}

pub fn make_phantom(spec: &PhantomSpec, grid: &ImageGrid) -> Image {
    match *spec {
        PhantomSpec::Disc { center, radius, value } => disc_phantom(grid, center, radius, value),
        PhantomSpec::Vessel { seed } => vessel_phantom(grid, seed),
        PhantomSpec::Vessels { first_seed, .. } => vessel_phantom(grid, first_seed),
        PhantomSpec::Shepp => shepp_logan(grid),
    }
}

/// Applies `S` to full traces and adds noise of relative level `sigma`.
pub fn measure(d: &SensorData, s: &MeasMatrix, sigma: f64, noise_seed: u64) -> Result<CSData> {
    if s.cols() != d.values.nrows() {
        return Err(shape_err(format!("{} sensor channels", s.cols()), d.values.nrows()));
    }
    let g = CSData {
        values: s.entries.dot(&d.values),
    };
    if sigma > 0.0 {
        add_noise(&g, sigma, noise_seed)
    } else {
        Ok(g)
    }
}

/// Landweber step from the config, defaulting to `0.9 / |A|^2` with a small
/// safety margin on the norm estimate.
pub fn landweber_step(a: &CSOperator, cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.network.landweber_step {
        Some(s) => Ok(s),
        None => {
            let n = 1.02 * a.norm_estimate()?;
            Ok(0.9 / (n * n))
        }
    }
}

/// Runs the joint solver with the configured parameters.
pub fn joint(g: &CSData, a: &CSOperator, cfg: &ExperimentConfig) -> Result<JointState> {
    joint_solve(g, a, &cfg.solver.joint)
}

pub fn reconstruct(
    method: Method,
    g: &CSData,
    a: &CSOperator,
    cfg: &ExperimentConfig,
    params: Option<&NetParams>,
) -> Result<Image> {
    let need = || {
        params.ok_or_else(|| {
            crate::error::PatError::InvalidArgument(format!("method {} needs network weights", method.as_str()))
        })
    };
    match method {
        Method::Fbp => a.backproject(g),
        Method::L1Joint => Ok(joint(g, a, cfg)?.f),
        Method::L1Twostage => {
            let t = &cfg.solver.two_stage;
            two_stage(g, a, t.beta, t.mu, t.iters)
        }
        Method::NetRes => residual_recon(g, a, need()?),
        Method::NetNull => nullspace_recon(g, a, need()?, cfg.network.landweber_iters, landweber_step(a, cfg)?),
    }
}

/// Pairs `(A# A f, f)` for vessel phantoms with consecutive seeds, with
/// optional relative noise on the data.
pub fn training_set(a: &CSOperator, cfg: &ExperimentConfig) -> Result<Vec<(Image, Image)>> {
    let net = &cfg.network;
    (0..net.training_samples as u64)
        .map(|i| {
            let seed = net.training_seed + i;
            let f = vessel_phantom(a.grid(), seed);
            let mut g = a.forward(&f)?;
            if net.training_noise > 0.0 {
                g = add_noise(&g, net.training_noise, seed)?;
            }
            Ok((a.backproject(&g)?, f))
        })
        .collect()
}

/// Trains on the generated set; parameters are rounded to the single
/// precision of the weights file so saved and in-memory networks agree.
pub fn train_network(a: &CSOperator, cfg: &ExperimentConfig) -> Result<TrainResult> {
    let data = training_set(a, cfg)?;
    let mut result = train(&data, cfg.network.arch, &cfg.network.train)?;
    result.params.round_to_f32();
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<MetricsRow>,
}

/// Full comparison over phantoms, matrices and methods. Rows are ordered
/// by matrix, then phantom, then method as listed in the config.
pub fn bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let setup = Setup::new(cfg)?;
    let eval = &cfg.evaluation;
    if let Some(dir) = &eval.output_dir {
        std::fs::create_dir_all(dir)?;
    }
    let phantoms: Vec<(String, Image)> = eval
        .phantoms
        .iter()
        .flat_map(|p| p.expand())
        .map(|(name, spec)| (name, make_phantom(&spec, &setup.grid)))
        .collect();
    let loaded = match &cfg.network.weights {
        Some(path) if eval.methods.iter().any(Method::needs_network) => Some(crate::io::load_weights(path)?.0),
        _ => None,
    };
    let mut rows = Vec::new();
    for &kind in &eval.matrices {
        let a = setup.operator(kind)?;
        let matrix = kind.as_str();
        let params = if !eval.methods.iter().any(Method::needs_network) {
            None
        } else if let Some(p) = &loaded {
            Some(p.clone())
        } else {
            log::info!("training network for {matrix} measurements");
            let trained = train_network(&a, cfg)?;
            if let Some(dir) = &eval.output_dir {
                save_weights(
                    &dir.join(format!("weights-{matrix}.patw")),
                    &trained.params,
                    Some(&cfg.network.train),
                )?;
            }
            Some(trained.params)
        };
        for (i, (name, f)) in phantoms.iter().enumerate() {
            let full = setup.simulate(f)?;
            let g = measure(
                &full,
                a.matrix(),
                cfg.measurement.noise_sigma,
                cfg.measurement.noise_seed.wrapping_add(i as u64),
            )?;
            for &method in &eval.methods {
                let start = Instant::now();
                let recon = reconstruct(method, &g, &a, cfg, params.as_ref())?;
                let seconds = if eval.record_timing {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                let m = evaluate(f, &recon)?;
                log::info!("{name} {matrix} {}: psnr {:.2} dB", method.as_str(), m.psnr);
                if let Some(dir) = &eval.output_dir {
                    save_image(&dir.join(format!("{name}_{matrix}_{}.patt", method.as_str())), &recon)?;
                }
                rows.push(MetricsRow {
                    phantom: name.clone(),
                    matrix: matrix.to_string(),
                    method: method.as_str().to_string(),
                    mse: m.mse,
                    psnr: m.psnr,
                    ssim: m.ssim,
                    seconds,
                });
            }
        }
    }
    Ok(BenchReport { rows })
}

/// Runs [`bench`] and writes the metrics table.
pub fn bench_to_csv(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let report = bench(cfg)?;
    if let Some(parent) = cfg
        .evaluation
        .metrics_csv
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        std::fs::create_dir_all(parent)?;
    }
    save_metrics_csv(Path::new(&cfg.evaluation.metrics_csv), &report.rows)?;
    Ok(report)
}

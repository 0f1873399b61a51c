use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pat_core::config::{ExperimentConfig, Method, PhantomSpec};
use pat_core::cs::{CSData, MeasKind};
use pat_core::io;
use pat_core::pipeline::{self, Setup};
use pat_core::{evaluate, Image, ImageGrid, PatError, SensorData};

#[derive(Parser)]
#[command(
    name = "cspat",
    version,
    about = "Compressed-sensing photoacoustic tomography toolkit"
)]
struct Cli {
    /// Worker threads (1 gives the reproducible single-threaded mode).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    Disc,
    Vessel,
    Shepp,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fbp,
    L1Joint,
    L1Twostage,
    NetRes,
    NetNull,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fbp => Method::Fbp,
            MethodArg::L1Joint => Method::L1Joint,
            MethodArg::L1Twostage => Method::L1Twostage,
            MethodArg::NetRes => Method::NetRes,
            MethodArg::NetNull => Method::NetNull,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixArg {
    Subsampling,
    Bernoulli,
}

impl From<MatrixArg> for MeasKind {
    fn from(m: MatrixArg) -> Self {
        match m {
            MatrixArg::Subsampling => MeasKind::Subsampling,
            MatrixArg::Bernoulli => MeasKind::Bernoulli,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a phantom image.
    Phantom {
        #[arg(long, value_enum)]
        kind: PhantomKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Takes the grid from this config instead of `--size`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Side of a centered unit-pixel grid.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Disc radius; defaults to a quarter of the grid width.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Computes full sensor traces of a phantom.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Applies the measurement matrix (and configured noise) to traces.
    Measure {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `measurement.kind`.
        #[arg(long, value_enum)]
        matrix: Option<MatrixArg>,
        /// Also stores the matrix.
        #[arg(long)]
        save_matrix: Option<PathBuf>,
    },
    /// Reconstructs an image from compressed measurements.
    Recon {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum)]
        matrix: Option<MatrixArg>,
        /// Objective trace of the joint solver as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Trains the post-processing network on the phantoms in a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory of phantom tensor files (`*.patt`) used as targets.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        matrix: Option<MatrixArg>,
        /// Fill an empty dataset directory with this many vessel phantoms.
        #[arg(long)]
        generate: Option<usize>,
    },
    /// Scores reconstructions against a reference.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        recon: Vec<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Runs the full comparison described by the config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Writes zero in the seconds column.
        #[arg(long)]
        no_timing: bool,
    },
    /// Converts an image tensor to an 8-bit PGM.
    ExportPgm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn matrix_kind(cfg: &ExperimentConfig, arg: Option<MatrixArg>) -> MeasKind {
    arg.map(MeasKind::from).unwrap_or(cfg.measurement.kind)
}

fn load_grid_image(path: &Path, grid: ImageGrid) -> Result<Image> {
    io::load_image(path, grid).with_context(|| format!("reading image {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom {
            kind,
            out,
            seed,
            config,
            size,
            radius,
        } => {
            let grid = match config {
                Some(c) => load_config(&c)?.geometry.grid()?,
                None => ImageGrid::centered(size, 1.0)?,
            };
            let width = (grid.nx as f64 * grid.dx).min(grid.ny as f64 * grid.dy);
            let center = [
                grid.x0 + 0.5 * (grid.nx - 1) as f64 * grid.dx,
                grid.y0 + 0.5 * (grid.ny - 1) as f64 * grid.dy,
            ];
            let spec = match kind {
                PhantomKind::Disc => PhantomSpec::Disc {
                    center,
                    radius: radius.unwrap_or(0.25 * width),
                    value: 1.0,
                },
                PhantomKind::Vessel => PhantomSpec::Vessel { seed },
                PhantomKind::Shepp => PhantomSpec::Shepp,
            };
            io::save_image(&out, &pipeline::make_phantom(&spec, &grid))?;
        }
        Command::Simulate { config, phantom, out } => {
            let setup = Setup::new(&load_config(&config)?)?;
            let f = load_grid_image(&phantom, setup.grid)?;
            io::save_matrix(&out, &setup.simulate(&f)?.values)?;
        }
        Command::Measure {
            config,
            input,
            out,
            matrix,
            save_matrix,
        } => {
            let cfg = load_config(&config)?;
            let setup = Setup::new(&cfg)?;
            let s = setup.matrix(matrix_kind(&cfg, matrix))?;
            let traces = SensorData::new(
                setup.wave.sensors().clone(),
                *setup.wave.time(),
                io::load_matrix(&input)?,
            )?;
            let m = &cfg.measurement;
            let g = pipeline::measure(&traces, &s, m.noise_sigma, m.noise_seed)?;
            io::save_matrix(&out, &g.values)?;
            if let Some(p) = save_matrix {
                io::save_meas_matrix(&p, &s)?;
            }
        }
        Command::Recon {
            method,
            config,
            input,
            out,
            weights,
            matrix,
            trace,
        } => {
            let cfg = load_config(&config)?;
            let setup = Setup::new(&cfg)?;
            let a = setup.operator(matrix_kind(&cfg, matrix))?;
            let g = CSData {
                values: io::load_matrix(&input)?,
            };
            let method = Method::from(method);
            let weights = weights.or_else(|| cfg.network.weights.clone());
            let params = match (&weights, method.needs_network()) {
                (Some(p), true) => Some(
                    io::load_weights(p)
                        .with_context(|| format!("reading weights {}", p.display()))?
                        .0,
                ),
                (None, true) => bail!("method {} needs --weights", method.as_str()),
                _ => None,
            };
            let img = if let (Method::L1Joint, Some(path)) = (method, &trace) {
                let state = pipeline::joint(&g, &a, &cfg)?;
                io::save_trace_csv(path, &state.trace)?;
                state.f
            } else {
                pipeline::reconstruct(method, &g, &a, &cfg, params.as_ref())?
            };
            io::save_image(&out, &img)?;
        }
        Command::Train {
            config,
            dataset,
            out,
            matrix,
            generate,
        } => {
            let cfg = load_config(&config)?;
            let setup = Setup::new(&cfg)?;
            let a = setup.operator(matrix_kind(&cfg, matrix))?;
            if let Some(n) = generate {
                std::fs::create_dir_all(&dataset)?;
                for i in 0..n as u64 {
                    let seed = cfg.network.training_seed + i;
                    let f = pat_core::vessel_phantom(&setup.grid, seed);
                    io::save_image(&dataset.join(format!("vessel-{seed:06}.patt")), &f)?;
                }
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dataset)
                .with_context(|| format!("reading dataset {}", dataset.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "patt"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no .patt files in {}", dataset.display());
            }
            let mut pairs = Vec::with_capacity(files.len());
            for p in &files {
                let f = load_grid_image(p, setup.grid)?;
                pairs.push((a.backproject(&a.forward(&f)?)?, f));
            }
            let mut result = pat_core::train(&pairs, cfg.network.arch, &cfg.network.train)?;
            result.params.round_to_f32();
            log::info!("loss trace {:?}", result.loss_trace);
            io::save_weights(&out, &result.params, Some(&cfg.network.train))?;
        }
        Command::Eval { truth, recon, csv } => {
            let t = io::load_matrix(&truth)?;
            let (ny, nx) = t.dim();
            let grid = ImageGrid::new(nx, ny, 0.0, 0.0, 1.0, 1.0)?;
            let truth_img = Image::new(grid, t)?;
            let mut rows = Vec::new();
            for r in &recon {
                let img = load_grid_image(r, grid)?;
                let m = evaluate(&truth_img, &img)?;
                rows.push(io::MetricsRow {
                    phantom: stem(&truth),
                    matrix: String::new(),
                    method: stem(r),
                    mse: m.mse,
                    psnr: m.psnr,
                    ssim: m.ssim,
                    seconds: 0.0,
                });
            }
            io::save_metrics_csv(&csv, &rows)?;
        }
        Command::Bench { config, no_timing } => {
            let mut cfg = load_config(&config)?;
            if no_timing {
                cfg.evaluation.record_timing = false;
            }
            let report = pipeline::bench_to_csv(&cfg)?;
            println!(
                "{} rows written to {}",
                report.rows.len(),
                cfg.evaluation.metrics_csv.display()
            );
        }
        Command::ExportPgm { input, out } => {
            let m = io::load_matrix(&input)?;
            let (ny, nx) = m.dim();
            let img = Image::new(ImageGrid::new(nx, ny, 0.0, 0.0, 1.0, 1.0)?, m)?;
            io::save_pgm(&out, &img)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PatError>() {
        Some(PatError::Config { .. }) => 2,
        Some(PatError::Divergence { .. } | PatError::TrainingDiverged { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

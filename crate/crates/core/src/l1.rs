//! Sparse recovery by proximal forward-backward splitting.
//!
//! The joint problem minimizes over `(f, h)`
//!
//! ```text
//! 1/2 |A f - g|^2 + 1/2 |A h - D_t^2 g|^2 + alpha/2 |L f - h/c^2|^2
//!     + beta |h|_1 + I_C(f)
//! ```
//!
//! with `C` the nonnegative orthant, `L` the discrete Laplacian and `D_t^2`
//! the second time derivative of the data.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cs::{CSData, CSOperator};
use crate::error::{PatError, Result};
use crate::image::Image;
use crate::linop::LinearOperator;
use crate::wave::{laplacian, second_time_derivative, solve_poisson};

/// Componentwise soft threshold `sign(h) max(|h| - tau, 0)`.
pub fn prox_l1(h: &Image, tau: f64) -> Image {
    h.map(|v| soft(v, tau))
}

fn soft(v: f64, tau: f64) -> f64 {
    let m = v.abs() - tau;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// Projection onto the nonnegative orthant.
pub fn prox_nonneg(f: &Image) -> Image {
    f.map(|v| v.max(0.0))
}

/// Parameters of the joint iteration. `mu = None` selects `0.9 / Lip`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    pub iters: usize,
    /// Expected data noise level; only used to sanity-check `beta`.
    #[serde(default)]
    pub noise_level: Option<f64>,
}

impl JointParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(PatError::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if let Some(mu) = self.mu {
            positive("mu", mu)?;
        }
        if self.iters == 0 {
            return Err(PatError::InvalidArgument("iters must be at least 1".into()));
        }
        if let Some(delta) = self.noise_level {
            if delta > 0.0 && !(0.01..=100.0).contains(&(self.beta / delta)) {
                log::warn!("beta = {} is far from the noise level {delta}", self.beta);
            }
        }
        Ok(())
    }
}

/// One row of the objective trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub data_residual_f: f64,
    pub data_residual_h: f64,
    pub coupling_residual: f64,
}

#[derive(Debug, Clone)]
pub struct JointState {
    pub f: Image,
    pub h: Image,
    pub k: usize,
    /// Entry `k` is the objective at iterate `k`, starting from `(0, 0)`.
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Bound on the Lipschitz constant of the smooth part's gradient,
/// `|A|^2 + alpha (|L|^2 + c^-4)` with `|L| <= 8 / h^2`.
pub fn joint_lipschitz(a: &CSOperator, alpha: f64) -> Result<f64> {
    let h = a.grid().pixel_size()?;
    let c = a.sound_speed();
    let norm = a.norm_estimate()? * NORM_SAFETY;
    let lap = 8.0 / (h * h);
    Ok(norm * norm + alpha * (lap * lap + c.powi(-4)))
}

// Power iteration approaches the norm from below.
const NORM_SAFETY: f64 = 1.02;

struct JointProblem<'a> {
    a: &'a CSOperator,
    g: &'a CSData,
    d2g: CSData,
    alpha: f64,
    beta: f64,
    c2: f64,
}

struct Evaluation {
    row: TraceRow,
    grad_f: Image,
    grad_h: Image,
}

impl<'a> JointProblem<'a> {
    fn new(a: &'a CSOperator, g: &'a CSData, alpha: f64, beta: f64, c: f64) -> Result<Self> {
        let d2g = CSData {
            values: second_time_derivative(g.values.view(), a.time().dt)?,
        };
        Ok(Self {
            a,
            g,
            d2g,
            alpha,
            beta,
            c2: c * c,
        })
    }

    fn evaluate(&self, f: &Image, h: &Image, with_grad: bool) -> Result<Evaluation> {
        let rf = residual(&self.a.forward(f)?, self.g);
        let rh = residual(&self.a.forward(h)?, &self.d2g);
        let coupling = laplacian(f)?.add_scaled(-1.0 / self.c2, h);
        let (nf, nh, nc) = (rf.norm(), rh.norm(), coupling.norm());
        let l1: f64 = h.values.iter().map(|v| v.abs()).sum();
        let objective = 0.5 * nf * nf + 0.5 * nh * nh + 0.5 * self.alpha * nc * nc + self.beta * l1;
        let row = TraceRow {
            iteration: 0,
            objective,
            data_residual_f: nf,
            data_residual_h: nh,
            coupling_residual: nc,
        };
        if !with_grad {
            let zero = Image::zeros(f.grid);
            return Ok(Evaluation {
                row,
                grad_f: zero.clone(),
                grad_h: zero,
            });
        }
        let grad_f = self.a.transpose(&rf)?.add_scaled(self.alpha, &laplacian(&coupling)?);
        let grad_h = self.a.transpose(&rh)?.add_scaled(-self.alpha / self.c2, &coupling);
        Ok(Evaluation { row, grad_f, grad_h })
    }
}

fn residual(x: &CSData, y: &CSData) -> CSData {
    CSData {
        values: &x.values - &y.values,
    }
}

/// Gradient of the smooth part with respect to `f` and `h`.
///
/// The coupling term enters `grad_f` as `+alpha L (L f - h/c^2)`, which is
/// what differentiating the objective gives for the symmetric `L`.
pub fn grad_smooth(f: &Image, h: &Image, g: &CSData, a: &CSOperator, alpha: f64, c: f64) -> Result<(Image, Image)> {
    f.ensure_same_shape(h)?;
    let problem = JointProblem::new(a, g, alpha, 0.0, c)?;
    let e = problem.evaluate(f, h, true)?;
    Ok((e.grad_f, e.grad_h))
}

/// Smooth part of the joint objective (without the l1 term).
pub fn smooth_objective(f: &Image, h: &Image, g: &CSData, a: &CSOperator, alpha: f64, c: f64) -> Result<f64> {
    let problem = JointProblem::new(a, g, alpha, 0.0, c)?;
    Ok(problem.evaluate(f, h, false)?.row.objective)
}

/// Full joint objective at `(f, h)`; `f` is assumed nonnegative.
pub fn joint_objective(f: &Image, h: &Image, g: &CSData, a: &CSOperator, alpha: f64, beta: f64) -> Result<f64> {
    let problem = JointProblem::new(a, g, alpha, beta, a.sound_speed())?;
    Ok(problem.evaluate(f, h, false)?.row.objective)
}

/// Proximal gradient iteration for the joint problem from `f = h = 0`.
pub fn joint_solve(g: &CSData, a: &CSOperator, params: &JointParams) -> Result<JointState> {
    params.validate()?;
    let mu = match params.mu {
        Some(mu) => mu,
        None => 0.9 / joint_lipschitz(a, params.alpha)?,
    };
    let problem = JointProblem::new(a, g, params.alpha, params.beta, a.sound_speed())?;
    let zero = Image::zeros(*a.grid());
    let mut state = JointState {
        f: zero.clone(),
        h: zero,
        k: 0,
        objective_trace: Vec::with_capacity(params.iters + 1),
        trace: Vec::with_capacity(params.iters + 1),
    };
    let mut initial = 0.0;
    for k in 0..=params.iters {
        let last = k == params.iters;
        let e = problem.evaluate(&state.f, &state.h, !last)?;
        let row = TraceRow { iteration: k, ..e.row };
        if k == 0 {
            initial = row.objective;
        }
        check_divergence(k, mu, row.objective, initial)?;
        state.objective_trace.push(row.objective);
        state.trace.push(row);
        if last {
            break;
        }
        state.f = prox_nonneg(&state.f.add_scaled(-mu, &e.grad_f));
        state.h = prox_l1(&state.h.add_scaled(-mu, &e.grad_h), mu * params.beta);
        state.k = k + 1;
    }
    Ok(state)
}

fn check_divergence(iteration: usize, step: f64, objective: f64, initial: f64) -> Result<()> {
    if !objective.is_finite() || objective > 10.0 * initial {
        return Err(PatError::Divergence {
            iteration,
            step,
            objective,
            initial,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IstaResult {
    pub x: Array1<f64>,
    /// Objective at every iterate starting from zero.
    pub objective_trace: Vec<f64>,
}

/// ISTA for `1/2 |A z - g|^2 + beta |z|_1` from `z = 0` on any operator.
pub fn ista(op: &dyn LinearOperator, g: &Array1<f64>, beta: f64, mu: f64, iters: usize) -> Result<IstaResult> {
    if !(beta >= 0.0 && mu > 0.0 && beta.is_finite() && mu.is_finite()) {
        return Err(PatError::InvalidArgument(format!(
            "need beta >= 0 and mu > 0, got beta = {beta}, mu = {mu}"
        )));
    }
    if g.len() != op.output_len() {
        return Err(crate::error::shape_err(op.output_len(), g.len()));
    }
    let mut x = Array1::zeros(op.input_len());
    let mut trace = Vec::with_capacity(iters + 1);
    let mut initial = 0.0;
    for k in 0..=iters {
        let r = op.apply(&x)? - g;
        let objective = 0.5 * r.dot(&r) + beta * x.iter().map(|v: &f64| v.abs()).sum::<f64>();
        if k == 0 {
            initial = objective;
        }
        check_divergence(k, mu, objective, initial)?;
        trace.push(objective);
        if k == iters {
            break;
        }
        let grad = op.apply_transpose(&r)?;
        x.scaled_add(-mu, &grad);
        x.mapv_inplace(|v| soft(v, mu * beta));
    }
    Ok(IstaResult {
        x,
        objective_trace: trace,
    })
}

/// Image-valued ISTA on the compressed-sensing operator.
/// `mu = None` selects `0.9 / |A|^2`.
pub fn ista_tikhonov(g: &CSData, a: &CSOperator, beta: f64, mu: Option<f64>, iters: usize) -> Result<Image> {
    let mu = match mu {
        Some(mu) => mu,
        None => 0.9 / (a.norm_estimate()? * NORM_SAFETY).powi(2),
    };
    let flat: Array1<f64> = g.values.iter().copied().collect();
    if flat.len() != a.output_len() {
        return Err(crate::error::shape_err(a.output_len(), flat.len()));
    }
    let result = ista(a, &flat, beta, mu, iters)?;
    Image::from_flat(*a.grid(), result.x)
}

/// Two-stage recovery: sparse `h = c^2 L f` from the differentiated data,
/// then a Poisson solve for `f` and projection onto `f >= 0`.
pub fn two_stage(g: &CSData, a: &CSOperator, beta: f64, mu: Option<f64>, iters: usize) -> Result<Image> {
    let d2g = CSData {
        values: second_time_derivative(g.values.view(), a.time().dt)?,
    };
    let h = ista_tikhonov(&d2g, a, beta, mu, iters)?;
    let c2 = a.sound_speed().powi(2);
    let f = solve_poisson(&h.map(|v| v / c2))?;
    Ok(prox_nonneg(&f.image))
}

/// Dense helper for tests and small problems.
pub fn ista_dense(a: &Array2<f64>, g: &Array1<f64>, beta: f64, mu: f64, iters: usize) -> Result<IstaResult> {
    ista(&crate::linop::DenseOperator::new(a.clone()), g, beta, mu, iters)
}

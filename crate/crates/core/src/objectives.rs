//! Population pretraining objectives on finite spaces and a full-batch
//! gradient-descent minimizer.
//!
//! Encoders are raw `d x |A|` tables (the `X`-side encoder of the CLIP-style
//! loss is `d x |X|`). Losses are evaluated three ways: through the moments
//! `F`, `G` (used by the optimizer), through coefficients against the
//! eigenfunctions, and by direct summation over the joint distributions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_columns, weighted_cross, weighted_gram};
use crate::process::AugmentationProcess;
use crate::spectral::{gamma_star_rows, joint_rows, SpectralDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    Scl,
    Sclip,
    Rbt { alpha_w: f64, beta_w: f64 },
    Vicreg { beta_w: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Scl => "scl",
            Objective::Sclip => "sclip",
            Objective::Rbt { .. } => "rbt",
            Objective::Vicreg { .. } => "vicreg",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights: &[f64] = match self {
            Objective::Rbt { alpha_w, beta_w } => &[*alpha_w, *beta_w],
            Objective::Vicreg { beta_w } => &[*beta_w],
            _ => &[],
        };
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation(format!("{} weights must be non-negative", self.name())));
        }
        Ok(())
    }

    /// Global minimum value over `d`-dimensional encoders.
    pub fn target_loss(&self, decomposition: &SpectralDecomposition, d: usize) -> f64 {
        let top = (0..d).map(|i| decomposition.lambda(i));
        match *self {
            Objective::Scl => -top.map(|l| l * l).sum::<f64>(),
            Objective::Sclip => -top.sum::<f64>(),
            Objective::Rbt { beta_w, .. } => top
                .map(|l| {
                    if l >= beta_w / 2.0 {
                        beta_w / l - beta_w * beta_w / (4.0 * l * l)
                    } else {
                        1.0
                    }
                })
                .sum(),
            Objective::Vicreg { beta_w } => top
                .map(|l| {
                    let t = beta_w * (1.0 - l);
                    if t <= 1.0 {
                        2.0 * t - t * t
                    } else {
                        1.0
                    }
                })
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub objective: Objective,
    pub d: usize,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Validation("d must be at least 1".into()));
        }
        self.objective.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.25, max_iters: 20_000, grad_tol: 1e-9, seed: 0, init_scale: 0.5 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Validation("init scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parameters of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `d x |A|`.
    pub phi: DMatrix<f64>,
    /// `d x |X|`, only for the CLIP-style loss.
    pub xi: Option<DMatrix<f64>>,
}

impl Params {
    pub fn new(phi: DMatrix<f64>) -> Self {
        Self { phi, xi: None }
    }

    pub fn pair(phi: DMatrix<f64>, xi: DMatrix<f64>) -> Self {
        Self { phi, xi: Some(xi) }
    }

    fn xi(&self) -> Result<&DMatrix<f64>> {
        self.xi
            .as_ref()
            .ok_or_else(|| Error::Validation("the CLIP-style loss needs an X-side encoder".into()))
    }
}

fn check_shapes(objective: &Objective, process: &AugmentationProcess, params: &Params) -> Result<()> {
    if params.phi.ncols() != process.a_size() {
        return Err(Error::Length { expected: process.a_size(), got: params.phi.ncols() });
    }
    if let Objective::Sclip = objective {
        let xi = params.xi()?;
        if xi.ncols() != process.x_size() {
            return Err(Error::Length { expected: process.x_size(), got: xi.ncols() });
        }
        if xi.nrows() != params.phi.nrows() {
            return Err(Error::Validation(format!(
                "encoder dimensions differ: {} vs {}",
                params.phi.nrows(),
                xi.nrows()
            )));
        }
    }
    Ok(())
}

fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

fn rbt_value(f: &DMatrix<f64>, trace_g: f64, alpha_w: f64, beta_w: f64) -> f64 {
    let d = f.nrows();
    let mut v = 0.0;
    for k in 0..d {
        for l in 0..d {
            if k == l {
                v += (f[(k, k)] - 1.0).powi(2);
            } else {
                v += alpha_w * f[(k, l)].powi(2);
            }
        }
    }
    v + beta_w * trace_g
}

/// Value from the moments `F`, `G` (and the cross moments for the CLIP-style loss).
fn moment_loss(objective: &Objective, process: &AugmentationProcess, params: &Params) -> Result<f64> {
    let phi = &params.phi;
    let g = weighted_gram(phi, process.p_a());
    Ok(match *objective {
        Objective::Sclip => {
            let xi = params.xi()?;
            let cross = weighted_cross(&gamma_star_rows(process, phi), xi, process.p_x());
            let g_xi = weighted_gram(xi, process.p_x());
            -2.0 * cross.trace() + (&g * g_xi).trace()
        }
        _ => {
            let f = weighted_gram(&gamma_star_rows(process, phi), process.p_x());
            match *objective {
                Objective::Scl => -2.0 * f.trace() + frob_sq(&g),
                Objective::Rbt { alpha_w, beta_w } => rbt_value(&f, g.trace(), alpha_w, beta_w),
                Objective::Vicreg { beta_w } => {
                    let eye = DMatrix::identity(g.nrows(), g.nrows());
                    frob_sq(&(&g - eye)) + beta_w * (2.0 * g.trace() - 2.0 * f.trace())
                }
                Objective::Sclip => unreachable!(),
            }
        }
    })
}

/// Raw gradients with respect to the table entries.
fn gradient(
    objective: &Objective,
    process: &AugmentationProcess,
    params: &Params,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    let phi = &params.phi;
    let p_a = process.p_a();
    let scale_cols = |m: DMatrix<f64>, w: &[f64]| {
        let mut m = m;
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= w[j];
        }
        m
    };
    let g = weighted_gram(phi, p_a);
    let phi_w = scale_cols(phi.clone(), p_a);
    if let Objective::Sclip = objective {
        let xi = params.xi()?;
        let g_xi = weighted_gram(xi, process.p_x());
        let grad_phi = joint_rows(process, xi) * -2.0 + &g_xi * &phi_w * 2.0;
        // Phi J has entries p_x(x) (Gamma* phi)(x).
        let phi_j = scale_cols(gamma_star_rows(process, phi), process.p_x());
        let xi_d = scale_cols(xi.clone(), process.p_x());
        let grad_xi = phi_j * -2.0 + &g * xi_d * 2.0;
        return Ok((grad_phi, Some(grad_xi)));
    }
    let psi = gamma_star_rows(process, phi);
    let psi_dp = joint_rows(process, &psi);
    let grad = match *objective {
        Objective::Scl => psi_dp * -4.0 + &g * &phi_w * 4.0,
        Objective::Rbt { alpha_w, beta_w } => {
            let f = weighted_gram(&psi, process.p_x());
            let d = f.nrows();
            let e = DMatrix::from_fn(d, d, |k, l| {
                if k == l {
                    2.0 * (f[(k, k)] - 1.0)
                } else {
                    2.0 * alpha_w * f[(k, l)]
                }
            });
            e * psi_dp * 2.0 + &phi_w * (2.0 * beta_w)
        }
        Objective::Vicreg { beta_w } => {
            let eye = DMatrix::identity(g.nrows(), g.nrows());
            (&g - eye) * &phi_w * 4.0 + &phi_w * (4.0 * beta_w) - psi_dp * (4.0 * beta_w)
        }
        Objective::Sclip => unreachable!(),
    };
    Ok((grad, None))
}

/// Coefficients against the retained eigenfunctions and the orthogonal residual.
fn expand(rows: &DMatrix<f64>, basis: &DMatrix<f64>, w: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = weighted_cross(rows, &basis.transpose(), w);
    let residual = rows - &c * basis.transpose();
    (c, residual)
}

/// Value through the eigen-expansion `Phi = C Phi* + R`, with `F = C D C^T`,
/// `G = C C^T + <R, R>` (the residual lies in the null space of `Gamma*`).
pub fn loss(
    objective: &Objective,
    process: &AugmentationProcess,
    decomposition: &SpectralDecomposition,
    params: &Params,
) -> Result<f64> {
    objective.validate()?;
    check_shapes(objective, process, params)?;
    let lam = decomposition.lambdas();
    let (c, r) = expand(&params.phi, decomposition.phi(), process.p_a());
    let g = &c * c.transpose() + weighted_gram(&r, process.p_a());
    let diag = |m: &DMatrix<f64>, pow: f64| {
        let mut m = m.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= lam[j].powf(pow);
        }
        m
    };
    Ok(match *objective {
        Objective::Sclip => {
            let (s, rx) = expand(params.xi()?, decomposition.psi(), process.p_x());
            let g_xi = &s * s.transpose() + weighted_gram(&rx, process.p_x());
            -2.0 * (diag(&c, 0.5) * s.transpose()).trace() + (&g * g_xi).trace()
        }
        _ => {
            let f = diag(&c, 1.0) * c.transpose();
            match *objective {
                Objective::Scl => -2.0 * f.trace() + frob_sq(&g),
                Objective::Rbt { alpha_w, beta_w } => rbt_value(&f, g.trace(), alpha_w, beta_w),
                Objective::Vicreg { beta_w } => {
                    let eye = DMatrix::identity(g.nrows(), g.nrows());
                    frob_sq(&(&g - eye)) + beta_w * (2.0 * g.trace() - 2.0 * f.trace())
                }
                Objective::Sclip => unreachable!(),
            }
        }
    })
}

/// Value by summation over pairs of augmentations (or augmentation/original
/// pairs), forming the positive-pair distribution explicitly. Quadratic in `|A|`.
pub fn loss_direct(objective: &Objective, process: &AugmentationProcess, params: &Params) -> Result<f64> {
    objective.validate()?;
    check_shapes(objective, process, params)?;
    let (na, nx) = (process.a_size(), process.x_size());
    let (p_a, p_x) = (process.p_a(), process.p_x());
    let phi = &params.phi;
    let d = phi.nrows();
    let dot = |a: usize, b: usize| -> f64 { (0..d).map(|i| phi[(i, a)] * phi[(i, b)]).sum() };

    if let Objective::Sclip = objective {
        let xi = params.xi()?;
        let mut pos = 0.0;
        let mut neg = 0.0;
        for x in 0..nx {
            for a in 0..na {
                let v: f64 = (0..d).map(|i| phi[(i, a)] * xi[(i, x)]).sum();
                pos += p_x[x] * process.conditional().get(x, a) * v;
                neg += p_a[a] * p_x[x] * v * v;
            }
        }
        return Ok(-2.0 * pos + neg);
    }

    let mut plus = DMatrix::<f64>::zeros(na, na);
    for x in 0..nx {
        let row: Vec<(usize, f64)> = process.conditional().row(x).collect();
        for &(a1, q1) in &row {
            for &(a2, q2) in &row {
                plus[(a1, a2)] += p_x[x] * q1 * q2;
            }
        }
    }
    let pair_mean = |k: usize, l: usize| -> f64 {
        let mut s = 0.0;
        for a1 in 0..na {
            for a2 in 0..na {
                s += plus[(a1, a2)] * phi[(k, a1)] * phi[(l, a2)];
            }
        }
        s
    };
    let second_moment = |k: usize, l: usize| -> f64 { (0..na).map(|a| p_a[a] * phi[(k, a)] * phi[(l, a)]).sum() };

    Ok(match *objective {
        Objective::Scl => {
            let mut pos = 0.0;
            let mut neg = 0.0;
            for a1 in 0..na {
                for a2 in 0..na {
                    let v = dot(a1, a2);
                    pos += plus[(a1, a2)] * v;
                    neg += p_a[a1] * p_a[a2] * v * v;
                }
            }
            -2.0 * pos + neg
        }
        Objective::Rbt { alpha_w, beta_w } => {
            let mut v = 0.0;
            for k in 0..d {
                for l in 0..d {
                    let m = pair_mean(k, l);
                    v += if k == l { (m - 1.0).powi(2) } else { alpha_w * m * m };
                }
            }
            let energy: f64 = (0..na).map(|a| p_a[a] * dot(a, a)).sum();
            v + beta_w * energy
        }
        Objective::Vicreg { beta_w } => {
            let mut v = 0.0;
            for k in 0..d {
                for l in 0..d {
                    let target = if k == l { 1.0 } else { 0.0 };
                    v += (second_moment(k, l) - target).powi(2);
                }
            }
            let mut spread = 0.0;
            for a1 in 0..na {
                for a2 in 0..na {
                    let diff: f64 = (0..d).map(|i| (phi[(i, a1)] - phi[(i, a2)]).powi(2)).sum();
                    spread += plus[(a1, a2)] * diff;
                }
            }
            v + beta_w * spread
        }
        Objective::Sclip => unreachable!(),
    })
}

/// Raw gradient (with respect to table entries) of the loss.
pub fn loss_gradient(
    objective: &Objective,
    process: &AugmentationProcess,
    params: &Params,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    objective.validate()?;
    check_shapes(objective, process, params)?;
    gradient(objective, process, params)
}

/// Loss value from the moments; the cheapest route.
pub fn loss_moments(objective: &Objective, process: &AugmentationProcess, params: &Params) -> Result<f64> {
    objective.validate()?;
    check_shapes(objective, process, params)?;
    moment_loss(objective, process, params)
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub params: Params,
    /// Loss after every accepted step, starting with the initial value.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

impl MinimizeResult {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("initial loss is always recorded")
    }
}

/// Seeded uniform(-s, s) initialization.
pub fn initial_params(spec: &ObjectiveSpec, process: &AugmentationProcess, opt: &OptimizerConfig) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let s = opt.init_scale;
    let mut draw = |n| DMatrix::from_fn(spec.d, n, |_, _| if s > 0.0 { rng.random_range(-s..s) } else { 0.0 });
    let phi = draw(process.a_size());
    let xi = matches!(spec.objective, Objective::Sclip).then(|| draw(process.x_size()));
    Params { phi, xi }
}

const MAX_HALVINGS: usize = 60;

/// Full-batch gradient descent from the seeded initialization.
pub fn minimize(spec: &ObjectiveSpec, process: &AugmentationProcess, opt: &OptimizerConfig) -> Result<MinimizeResult> {
    spec.validate()?;
    opt.validate()?;
    minimize_from(spec, process, initial_params(spec, process, opt), opt)
}

/// Gradient descent in the `L^2(P_A)` (and `L^2(P_X)`) geometry: each raw
/// gradient column is divided by its point mass. Each iteration tries the base
/// step and halves it until the loss does not increase.
pub fn minimize_from(
    spec: &ObjectiveSpec,
    process: &AugmentationProcess,
    init: Params,
    opt: &OptimizerConfig,
) -> Result<MinimizeResult> {
    spec.validate()?;
    opt.validate()?;
    check_shapes(&spec.objective, process, &init)?;
    if init.phi.nrows() != spec.d {
        return Err(Error::Validation(format!("initial encoder has {} rows, d = {}", init.phi.nrows(), spec.d)));
    }
    let objective = &spec.objective;
    let mut params = init;
    let mut current = moment_loss(objective, process, &params)?;
    if !current.is_finite() {
        return Err(Error::Divergence { iteration: 0, loss: current });
    }
    let mut losses = vec![current];
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    let precondition = |g: DMatrix<f64>, w: &[f64]| -> (DMatrix<f64>, f64) {
        let mut g = g;
        let mut norm_sq = 0.0;
        for (j, mut col) in g.column_iter_mut().enumerate() {
            col /= w[j];
            norm_sq += w[j] * col.norm_squared();
        }
        (g, norm_sq)
    };

    for it in 0..opt.max_iters {
        let (g_phi, g_xi) = gradient(objective, process, &params)?;
        let (d_phi, n1) = precondition(g_phi, process.p_a());
        let (d_xi, n2) = match g_xi {
            Some(g) => {
                let (d, n) = precondition(g, process.p_x());
                (Some(d), n)
            }
            None => (None, 0.0),
        };
        grad_norm = (n1 + n2).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence { iteration: it, loss: current });
        }
        if grad_norm <= opt.grad_tol {
            converged = true;
            break;
        }
        let mut step = opt.learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = Params {
                phi: &params.phi - &d_phi * step,
                xi: params.xi.as_ref().zip(d_xi.as_ref()).map(|(x, d)| x - d * step),
            };
            let value = moment_loss(objective, process, &trial)?;
            if !value.is_finite() {
                return Err(Error::Divergence { iteration: it + 1, loss: value });
            }
            if value <= current {
                accepted = Some((trial, value));
                break;
            }
            step *= 0.5;
        }
        iterations = it + 1;
        match accepted {
            Some((trial, value)) => {
                let stalled = value == current;
                params = trial;
                current = value;
                losses.push(value);
                if stalled {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(MinimizeResult { params, losses, iterations, converged, grad_norm })
}

/// Largest principal angle between `span(Phi_hat)` and `span(phi_1..phi_d)` under `P_A`.
pub fn subspace_angle(phi_hat: &DMatrix<f64>, decomposition: &SpectralDecomposition, d: usize) -> Result<f64> {
    if d == 0 || d > decomposition.rank() {
        return Err(Error::RankExceeded { requested: d, rank: decomposition.rank() });
    }
    let w = decomposition.p_a();
    let whiten = |rows: DMatrix<f64>| {
        let mut m = rows.transpose();
        for (a, mut row) in m.row_iter_mut().enumerate() {
            row *= w[a].sqrt();
        }
        m
    };
    let q1 = orthonormal_columns(&whiten(phi_hat.clone()), 1e-10)?;
    let q2 = orthonormal_columns(&whiten(decomposition.phi().columns(0, d).transpose()), 1e-10)?;
    let residual = &q1 - &q2 * (q2.transpose() * &q1);
    let sigma = residual.singular_values().max();
    Ok(sigma.clamp(0.0, 1.0).asin())
}

/// `||C||_F^2` for `C` the coefficients of `Phi_hat` against the retained eigenfunctions.
pub fn coefficient_norm_sq(phi_hat: &DMatrix<f64>, decomposition: &SpectralDecomposition) -> f64 {
    weighted_cross(phi_hat, &decomposition.phi().transpose(), decomposition.p_a()).norm_squared()
}

/// Regularized Barlow Twins over a decreasing penalty schedule, warm-started.
/// Returns the result at each penalty weight.
pub fn rbt_penalty_path(
    process: &AugmentationProcess,
    d: usize,
    alpha_w: f64,
    betas: &[f64],
    opt: &OptimizerConfig,
) -> Result<Vec<(f64, MinimizeResult)>> {
    let mut out: Vec<(f64, MinimizeResult)> = Vec::with_capacity(betas.len());
    let first = ObjectiveSpec { objective: Objective::Rbt { alpha_w, beta_w: betas[0] }, d };
    let mut params = initial_params(&first, process, opt);
    for &beta_w in betas {
        let spec = ObjectiveSpec { objective: Objective::Rbt { alpha_w, beta_w }, d };
        let res = minimize_from(&spec, process, params, opt)?;
        params = res.params.clone();
        out.push((beta_w, res));
    }
    Ok(out)
}

//! Soft-invariant targets, the norm-constrained linear probe, and the error
//! bounds evaluated as plain numbers.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::encoder::{covariances, Encoder};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, weighted_cross, weighted_dot, weighted_norm_sq};
use crate::process::AugmentationProcess;
use crate::spectral::SpectralDecomposition;

const CERT_TOL: f64 = 1e-12;

/// Eigenvalues of `Q` below this fraction of the largest are treated as zero.
const Q_PSEUDO_RANK_TOL: f64 = 1e-12;

/// Relative accuracy of the active constraint in the multiplier search.
const CONSTRAINT_RTOL: f64 = 1e-10;

/// `f* = sum_i u_i psi_i` over the retained spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    u: DVector<f64>,
    b: f64,
    epsilon: f64,
    values: Vec<f64>,
}

/// `sum_i u_i^2 (1 - eps - lambda_i) / lambda_i`; non-positive for members.
fn invariance_slack(u: &DVector<f64>, lambdas: &[f64], epsilon: f64) -> f64 {
    u.iter().zip(lambdas).map(|(v, l)| v * v * (1.0 - epsilon - l) / l).sum()
}

impl TargetFunction {
    /// Certifies membership of the soft-invariant class with budget `b`.
    pub fn new(decomposition: &SpectralDecomposition, u: DVector<f64>, b: f64, epsilon: f64) -> Result<Self> {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::Validation(format!("norm budget {b} must be non-negative")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Validation(format!("epsilon {epsilon} outside [0, 1)")));
        }
        if u.len() != decomposition.rank() {
            return Err(Error::Length { expected: decomposition.rank(), got: u.len() });
        }
        let lambdas = decomposition.lambdas();
        let mass = u.norm_squared();
        if mass.sqrt() > b + CERT_TOL {
            return Err(Error::Infeasible(format!("||u|| = {} exceeds B = {b}", mass.sqrt())));
        }
        let h_sq: f64 = u.iter().zip(lambdas).map(|(v, l)| v * v / l).sum();
        let slack = invariance_slack(&u, lambdas, epsilon);
        if slack > CERT_TOL * h_sq.max(1.0) {
            return Err(Error::Infeasible(format!("soft-invariance violated by {slack}")));
        }
        let values = decomposition.synthesize(&u);
        Ok(Self { u, b, epsilon, values })
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `f*(x)` over `X`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.u.norm_squared()
    }

    pub fn h_norm_sq(&self, decomposition: &SpectralDecomposition) -> f64 {
        self.u.iter().zip(decomposition.lambdas()).map(|(v, l)| v * v / l).sum()
    }

    /// `g_0 = sum_i lambda_i^{-1/2} u_i phi_i`, with `Gamma* g_0 = f*`.
    pub fn canonical_preimage(&self, decomposition: &SpectralDecomposition) -> Vec<f64> {
        let scaled = DVector::from_iterator(
            self.u.len(),
            self.u.iter().zip(decomposition.lambdas()).map(|(v, l)| v / l.sqrt()),
        );
        (decomposition.phi() * scaled).iter().copied().collect()
    }
}

/// Spectrally adapted random member of the class, rescaled to `||u|| = b`.
///
/// Raw coefficients are `N(0, lambda_i)`; if soft invariance fails, the
/// components with `lambda_i < 1 - eps` are shrunk by the largest common
/// factor that restores it.
pub fn sample_target(decomposition: &SpectralDecomposition, b: f64, epsilon: f64, seed: u64) -> Result<TargetFunction> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Validation(format!("norm budget {b} must be positive")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Validation(format!("epsilon {epsilon} outside [0, 1)")));
    }
    let lambdas = decomposition.lambdas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_iterator(
        lambdas.len(),
        lambdas.iter().map(|l| Normal::new(0.0, l.sqrt()).expect("finite").sample(&mut rng)),
    );
    let bad = |l: f64| l < 1.0 - epsilon;
    let term = |i: usize, v: &DVector<f64>| v[i] * v[i] * (1.0 - epsilon - lambdas[i]) / lambdas[i];
    let s_good: f64 = (0..v.len()).filter(|&i| !bad(lambdas[i])).map(|i| term(i, &v)).sum();
    let s_bad: f64 = (0..v.len()).filter(|&i| bad(lambdas[i])).map(|i| term(i, &v)).sum();
    if s_good + s_bad > 0.0 {
        let t = (-s_good / s_bad).max(0.0).sqrt() * (1.0 - 1e-12);
        for i in 0..v.len() {
            if bad(lambdas[i]) {
                v[i] *= t;
            }
        }
    }
    let nonconstant: f64 = (0..v.len()).filter(|&i| lambdas[i] < 1.0 - 1e-12).map(|i| v[i] * v[i]).sum();
    if nonconstant == 0.0 {
        return Err(Error::Infeasible(
            "only targets in the top eigenspace are soft-invariant at this epsilon".into(),
        ));
    }
    let norm = v.norm();
    TargetFunction::new(decomposition, v * (b / norm), b, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x_index: usize,
    pub y: f64,
}

/// `n` i.i.d. originals from `P_X` labeled with Gaussian noise of standard deviation `sigma`.
pub fn generate_labels(
    target: &TargetFunction,
    process: &AugmentationProcess,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::Validation("n must be at least 1".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("noise level {sigma} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = WeightedIndex::new(process.p_x()).map_err(|e| Error::Validation(e.to_string()))?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let x = px.sample(&mut rng);
            let nu = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            LabeledSample { x_index: x, y: target.values[x] + nu }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub w: DVector<f64>,
    /// `w^T Psi_hat` over `X`.
    pub f_hat_values: Vec<f64>,
    pub h_norm: f64,
    pub lagrange_mu: f64,
    pub constraint_active: bool,
    pub train_mse: f64,
}

impl FitResult {
    /// `||f_hat - f*||^2_{P_X}`.
    pub fn prediction_error(&self, target: &TargetFunction, p_x: &[f64]) -> f64 {
        let diff: Vec<f64> = self.f_hat_values.iter().zip(target.values()).map(|(a, b)| a - b).collect();
        weighted_norm_sq(&diff, p_x)
    }
}

/// `Q(i, j) = <psi_hat_i, psi_hat_j>_H` from spectral coefficients.
pub fn h_gram(encoder: &Encoder, decomposition: &SpectralDecomposition) -> DMatrix<f64> {
    let c = weighted_cross(encoder.psi_hat(), &decomposition.psi().transpose(), decomposition.p_x());
    let mut scaled = c.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col /= decomposition.lambda(k);
    }
    crate::linalg::symmetrize(scaled * c.transpose())
}

/// Minimizes `sum_k weights_k (y_k - design_k . w)^2` subject to `w^T Q w <= radius^2`.
///
/// Rows of `design` are feature vectors. `Q` is reduced to its numerical range
/// and whitened; the unconstrained problem takes the minimum-norm solution,
/// otherwise the multiplier `mu` in `(H + mu Q) w = b` is found by bisection.
pub fn fit_weighted(
    design: &DMatrix<f64>,
    weights: &[f64],
    y: &[f64],
    q: &DMatrix<f64>,
    radius: f64,
) -> Result<(DVector<f64>, f64, bool)> {
    let d = design.ncols();
    if design.nrows() != y.len() || weights.len() != y.len() {
        return Err(Error::Length { expected: design.nrows(), got: y.len() });
    }
    if radius == 0.0 {
        return Ok((DVector::zeros(d), 0.0, true));
    }
    let mut wd = design.clone();
    for (k, mut row) in wd.row_iter_mut().enumerate() {
        row *= weights[k];
    }
    let h = crate::linalg::symmetrize(design.tr_mul(&wd));
    let b = wd.tr_mul(&DVector::from_column_slice(y));

    let (q_vals, q_vecs) = sym_eigen_desc(q);
    let q_max = q_vals.first().copied().unwrap_or(0.0);
    if !(q_max > 0.0) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let keep = q_vals.iter().take_while(|&&v| v > Q_PSEUDO_RANK_TOL * q_max).count();
    // w = T z with T = V_k diag(q^{-1/2}), so that w^T Q w = |z|^2.
    let t = DMatrix::from_fn(d, keep, |i, j| q_vecs[(i, j)] / q_vals[j].sqrt());
    let h_t = crate::linalg::symmetrize(t.transpose() * &h * &t);
    let b_t = t.transpose() * &b;
    let (h_vals, h_vecs) = sym_eigen_desc(&h_t);
    let beta = h_vecs.transpose() * &b_t;
    let h_tol = 1e-12 * h_vals.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);

    let z_of = |mu: f64| -> DVector<f64> {
        let coeffs = DVector::from_iterator(
            keep,
            (0..keep).map(|i| {
                let denom = h_vals[i] + mu;
                if mu == 0.0 && h_vals[i] <= h_tol {
                    0.0
                } else {
                    beta[i] / denom
                }
            }),
        );
        &h_vecs * coeffs
    };
    let r2 = radius * radius;
    let z0 = z_of(0.0);
    if z0.norm_squared() <= r2 {
        return Ok((&t * z0, 0.0, false));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while z_of(hi).norm_squared() > r2 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("multiplier bracket diverged".into()));
        }
    }
    let mut mu = hi;
    for _ in 0..400 {
        mu = 0.5 * (lo + hi);
        let n2 = z_of(mu).norm_squared();
        if (n2 - r2).abs() <= CONSTRAINT_RTOL * r2 {
            break;
        }
        if n2 > r2 {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    Ok((&t * z_of(mu), mu, true))
}

fn finish_fit(
    encoder: &Encoder,
    q: &DMatrix<f64>,
    w: DVector<f64>,
    mu: f64,
    active: bool,
    train_mse: f64,
) -> FitResult {
    let f_hat_values: Vec<f64> = (encoder.psi_hat().transpose() * &w).iter().copied().collect();
    let h_norm = (w.transpose() * q * &w)[(0, 0)].max(0.0).sqrt();
    FitResult { w, f_hat_values, h_norm, lagrange_mu: mu, constraint_active: active, train_mse }
}

/// Norm-constrained least squares on labeled samples:
/// `min (1/n) sum (y_k - w^T Psi_hat(x_k))^2` s.t. `||w^T Psi_hat||_H <= b / sqrt(1 - eps)`.
pub fn fit_least_squares(
    encoder: &Encoder,
    decomposition: &SpectralDecomposition,
    samples: &[LabeledSample],
    b: f64,
    epsilon: f64,
) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::Validation("no labeled samples".into()));
    }
    if !(0.0..1.0).contains(&epsilon) || !(b >= 0.0) {
        return Err(Error::Validation("need B >= 0 and epsilon in [0, 1)".into()));
    }
    let n = samples.len();
    let design = DMatrix::from_fn(n, encoder.dim(), |k, i| encoder.psi_hat()[(i, samples[k].x_index)]);
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let weights = vec![1.0 / n as f64; n];
    let q = h_gram(encoder, decomposition);
    let (w, mu, active) = fit_weighted(&design, &weights, &y, &q, b / (1.0 - epsilon).sqrt())?;
    let pred = &design * &w;
    let train_mse = pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64;
    Ok(finish_fit(encoder, &q, w, mu, active, train_mse))
}

/// The population limit of [`fit_least_squares`]: noiseless labels weighted by `P_X`.
pub fn fit_population(
    encoder: &Encoder,
    decomposition: &SpectralDecomposition,
    target: &TargetFunction,
) -> Result<FitResult> {
    let design = encoder.psi_hat().transpose();
    let q = h_gram(encoder, decomposition);
    let radius = target.b() / (1.0 - target.epsilon()).sqrt();
    let (w, mu, active) = fit_weighted(&design, decomposition.p_x(), target.values(), &q, radius)?;
    let pred = &design * &w;
    let diff: Vec<f64> = pred.iter().zip(target.values()).map(|(p, t)| p - t).collect();
    let train_mse = weighted_norm_sq(&diff, decomposition.p_x());
    Ok(finish_fit(encoder, &q, w, mu, active, train_mse))
}

/// `f_Psi_hat = Gamma*(Pi_Phi_hat g_0)` and `||f_Psi_hat - f*||^2_{P_X}`.
pub fn project_fpsi(
    target: &TargetFunction,
    encoder: &Encoder,
    decomposition: &SpectralDecomposition,
) -> Result<(Vec<f64>, f64)> {
    let g0 = target.canonical_preimage(decomposition);
    let cov = covariances(encoder)?;
    let rhs = weighted_cross(encoder.phi_hat(), &DMatrix::from_row_slice(1, g0.len(), &g0), encoder.p_a());
    let alpha = cov
        .g
        .clone()
        .cholesky()
        .ok_or(Error::Singular { condition: cov.gamma_g })?
        .solve(&rhs);
    let values: Vec<f64> = (encoder.psi_hat().transpose() * alpha.column(0)).iter().copied().collect();
    let diff: Vec<f64> = values.iter().zip(target.values()).map(|(a, b)| a - b).collect();
    let err = weighted_norm_sq(&diff, decomposition.p_x());
    Ok((values, err))
}

/// `min_w ||w^T Psi_hat - f||^2_{P_X}`: the unconstrained `L^2` approximation error.
pub fn l2_approximation_error(encoder: &Encoder, values: &[f64], p_x: &[f64]) -> Result<f64> {
    let design = encoder.psi_hat().transpose();
    let mut wd = design.clone();
    for (k, mut row) in wd.row_iter_mut().enumerate() {
        row *= p_x[k];
    }
    let h = design.tr_mul(&wd);
    let b = wd.tr_mul(&DVector::from_column_slice(values));
    let w = h
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?
        * b;
    let pred = design * w;
    let diff: Vec<f64> = pred.iter().zip(values).map(|(a, b)| a - b).collect();
    Ok(weighted_norm_sq(&diff, p_x))
}

fn beta2_sq(lambda_next: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Validation(format!("epsilon {epsilon} outside [0, 1)")));
    }
    if lambda_next >= 1.0 {
        return Err(Error::Infeasible("lambda_{d+1} = 1 leaves no invariant direction to exploit".into()));
    }
    let v = (lambda_next / (1.0 - lambda_next)) * (epsilon / (1.0 - epsilon));
    if v > 0.5 {
        return Err(Error::Infeasible(format!(
            "need (lambda_(d+1) / (1 - lambda_(d+1))) (eps / (1 - eps)) <= 1/2, got {v}"
        )));
    }
    Ok(v)
}

/// `B (beta_1 psi_1 + beta_2 psi_{d+1})`: the hardest member for the top-`d` encoder.
pub fn worst_case_target(decomposition: &SpectralDecomposition, d: usize, b: f64, epsilon: f64) -> Result<TargetFunction> {
    let b2 = beta2_sq(decomposition.lambda(d), epsilon)?;
    let mut u = DVector::zeros(decomposition.rank());
    u[0] = b * (1.0 - b2).sqrt();
    if d < decomposition.rank() {
        u[d] = b * b2.sqrt();
    }
    TargetFunction::new(decomposition, u, b, epsilon)
}

/// Hard target for an arbitrary `d`-dimensional encoder: the tail direction
/// is a unit vector of `span(psi_1..psi_{d+1})` orthogonal to the encoder span,
/// re-orthogonalized against the constant.
pub fn worst_case_target_for_encoder(
    encoder: &Encoder,
    decomposition: &SpectralDecomposition,
    b: f64,
    epsilon: f64,
) -> Result<TargetFunction> {
    let d = encoder.dim();
    let b2 = beta2_sq(decomposition.lambda(d), epsilon)?;
    let k = (d + 1).min(decomposition.rank());
    let p_x = decomposition.p_x();
    // Coordinates in the psi basis are isometric, so work in R^k.
    let m = weighted_cross(encoder.psi_hat(), &decomposition.psi().columns(0, k).transpose(), p_x);
    let f1 = unit_orthogonal(&m, k).ok_or_else(|| {
        Error::Infeasible("encoder span contains the top d+1 eigenspace".into())
    })?;
    let mut e1 = DVector::zeros(k);
    e1[0] = 1.0;
    let a1 = f1[0];
    let mut f2 = &e1 - &f1 * a1;
    if f2.norm() < 1e-12 {
        // psi_1 is itself the orthogonal direction; pick any unit vector orthogonal to it.
        f2 = DVector::zeros(k);
        if k > 1 {
            f2[1] = 1.0;
        }
    }
    f2 /= f2.norm().max(f64::MIN_POSITIVE);
    let a2 = f2[0];
    let f0 = &f1 * a2 - &f2 * a1;
    let mut u = DVector::zeros(decomposition.rank());
    u[0] = b * (1.0 - b2).sqrt();
    for i in 0..k {
        u[i] += b * b2.sqrt() * f0[i];
    }
    TargetFunction::new(decomposition, u, b, epsilon)
}

/// Unit vector in `R^k` orthogonal to the rows of `m`, if one exists.
fn unit_orthogonal(m: &DMatrix<f64>, k: usize) -> Option<DVector<f64>> {
    let gram = m.transpose() * m;
    let (vals, vecs) = sym_eigen_desc(&gram);
    let scale = vals.first().copied().unwrap_or(0.0).max(1.0);
    let last = k - 1;
    (vals[last] <= 1e-10 * scale).then(|| vecs.column(last).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub tau_sq: f64,
    pub epsilon: f64,
    pub b: f64,
    pub kappa: f64,
    /// `S_lambda(d + 1)`.
    pub s_lambda_d1: f64,
    pub n: usize,
    pub sigma: f64,
    pub c0: f64,
    pub d: usize,
    pub lambda_d: f64,
    pub lambda_d1: f64,
    pub lambda_bar_d: f64,
    pub gamma_g: f64,
    pub n_unlabeled: usize,
    pub delta: f64,
    /// Fourth-moment constant of the encoder span, when known.
    pub fourth_moment_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `None` when `tau >= 1`.
    pub thm31_rhs: Option<f64>,
    pub lemma32_rhs: Option<f64>,
    pub prop41_rhs: f64,
    pub thm41_rhs: f64,
    /// Ratio-trace concentration bound, when the fourth-moment constant is known.
    pub lemma41_rhs: Option<f64>,
}

pub fn evaluate_bounds(ctx: &BoundContext) -> BoundReport {
    let tau = ctx.tau_sq.max(0.0).sqrt();
    let (b, eps) = (ctx.b, ctx.epsilon);
    let approx = (tau < 1.0).then(|| {
        ctx.tau_sq * (tau + eps) * b * b / ((1.0 - ctx.tau_sq) * (1.0 - eps))
    });
    let thm31 = approx.map(|a| {
        9.0 * a + ctx.c0 * ctx.kappa * (b * b + ctx.sigma * b) / (1.0 - eps) * (ctx.s_lambda_d1 / ctx.n as f64).sqrt()
    });
    let l = ctx.lambda_d1;
    let prop41 = (l / (1.0 - l)) * (eps / (1.0 - eps)) * b * b;
    let conf = 2.0 + (2.0 * (2.0 / ctx.delta).ln()).sqrt();
    let k2 = ctx.kappa * ctx.kappa;
    let root_n = (ctx.n_unlabeled as f64).sqrt();
    let thm41 = l
        + conf * (1.0 / ctx.lambda_d + ctx.gamma_g.sqrt() / ctx.lambda_bar_d + 2.0) * k2 * ctx.d as f64 / root_n;
    let lemma41 = ctx
        .fourth_moment_c
        .map(|c| conf * (c * ctx.kappa + k2) / root_n * ctx.d as f64);
    BoundReport { thm31_rhs: thm31, lemma32_rhs: approx, prop41_rhs: prop41, thm41_rhs: thm41, lemma41_rhs: lemma41 }
}

/// `<f, g>_{P_X}` on value vectors.
pub fn inner_px(f: &[f64], g: &[f64], p_x: &[f64]) -> f64 {
    weighted_dot(f, g, p_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{optimal_encoder, random_encoder, trace_gap};
    use crate::process::{build_hypercube, HypercubeConfig, Scheme, DEFAULT_BUDGET};
    use crate::spectral::{decompose, kernel_x_diagonal, DEFAULT_RANK_TOL};

    fn setup(scheme: Scheme, d: usize, alpha: f64) -> (AugmentationProcess, SpectralDecomposition) {
        let p = build_hypercube(&HypercubeConfig::new(scheme, d, alpha), DEFAULT_BUDGET).unwrap();
        let dec = decompose(&p, DEFAULT_RANK_TOL).unwrap();
        (p, dec)
    }

    fn e(r: usize, entries: &[(usize, f64)]) -> DVector<f64> {
        let mut u = DVector::zeros(r);
        for &(i, v) in entries {
            u[i] = v;
        }
        u
    }

    #[test]
    fn membership_examples() {
        let (_, dec) = setup(Scheme::RandomMask, 2, 0.5);
        let r = dec.rank();
        assert!(TargetFunction::new(&dec, e(r, &[(0, 2.0)]), 2.0, 0.0).is_ok());
        let u = e(r, &[(0, 1.0), (1, 0.5)]);
        let scale = 1.0 / u.norm();
        let t = TargetFunction::new(&dec, u * scale, 1.0, 0.25).unwrap();
        let lhs: f64 = t.u().iter().zip(dec.lambdas()).map(|(v, l)| (1.0 - l) / l * v * v).sum();
        let rhs: f64 = 0.25 * t.h_norm_sq(&dec);
        assert!((lhs / rhs - 0.25 / 0.375).abs() < 1e-12);
        assert!(matches!(
            TargetFunction::new(&dec, e(r, &[(1, 1.0)]), 1.0, 0.25),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            TargetFunction::new(&dec, e(r, &[(0, 2.0)]), 1.0, 0.25),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn sampled_targets_are_members() {
        let (p, dec) = setup(Scheme::BlockMaskFlip, 4, 0.4);
        let kappa = kernel_x_diagonal(&p).into_iter().fold(0.0, f64::max).sqrt();
        for seed in 0..50 {
            for eps in [0.0, 0.05, 0.3, 0.9] {
                let t = match sample_target(&dec, 1.5, eps, seed) {
                    Ok(t) => t,
                    Err(Error::Infeasible(_)) if eps == 0.0 => continue,
                    Err(e) => panic!("{e}"),
                };
                assert!((t.l2_norm_sq().sqrt() - 1.5).abs() < 1e-12);
                let h = t.h_norm_sq(&dec);
                assert!((1.0 - eps) * h <= t.l2_norm_sq() + 1e-10);
                assert!(t.l2_norm_sq() <= h + 1e-10);
                let sup = t.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(sup <= kappa * 1.5 / (1.0 - eps).sqrt() + 1e-9);
            }
        }
        let a = sample_target(&dec, 1.0, 0.2, 4).unwrap();
        let b = sample_target(&dec, 1.0, 0.2, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_one_spectrum_rejects_nonconstant() {
        let (_, dec) = setup(Scheme::RandomMask, 3, 1.0);
        assert_eq!(dec.rank(), 1);
        assert!(matches!(sample_target(&dec, 1.0, 0.0, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn labels() {
        let (p, dec) = setup(Scheme::RandomMask, 3, 0.5);
        let t = sample_target(&dec, 1.0, 0.3, 2).unwrap();
        let clean = generate_labels(&t, &p, 50, 0.0, 1).unwrap();
        assert!(clean.iter().all(|s| s.y == t.values()[s.x_index]));
        assert_eq!(clean, generate_labels(&t, &p, 50, 0.0, 1).unwrap());
        let n = 10_000;
        let sigma = 0.5;
        let noisy = generate_labels(&t, &p, n, sigma, 3).unwrap();
        let mean = noisy.iter().map(|s| s.y).sum::<f64>() / n as f64;
        let mean_f = inner_px(t.values(), &vec![1.0; p.x_size()], p.p_x());
        let var_f = t.l2_norm_sq() - mean_f * mean_f;
        let total_sd = (var_f + sigma * sigma).sqrt();
        assert!((mean - mean_f).abs() <= 4.0 * total_sd / (n as f64).sqrt());
    }

    #[test]
    fn noiseless_in_span_recovery() {
        let (p, dec) = setup(Scheme::RandomMask, 3, 0.5);
        let enc = optimal_encoder(&p, &dec, 4).unwrap();
        let t = TargetFunction::new(&dec, e(dec.rank(), &[(0, 0.8), (1, 0.3), (3, -0.2)]), 1.0, 0.5).unwrap();
        let samples = generate_labels(&t, &p, 40, 0.0, 5).unwrap();
        let fit = fit_least_squares(&enc, &dec, &samples, 1.0, 0.5).unwrap();
        assert!(!fit.constraint_active);
        assert!(fit.prediction_error(&t, p.p_x()) < 1e-16);
    }

    #[test]
    fn zero_budget_forces_zero() {
        let (p, dec) = setup(Scheme::RandomMask, 3, 0.5);
        let enc = optimal_encoder(&p, &dec, 4).unwrap();
        let t = sample_target(&dec, 1.0, 0.3, 9).unwrap();
        let samples = generate_labels(&t, &p, 30, 0.1, 5).unwrap();
        let fit = fit_least_squares(&enc, &dec, &samples, 0.0, 0.3).unwrap();
        assert!(fit.w.iter().all(|&v| v == 0.0));
        assert!((fit.prediction_error(&t, p.p_x()) - t.l2_norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn active_constraint_kkt() {
        let (p, dec) = setup(Scheme::BlockMaskFlip, 4, 0.4);
        let t = sample_target(&dec, 1.0, 0.2, 3).unwrap();
        for seed in 0..10 {
            let enc = random_encoder(&p, 3, seed).unwrap();
            let samples = generate_labels(&t, &p, 20, 1.0, seed).unwrap();
            for b in [0.05, 0.3, 1.0, 5.0] {
                let fit = fit_least_squares(&enc, &dec, &samples, b, 0.2).unwrap();
                let r2 = b * b / 0.8;
                assert!(fit.h_norm <= (r2).sqrt() + 1e-8);
                assert!(fit.lagrange_mu >= 0.0);
                assert!((fit.lagrange_mu * (fit.h_norm.powi(2) - r2)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn prediction_error_monotone_in_budget() {
        let (p, dec) = setup(Scheme::RandomMask, 3, 0.5);
        let enc = optimal_encoder(&p, &dec, 4).unwrap();
        let t = sample_target(&dec, 1.0, 0.4, 1).unwrap();
        let samples = generate_labels(&t, &p, 400, 0.0, 2).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let b = 0.05 * (k + 1) as f64;
            let err = fit_least_squares(&enc, &dec, &samples, b, 0.4).unwrap().prediction_error(&t, p.p_x());
            assert!(err <= prev + 1e-12, "B={b}");
            prev = err;
        }
    }

    #[test]
    fn projection_examples() {
        let (p, dec) = setup(Scheme::RandomMask, 3, 0.5);
        let r = dec.rank();
        let t = sample_target(&dec, 1.0, 0.6, 7).unwrap();
        for d in 1..=5 {
            let enc = optimal_encoder(&p, &dec, d).unwrap();
            let (_, err) = project_fpsi(&t, &enc, &dec).unwrap();
            let tail: f64 = (d..r).map(|i| t.u()[i].powi(2)).sum();
            assert!((err - tail).abs() < 1e-12);
        }
        let constant = Encoder::build(&p, DMatrix::from_element(1, p.a_size(), 1.0)).unwrap();
        let aligned = TargetFunction::new(&dec, e(r, &[(0, 0.9), (1, 0.1)]), 1.0, 0.5).unwrap();
        let (_, err) = project_fpsi(&aligned, &constant, &dec).unwrap();
        assert!((err - 0.01).abs() < 1e-12);
    }

    #[test]
    fn population_fit_is_h_projection() {
        let (p, dec) = setup(Scheme::BlockMask, 5, 0.4);
        let t = sample_target(&dec, 1.0, 0.3, 5).unwrap();
        for d in [2, 4, 6] {
            let enc = optimal_encoder(&p, &dec, d).unwrap();
            let fit = fit_population(&enc, &dec, &t).unwrap();
            let (fpsi, approx) = project_fpsi(&t, &enc, &dec).unwrap();
            let est: Vec<f64> = fit.f_hat_values.iter().zip(&fpsi).map(|(a, b)| a - b).collect();
            let est = weighted_norm_sq(&est, p.p_x());
            let pred = fit.prediction_error(&t, p.p_x());
            assert!((pred - est - approx).abs() < 1e-8);
            assert!(est < 1e-12);
        }
    }

    #[test]
    fn worst_case_examples() {
        let (p, dec) = setup(Scheme::BlockMaskFlip, 4, 0.3);
        for d in [1, 3] {
            let l = dec.lambda(d);
            let enc = optimal_encoder(&p, &dec, d).unwrap();
            for eps in [0.05, 0.1, 0.2] {
                let t = worst_case_target(&dec, d, 1.3, eps).unwrap();
                let err = l2_approximation_error(&enc, t.values(), p.p_x()).unwrap();
                let want = (l / (1.0 - l)) * (eps / (1.0 - eps)) * 1.69;
                assert!((err - want).abs() < 1e-8);
            }
        }
        let t = worst_case_target(&dec, 2, 1.0, 0.0).unwrap();
        assert!(t.u().iter().skip(1).all(|&v| v == 0.0));
        assert!(matches!(worst_case_target(&dec, 2, 1.0, 0.9), Err(Error::Infeasible(_))));
    }

    #[test]
    fn worst_case_for_random_encoders() {
        let (p, dec) = setup(Scheme::RandomMask, 4, 0.4);
        for seed in 0..20 {
            let d = 1 + (seed as usize % 3);
            let enc = random_encoder(&p, d, seed).unwrap();
            let eps = 0.1;
            let t = worst_case_target_for_encoder(&enc, &dec, 1.0, eps).unwrap();
            let err = l2_approximation_error(&enc, t.values(), p.p_x()).unwrap();
            let bound = evaluate_bounds(&ctx(0.0, eps, dec.lambda(d))).prop41_rhs;
            assert!(err >= bound - 1e-8, "seed {seed}: {err} < {bound}");
        }
    }

    fn ctx(tau_sq: f64, epsilon: f64, lambda_d1: f64) -> BoundContext {
        BoundContext {
            tau_sq,
            epsilon,
            b: 1.5,
            kappa: 2.0,
            s_lambda_d1: 2.5,
            n: 100,
            sigma: 0.0,
            c0: 1.0,
            d: 3,
            lambda_d: 0.5,
            lambda_d1,
            lambda_bar_d: 0.45,
            gamma_g: 4.0,
            n_unlabeled: 256,
            delta: 0.05,
            fourth_moment_c: Some(3.0),
        }
    }

    #[test]
    fn bound_formulas() {
        let r = evaluate_bounds(&ctx(0.0, 0.0, 0.25));
        assert_eq!(r.lemma32_rhs, Some(0.0));
        let want = 2.0 * 1.5 * 1.5 * (2.5f64 / 100.0).sqrt();
        assert!((r.thm31_rhs.unwrap() - want).abs() < 1e-14);

        let c = ctx(0.36, 0.1, 0.25);
        let r = evaluate_bounds(&c);
        let lemma = 0.36 * 0.7 * 2.25 / (0.64 * 0.9);
        assert!((r.lemma32_rhs.unwrap() - lemma).abs() < 1e-14);
        let thm = 9.0 * lemma + 2.0 * 2.25 / 0.9 * 0.025f64.sqrt();
        assert!((r.thm31_rhs.unwrap() - thm).abs() < 1e-13);
        assert!((r.prop41_rhs - (0.25 / 0.75) * (0.1 / 0.9) * 2.25).abs() < 1e-14);
        let conf = 2.0 + (2.0 * 40f64.ln()).sqrt();
        let thm41 = 0.25 + conf * (2.0 + 2.0 / 0.45 + 2.0) * 4.0 * 3.0 / 16.0;
        assert!((r.thm41_rhs - thm41).abs() < 1e-12);
        assert!((r.lemma41_rhs.unwrap() - conf * (6.0 + 4.0) / 16.0 * 3.0).abs() < 1e-12);

        let r = evaluate_bounds(&ctx(1.2, 0.1, 0.25));
        assert!(r.thm31_rhs.is_none() && r.lemma32_rhs.is_none());
    }

    #[test]
    fn lemma32_holds_on_random_encoders() {
        let (p, dec) = setup(Scheme::BlockMaskFlip, 4, 0.3);
        let mut checked = 0;
        for seed in 0..60 {
            let d = 2 + (seed as usize % 4);
            let enc = random_encoder(&p, d, seed).unwrap();
            let tau_sq = trace_gap(&enc, &dec).unwrap();
            if tau_sq >= 1.0 {
                continue;
            }
            let eps = 0.05 + 0.1 * (seed % 5) as f64;
            let t = sample_target(&dec, 1.0, eps, seed + 1000).unwrap();
            let (_, err) = project_fpsi(&t, &enc, &dec).unwrap();
            let rhs = evaluate_bounds(&BoundContext { tau_sq, epsilon: eps, b: 1.0, ..ctx(0.0, 0.0, 0.0) }).lemma32_rhs.unwrap();
            assert!(err <= rhs + 1e-9);
            checked += 1;
        }
        assert!(checked > 10);
    }
}

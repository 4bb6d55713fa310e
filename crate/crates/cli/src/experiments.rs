//! Cell-level computations shared by the runner and the acceptance checks.

use augrkhs::complexity::kappa_bases;
use augrkhs::downstream::{
    evaluate_bounds, fit_least_squares, generate_labels, project_fpsi, sample_target, BoundContext,
};
use augrkhs::encoder::{
    covariances, near_optimal_encoder, optimal_encoder, random_encoder, EmpiricalDecomposition, Encoder,
};
use augrkhs::linalg::{median, ols_slope, weighted_norm_sq};
use augrkhs::process::{build_hypercube, AugmentationProcess, HypercubeConfig};
use augrkhs::spectral::{decompose, kernel_x_diagonal, SpectralDecomposition, DEFAULT_RANK_TOL};
use augrkhs::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::EncoderKind;
use crate::record::Table;
use crate::seed::{cell_seed, sub_seed};

pub const FIGURE_4A_SCHEMA: &str = "figure_4a/1";

/// The three per-coordinate `kappa^2` bases over `alpha = 0, 0.01, ..., 1`.
pub fn figure_4a_data() -> Table {
    let mut t = Table::new(FIGURE_4A_SCHEMA, &["alpha", "random_mask", "block_mask", "block_mask_flip"]);
    for k in 0..=100 {
        let alpha = k as f64 / 100.0;
        let [r, b, f] = kappa_bases(alpha);
        t.push(vec![alpha.into(), r.into(), b.into(), f.into()]);
    }
    t
}

/// A hypercube process with its decomposition and `kappa^2 = max K_X(x, x)`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: HypercubeConfig,
    pub process: AugmentationProcess,
    pub decomposition: SpectralDecomposition,
    pub kappa_sq: f64,
}

impl Prepared {
    pub fn build(config: HypercubeConfig, budget: u128) -> Result<Self> {
        let process = build_hypercube(&config, budget)?;
        let decomposition = decompose(&process, DEFAULT_RANK_TOL)?;
        let kappa_sq = kernel_x_diagonal(&process).into_iter().fold(0.0, f64::max);
        Ok(Self { config, process, decomposition, kappa_sq })
    }

    /// Axis values identifying the process in seed keys.
    pub fn axes(&self) -> Vec<(&'static str, String)> {
        process_axes(&self.config)
    }
}

pub fn process_axes(cfg: &HypercubeConfig) -> Vec<(&'static str, String)> {
    vec![("scheme", cfg.scheme.name().into()), ("d_x", cfg.d_x.to_string()), ("alpha", cfg.alpha.to_string())]
}

fn with(mut axes: Vec<(&'static str, String)>, more: &[(&'static str, String)]) -> Vec<(&'static str, String)> {
    axes.extend_from_slice(more);
    axes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceGapPoint {
    pub n: usize,
    pub seed: u64,
    /// `Tr(G^{-1} F)` of the near-optimal encoder under the population measures.
    pub ratio_trace: f64,
    /// `S_lambda(d + 1) - Tr(G^{-1} F)`.
    pub residual: f64,
    /// `residual - lambda_{d+1}`.
    pub excess_gap: f64,
    pub lambda_d1: f64,
    pub lambda_bar_d: f64,
    pub gamma_g: f64,
    pub thm41_rhs: f64,
}

pub fn tracegap_seed(master: u64, cfg: &HypercubeConfig, d: usize, n: usize, seed: u64) -> u64 {
    let axes = with(
        process_axes(cfg),
        &[("d", d.to_string()), ("n_unlabeled", n.to_string()), ("seed", seed.to_string())],
    );
    cell_seed(master, &axes)
}

/// Population quantities of a near-optimal encoder built from `empirical`.
pub fn tracegap_from_empirical(
    prepared: &Prepared,
    empirical: &EmpiricalDecomposition,
    d: usize,
    seed: u64,
    delta: f64,
) -> Result<TraceGapPoint> {
    let dec = &prepared.decomposition;
    let encoder = near_optimal_encoder(&prepared.process, empirical, d)?;
    let cov = covariances(&encoder)?;
    let ratio_trace = cov.ratio_trace()?;
    let residual = dec.partial_trace(d + 1) - ratio_trace;
    let lambda_d1 = dec.lambda(d);
    let lambda_bar_d = empirical.lambdas()[d - 1];
    let ctx = BoundContext {
        tau_sq: 0.0,
        epsilon: 0.0,
        b: 0.0,
        kappa: prepared.kappa_sq.sqrt(),
        s_lambda_d1: dec.partial_trace(d + 1),
        n: empirical.n(),
        sigma: 0.0,
        c0: 0.0,
        d,
        lambda_d: dec.lambda(d - 1),
        lambda_d1,
        lambda_bar_d,
        gamma_g: cov.gamma_g,
        n_unlabeled: empirical.n(),
        delta,
        fourth_moment_c: None,
    };
    Ok(TraceGapPoint {
        n: empirical.n(),
        seed,
        ratio_trace,
        residual,
        excess_gap: residual - lambda_d1,
        lambda_d1,
        lambda_bar_d,
        gamma_g: cov.gamma_g,
        thm41_rhs: evaluate_bounds(&ctx).thm41_rhs,
    })
}

/// One `(N, seed)` cell of the trace-gap rate experiment.
pub fn tracegap_point(prepared: &Prepared, d: usize, n: usize, seed: u64, master: u64, delta: f64) -> Result<TraceGapPoint> {
    let stream = tracegap_seed(master, &prepared.config, d, n, seed);
    let empirical = EmpiricalDecomposition::sample(&prepared.process, n, stream, DEFAULT_RANK_TOL)?;
    tracegap_from_empirical(prepared, &empirical, d, seed, delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `(size, median)` in increasing size.
    pub medians: Vec<(usize, f64)>,
    /// Least-squares slope of `ln median` against `ln size`.
    pub slope: f64,
}

/// Medians per size and their log-log slope.
pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateFit> {
    let mut sizes: Vec<usize> = points.iter().map(|p| p.0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(Error::Validation("a rate fit needs at least two sizes".into()));
    }
    let medians: Vec<(usize, f64)> = sizes
        .iter()
        .map(|&n| {
            let v: Vec<f64> = points.iter().filter(|p| p.0 == n).map(|p| p.1).collect();
            (n, median(&v))
        })
        .collect();
    if let Some(&(n, m)) = medians.iter().find(|m| !(m.1 > 0.0)) {
        return Err(Error::Numerical(format!("median {m} at size {n} has no logarithm")));
    }
    let x: Vec<f64> = medians.iter().map(|m| (m.0 as f64).ln()).collect();
    let y: Vec<f64> = medians.iter().map(|m| m.1.ln()).collect();
    Ok(RateFit { slope: ols_slope(&x, &y), medians })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGapExperiment {
    pub points: Vec<TraceGapPoint>,
    pub fit: RateFit,
}

/// Near-optimal encoders over `n_grid x seeds`; fits the rate of the median excess gap.
pub fn tracegap_rate_experiment(
    prepared: &Prepared,
    d: usize,
    n_grid: &[usize],
    seeds: &[u64],
    master: u64,
    delta: f64,
) -> Result<TraceGapExperiment> {
    let mut points = Vec::with_capacity(n_grid.len() * seeds.len());
    for &n in n_grid {
        for &seed in seeds {
            points.push(tracegap_point(prepared, d, n, seed, master, delta)?);
        }
    }
    let fit = fit_rate(&points.iter().map(|p| (p.n, p.excess_gap)).collect::<Vec<_>>())?;
    Ok(TraceGapExperiment { points, fit })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressCell {
    pub encoder: EncoderKind,
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub b: f64,
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressPoint {
    pub tau_sq: f64,
    /// `||f_hat - f*||^2`.
    pub pred_err: f64,
    /// `||f_Psi_hat - f*||^2`.
    pub approx_err: f64,
    /// `||f_hat - f_Psi_hat||^2`.
    pub est_err: f64,
    pub lemma32_rhs: Option<f64>,
    pub thm31_rhs: Option<f64>,
    pub constraint_active: bool,
}

fn build_encoder(prepared: &Prepared, kind: EncoderKind, d: usize, seed: u64) -> Result<Encoder> {
    let p = &prepared.process;
    match kind {
        EncoderKind::Optimal => optimal_encoder(p, &prepared.decomposition, d),
        EncoderKind::Random => random_encoder(p, d, seed),
        EncoderKind::NearOptimal(n) => {
            let emp = EmpiricalDecomposition::sample(p, n, seed, DEFAULT_RANK_TOL)?;
            near_optimal_encoder(p, &emp, d)
        }
    }
}

/// Target, encoder and labels get separate streams: the target depends on
/// `(process, B, epsilon, seed)` only and the encoder on `(process, encoder, d, seed)`,
/// so sweeping `n` or `sigma` reuses them.
pub fn regress_point(prepared: &Prepared, cell: &RegressCell, master: u64, c0: f64) -> Result<RegressPoint> {
    let dec = &prepared.decomposition;
    let base = prepared.axes();
    let target_seed = cell_seed(
        master,
        &with(base.clone(), &[("B", cell.b.to_string()), ("epsilon", cell.epsilon.to_string()), ("seed", cell.seed.to_string())]),
    );
    let encoder_seed = cell_seed(
        master,
        &with(base.clone(), &[("encoder", cell.encoder.to_string()), ("d", cell.d.to_string()), ("seed", cell.seed.to_string())]),
    );
    let label_seed = sub_seed(
        cell_seed(
            master,
            &with(
                base,
                &[
                    ("encoder", cell.encoder.to_string()),
                    ("seed", cell.seed.to_string()),
                    ("n", cell.n.to_string()),
                    ("sigma", cell.sigma.to_string()),
                    ("d", cell.d.to_string()),
                    ("B", cell.b.to_string()),
                    ("epsilon", cell.epsilon.to_string()),
                ],
            ),
        ),
        "labels",
    );

    let target = sample_target(dec, cell.b, cell.epsilon, target_seed)?;
    let encoder = build_encoder(prepared, cell.encoder, cell.d, encoder_seed)?;
    let tau_sq = augrkhs::encoder::trace_gap(&encoder, dec)?;
    let samples = generate_labels(&target, &prepared.process, cell.n, cell.sigma, label_seed)?;
    let fit = fit_least_squares(&encoder, dec, &samples, cell.b, cell.epsilon)?;
    let (f_psi, approx_err) = project_fpsi(&target, &encoder, dec)?;
    let diff: Vec<f64> = fit.f_hat_values.iter().zip(&f_psi).map(|(a, b)| a - b).collect();
    let est_err = weighted_norm_sq(&diff, dec.p_x());
    let ctx = BoundContext {
        tau_sq,
        epsilon: cell.epsilon,
        b: cell.b,
        kappa: prepared.kappa_sq.sqrt(),
        s_lambda_d1: dec.partial_trace(cell.d + 1),
        n: cell.n,
        sigma: cell.sigma,
        c0,
        d: cell.d,
        lambda_d: dec.lambda(cell.d - 1),
        lambda_d1: dec.lambda(cell.d),
        lambda_bar_d: dec.lambda(cell.d - 1),
        gamma_g: 1.0,
        n_unlabeled: 1,
        delta: 0.5,
        fourth_moment_c: None,
    };
    let bounds = evaluate_bounds(&ctx);
    Ok(RegressPoint {
        tau_sq,
        pred_err: fit.prediction_error(&target, dec.p_x()),
        approx_err,
        est_err,
        lemma32_rhs: bounds.lemma32_rhs,
        thm31_rhs: bounds.thm31_rhs,
        constraint_active: fit.constraint_active,
    })
}

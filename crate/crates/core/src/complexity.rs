//! Augmentation complexity `kappa^2 = max_x K_X(x, x)` and trace quantities.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{AugmentationProcess, HypercubeConfig, Scheme};
use crate::spectral::{kernel_x_diagonal, SpectralDecomposition};

/// Bootstrap resamples for the Monte-Carlo standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Slack on cumulative mass so that e.g. `0.5 + 0.4` still reaches `0.9`.
const MASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa_sq_max: f64,
    pub kappa_sq_percentile: f64,
    pub beta: f64,
    /// `K_X(x, x)` over `X`.
    pub per_point: Vec<f64>,
    pub s_lambda_total: f64,
    /// `|sum lambda - (1 + E_x chi^2(P_A(.|x) || P_A))|`.
    pub chi_sq_identity_residual: f64,
    /// Max gap between the direct and spectral routes to `K_X(x, x)`.
    pub route_gap: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 100.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("percentile {beta} outside (0, 100]")))
    }
}

/// Smallest value whose cumulative weight reaches `beta / 100` of the total.
pub fn weighted_percentile(values: &[f64], weights: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Length { expected: values.len().max(1), got: weights.len() });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let total: f64 = weights.iter().sum();
    let target = beta / 100.0 * total;
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= target - MASS_SLACK * total {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("non-empty")])
}

fn unweighted_percentile(values: &[f64], beta: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((beta / 100.0 * n as f64) - MASS_SLACK * n as f64).ceil().max(1.0) as usize;
    v[k.min(n) - 1]
}

/// Exact report: `K_X(x, x)` by direct summation and by the spectral sum.
pub fn kappa_exact(
    process: &AugmentationProcess,
    decomposition: &SpectralDecomposition,
    beta: f64,
) -> Result<KappaReport> {
    check_beta(beta)?;
    let direct = kernel_x_diagonal(process);
    let psi = decomposition.psi();
    let route_gap = (0..process.x_size())
        .map(|x| {
            let spectral: f64 = decomposition
                .lambdas()
                .iter()
                .enumerate()
                .map(|(i, l)| l * psi[(x, i)] * psi[(x, i)])
                .sum();
            (spectral - direct[x]).abs()
        })
        .fold(0.0f64, f64::max);

    let chi_sq: f64 = (0..process.x_size())
        .map(|x| {
            let div: f64 = process
                .conditional()
                .row(x)
                .map(|(a, p)| {
                    let q = process.p_a()[a];
                    (p - q) * (p - q) / q
                })
                .sum::<f64>()
                // Augmentations outside the support of p(.|x) contribute q each.
                + process.p_a().iter().enumerate()
                    .filter(|&(a, _)| process.conditional().get(x, a) == 0.0)
                    .map(|(_, q)| q)
                    .sum::<f64>();
            process.p_x()[x] * div
        })
        .sum();

    let s_lambda_total = decomposition.total_trace();
    Ok(KappaReport {
        kappa_sq_max: direct.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        kappa_sq_percentile: weighted_percentile(&direct, process.p_x(), beta)?,
        beta,
        per_point: direct,
        s_lambda_total,
        chi_sq_identity_residual: (s_lambda_total - 1.0 - chi_sq).abs(),
        route_gap,
    })
}

/// `beta`-th percentile of `K_X(x, x)` under `P_X`.
pub fn kappa_percentile(process: &AugmentationProcess, beta: f64) -> Result<f64> {
    weighted_percentile(&kernel_x_diagonal(process), process.p_x(), beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloKappa {
    pub estimate: f64,
    pub std_error: f64,
    /// Per-sample averages of `p(x|a) / p(x)`.
    pub samples: Vec<f64>,
}

fn sample_ratio(process: &AugmentationProcess, x: usize, r: usize, rng: &mut ChaCha8Rng) -> f64 {
    let row: Vec<(usize, f64)> = process.conditional().row(x).collect();
    let ratios: Vec<f64> = row.iter().map(|&(a, p)| p / process.p_a()[a]).collect();
    if row.len() == 1 {
        return ratios[0];
    }
    let dist = WeightedIndex::new(row.iter().map(|e| e.1)).expect("rows are normalized");
    let sum: f64 = (0..r).map(|_| ratios[dist.sample(rng)]).sum();
    sum / r as f64
}

fn bootstrap_se(samples: &[f64], beta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = samples.len();
    let stats: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let re: Vec<f64> = (0..n).map(|_| samples[rng.random_range(0..n)]).collect();
            unweighted_percentile(&re, beta)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    (stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (stats.len() - 1) as f64).sqrt()
}

/// Sampled estimate: `m` originals from `P_X`, `r` augmentations each.
///
/// The density ratio is exact; only the integrals are sampled.
pub fn kappa_monte_carlo(
    process: &AugmentationProcess,
    m: usize,
    r: usize,
    beta: f64,
    seed: u64,
) -> Result<MonteCarloKappa> {
    check_beta(beta)?;
    if m == 0 || r == 0 {
        return Err(Error::Validation("sample counts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = WeightedIndex::new(process.p_x()).map_err(|e| Error::Validation(e.to_string()))?;
    let samples: Vec<f64> = (0..m)
        .map(|_| {
            let x = px.sample(&mut rng);
            sample_ratio(process, x, r, &mut rng)
        })
        .collect();
    let estimate = unweighted_percentile(&samples, beta);
    let std_error = bootstrap_se(&samples, beta, &mut rng);
    Ok(MonteCarloKappa { estimate, std_error, samples })
}

/// Like [`kappa_monte_carlo`] but visiting every `x` once, weighted by `p_x`.
pub fn kappa_monte_carlo_population(
    process: &AugmentationProcess,
    r: usize,
    beta: f64,
    seed: u64,
) -> Result<MonteCarloKappa> {
    check_beta(beta)?;
    if r == 0 {
        return Err(Error::Validation("sample counts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> =
        (0..process.x_size()).map(|x| sample_ratio(process, x, r, &mut rng)).collect();
    let estimate = weighted_percentile(&samples, process.p_x(), beta)?;
    let std_error = bootstrap_se(&samples, beta, &mut rng);
    Ok(MonteCarloKappa { estimate, std_error, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub std: f64,
    pub estimates: Vec<f64>,
}

/// Mean and sample standard deviation over independent runs (one ChaCha stream each).
pub fn kappa_monte_carlo_runs(
    process: &AugmentationProcess,
    m: usize,
    r: usize,
    beta: f64,
    seed: u64,
    runs: usize,
) -> Result<RunSummary> {
    let estimates = (0..runs as u64)
        .map(|k| kappa_monte_carlo(process, m, r, beta, seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
        .map(|res| res.map(|mc| mc.estimate))
        .collect::<Result<Vec<f64>>>()?;
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let std = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RunSummary { mean, std, estimates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Exact,
    UpperBound,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Exact => "exact",
            BoundKind::UpperBound => "upper_bound",
        }
    }
}

/// Per-coordinate bases `b` with `kappa^2 = b^d_x`: random, block, block+flip.
pub fn kappa_bases(alpha: f64) -> [f64; 3] {
    [
        2.0 - alpha,
        2f64.powf(1.0 - alpha),
        (alpha * alpha - 2.0 * alpha + 2.0).powf(1.0 - alpha / 2.0),
    ]
}

/// Closed-form `kappa^2` for the hypercube masking schemes.
pub fn closed_form_kappa(cfg: &HypercubeConfig) -> Result<(f64, BoundKind)> {
    cfg.validate()?;
    let d = cfg.d_x as f64;
    let [random, block, flip] = kappa_bases(cfg.alpha);
    match cfg.scheme {
        Scheme::RandomMask => Ok((random.powf(d), BoundKind::Exact)),
        Scheme::BlockMask => Ok((block.powf(d), BoundKind::UpperBound)),
        Scheme::BlockMaskFlip => Ok((flip.powf(d), BoundKind::UpperBound)),
        Scheme::RandomMaskFlip => Err(Error::UnsupportedScheme(format!(
            "no closed form for {}",
            cfg.scheme
        ))),
    }
}

/// `S_lambda(d)`, zero-padded beyond the rank.
pub fn partial_trace(decomposition: &SpectralDecomposition, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::Validation("d must be at least 1".into()));
    }
    Ok(decomposition.partial_trace(d))
}

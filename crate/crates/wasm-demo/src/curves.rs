use augrkhs::complexity::kappa_bases;
use augrkhs::process::{build_hypercube, HypercubeConfig, Scheme, DEFAULT_BUDGET};
use augrkhs::spectral::{decompose, kernel_x_diagonal, DEFAULT_RANK_TOL};

/// Largest `d_x` the page will brute-force.
pub const MAX_DX: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("d_x must lie in 1..={MAX_DX}, got {0}")]
    Dimension(usize),
    #[error("need at least two curve points")]
    Points,
    #[error(transparent)]
    Core(#[from] augrkhs::Error),
}

fn process(scheme: &str, d_x: usize, alpha: f64) -> Result<augrkhs::process::AugmentationProcess, DemoError> {
    if d_x == 0 || d_x > MAX_DX {
        return Err(DemoError::Dimension(d_x));
    }
    let scheme: Scheme = scheme.parse()?;
    Ok(build_hypercube(&HypercubeConfig::new(scheme, d_x, alpha), DEFAULT_BUDGET)?)
}

/// Rows `[alpha, random, block, block_flip]` of the closed-form `kappa^2`, flattened.
/// `alpha` runs over `points` values in `[0, 1]`.
pub fn closed_form_curves(d_x: usize, points: usize) -> Result<Vec<f64>, DemoError> {
    if points < 2 {
        return Err(DemoError::Points);
    }
    let d = d_x as f64;
    Ok((0..points)
        .flat_map(|k| {
            let alpha = k as f64 / (points - 1) as f64;
            let [r, b, f] = kappa_bases(alpha);
            [alpha, r.powf(d), b.powf(d), f.powf(d)]
        })
        .collect())
}

/// Exact `kappa^2 = max_x K_X(x, x)` at each `alpha`.
pub fn brute_kappa(scheme: &str, d_x: usize, alphas: &[f64]) -> Result<Vec<f64>, DemoError> {
    alphas
        .iter()
        .map(|&a| Ok(kernel_x_diagonal(&process(scheme, d_x, a)?).into_iter().fold(0.0, f64::max)))
        .collect()
}

/// Retained eigenvalues, descending.
pub fn spectrum(scheme: &str, d_x: usize, alpha: f64) -> Result<Vec<f64>, DemoError> {
    Ok(decompose(&process(scheme, d_x, alpha)?, DEFAULT_RANK_TOL)?.lambdas().to_vec())
}

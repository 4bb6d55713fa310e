//! Encoders on the augmentation space, their average encoders on `X`, and
//! quality measures: covariances, ratio trace, trace gap and learned kernel.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::csvio::{fmt_f64, parse_rows};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, weighted_cross, weighted_gram};
use crate::process::AugmentationProcess;
use crate::spectral::{gamma_star_rows, weighted_svd, SpectralDecomposition};

/// Smallest admissible eigenvalue of the `P_A` Gram of an encoder.
pub const MIN_GRAM_EIGENVALUE: f64 = 1e-10;

/// Largest admissible condition number of `G`.
pub const MAX_CONDITION: f64 = 1e12;

/// A `d`-dimensional encoder `Phi_hat` on `A` with its average encoder on `X`.
#[derive(Debug, Clone)]
pub struct Encoder {
    phi_hat: DMatrix<f64>,
    psi_hat: DMatrix<f64>,
    p_x: Vec<f64>,
    p_a: Vec<f64>,
}

impl Encoder {
    /// Average encoder `psi_hat_i = Gamma* phi_hat_i`; rows of `phi_hat` are the features.
    pub fn build(process: &AugmentationProcess, phi_hat: DMatrix<f64>) -> Result<Self> {
        if phi_hat.ncols() != process.a_size() {
            return Err(Error::Length { expected: process.a_size(), got: phi_hat.ncols() });
        }
        if phi_hat.nrows() == 0 {
            return Err(Error::Validation("encoder dimension must be at least 1".into()));
        }
        let g = weighted_gram(&phi_hat, process.p_a());
        let (vals, _) = sym_eigen_desc(&g);
        let smallest = *vals.last().expect("d >= 1");
        if smallest <= MIN_GRAM_EIGENVALUE {
            return Err(Error::RankDeficient { singular_value: smallest.max(0.0) });
        }
        let psi_hat = gamma_star_rows(process, &phi_hat);
        Ok(Self { phi_hat, psi_hat, p_x: process.p_x().to_vec(), p_a: process.p_a().to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.phi_hat.nrows()
    }

    /// `d x |A|`.
    pub fn phi_hat(&self) -> &DMatrix<f64> {
        &self.phi_hat
    }

    /// `d x |X|`.
    pub fn psi_hat(&self) -> &DMatrix<f64> {
        &self.psi_hat
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    pub fn p_a(&self) -> &[f64] {
        &self.p_a
    }

    /// Encoder with `phi_hat` replaced by `m phi_hat`.
    pub fn transformed(&self, m: &DMatrix<f64>, process: &AugmentationProcess) -> Result<Self> {
        Self::build(process, m * &self.phi_hat)
    }

    /// Header `d a_size` then one line per feature.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{} {}\n", self.dim(), self.phi_hat.ncols());
        for row in self.phi_hat.row_iter() {
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(process: &AugmentationProcess, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) =
            lines.next().ok_or_else(|| Error::Parse { line: 1, msg: "empty encoder file".into() })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: 1, msg: format!("bad header: {e}") })?;
        let [d, a_size] = dims[..] else {
            return Err(Error::Parse { line: 1, msg: "header must be `d a_size`".into() });
        };
        let body: Vec<(usize, &str)> = lines.collect();
        let first = body.first().map(|(i, _)| i + 1).unwrap_or(2);
        let rows: Vec<&str> = body.iter().map(|(_, l)| *l).collect();
        let m = parse_rows(&rows, first)?;
        if m.nrows() != d || m.ncols() != a_size {
            return Err(Error::Parse {
                line: first,
                msg: format!("expected {d} rows of {a_size} values, got {}x{}", m.nrows(), m.ncols()),
            });
        }
        Self::build(process, m)
    }
}

/// Encoder with i.i.d. standard normal entries.
pub fn random_encoder(process: &AugmentationProcess, d: usize, seed: u64) -> Result<Encoder> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, process.a_size(), |_, _| rng.sample_normal());
    Encoder::build(process, m)
}

trait NormalExt {
    fn sample_normal(&mut self) -> f64;
}

impl NormalExt for ChaCha8Rng {
    fn sample_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

#[derive(Debug, Clone)]
pub struct CovariancePair {
    /// `F(i, j) = <psi_hat_i, psi_hat_j>_{P_X}`.
    pub f: DMatrix<f64>,
    /// `G(i, j) = <phi_hat_i, phi_hat_j>_{P_A}`.
    pub g: DMatrix<f64>,
    pub gamma_g: f64,
}

impl CovariancePair {
    fn from_grams(f: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let (vals, _) = sym_eigen_desc(&g);
        let (max, min) = (vals[0], *vals.last().expect("d >= 1"));
        let gamma_g = if min > 0.0 { max / min } else { f64::INFINITY };
        if gamma_g > MAX_CONDITION {
            return Err(Error::Singular { condition: gamma_g });
        }
        Ok(Self { f, g, gamma_g })
    }

    /// Eigenvalues of the pencil `(F, G)`, descending.
    pub fn pencil_eigenvalues(&self) -> Result<Vec<f64>> {
        let l = self
            .g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular { condition: self.gamma_g })?
            .l();
        let l_inv = l
            .try_inverse()
            .ok_or_else(|| Error::Singular { condition: self.gamma_g })?;
        let m = &l_inv * &self.f * l_inv.transpose();
        Ok(sym_eigen_desc(&m).0)
    }

    /// `Tr(G^{-1} F)`.
    pub fn ratio_trace(&self) -> Result<f64> {
        let solved = self
            .g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular { condition: self.gamma_g })?
            .solve(&self.f);
        Ok(solved.trace())
    }
}

pub fn covariances(encoder: &Encoder) -> Result<CovariancePair> {
    CovariancePair::from_grams(
        weighted_gram(&encoder.psi_hat, &encoder.p_x),
        weighted_gram(&encoder.phi_hat, &encoder.p_a),
    )
}

pub fn ratio_trace(cov: &CovariancePair) -> Result<f64> {
    cov.ratio_trace()
}

/// `tau^2 = min_{d' <= d} [S_lambda(d' + 1) - (top d' pencil eigenvalues)]`.
pub fn trace_gap(encoder: &Encoder, decomposition: &SpectralDecomposition) -> Result<f64> {
    let mu = covariances(encoder)?.pencil_eigenvalues()?;
    let mut best = f64::INFINITY;
    let mut acc = 0.0;
    for (k, m) in mu.iter().enumerate() {
        acc += m;
        best = best.min(decomposition.partial_trace(k + 2) - acc);
    }
    Ok(best)
}

/// `K_hat(x, x') = Psi_hat(x)^T G^{-1} Psi_hat(x')`.
pub fn learned_kernel(encoder: &Encoder) -> Result<DMatrix<f64>> {
    let cov = covariances(encoder)?;
    let chol = cov.g.cholesky().ok_or(Error::Singular { condition: cov.gamma_g })?;
    let solved = chol.solve(&encoder.psi_hat);
    Ok(encoder.psi_hat.tr_mul(&solved))
}

/// Encoder whose features are `phi_1, ..., phi_d`.
pub fn optimal_encoder(
    process: &AugmentationProcess,
    decomposition: &SpectralDecomposition,
    d: usize,
) -> Result<Encoder> {
    if d == 0 || d > decomposition.rank() {
        return Err(Error::RankExceeded { requested: d, rank: decomposition.rank() });
    }
    let rows = decomposition.phi().columns(0, d).transpose();
    Encoder::build(process, rows)
}

/// Eigen-system of `Gamma* Gamma_bar` from `N` samples of `P_X`.
#[derive(Debug, Clone)]
pub struct EmpiricalDecomposition {
    sample_indices: Vec<usize>,
    p_a_hat: Vec<f64>,
    lambdas_bar: Vec<f64>,
    /// `N x r`, values on the samples.
    psi_bar: DMatrix<f64>,
    /// `|A| x r`, zero off the empirical support.
    phi_bar: DMatrix<f64>,
}

impl EmpiricalDecomposition {
    /// `N` i.i.d. draws from `P_X`.
    pub fn sample(process: &AugmentationProcess, n: usize, seed: u64, rank_tol: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("N must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = WeightedIndex::new(process.p_x()).map_err(|e| Error::Validation(e.to_string()))?;
        let idx: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        Self::from_samples(process, idx, rank_tol)
    }

    /// Decomposition for a given multiset of originals.
    pub fn from_samples(
        process: &AugmentationProcess,
        sample_indices: Vec<usize>,
        rank_tol: f64,
    ) -> Result<Self> {
        let n = sample_indices.len();
        if n == 0 {
            return Err(Error::Validation("N must be at least 1".into()));
        }
        if let Some(&bad) = sample_indices.iter().find(|&&x| x >= process.x_size()) {
            return Err(Error::Validation(format!("sample index {bad} outside X")));
        }
        let mut p_a_hat = vec![0.0; process.a_size()];
        for &x in &sample_indices {
            for (a, p) in process.conditional().row(x) {
                p_a_hat[a] += p / n as f64;
            }
        }
        let support: Vec<usize> = (0..process.a_size()).filter(|&a| p_a_hat[a] > 0.0).collect();
        let mut local = vec![usize::MAX; process.a_size()];
        for (i, &a) in support.iter().enumerate() {
            local[a] = i;
        }
        let scale = 1.0 / (n as f64).sqrt();
        let mut b = DMatrix::zeros(support.len(), n);
        for (k, &x) in sample_indices.iter().enumerate() {
            for (a, p) in process.conditional().row(x) {
                b[(local[a], k)] = p * scale / p_a_hat[a].sqrt();
            }
        }
        let weights_x = vec![1.0 / n as f64; n];
        let weights_a: Vec<f64> = support.iter().map(|&a| p_a_hat[a]).collect();
        let svd = weighted_svd(&b, &weights_x, &weights_a, rank_tol)?;
        let mut phi_bar = DMatrix::zeros(process.a_size(), svd.lambdas.len());
        for (i, &a) in support.iter().enumerate() {
            phi_bar.row_mut(a).copy_from(&svd.right.row(i));
        }
        Ok(Self { sample_indices, p_a_hat, lambdas_bar: svd.lambdas, psi_bar: svd.left, phi_bar })
    }

    pub fn n(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn p_a_hat(&self) -> &[f64] {
        &self.p_a_hat
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas_bar
    }

    pub fn rank(&self) -> usize {
        self.lambdas_bar.len()
    }

    pub fn psi_bar(&self) -> &DMatrix<f64> {
        &self.psi_bar
    }

    pub fn phi_bar(&self) -> &DMatrix<f64> {
        &self.phi_bar
    }

    pub fn partial_trace(&self, d: usize) -> f64 {
        self.lambdas_bar.iter().take(d).sum()
    }

    /// `max |Phi_bar^T diag(p_a_hat) Phi_bar - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = weighted_gram(&self.phi_bar.transpose(), &self.p_a_hat);
        (g - DMatrix::identity(self.rank(), self.rank())).abs().max()
    }
}

/// Encoder with features `phi_bar_1, ..., phi_bar_d`.
pub fn near_optimal_encoder(
    process: &AugmentationProcess,
    empirical: &EmpiricalDecomposition,
    d: usize,
) -> Result<Encoder> {
    if d == 0 || d > empirical.rank() {
        return Err(Error::RankExceeded { requested: d, rank: empirical.rank() });
    }
    Encoder::build(process, empirical.phi_bar.columns(0, d).transpose())
}

/// Empirical covariances `F_hat`, `G_hat` under the sample measure and `p_a_hat`.
pub fn empirical_covariances(
    encoder: &Encoder,
    empirical: &EmpiricalDecomposition,
) -> Result<CovariancePair> {
    let psi_s = DMatrix::from_fn(encoder.dim(), empirical.n(), |i, k| {
        encoder.psi_hat[(i, empirical.sample_indices[k])]
    });
    let w = vec![1.0 / empirical.n() as f64; empirical.n()];
    CovariancePair::from_grams(
        weighted_gram(&psi_s, &w),
        weighted_gram(&encoder.phi_hat, &empirical.p_a_hat),
    )
}

/// `Tr(G_hat^{-1} F_hat)`.
pub fn empirical_ratio_trace(encoder: &Encoder, empirical: &EmpiricalDecomposition) -> Result<f64> {
    empirical_covariances(encoder, empirical)?.ratio_trace()
}

/// `||P_1 - P_2||_F` for the `w`-orthogonal projectors onto the row spans of two tables.
pub fn projector_distance(r1: &DMatrix<f64>, r2: &DMatrix<f64>, w: &[f64]) -> Result<f64> {
    let p1 = weighted_projector(r1, w)?;
    let p2 = weighted_projector(r2, w)?;
    Ok((p1 - p2).norm())
}

fn weighted_projector(rows: &DMatrix<f64>, w: &[f64]) -> Result<DMatrix<f64>> {
    let mut scaled = rows.transpose();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[j].sqrt();
    }
    let q = crate::linalg::orthonormal_columns(&scaled, 1e-10)?;
    Ok(&q * q.transpose())
}

/// `<phi_hat_i, phi_k>_{P_A}` for every feature `i` and retained eigenfunction `k`.
pub fn eigen_coordinates(encoder: &Encoder, decomposition: &SpectralDecomposition) -> DMatrix<f64> {
    weighted_cross(&encoder.phi_hat, &decomposition.phi().transpose(), &encoder.p_a)
}

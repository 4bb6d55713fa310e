//! Dual kernels, the augmentation operators and the weighted spectral
//! decomposition of a finite augmentation process.
//!
//! With `B(a, x) = p(a|x) sqrt(p_x(x) / p_a(a))` and thin SVD `B = U S V^T`,
//! the eigenvalues are `lambda_i = s_i^2`, and
//! `phi_i(a) = U(a, i) / sqrt(p_a(a))`, `psi_i(x) = V(x, i) / sqrt(p_x(x))`.
//! Both families are orthonormal in their weighted `L^2` spaces and satisfy
//! `Gamma* phi_i = sqrt(lambda_i) psi_i`.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::csvio::columns_to_csv;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, weighted_norm_sq};
use crate::process::AugmentationProcess;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Eigenvalues closer than this are treated as one degenerate block.
const DEGENERACY_TOL: f64 = 1e-9;

/// Column lists `(x, p(a|x))` for every augmentation.
fn columns(process: &AugmentationProcess) -> Vec<Vec<(usize, f64)>> {
    let mut cols = vec![Vec::new(); process.a_size()];
    for x in 0..process.x_size() {
        for (a, p) in process.conditional().row(x) {
            cols[a].push((x, p));
        }
    }
    cols
}

/// `K_X(x1, x2) = sum_a p(a|x1) p(a|x2) / p_a(a)`.
pub fn kernel_x(process: &AugmentationProcess) -> DMatrix<f64> {
    let n = process.x_size();
    let mut k = DMatrix::zeros(n, n);
    for (a, col) in columns(process).iter().enumerate() {
        let inv = 1.0 / process.p_a()[a];
        for &(x1, p1) in col {
            for &(x2, p2) in col {
                k[(x1, x2)] += p1 * p2 * inv;
            }
        }
    }
    k
}

/// Diagonal of [`kernel_x`] without forming the full matrix.
pub fn kernel_x_diagonal(process: &AugmentationProcess) -> Vec<f64> {
    let p_a = process.p_a();
    (0..process.x_size())
        .map(|x| process.conditional().row(x).map(|(a, p)| p * p / p_a[a]).sum())
        .collect()
}

/// Positive-pair kernel `K_A(a1, a2) = P_A+(a1, a2) / (p_a(a1) p_a(a2))`.
///
/// Dense `|A| x |A|`; intended for small augmentation spaces.
pub fn kernel_a(process: &AugmentationProcess) -> DMatrix<f64> {
    let m = process.a_size();
    let p_a = process.p_a();
    let mut k = DMatrix::zeros(m, m);
    for x in 0..process.x_size() {
        let px = process.p_x()[x];
        let row: Vec<(usize, f64)> = process.conditional().row(x).collect();
        for &(a1, p1) in &row {
            for &(a2, p2) in &row {
                k[(a1, a2)] += p1 * p2 * px;
            }
        }
    }
    for a1 in 0..m {
        for a2 in 0..m {
            k[(a1, a2)] /= p_a[a1] * p_a[a2];
        }
    }
    k
}

/// `(Gamma f)(a) = E[f(X) | a] = sum_x f(x) p(x|a)`.
pub fn apply_gamma(process: &AugmentationProcess, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != process.x_size() {
        return Err(Error::Length { expected: process.x_size(), got: f.len() });
    }
    let (p_x, p_a) = (process.p_x(), process.p_a());
    let mut out = vec![0.0; process.a_size()];
    for x in 0..process.x_size() {
        for (a, p) in process.conditional().row(x) {
            out[a] += f[x] * p * p_x[x];
        }
    }
    for (v, pa) in out.iter_mut().zip(p_a) {
        *v /= pa;
    }
    Ok(out)
}

/// `(Gamma* g)(x) = E[g(A) | x] = sum_a g(a) p(a|x)`.
pub fn apply_gamma_star(process: &AugmentationProcess, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != process.a_size() {
        return Err(Error::Length { expected: process.a_size(), got: g.len() });
    }
    Ok((0..process.x_size())
        .map(|x| process.conditional().row(x).map(|(a, p)| g[a] * p).sum())
        .collect())
}

/// `Gamma*` applied to every row of a `d x |A|` table.
pub fn gamma_star_rows(process: &AugmentationProcess, rows: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.nrows(), process.x_size());
    for x in 0..process.x_size() {
        for (a, p) in process.conditional().row(x) {
            for i in 0..rows.nrows() {
                out[(i, x)] += rows[(i, a)] * p;
            }
        }
    }
    out
}

/// `R J^T` for a `d x |X|` table `R`, where `J(a, x) = p_x(x) p(a|x)` is the joint.
pub fn joint_rows(process: &AugmentationProcess, rows: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.nrows(), process.a_size());
    for x in 0..process.x_size() {
        let px = process.p_x()[x];
        for (a, p) in process.conditional().row(x) {
            for i in 0..rows.nrows() {
                out[(i, a)] += rows[(i, x)] * px * p;
            }
        }
    }
    out
}

/// Weighted eigen-system of `Gamma* Gamma` / `Gamma Gamma*`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    lambdas: Vec<f64>,
    psi: DMatrix<f64>,
    phi: DMatrix<f64>,
    rank_tol: f64,
    null_dim: usize,
    reconstruction_residual: f64,
    p_x: Vec<f64>,
    p_a: Vec<f64>,
}

impl SpectralDecomposition {
    /// Retained eigenvalues, descending.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `lambda_{i+1}` (0-based `i`), zero beyond the retained rank.
    pub fn lambda(&self, i: usize) -> f64 {
        self.lambdas.get(i).copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Number of data-space directions dropped below `rank_tol`.
    pub fn null_dim(&self) -> usize {
        self.null_dim
    }

    /// `|X| x r`, column `i` holds `psi_{i+1}`.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// `|A| x r`, column `i` holds `phi_{i+1}`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    pub fn p_a(&self) -> &[f64] {
        &self.p_a
    }

    /// Frobenius residual of the rank-`r` reconstruction of the symmetrized joint.
    pub fn reconstruction_residual(&self) -> f64 {
        self.reconstruction_residual
    }

    /// `S_lambda(d)`: sum of the top `d` eigenvalues, zero-padded past the rank.
    pub fn partial_trace(&self, d: usize) -> f64 {
        self.lambdas.iter().take(d).sum()
    }

    pub fn total_trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// Coefficients `<f, psi_i>_{P_X}` of a function on `X`.
    pub fn coefficients(&self, f: &[f64]) -> DVector<f64> {
        let weighted = DVector::from_iterator(f.len(), f.iter().zip(&self.p_x).map(|(v, p)| v * p));
        self.psi.tr_mul(&weighted)
    }

    /// `<f, g>_H` for functions in the range of `Gamma*`.
    pub fn h_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let (cf, cg) = (self.coefficients(f), self.coefficients(g));
        cf.iter().zip(cg.iter()).zip(&self.lambdas).map(|((a, b), l)| a * b / l).sum()
    }

    pub fn h_norm_sq(&self, f: &[f64]) -> f64 {
        self.h_inner(f, f)
    }

    /// Function `sum_i u_i psi_i` on `X` from spectral coefficients.
    pub fn synthesize(&self, u: &DVector<f64>) -> Vec<f64> {
        let cols = u.len().min(self.rank());
        (&self.psi.columns(0, cols) * u.rows(0, cols)).iter().copied().collect()
    }

    /// Largest duality residuals over eigenpairs with `lambda > min_lambda`:
    /// `(max ||psi_i - lambda^{-1/2} Gamma* phi_i||, max ||phi_i - lambda^{-1/2} Gamma psi_i||)`.
    pub fn duality_residuals(&self, process: &AugmentationProcess, min_lambda: f64) -> (f64, f64) {
        let mut worst = (0.0f64, 0.0f64);
        for (i, &l) in self.lambdas.iter().enumerate() {
            if l <= min_lambda {
                continue;
            }
            let s = l.sqrt();
            let phi_i: Vec<f64> = self.phi.column(i).iter().copied().collect();
            let psi_i: Vec<f64> = self.psi.column(i).iter().copied().collect();
            let back = apply_gamma_star(process, &phi_i).expect("sizes match");
            let fwd = apply_gamma(process, &psi_i).expect("sizes match");
            let rx: Vec<f64> = psi_i.iter().zip(&back).map(|(p, b)| p - b / s).collect();
            let ra: Vec<f64> = phi_i.iter().zip(&fwd).map(|(p, f)| p - f / s).collect();
            worst.0 = worst.0.max(weighted_norm_sq(&rx, &self.p_x).sqrt());
            worst.1 = worst.1.max(weighted_norm_sq(&ra, &self.p_a).sqrt());
        }
        worst
    }

    /// `(max |Psi^T D_x Psi - I|, max |Phi^T D_a Phi - I|)`.
    pub fn orthonormality_residuals(&self) -> (f64, f64) {
        let gram = |m: &DMatrix<f64>, w: &[f64]| {
            let mut scaled = m.clone();
            for (j, mut row) in scaled.row_iter_mut().enumerate() {
                row *= w[j];
            }
            let g = m.tr_mul(&scaled);
            (g - DMatrix::identity(m.ncols(), m.ncols())).abs().max()
        };
        (gram(&self.psi, &self.p_x), gram(&self.phi, &self.p_a))
    }

    /// Eigenvalues as one CSV column.
    pub fn lambdas_csv(&self) -> String {
        let m = DMatrix::from_column_slice(self.rank(), 1, &self.lambdas);
        columns_to_csv(&m.transpose(), "lambda")
    }

    /// One line per `psi_i`, values over `X` in index order.
    pub fn psi_csv(&self) -> String {
        columns_to_csv(&self.psi, &format!("psi,{}x{}", self.psi.nrows(), self.rank()))
    }

    /// One line per `phi_i`, values over `A` in index order.
    pub fn phi_csv(&self) -> String {
        columns_to_csv(&self.phi, &format!("phi,{}x{}", self.phi.nrows(), self.rank()))
    }
}

fn lex_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-9 {
            return y.total_cmp(x);
        }
    }
    Ordering::Equal
}

/// Eigen-system assembled from an SVD of a symmetrized joint.
pub(crate) struct WeightedSvd {
    pub lambdas: Vec<f64>,
    /// Columns: right factor scaled to the data-side weights.
    pub left: DMatrix<f64>,
    /// Columns: left factor scaled to the augmentation-side weights.
    pub right: DMatrix<f64>,
    pub dropped: usize,
    pub residual: f64,
}

/// Squared singular values above `rank_tol` with their singular vectors, descending.
///
/// Solved as the symmetric eigenproblem of the smaller Gram matrix; the other
/// side follows by one multiplication. Returns `(sigma^2, U, V^T)`.
fn thin_svd(b: &DMatrix<f64>, rank_tol: f64) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let wide = b.nrows() < b.ncols();
    let gram = if wide { b * b.transpose() } else { b.tr_mul(b) };
    let (vals, vecs) = sym_eigen_desc(&gram);
    let k = vals.iter().take_while(|&&l| l > rank_tol).count();
    let lams = vals[..k].to_vec();
    let small = vecs.columns(0, k).into_owned();
    let mut other = if wide { b.tr_mul(&small) } else { b * &small };
    for (i, mut col) in other.column_iter_mut().enumerate() {
        col /= lams[i].sqrt();
    }
    if wide {
        (lams, small, other.transpose())
    } else {
        (lams, other, small.transpose())
    }
}

/// SVD of `b` (`|A| x n`) into weighted eigenfunctions.
///
/// `x_weights` / `a_weights` are the measures of the two sides; `a` rows with
/// zero weight must be absent from `b`. Applies the sign and ordering
/// conventions.
pub(crate) fn weighted_svd(
    b: &DMatrix<f64>,
    x_weights: &[f64],
    a_weights: &[f64],
    rank_tol: f64,
) -> Result<WeightedSvd> {
    let (lams, u, v_t) = thin_svd(b, rank_tol);
    let sv: Vec<f64> = lams.iter().map(|l| l.sqrt()).collect();
    let kept: Vec<usize> = (0..lams.len()).collect();
    let dropped = x_weights.len() - kept.len();

    let mut cols: Vec<(f64, Vec<f64>, Vec<f64>)> = kept
        .iter()
        .map(|&i| {
            let mut psi: Vec<f64> =
                (0..x_weights.len()).map(|x| v_t[(i, x)] / x_weights[x].sqrt()).collect();
            let mut phi: Vec<f64> =
                (0..a_weights.len()).map(|a| u[(a, i)] / a_weights[a].sqrt()).collect();
            let max = psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let pivot = psi.iter().position(|v| v.abs() >= max * (1.0 - 1e-8)).unwrap_or(0);
            if psi[pivot] < 0.0 {
                psi.iter_mut().for_each(|v| *v = -*v);
                phi.iter_mut().for_each(|v| *v = -*v);
            }
            (lams[i], psi, phi)
        })
        .collect();

    // Reorder inside degenerate blocks by the sign-fixed psi columns.
    let mut start = 0;
    while start < cols.len() {
        let head = cols[start].0;
        let mut end = start + 1;
        while end < cols.len() && (head - cols[end].0).abs() <= DEGENERACY_TOL * head.max(1.0) {
            end += 1;
        }
        cols[start..end].sort_by(|a, b| lex_desc(&a.1, &b.1));
        start = end;
    }

    let r = cols.len();
    let lambdas: Vec<f64> = cols.iter().map(|c| c.0).collect();
    let left = DMatrix::from_fn(x_weights.len(), r, |x, i| cols[i].1[x]);
    let right = DMatrix::from_fn(a_weights.len(), r, |a, i| cols[i].2[a]);

    let mut recon = b.clone();
    for &i in &kept {
        recon -= u.column(i) * v_t.row(i) * sv[i];
    }
    Ok(WeightedSvd { lambdas, left, right, dropped, residual: recon.norm() })
}

/// Spectral decomposition via the thin SVD of the symmetrized joint.
pub fn decompose(process: &AugmentationProcess, rank_tol: f64) -> Result<SpectralDecomposition> {
    let b = process.symmetrized_joint();
    let svd = weighted_svd(&b, process.p_x(), process.p_a(), rank_tol)?;
    if svd.lambdas.is_empty() {
        return Err(Error::Numerical("empty spectrum; the top eigenvalue must be 1".into()));
    }
    Ok(SpectralDecomposition {
        lambdas: svd.lambdas,
        psi: svd.left,
        phi: svd.right,
        rank_tol,
        null_dim: svd.dropped,
        reconstruction_residual: svd.residual,
        p_x: process.p_x().to_vec(),
        p_a: process.p_a().to_vec(),
    })
}

/// Max sup-norm gap between `Gamma* Gamma f`, the weighted `K_X` integral and
/// the spectral expansion, over the supplied test vectors.
pub fn integral_identity_residual(
    process: &AugmentationProcess,
    decomposition: &SpectralDecomposition,
    tests: &[Vec<f64>],
) -> Result<f64> {
    let k = kernel_x(process);
    let p_x = process.p_x();
    let mut worst = 0.0f64;
    for f in tests {
        let composed = apply_gamma_star(process, &apply_gamma(process, f)?)?;
        let weighted = DVector::from_iterator(f.len(), f.iter().zip(p_x).map(|(v, p)| v * p));
        let integral = &k * &weighted;
        let coeffs = decomposition.coefficients(f);
        let scaled = DVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(decomposition.lambdas()).map(|(c, l)| c * l),
        );
        let spectral = decomposition.psi() * scaled;
        for x in 0..f.len() {
            worst = worst.max((composed[x] - integral[x]).abs());
            worst = worst.max((composed[x] - spectral[x]).abs());
        }
    }
    Ok(worst)
}

/// [`integral_identity_residual`] over the indicator basis of `X`.
pub fn verify_integral_identity(
    process: &AugmentationProcess,
    decomposition: &SpectralDecomposition,
) -> Result<f64> {
    let n = process.x_size();
    let tests: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    integral_identity_residual(process, decomposition, &tests)
}

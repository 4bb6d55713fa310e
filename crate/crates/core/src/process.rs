//! Finite augmentation processes: a data marginal `p_x` and a conditional
//! kernel `p(a|x)` from data points to augmented points.
//!
//! Every constructor prunes augmentations that carry zero marginal mass, so
//! `p_a(a) > 0` holds for every retained column and the kernels never divide
//! by zero.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating processes built by this crate.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance used when validating user-supplied probabilities.
pub const USER_TOL: f64 = 1e-9;
/// Default enumeration budget (number of conditional entries).
pub const DEFAULT_BUDGET: u128 = 100_000_000;

/// Conditional matrices below this fill ratio are stored row-compressed.
const SPARSE_DENSITY: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpace {
    size: usize,
    labels: Option<Vec<String>>,
}

impl FiniteSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Validation("a finite space needs at least one point".into()));
        }
        Ok(Self { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut space = Self::new(labels.len())?;
        space.labels = Some(labels);
        Ok(space)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }
}

/// Probability vector over a [`FiniteSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    mass: Vec<f64>,
}

impl Distribution {
    pub fn new(mass: Vec<f64>, tol: f64) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::Validation("empty distribution".into()));
        }
        if let Some(i) = mass.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Validation(format!(
                "probability at index {i} is negative or not finite ({})",
                mass[i]
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::Validation(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { mass })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("empty distribution".into()));
        }
        Ok(Self { mass: vec![1.0 / n as f64; n] })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(DMatrix<f64>),
    Sparse {
        offsets: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
    },
}

/// The `|X| x |A|` matrix of `p(a|x)`, one row per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    rows: usize,
    cols: usize,
    storage: Storage,
}

impl Conditional {
    /// Builds from per-row sorted `(column, prob)` lists with positive entries.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>, cols: usize) -> Self {
        let n_rows = rows.len();
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let density = nnz as f64 / (n_rows as f64 * cols as f64);
        let storage = if density < SPARSE_DENSITY {
            let mut offsets = Vec::with_capacity(n_rows + 1);
            let mut c = Vec::with_capacity(nnz);
            let mut v = Vec::with_capacity(nnz);
            offsets.push(0);
            for row in rows {
                for (a, p) in row {
                    c.push(a);
                    v.push(p);
                }
                offsets.push(c.len());
            }
            Storage::Sparse { offsets, cols: c, vals: v }
        } else {
            let mut m = DMatrix::zeros(n_rows, cols);
            for (x, row) in rows.into_iter().enumerate() {
                for (a, p) in row {
                    m[(x, a)] = p;
                }
            }
            Storage::Dense(m)
        };
        Self { rows: n_rows, cols, storage }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn nnz(&self) -> usize {
        (0..self.rows).map(|x| self.row(x).count()).sum()
    }

    /// Positive entries `(a, p(a|x))` of row `x` in ascending column order.
    pub fn row(&self, x: usize) -> RowIter<'_> {
        match &self.storage {
            Storage::Dense(m) => RowIter::Dense { m, x, a: 0 },
            Storage::Sparse { offsets, cols, vals } => {
                let (lo, hi) = (offsets[x], offsets[x + 1]);
                RowIter::Sparse {
                    cols: &cols[lo..hi],
                    vals: &vals[lo..hi],
                    k: 0,
                }
            }
        }
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[(x, a)],
            Storage::Sparse { offsets, cols, vals } => {
                let (lo, hi) = (offsets[x], offsets[x + 1]);
                match cols[lo..hi].binary_search(&a) {
                    Ok(k) => vals[lo + k],
                    Err(_) => 0.0,
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse { .. } => {
                let mut m = DMatrix::zeros(self.rows, self.cols);
                for x in 0..self.rows {
                    for (a, p) in self.row(x) {
                        m[(x, a)] = p;
                    }
                }
                m
            }
        }
    }
}

pub enum RowIter<'a> {
    Dense { m: &'a DMatrix<f64>, x: usize, a: usize },
    Sparse { cols: &'a [usize], vals: &'a [f64], k: usize },
}

impl Iterator for RowIter<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            RowIter::Dense { m, x, a } => {
                while *a < m.ncols() {
                    let p = m[(*x, *a)];
                    let col = *a;
                    *a += 1;
                    if p != 0.0 {
                        return Some((col, p));
                    }
                }
                None
            }
            RowIter::Sparse { cols, vals, k } => {
                let out = cols.get(*k).map(|&c| (c, vals[*k]));
                *k += 1;
                out
            }
        }
    }
}

/// A finite augmentation process `(P_X, p(a|x))` with its derived `P_A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationProcess {
    x_space: FiniteSpace,
    a_space: FiniteSpace,
    p_x: Distribution,
    p_a: Distribution,
    conditional: Conditional,
}

/// Maps original augmentation indices to pruned ones (`None` = zero mass).
pub type IndexRemap = Vec<Option<usize>>;

impl AugmentationProcess {
    /// Validates and assembles a process from per-row support lists.
    ///
    /// `rows[x]` holds `(a, p(a|x))` pairs over an augmentation index space of
    /// size `a_size`. Entries equal to zero are dropped, duplicate indices are
    /// summed, and augmentations with zero marginal mass are pruned.
    pub fn from_rows(
        p_x: Vec<f64>,
        a_size: usize,
        rows: Vec<Vec<(usize, f64)>>,
        a_labels: Option<Vec<String>>,
        x_labels: Option<Vec<String>>,
        tol: f64,
    ) -> Result<(Self, IndexRemap)> {
        let p_x = Distribution::new(p_x, tol)?;
        if let Some(x) = p_x.mass().iter().position(|&p| p <= 0.0) {
            return Err(Error::Validation(format!(
                "data point {x} has zero mass; drop it from the data space"
            )));
        }
        if rows.len() != p_x.len() {
            return Err(Error::Length { expected: p_x.len(), got: rows.len() });
        }
        if a_size == 0 {
            return Err(Error::Validation("augmentation space is empty".into()));
        }
        let mut bad_rows = Vec::new();
        let mut cleaned = Vec::with_capacity(rows.len());
        for (x, mut row) in rows.into_iter().enumerate() {
            for &(a, p) in &row {
                if a >= a_size {
                    return Err(Error::Validation(format!(
                        "augmentation index {a} out of range on row {x}"
                    )));
                }
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::Validation(format!(
                        "negative or non-finite probability {p} at ({x}, {a})"
                    )));
                }
            }
            row.sort_by_key(|&(a, _)| a);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (a, p) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == a => last.1 += p,
                    _ => merged.push((a, p)),
                }
            }
            merged.retain(|&(_, p)| p > 0.0);
            let total: f64 = merged.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > tol {
                bad_rows.push(x);
            }
            cleaned.push(merged);
        }
        if !bad_rows.is_empty() {
            return Err(Error::RowSums { rows: bad_rows });
        }

        let mut used = vec![false; a_size];
        for row in &cleaned {
            for &(a, _) in row {
                used[a] = true;
            }
        }
        let mut remap = vec![None; a_size];
        let mut next = 0;
        for (a, u) in used.iter().enumerate() {
            if *u {
                remap[a] = Some(next);
                next += 1;
            }
        }
        let kept = next;
        let rows: Vec<Vec<(usize, f64)>> = cleaned
            .into_iter()
            .map(|row| row.into_iter().map(|(a, p)| (remap[a].unwrap(), p)).collect())
            .collect();
        let a_space = match a_labels {
            Some(labels) => {
                if labels.len() != a_size {
                    return Err(Error::Length { expected: a_size, got: labels.len() });
                }
                let kept_labels: Vec<String> = labels
                    .into_iter()
                    .zip(&remap)
                    .filter_map(|(l, r)| r.map(|_| l))
                    .collect();
                FiniteSpace::with_labels(kept_labels)?
            }
            None => FiniteSpace::new(kept)?,
        };
        let x_space = match x_labels {
            Some(labels) => {
                if labels.len() != p_x.len() {
                    return Err(Error::Length { expected: p_x.len(), got: labels.len() });
                }
                FiniteSpace::with_labels(labels)?
            }
            None => FiniteSpace::new(p_x.len())?,
        };
        let conditional = Conditional::from_rows(rows, kept);
        let p_a = Distribution::new(marginal(&conditional, p_x.mass()), tol.max(CONSTRUCTION_TOL))?;
        Ok((Self { x_space, a_space, p_x, p_a, conditional }, remap))
    }

    pub fn x_space(&self) -> &FiniteSpace {
        &self.x_space
    }

    pub fn a_space(&self) -> &FiniteSpace {
        &self.a_space
    }

    pub fn x_size(&self) -> usize {
        self.x_space.size()
    }

    pub fn a_size(&self) -> usize {
        self.a_space.size()
    }

    pub fn p_x(&self) -> &[f64] {
        self.p_x.mass()
    }

    pub fn p_a(&self) -> &[f64] {
        self.p_a.mass()
    }

    pub fn conditional(&self) -> &Conditional {
        &self.conditional
    }

    /// Recomputes `p_a` from scratch using the construction summation order.
    pub fn recompute_p_a(&self) -> Vec<f64> {
        marginal(&self.conditional, self.p_x())
    }

    /// Symmetrized joint `B(a, x) = p(a|x) sqrt(p_x(x) / p_a(a))`, `|A| x |X|`.
    pub fn symmetrized_joint(&self) -> DMatrix<f64> {
        let (p_x, p_a) = (self.p_x(), self.p_a());
        let mut b = DMatrix::zeros(self.a_size(), self.x_size());
        for x in 0..self.x_size() {
            for (a, p) in self.conditional.row(x) {
                b[(a, x)] = p * (p_x[x] / p_a[a]).sqrt();
            }
        }
        b
    }

    /// Posterior `p(x|a)` as an `|A| x |X|` matrix.
    pub fn conditional_reverse(&self) -> DMatrix<f64> {
        let (p_x, p_a) = (self.p_x(), self.p_a());
        let mut m = DMatrix::zeros(self.a_size(), self.x_size());
        for x in 0..self.x_size() {
            for (a, p) in self.conditional.row(x) {
                m[(a, x)] = p * p_x[x] / p_a[a];
            }
        }
        m
    }
}

fn marginal(conditional: &Conditional, p_x: &[f64]) -> Vec<f64> {
    let mut p_a = vec![0.0; conditional.ncols()];
    for (x, &px) in p_x.iter().enumerate() {
        for (a, p) in conditional.row(x) {
            p_a[a] += px * p;
        }
    }
    p_a
}

/// Builds a process from explicit `(x, a, prob)` triples.
pub fn build_custom(
    x_size: usize,
    a_size: usize,
    p_x: Vec<f64>,
    triples: &[(usize, usize, f64)],
) -> Result<(AugmentationProcess, IndexRemap)> {
    if p_x.len() != x_size {
        return Err(Error::Length { expected: x_size, got: p_x.len() });
    }
    let mut rows = vec![Vec::new(); x_size];
    for &(x, a, p) in triples {
        if x >= x_size {
            return Err(Error::Validation(format!("data index {x} out of range")));
        }
        rows[x].push((a, p));
    }
    AugmentationProcess::from_rows(p_x, a_size, rows, None, None, USER_TOL)
}

/// Parses the plain-text process format.
///
/// ```text
/// # comment
/// x_size a_size
/// p_x(0) p_x(1) ...
/// x a prob
/// ```
pub fn parse_custom(text: &str) -> Result<(AugmentationProcess, IndexRemap)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let parse_err = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };

    let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(ln, "header must be `x_size a_size`"))?;
    let [x_size, a_size] = dims[..] else {
        return Err(parse_err(ln, "header must be `x_size a_size`"));
    };

    let (ln, px_line) = lines.next().ok_or_else(|| parse_err(ln, "missing p_x line"))?;
    let p_x: Vec<f64> = px_line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(ln, "p_x must be decimals"))?;
    if p_x.len() != x_size {
        return Err(parse_err(ln, &format!("expected {x_size} p_x values, got {}", p_x.len())));
    }

    let mut triples = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [x, a, p] = fields[..] else {
            return Err(parse_err(ln, "triples must be `x_index a_index prob`"));
        };
        let x = x.parse().map_err(|_| parse_err(ln, "bad x index"))?;
        let a = a.parse().map_err(|_| parse_err(ln, "bad a index"))?;
        let p = p.parse().map_err(|_| parse_err(ln, "bad probability"))?;
        triples.push((x, a, p));
    }
    build_custom(x_size, a_size, p_x, &triples)
}

/// Serializes a process in the format read by [`parse_custom`].
pub fn write_custom(process: &AugmentationProcess) -> String {
    let mut out = format!("{} {}\n", process.x_size(), process.a_size());
    let px: Vec<String> = process.p_x().iter().map(|p| format!("{p:.17e}")).collect();
    out.push_str(&px.join(" "));
    out.push('\n');
    for x in 0..process.x_size() {
        for (a, p) in process.conditional().row(x) {
            out.push_str(&format!("{x} {a} {p:.17e}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RandomMask,
    BlockMask,
    BlockMaskFlip,
    RandomMaskFlip,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::RandomMask,
        Scheme::BlockMask,
        Scheme::BlockMaskFlip,
        Scheme::RandomMaskFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RandomMask => "random_mask",
            Scheme::BlockMask => "block_mask",
            Scheme::BlockMaskFlip => "block_mask_flip",
            Scheme::RandomMaskFlip => "random_mask_flip",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown scheme `{s}`")))
    }
}

/// Masking augmentation on the sign hypercube `{-1, +1}^d_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypercubeConfig {
    pub d_x: usize,
    pub alpha: f64,
    pub scheme: Scheme,
}

impl HypercubeConfig {
    pub fn new(scheme: Scheme, d_x: usize, alpha: f64) -> Self {
        Self { d_x, alpha, scheme }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 {
            return Err(Error::Validation("d_x must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Validation(format!("mask ratio {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }

    /// Per-coordinate flip probability of the flip schemes.
    pub fn flip_prob(&self) -> f64 {
        match self.scheme {
            Scheme::BlockMaskFlip | Scheme::RandomMaskFlip => self.alpha / 2.0,
            _ => 0.0,
        }
    }

    /// Block length `ceil(alpha d_x)`, robust to `0.3 * 10 = 3.0000000000000004`.
    pub fn block_len(&self) -> usize {
        let raw = self.alpha * self.d_x as f64;
        let r = (raw - 1e-9).ceil().max(1.0) as usize;
        r.min(self.d_x)
    }
}

fn pow3(d: usize) -> u128 {
    3u128.pow(d as u32)
}

/// Lexicographic base-3 code of an augmentation (digits -1 < 0 < +1).
fn encode_a(coords: &[i8]) -> usize {
    coords.iter().fold(0usize, |acc, &c| acc * 3 + (c + 1) as usize)
}

fn decode_x(idx: usize, d: usize) -> Vec<i8> {
    (0..d)
        .map(|j| if (idx >> (d - 1 - j)) & 1 == 1 { 1 } else { -1 })
        .collect()
}

fn coords_label(c: &[i8]) -> String {
    c.iter()
        .map(|v| match v {
            -1 => '-',
            0 => '0',
            _ => '+',
        })
        .collect()
}

/// Support of `p(.|x)` as `(a_code, prob)` pairs for a single data point.
fn hypercube_row(cfg: &HypercubeConfig, x: &[i8]) -> Vec<(usize, f64)> {
    let d = x.len();
    let alpha = cfg.alpha;
    let mut out = Vec::new();
    match cfg.scheme {
        Scheme::RandomMask | Scheme::RandomMaskFlip => {
            // Independent per-coordinate channels over {keep, mask, flip}.
            let (keep, mask, flip) = match cfg.scheme {
                Scheme::RandomMask => (1.0 - alpha, alpha, 0.0),
                _ => (1.0 - alpha, alpha / 2.0, alpha / 2.0),
            };
            let channels: Vec<(i8, f64)> = [(1i8, keep), (0, mask), (-1, flip)]
                .into_iter()
                .filter(|&(_, p)| p > 0.0)
                .collect();
            let mut a = vec![0i8; d];
            fn rec(
                j: usize,
                p: f64,
                x: &[i8],
                a: &mut Vec<i8>,
                channels: &[(i8, f64)],
                out: &mut Vec<(usize, f64)>,
            ) {
                if j == x.len() {
                    out.push((encode_a(a), p));
                    return;
                }
                for &(sign, q) in channels {
                    a[j] = sign * x[j];
                    rec(j + 1, p * q, x, a, channels, out);
                }
            }
            rec(0, 1.0, x, &mut a, &channels, &mut out);
        }
        Scheme::BlockMask | Scheme::BlockMaskFlip => {
            let r = cfg.block_len();
            let starts = d - r + 1;
            let p_start = 1.0 / starts as f64;
            let flip = cfg.flip_prob();
            for s in 0..starts {
                let free: Vec<usize> = (0..d).filter(|&j| j < s || j >= s + r).collect();
                let n_free = free.len();
                let patterns: usize = if flip > 0.0 { 1 << n_free } else { 1 };
                for pat in 0..patterns {
                    let mut a = x.to_vec();
                    for j in s..s + r {
                        a[j] = 0;
                    }
                    let mut p = p_start;
                    if flip > 0.0 {
                        for (k, &j) in free.iter().enumerate() {
                            if (pat >> k) & 1 == 1 {
                                a[j] = -a[j];
                                p *= flip;
                            } else {
                                p *= 1.0 - flip;
                            }
                        }
                    }
                    if p > 0.0 {
                        out.push((encode_a(&a), p));
                    }
                }
            }
        }
    }
    out
}

/// Enumerates the hypercube process for `cfg` under an entry budget.
pub fn build_hypercube(cfg: &HypercubeConfig, budget: u128) -> Result<AugmentationProcess> {
    cfg.validate()?;
    let d = cfg.d_x;
    if d > 24 {
        return Err(Error::Budget {
            what: format!("hypercube d_x={d}"),
            needed: u128::MAX,
            budget,
        });
    }
    let n_x = 1u128 << d;
    let needed = match cfg.scheme {
        Scheme::RandomMask | Scheme::RandomMaskFlip => pow3(d) * n_x,
        Scheme::BlockMask => {
            let starts = (d - cfg.block_len() + 1) as u128;
            n_x * starts
        }
        Scheme::BlockMaskFlip => {
            let r = cfg.block_len();
            n_x * (d - r + 1) as u128 * (1u128 << (d - r))
        }
    };
    if needed > budget {
        return Err(Error::Budget {
            what: format!(
                "{} with d_x={d} (|X|={n_x}, |A| up to {})",
                cfg.scheme,
                pow3(d)
            ),
            needed,
            budget,
        });
    }

    let n_x = n_x as usize;
    let xs: Vec<Vec<i8>> = (0..n_x).map(|i| decode_x(i, d)).collect();
    let raw_rows: Vec<Vec<(usize, f64)>> = xs.iter().map(|x| hypercube_row(cfg, x)).collect();

    // Compact the reachable codes; sorting keeps lexicographic order.
    let mut codes: Vec<usize> = raw_rows.iter().flatten().map(|&(a, _)| a).collect();
    codes.sort_unstable();
    codes.dedup();
    let rows: Vec<Vec<(usize, f64)>> = raw_rows
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(a, p)| (codes.binary_search(&a).unwrap(), p))
                .collect()
        })
        .collect();
    let a_labels: Vec<String> = codes
        .iter()
        .map(|&c| {
            let mut digits = vec![0i8; d];
            let mut v = c;
            for j in (0..d).rev() {
                digits[j] = (v % 3) as i8 - 1;
                v /= 3;
            }
            coords_label(&digits)
        })
        .collect();
    let x_labels: Vec<String> = xs.iter().map(|x| coords_label(x)).collect();
    let (process, _) = AugmentationProcess::from_rows(
        vec![1.0 / n_x as f64; n_x],
        codes.len(),
        rows,
        Some(a_labels),
        Some(x_labels),
        CONSTRUCTION_TOL,
    )?;
    Ok(process)
}

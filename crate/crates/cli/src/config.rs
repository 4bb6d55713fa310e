use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use augrkhs::objectives::{Objective, OptimizerConfig};
use augrkhs::process::{HypercubeConfig, Scheme, DEFAULT_BUDGET};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Kappa,
    Spectrum,
    Pretrain,
    Regress,
    Tracegap,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kappa => "kappa",
            Command::Spectrum => "spectrum",
            Command::Pretrain => "pretrain",
            Command::Regress => "regress",
            Command::Tracegap => "tracegap",
            Command::Sweep => "sweep",
        }
    }

    fn required_axes(self) -> &'static [Axis] {
        use Axis::*;
        match self {
            Command::Kappa | Command::Spectrum | Command::Sweep => &[Scheme, DX, Alpha],
            Command::Pretrain => &[Scheme, DX, Alpha, Objective, D],
            Command::Regress => &[Scheme, DX, Alpha, D, N, Sigma, B, Epsilon],
            Command::Tracegap => &[Scheme, DX, Alpha, D, NUnlabeled],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    Scheme,
    DX,
    Alpha,
    D,
    NUnlabeled,
    N,
    Sigma,
    B,
    Epsilon,
    Objective,
}

/// Encoder used by `regress`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncoderKind {
    /// Top-`d` population eigenfunctions.
    Optimal,
    /// Gaussian features from the cell seed.
    Random,
    /// Top-`d` empirical eigenfunctions from this many unlabeled samples.
    NearOptimal(usize),
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderKind::Optimal => f.write_str("optimal"),
            EncoderKind::Random => f.write_str("random"),
            EncoderKind::NearOptimal(n) => write!(f, "near_optimal:{n}"),
        }
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "optimal" => Ok(EncoderKind::Optimal),
            "random" => Ok(EncoderKind::Random),
            _ => s
                .strip_prefix("near_optimal:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(EncoderKind::NearOptimal)
                .ok_or_else(|| format!("unknown encoder `{s}` (optimal, random, near_optimal:<N>)")),
        }
    }
}

impl TryFrom<String> for EncoderKind {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<EncoderKind> for String {
    fn from(k: EncoderKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub scheme: Vec<Scheme>,
    pub d_x: Vec<usize>,
    pub alpha: Vec<f64>,
    pub d: Vec<usize>,
    pub n_unlabeled: Vec<usize>,
    pub n: Vec<usize>,
    pub sigma: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub objective: Vec<Objective>,
    /// Defaults to `["optimal"]`.
    pub encoder: Vec<EncoderKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Percentile for `kappa_sq_p99` and the Monte Carlo estimates.
    pub beta: f64,
    pub delta: f64,
    /// Universal constant in the sample-error term of the regression bound.
    pub c0: f64,
    pub optimizer: OptimizerConfig,
    /// Originals per Monte Carlo run; `|X|` when absent.
    pub mc_originals: Option<usize>,
    pub mc_draws: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self { beta: 99.0, delta: 0.05, c0: 1.0, optimizer: OptimizerConfig::default(), mc_originals: None, mc_draws: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<Command>,
    pub grid: Grid,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub options: Options,
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET as u64
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn command(&self) -> Result<Command> {
        self.command.ok_or_else(|| CliError::Config("no command given".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command()?;
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let g = &self.grid;
        for axis in command.required_axes() {
            let (name, empty) = match axis {
                Axis::Scheme => ("scheme", g.scheme.is_empty()),
                Axis::DX => ("d_x", g.d_x.is_empty()),
                Axis::Alpha => ("alpha", g.alpha.is_empty()),
                Axis::D => ("d", g.d.is_empty()),
                Axis::NUnlabeled => ("n_unlabeled", g.n_unlabeled.is_empty()),
                Axis::N => ("n", g.n.is_empty()),
                Axis::Sigma => ("sigma", g.sigma.is_empty()),
                Axis::B => ("B", g.b.is_empty()),
                Axis::Epsilon => ("epsilon", g.epsilon.is_empty()),
                Axis::Objective => ("objective", g.objective.is_empty()),
            };
            if empty {
                return bad(format!("grid axis `{name}` is empty for `{}`", command.name()));
            }
        }
        for &scheme in &g.scheme {
            for &d_x in &g.d_x {
                for &alpha in &g.alpha {
                    HypercubeConfig::new(scheme, d_x, alpha).validate().map_err(|e| CliError::Config(e.to_string()))?;
                }
            }
        }
        if g.d.contains(&0) || g.n.contains(&0) || g.n_unlabeled.contains(&0) {
            return bad("d, n and n_unlabeled must be positive".into());
        }
        if g.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma must be non-negative".into());
        }
        if g.b.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("B must be positive".into());
        }
        if g.epsilon.iter().any(|e| !(0.0..1.0).contains(e)) {
            return bad("epsilon must lie in [0, 1)".into());
        }
        for obj in &g.objective {
            obj.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let o = &self.options;
        if !(o.beta > 0.0 && o.beta <= 100.0) {
            return bad("beta must lie in (0, 100]".into());
        }
        if !(o.delta > 0.0 && o.delta < 1.0) {
            return bad("delta must lie in (0, 1)".into());
        }
        if o.mc_draws == 0 || o.mc_originals == Some(0) {
            return bad("Monte Carlo sample counts must be positive".into());
        }
        o.optimizer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// `grid.encoder`, defaulting to the optimal encoder.
    pub fn encoders(&self) -> Vec<EncoderKind> {
        if self.grid.encoder.is_empty() {
            vec![EncoderKind::Optimal]
        } else {
            self.grid.encoder.clone()
        }
    }
}

/// Smallest ratio between the extreme grid sizes of a rate fit.
pub const MIN_RATE_SPAN: f64 = 64.0;

/// Rate fits need at least four sizes spread over a factor of [`MIN_RATE_SPAN`].
/// Checked when the slope is fitted, so that single cells still run on their own.
pub fn check_rate_grid(name: &str, sizes: &[usize]) -> Result<()> {
    let mut distinct = sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let span = *distinct.last().unwrap_or(&1) as f64 / *distinct.first().unwrap_or(&1) as f64;
    if distinct.len() < 4 || span < MIN_RATE_SPAN {
        return Err(CliError::Config(format!(
            "`{name}` needs at least 4 sizes spanning a factor of {MIN_RATE_SPAN}, got {distinct:?}"
        )));
    }
    Ok(())
}

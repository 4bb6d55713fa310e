use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use augrkhs::complexity::{closed_form_kappa, kappa_exact, kappa_monte_carlo};
use augrkhs::encoder::{covariances, Encoder};
use augrkhs::linalg::median;
use augrkhs::objectives::{minimize, subspace_angle, Objective, ObjectiveSpec, OptimizerConfig};
use augrkhs::process::{build_hypercube, AugmentationProcess, HypercubeConfig};
use augrkhs::spectral::kernel_x_diagonal;
use rayon::prelude::*;

use crate::config::{check_rate_grid, Command, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiments::{
    figure_4a_data, process_axes, regress_point, tracegap_point, fit_rate, Prepared, RegressCell,
};
use crate::record::{write_atomic, Table, Value};
use crate::seed::cell_seed;

pub const KAPPA_SCHEMA: &str = "kappa/1";
pub const KAPPA_COLUMNS: &[&str] = &[
    "scheme", "d_x", "alpha", "kappa_sq_exact", "kappa_sq_p99", "closed_form", "bound_kind", "s_lambda",
    "log_kappa_sq_p99",
];
pub const SPECTRUM_SCHEMA: &str = "spectrum/1";
pub const SPECTRUM_COLUMNS: &[&str] = &["scheme", "d_x", "alpha", "rank", "null_dim", "index", "lambda"];
pub const PRETRAIN_SCHEMA: &str = "pretrain/1";
pub const PRETRAIN_COLUMNS: &[&str] = &[
    "scheme", "d_x", "alpha", "objective", "alpha_w", "beta_w", "d", "seed", "final_loss", "target_loss",
    "principal_angle", "ratio_trace", "iterations", "converged",
];
pub const TRACE_SCHEMA: &str = "pretrain_trace/1";
pub const TRACE_COLUMNS: &[&str] =
    &["scheme", "d_x", "alpha", "objective", "alpha_w", "beta_w", "d", "seed", "iteration", "loss"];
pub const REGRESS_SCHEMA: &str = "regress/1";
pub const REGRESS_COLUMNS: &[&str] = &[
    "scheme", "d_x", "alpha", "encoder", "seed", "n", "sigma", "d", "B", "epsilon", "tau_sq", "pred_err",
    "approx_err", "est_err", "lemma32_rhs", "thm31_rhs", "constraint_active",
];
pub const TRACEGAP_SCHEMA: &str = "tracegap/1";
pub const TRACEGAP_COLUMNS: &[&str] = &[
    "scheme", "d_x", "alpha", "d", "n_unlabeled", "seed", "row", "ratio_trace", "residual", "excess_gap",
    "lambda_d1", "lambda_bar_d", "gamma_g", "thm41_rhs",
];
pub const SLOPE_SCHEMA: &str = "tracegap_slope/1";
pub const SLOPE_COLUMNS: &[&str] = &["scheme", "d_x", "alpha", "d", "points", "slope"];
pub const FIGURE_4B_SCHEMA: &str = "figure_4b/1";
pub const FIGURE_4B_COLUMNS: &[&str] = &[
    "scheme", "d_x", "alpha", "log_kappa_sq_p99", "log_kappa_sq_max", "log_closed_form", "bound_kind",
    "log_mc_mean", "log_mc_std", "mc_runs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub cells: usize,
    pub failed_cells: usize,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failed_cells == 0 {
            0
        } else {
            2
        }
    }
}

/// Creates the output directory and checks that it accepts files.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    let err = |source| CliError::OutputDir { path: dir.into(), source };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".augrkhs-probe");
    fs::write(&probe, b"").map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

type Shared<T> = std::result::Result<Arc<T>, String>;

fn process_grid(config: &ExperimentConfig) -> Vec<HypercubeConfig> {
    let g = &config.grid;
    let mut out = Vec::new();
    for &scheme in &g.scheme {
        for &d_x in &g.d_x {
            for &alpha in &g.alpha {
                out.push(HypercubeConfig::new(scheme, d_x, alpha));
            }
        }
    }
    out
}

fn key(cfg: &HypercubeConfig) -> Vec<Value> {
    vec![cfg.scheme.name().into(), cfg.d_x.into(), cfg.alpha.into()]
}

fn prepare_all(configs: &[HypercubeConfig], budget: u128) -> Vec<Shared<Prepared>> {
    configs
        .par_iter()
        .map(|c| Prepared::build(*c, budget).map(Arc::new).map_err(|e| e.to_string()))
        .collect()
}

/// Runs every cell of the grid on `jobs` workers and writes the merged outputs.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<RunReport> {
    config.validate()?;
    prepare_output_dir(&config.output_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let command = config.command()?;
    let outputs = pool.install(|| match command {
        Command::Kappa => run_kappa(config),
        Command::Spectrum => run_spectrum(config),
        Command::Pretrain => run_pretrain(config),
        Command::Regress => run_regress(config),
        Command::Tracegap => run_tracegap(config),
        Command::Sweep => run_sweep(config),
    });
    let mut files = Vec::new();
    for (name, contents) in &outputs.files {
        let path = config.output_dir.join(name);
        write_atomic(&path, contents)?;
        files.push(path);
    }
    Ok(RunReport { files, cells: outputs.cells, failed_cells: outputs.failed_cells })
}

#[derive(Debug, Default)]
pub struct Outputs {
    /// `(relative path, contents)` in write order.
    pub files: Vec<(String, String)>,
    pub cells: usize,
    pub failed_cells: usize,
}

impl Outputs {
    fn csv(&mut self, name: &str, table: &Table) {
        self.files.push((name.into(), table.to_csv()));
    }
}

pub fn run_kappa(config: &ExperimentConfig) -> Outputs {
    let beta = config.options.beta;
    let budget = config.budget as u128;
    let cfgs = process_grid(config);
    let tables: Vec<Table> = cfgs
        .par_iter()
        .map(|cfg| {
            let mut t = Table::new(KAPPA_SCHEMA, KAPPA_COLUMNS);
            match kappa_row(cfg, beta, budget) {
                Ok(row) => t.push(row),
                Err(e) => t.push_error(key(cfg), e.to_string()),
            }
            t
        })
        .collect();
    let mut out = Outputs { cells: cfgs.len(), ..Default::default() };
    let merged = merge(KAPPA_SCHEMA, KAPPA_COLUMNS, tables);
    out.failed_cells = merged.failures();
    out.csv("kappa.csv", &merged);
    out
}

fn kappa_row(cfg: &HypercubeConfig, beta: f64, budget: u128) -> augrkhs::Result<Vec<Value>> {
    let prepared = Prepared::build(*cfg, budget)?;
    let report = kappa_exact(&prepared.process, &prepared.decomposition, beta)?;
    let (closed, kind) = match closed_form_kappa(cfg) {
        Ok((v, k)) => (Value::from(v), Value::from(k.name())),
        Err(augrkhs::Error::UnsupportedScheme(_)) => (Value::Empty, Value::Empty),
        Err(e) => return Err(e),
    };
    let mut row = key(cfg);
    row.extend([
        report.kappa_sq_max.into(),
        report.kappa_sq_percentile.into(),
        closed,
        kind,
        report.s_lambda_total.into(),
        report.kappa_sq_percentile.ln().into(),
    ]);
    Ok(row)
}

fn merge(schema: &'static str, columns: &[&'static str], parts: Vec<Table>) -> Table {
    let mut all = Table::new(schema, columns);
    for p in parts {
        all.extend(p);
    }
    all
}

fn spectrum_tag(cfg: &HypercubeConfig) -> String {
    format!("{}_dx{}_alpha{}", cfg.scheme.name(), cfg.d_x, cfg.alpha)
}

pub fn run_spectrum(config: &ExperimentConfig) -> Outputs {
    let cfgs = process_grid(config);
    let parts: Vec<(Table, Vec<(String, String)>)> = prepare_all(&cfgs, config.budget as u128)
        .into_par_iter()
        .zip(cfgs.par_iter())
        .map(|(prepared, cfg)| {
            let mut t = Table::new(SPECTRUM_SCHEMA, SPECTRUM_COLUMNS);
            let mut extra = Vec::new();
            match prepared {
                Ok(p) => {
                    let dec = &p.decomposition;
                    for (i, &l) in dec.lambdas().iter().enumerate() {
                        let mut row = key(cfg);
                        row.extend([dec.rank().into(), dec.null_dim().into(), (i + 1).into(), l.into()]);
                        t.push(row);
                    }
                    let tag = spectrum_tag(cfg);
                    extra.push((format!("spectra/{tag}/lambdas.csv"), dec.lambdas_csv()));
                    extra.push((format!("spectra/{tag}/psi.csv"), dec.psi_csv()));
                    extra.push((format!("spectra/{tag}/phi.csv"), dec.phi_csv()));
                }
                Err(e) => t.push_error(key(cfg), e),
            }
            (t, extra)
        })
        .collect();
    let mut out = Outputs { cells: cfgs.len(), ..Default::default() };
    let mut tables = Vec::new();
    let mut extras = Vec::new();
    for (t, e) in parts {
        tables.push(t);
        extras.extend(e);
    }
    let merged = merge(SPECTRUM_SCHEMA, SPECTRUM_COLUMNS, tables);
    out.failed_cells = merged.failures();
    out.csv("spectrum.csv", &merged);
    out.files.extend(extras);
    out
}

fn objective_fields(obj: &Objective) -> [Value; 3] {
    let (a, b) = match *obj {
        Objective::Rbt { alpha_w, beta_w } => (Value::from(alpha_w), Value::from(beta_w)),
        Objective::Vicreg { beta_w } => (Value::Empty, Value::from(beta_w)),
        _ => (Value::Empty, Value::Empty),
    };
    [obj.name().into(), a, b]
}

fn objective_label(obj: &Objective) -> String {
    serde_json::to_string(obj).expect("objective serializes")
}

pub fn run_pretrain(config: &ExperimentConfig) -> Outputs {
    let cfgs = process_grid(config);
    let prepared = prepare_all(&cfgs, config.budget as u128);
    let g = &config.grid;
    let mut cells = Vec::new();
    for (pi, cfg) in cfgs.iter().enumerate() {
        for obj in &g.objective {
            for &d in &g.d {
                for &seed in &config.seeds {
                    cells.push((pi, *cfg, *obj, d, seed));
                }
            }
        }
    }
    let parts: Vec<(Table, Table)> = cells
        .par_iter()
        .map(|&(pi, cfg, obj, d, seed)| {
            let mut summary = Table::new(PRETRAIN_SCHEMA, PRETRAIN_COLUMNS);
            let mut trace = Table::new(TRACE_SCHEMA, TRACE_COLUMNS);
            let mut k = key(&cfg);
            k.extend(objective_fields(&obj));
            k.extend([d.into(), seed.into()]);
            let axes = {
                let mut a = process_axes(&cfg);
                a.extend([("objective", objective_label(&obj)), ("d", d.to_string()), ("seed", seed.to_string())]);
                a
            };
            let opt = OptimizerConfig { seed: cell_seed(config.master_seed, &axes), ..config.options.optimizer };
            let result = prepared[pi].clone().and_then(|p| {
                let spec = ObjectiveSpec { objective: obj, d };
                let res = minimize(&spec, &p.process, &opt).map_err(|e| e.to_string())?;
                let angle = subspace_angle(&res.params.phi, &p.decomposition, d).map_err(|e| e.to_string())?;
                // Blank when the learned features are rank deficient.
                let rt = Encoder::build(&p.process, res.params.phi.clone())
                    .and_then(|e| covariances(&e)?.ratio_trace())
                    .ok();
                Ok((res, obj.target_loss(&p.decomposition, d), angle, rt))
            });
            match result {
                Ok((res, target, angle, rt)) => {
                    let mut row = k.clone();
                    row.extend([
                        res.final_loss().into(),
                        target.into(),
                        angle.into(),
                        rt.into(),
                        res.iterations.into(),
                        res.converged.into(),
                    ]);
                    summary.push(row);
                    for (it, loss) in res.losses.iter().enumerate() {
                        let mut row = k.clone();
                        row.extend([it.into(), (*loss).into()]);
                        trace.push(row);
                    }
                }
                Err(e) => summary.push_error(k, e),
            }
            (summary, trace)
        })
        .collect();
    let (summaries, traces): (Vec<Table>, Vec<Table>) = parts.into_iter().unzip();
    let summary = merge(PRETRAIN_SCHEMA, PRETRAIN_COLUMNS, summaries);
    let trace = merge(TRACE_SCHEMA, TRACE_COLUMNS, traces);
    let mut out = Outputs { cells: cells.len(), failed_cells: summary.failures(), ..Default::default() };
    out.files.push(("pretrain.jsonl".into(), summary.to_json_lines()));
    out.csv("pretrain_trace.csv", &trace);
    out
}

pub fn run_regress(config: &ExperimentConfig) -> Outputs {
    let cfgs = process_grid(config);
    let prepared = prepare_all(&cfgs, config.budget as u128);
    let g = &config.grid;
    let mut cells = Vec::new();
    for (pi, _) in cfgs.iter().enumerate() {
        for encoder in config.encoders() {
            for &d in &g.d {
                for &b in &g.b {
                    for &epsilon in &g.epsilon {
                        for &sigma in &g.sigma {
                            for &n in &g.n {
                                for &seed in &config.seeds {
                                    cells.push((pi, RegressCell { encoder, d, n, sigma, b, epsilon, seed }));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let tables: Vec<Table> = cells
        .par_iter()
        .map(|(pi, cell)| {
            let mut t = Table::new(REGRESS_SCHEMA, REGRESS_COLUMNS);
            let mut k = key(&cfgs[*pi]);
            k.extend([
                cell.encoder.to_string().into(),
                cell.seed.into(),
                cell.n.into(),
                cell.sigma.into(),
                cell.d.into(),
                cell.b.into(),
                cell.epsilon.into(),
            ]);
            let result = prepared[*pi]
                .clone()
                .and_then(|p| regress_point(&p, cell, config.master_seed, config.options.c0).map_err(|e| e.to_string()));
            match result {
                Ok(r) => {
                    let mut row = k;
                    row.extend([
                        r.tau_sq.into(),
                        r.pred_err.into(),
                        r.approx_err.into(),
                        r.est_err.into(),
                        r.lemma32_rhs.into(),
                        r.thm31_rhs.into(),
                        r.constraint_active.into(),
                    ]);
                    t.push(row);
                }
                Err(e) => t.push_error(k, e),
            }
            t
        })
        .collect();
    let merged = merge(REGRESS_SCHEMA, REGRESS_COLUMNS, tables);
    let mut out = Outputs { cells: cells.len(), failed_cells: merged.failures(), ..Default::default() };
    out.csv("regress.csv", &merged);
    out
}

pub fn run_tracegap(config: &ExperimentConfig) -> Outputs {
    let cfgs = process_grid(config);
    let prepared = prepare_all(&cfgs, config.budget as u128);
    let g = &config.grid;
    let mut groups = Vec::new();
    for (pi, _) in cfgs.iter().enumerate() {
        for &d in &g.d {
            groups.push((pi, d));
        }
    }
    let mut cells = Vec::new();
    for (gi, _) in groups.iter().enumerate() {
        for &n in &g.n_unlabeled {
            for &seed in &config.seeds {
                cells.push((gi, n, seed));
            }
        }
    }
    let delta = config.options.delta;
    let results: Vec<std::result::Result<crate::experiments::TraceGapPoint, String>> = cells
        .par_iter()
        .map(|&(gi, n, seed)| {
            let (pi, d) = groups[gi];
            prepared[pi]
                .clone()
                .and_then(|p| tracegap_point(&p, d, n, seed, config.master_seed, delta).map_err(|e| e.to_string()))
        })
        .collect();

    let mut table = Table::new(TRACEGAP_SCHEMA, TRACEGAP_COLUMNS);
    let mut slopes = Table::new(SLOPE_SCHEMA, SLOPE_COLUMNS);
    for (gi, &(pi, d)) in groups.iter().enumerate() {
        let cfg = &cfgs[pi];
        let mut group_points = Vec::new();
        for &n in &g.n_unlabeled {
            let mut excess = Vec::new();
            let mut residual = Vec::new();
            let mut lambda_bar = Vec::new();
            let mut gamma = Vec::new();
            for (ci, &(cgi, cn, seed)) in cells.iter().enumerate() {
                if cgi != gi || cn != n {
                    continue;
                }
                let mut k = key(cfg);
                k.extend([d.into(), n.into(), seed.into(), "seed".into()]);
                match &results[ci] {
                    Ok(p) => {
                        let mut row = k;
                        row.extend([
                            p.ratio_trace.into(),
                            p.residual.into(),
                            p.excess_gap.into(),
                            p.lambda_d1.into(),
                            p.lambda_bar_d.into(),
                            p.gamma_g.into(),
                            p.thm41_rhs.into(),
                        ]);
                        table.push(row);
                        excess.push(p.excess_gap);
                        residual.push(p.residual);
                        lambda_bar.push(p.lambda_bar_d);
                        gamma.push(p.gamma_g);
                        group_points.push((n, p.excess_gap));
                    }
                    Err(e) => table.push_error(k, e.clone()),
                }
            }
            let mut k = key(cfg);
            k.extend([d.into(), n.into(), Value::Empty, "median".into()]);
            if excess.is_empty() {
                table.push_error(k, "no successful seeds".into());
            } else {
                k.extend([
                    Value::Empty,
                    median(&residual).into(),
                    median(&excess).into(),
                    Value::Empty,
                    median(&lambda_bar).into(),
                    median(&gamma).into(),
                    Value::Empty,
                ]);
                table.push(k);
            }
        }
        let mut k = key(cfg);
        k.push(d.into());
        let sizes: Vec<usize> = group_points.iter().map(|p| p.0).collect();
        let fit = check_rate_grid("n_unlabeled", &sizes)
            .map_err(|e| e.to_string())
            .and_then(|_| fit_rate(&group_points).map_err(|e| e.to_string()));
        match fit {
            Ok(f) => {
                k.extend([f.medians.len().into(), f.slope.into()]);
                slopes.push(k);
            }
            Err(e) => slopes.push_error(k, e),
        }
    }
    let mut out = Outputs {
        cells: cells.len(),
        failed_cells: results.iter().filter(|r| r.is_err()).count(),
        ..Default::default()
    };
    out.csv("tracegap.csv", &table);
    out.csv("tracegap_slope.csv", &slopes);
    out
}

/// `figure_4a.csv` and the per-scheme `log kappa^2` sweep with Monte Carlo
/// estimates over the configured seeds.
pub fn run_sweep(config: &ExperimentConfig) -> Outputs {
    let cfgs = process_grid(config);
    let budget = config.budget as u128;
    let o = &config.options;
    let tables: Vec<Table> = cfgs
        .par_iter()
        .map(|cfg| {
            let mut t = Table::new(FIGURE_4B_SCHEMA, FIGURE_4B_COLUMNS);
            match sweep_row(cfg, budget, o.beta, o.mc_originals, o.mc_draws, &config.seeds, config.master_seed) {
                Ok(row) => t.push(row),
                Err(e) => t.push_error(key(cfg), e.to_string()),
            }
            t
        })
        .collect();
    let merged = merge(FIGURE_4B_SCHEMA, FIGURE_4B_COLUMNS, tables);
    let mut out = Outputs { cells: cfgs.len(), failed_cells: merged.failures(), ..Default::default() };
    out.csv("figure_4a.csv", &figure_4a_data());
    out.csv("figure_4b.csv", &merged);
    out
}

fn sweep_row(
    cfg: &HypercubeConfig,
    budget: u128,
    beta: f64,
    originals: Option<usize>,
    draws: usize,
    seeds: &[u64],
    master: u64,
) -> augrkhs::Result<Vec<Value>> {
    let process: AugmentationProcess = build_hypercube(cfg, budget)?;
    let diag = kernel_x_diagonal(&process);
    let p99 = augrkhs::complexity::weighted_percentile(&diag, process.p_x(), beta)?;
    let max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (closed, kind) = match closed_form_kappa(cfg) {
        Ok((v, k)) => (Value::from(v.ln()), Value::from(k.name())),
        Err(augrkhs::Error::UnsupportedScheme(_)) => (Value::Empty, Value::Empty),
        Err(e) => return Err(e),
    };
    let m = originals.unwrap_or(process.x_size());
    let logs = seeds
        .iter()
        .map(|&s| {
            let mut axes = process_axes(cfg);
            axes.push(("seed", s.to_string()));
            kappa_monte_carlo(&process, m, draws, beta, cell_seed(master, &axes)).map(|mc| mc.estimate.ln())
        })
        .collect::<augrkhs::Result<Vec<f64>>>()?;
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let std = if logs.len() > 1 {
        (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut row = key(cfg);
    row.extend([p99.ln().into(), max.ln().into(), closed, kind, mean.into(), std.into(), logs.len().into()]);
    Ok(row)
}

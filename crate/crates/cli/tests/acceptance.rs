//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs without the libtest harness. The process exits 0 even when a
//! criterion fails, so the workspace suite stays runnable; set
//! `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use augrkhs::complexity::{kappa_monte_carlo, kappa_percentile};
use augrkhs::downstream::{
    evaluate_bounds, fit_least_squares, fit_population, generate_labels, l2_approximation_error, project_fpsi,
    sample_target, worst_case_target, BoundContext, TargetFunction,
};
use augrkhs::encoder::{covariances, optimal_encoder, random_encoder, trace_gap, Encoder};
use augrkhs::linalg::weighted_norm_sq;
use augrkhs::objectives::{
    coefficient_norm_sq, initial_params, loss_gradient, loss_moments, minimize, rbt_penalty_path, subspace_angle,
    Objective, ObjectiveSpec, OptimizerConfig, Params,
};
use augrkhs::process::{build_custom, build_hypercube, AugmentationProcess, HypercubeConfig, Scheme, DEFAULT_BUDGET};
use augrkhs::spectral::{decompose, kernel_x_diagonal, SpectralDecomposition, DEFAULT_RANK_TOL};
use augrkhs_cli::config::{EncoderKind, ExperimentConfig};
use augrkhs_cli::experiments::{
    figure_4a_data, fit_rate, regress_point, tracegap_rate_experiment, Prepared, RegressCell,
};
use augrkhs_cli::runner::run_sweep;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

const ALPHAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn cube(scheme: Scheme, d_x: usize, alpha: f64) -> AugmentationProcess {
    build_hypercube(&HypercubeConfig::new(scheme, d_x, alpha), DEFAULT_BUDGET).unwrap()
}

fn decomposed(scheme: Scheme, d_x: usize, alpha: f64) -> (AugmentationProcess, SpectralDecomposition) {
    let p = cube(scheme, d_x, alpha);
    let dec = decompose(&p, DEFAULT_RANK_TOL).unwrap();
    (p, dec)
}

fn max_kx(p: &AugmentationProcess) -> f64 {
    kernel_x_diagonal(p).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// `ceil(k d / 10)` for `alpha = k / 10`, in integers.
fn block_len(alpha: f64, d: usize) -> usize {
    let k = (alpha * 10.0).round() as usize;
    (k * d).div_ceil(10)
}

fn c1_closed_form_kappa() -> Outcome {
    let mut worst = 0.0f64;
    for d in [4, 6, 8] {
        for alpha in ALPHAS {
            let brute = max_kx(&cube(Scheme::RandomMask, d, alpha));
            let want = (2.0 - alpha).powi(d as i32);
            worst = worst.max((brute - want).abs() / want);
        }
    }
    (worst <= 1e-10, format!("max relative error {worst:.2e} (tol 1e-10)"))
}

fn c2_block_bounds() -> Outcome {
    let (mut eq_err, mut excess_b, mut excess_f) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for d in [4, 6, 8] {
        for alpha in ALPHAS {
            let block = max_kx(&cube(Scheme::BlockMask, d, alpha));
            let exact = 2f64.powi((d - block_len(alpha, d)) as i32);
            eq_err = eq_err.max((block - exact).abs());
            excess_b = excess_b.max(block - 2f64.powf((1.0 - alpha) * d as f64));
            let flip = max_kx(&cube(Scheme::BlockMaskFlip, d, alpha));
            let bound = (alpha * alpha - 2.0 * alpha + 2.0).powf((1.0 - alpha / 2.0) * d as f64);
            excess_f = excess_f.max(flip - bound);
        }
    }
    let ok = eq_err <= 1e-9 && excess_b <= 1e-9 && excess_f <= 1e-9;
    (ok, format!("block equality err {eq_err:.2e}; max(brute - bound) block {excess_b:.3e}, block+flip {excess_f:.3e}"))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn c3_spectrum_law() -> Outcome {
    let mut worst = 0.0f64;
    let mut bad_rank = Vec::new();
    for d in 1..=8 {
        for alpha in ALPHAS {
            let (_, dec) = decomposed(Scheme::RandomMask, d, alpha);
            let mut law: Vec<f64> = (0..=d)
                .flat_map(|k| std::iter::repeat_n((1.0 - alpha).powi(k as i32), binomial(d, k)))
                .collect();
            law.sort_by(|a, b| b.total_cmp(a));
            if dec.rank() != law.len() {
                bad_rank.push((d, alpha, dec.rank()));
                continue;
            }
            for (g, w) in dec.lambdas().iter().zip(&law) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    (worst <= 1e-8 && bad_rank.is_empty(), format!("max |lambda - law| {worst:.2e}; rank mismatches {bad_rank:?}"))
}

/// `1 + E_x chi^2(p(.|x) || p_A)` from the dense conditional.
fn chi_sq_oracle(p: &AugmentationProcess) -> f64 {
    let dense = p.conditional().to_dense();
    let mut total = 0.0;
    for x in 0..p.x_size() {
        let mut chi = 0.0;
        for a in 0..p.a_size() {
            let q = p.p_a()[a];
            chi += (dense[(x, a)] - q).powi(2) / q;
        }
        total += p.p_x()[x] * chi;
    }
    1.0 + total
}

fn c4_duality() -> Outcome {
    let (mut dual, mut recon, mut trace) = (0.0f64, 0.0f64, 0.0f64);
    let mut count = 0;
    for scheme in Scheme::ALL {
        for d in [4, 6, 8] {
            for alpha in ALPHAS {
                let (p, dec) = decomposed(scheme, d, alpha);
                let (rx, ra) = dec.duality_residuals(&p, 1e-6);
                dual = dual.max(rx).max(ra);
                recon = recon.max(dec.reconstruction_residual());
                trace = trace.max((dec.total_trace() - chi_sq_oracle(&p)).abs());
                count += 1;
            }
        }
    }
    let ok = dual <= 1e-8 && recon <= 1e-8 && trace <= 1e-10;
    (ok, format!("{count} processes; duality {dual:.2e}, reconstruction {recon:.2e}, trace identity {trace:.2e}"))
}

fn landscape_processes() -> Vec<(AugmentationProcess, SpectralDecomposition, usize)> {
    [(Scheme::RandomMask, 3, 0.5, 4), (Scheme::BlockMaskFlip, 4, 0.3, 3), (Scheme::BlockMask, 4, 0.3, 3)]
        .into_iter()
        .map(|(s, dx, a, d)| {
            let (p, dec) = decomposed(s, dx, a);
            (p, dec, d)
        })
        .collect()
}

fn fd_relative_error(obj: &Objective, p: &AugmentationProcess, params: &Params) -> f64 {
    let h = 1e-5;
    let (g_phi, g_xi) = loss_gradient(obj, p, params).unwrap();
    let (mut err, mut mag) = (0.0f64, 0.0f64);
    let mut probe = |which: usize, i: usize, j: usize, analytic: f64| {
        let (mut plus, mut minus) = (params.clone(), params.clone());
        let (mp, mm) = if which == 0 {
            (&mut plus.phi, &mut minus.phi)
        } else {
            (plus.xi.as_mut().unwrap(), minus.xi.as_mut().unwrap())
        };
        mp[(i, j)] += h;
        mm[(i, j)] -= h;
        let fd = (loss_moments(obj, p, &plus).unwrap() - loss_moments(obj, p, &minus).unwrap()) / (2.0 * h);
        err = err.max((fd - analytic).abs());
        mag = mag.max(analytic.abs());
    };
    for i in 0..g_phi.nrows() {
        for j in 0..g_phi.ncols() {
            probe(0, i, j, g_phi[(i, j)]);
        }
        if let Some(g) = &g_xi {
            for j in 0..g.ncols() {
                probe(1, i, j, g[(i, j)]);
            }
        }
    }
    err / mag.max(1e-300)
}

fn c5_landscapes() -> Outcome {
    let (mut scl_loss, mut scl_angle, mut sclip_loss, mut rbt_rel) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (p, dec, d) in landscape_processes() {
        assert!(dec.lambda(d - 1) - dec.lambda(d) >= 0.05);
        for seed in 0..5 {
            let opt = OptimizerConfig { seed, ..Default::default() };
            let res = minimize(&ObjectiveSpec { objective: Objective::Scl, d }, &p, &opt).unwrap();
            let want = -(0..d).map(|i| dec.lambda(i).powi(2)).sum::<f64>();
            scl_loss = scl_loss.max((res.final_loss() - want).abs());
            scl_angle = scl_angle.max(subspace_angle(&res.params.phi, &dec, d).unwrap());
            let res = minimize(&ObjectiveSpec { objective: Objective::Sclip, d }, &p, &opt).unwrap();
            sclip_loss = sclip_loss.max((res.final_loss() + dec.partial_trace(d)).abs());
        }
        let betas = [0.5, 0.1, 0.02, 4e-3, 1e-3];
        let path = rbt_penalty_path(&p, d, 1.0, &betas, &OptimizerConfig { seed: 1, ..Default::default() }).unwrap();
        let norm = coefficient_norm_sq(&path.last().unwrap().1.params.phi, &dec);
        let want: f64 = (0..d).map(|i| 1.0 / dec.lambda(i)).sum();
        rbt_rel = rbt_rel.max((norm / want - 1.0).abs());
    }

    let mut grad = 0.0f64;
    let (p, _) = decomposed(Scheme::BlockMaskFlip, 3, 0.4);
    for obj in [
        Objective::Scl,
        Objective::Sclip,
        Objective::Rbt { alpha_w: 0.7, beta_w: 0.3 },
        Objective::Vicreg { beta_w: 0.6 },
    ] {
        for seed in 0..5 {
            let spec = ObjectiveSpec { objective: obj, d: 2 };
            let cfg = OptimizerConfig { seed: 50 + seed, init_scale: 1.0, ..Default::default() };
            let params = initial_params(&spec, &p, &cfg);
            grad = grad.max(fd_relative_error(&obj, &p, &params));
        }
    }
    let ok = scl_loss <= 1e-4 && scl_angle <= 1e-2 && sclip_loss <= 1e-4 && rbt_rel <= 0.01 && grad <= 1e-5;
    (
        ok,
        format!(
            "scl loss gap {scl_loss:.1e}, angle {scl_angle:.1e}; sclip gap {sclip_loss:.1e}; \
             rbt ||C||^2 rel {rbt_rel:.2e}; gradient rel {grad:.1e}"
        ),
    )
}

/// Row-stochastic process with random sparse rows and non-uniform `p_x`.
fn generic_process(x: usize, a: usize, seed: u64) -> (AugmentationProcess, SpectralDecomposition) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for i in 0..x {
        let w: Vec<f64> = (0..a).map(|_| if rng.random_bool(0.6) { rng.random_range(0.05..1.0f64) } else { 0.0 }).collect();
        let w = if w.iter().all(|&v| v == 0.0) { vec![1.0; a] } else { w };
        let t: f64 = w.iter().sum();
        triples.extend(w.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(j, v)| (i, j, v / t)));
    }
    let px: Vec<f64> = (0..x).map(|_| rng.random_range(0.5..1.5)).collect();
    let s: f64 = px.iter().sum();
    let p = build_custom(x, a, px.iter().map(|v| v / s).collect(), &triples).unwrap().0;
    let dec = decompose(&p, DEFAULT_RANK_TOL).unwrap();
    (p, dec)
}

fn mixed_processes() -> Vec<(AugmentationProcess, SpectralDecomposition)> {
    let mut v = vec![
        decomposed(Scheme::RandomMask, 4, 0.5),
        decomposed(Scheme::BlockMaskFlip, 4, 0.3),
        decomposed(Scheme::RandomMaskFlip, 3, 0.4),
    ];
    v.extend((0..3).map(|s| generic_process(7, 10, 900 + s)));
    v
}

fn c6_trace_gap() -> Outcome {
    let procs = mixed_processes();
    let mut opt_err = 0.0f64;
    for (p, dec) in &procs {
        for d in 1..dec.rank() {
            let enc = optimal_encoder(p, dec, d).unwrap();
            opt_err = opt_err.max((trace_gap(&enc, dec).unwrap() - dec.lambda(d)).abs());
        }
    }
    let (mut lower, mut ceiling) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut used = 0;
    for seed in 0..200u64 {
        let (p, dec) = &procs[seed as usize % procs.len()];
        let d = 1 + (seed as usize / procs.len()) % (dec.rank() - 1).min(5);
        let Ok(enc) = random_encoder(p, d, seed) else { continue };
        let (Ok(tau), Ok(rt)) = (trace_gap(&enc, dec), covariances(&enc).and_then(|c| c.ratio_trace())) else {
            continue;
        };
        lower = lower.min(tau - dec.lambda(d));
        ceiling = ceiling.max(rt - dec.partial_trace(d));
        used += 1;
    }
    let ok = opt_err <= 1e-8 && used == 200 && lower >= -1e-9 && ceiling <= 1e-9;
    (
        ok,
        format!(
            "optimal |tau^2 - lambda_(d+1)| {opt_err:.1e}; {used}/200 random encoders, \
             min(tau^2 - lambda_(d+1)) {lower:.3e}, max(ratio trace - S(d)) {ceiling:.1e}"
        ),
    )
}

fn c7_tracegap_rate() -> Outcome {
    let prepared = Prepared::build(HypercubeConfig::new(Scheme::RandomMask, 4, 0.5), DEFAULT_BUDGET).unwrap();
    let n_grid: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
    let seeds: Vec<u64> = (0..20).collect();
    let exp = tracegap_rate_experiment(&prepared, 3, &n_grid, &seeds, 0, 0.05).unwrap();
    let slope = exp.fit.slope;
    let contained = exp.points.iter().filter(|p| p.residual <= p.thm41_rhs).count();
    let in_band = (-0.75..=-0.25).contains(&slope);
    (
        in_band && contained == exp.points.len(),
        format!(
            "slope {slope:.3} (band [-0.75, -0.25]); {contained}/{} gaps under the RHS; medians {:?}",
            exp.points.len(),
            exp.fit.medians.iter().map(|m| format!("{}:{:.2e}", m.0, m.1)).collect::<Vec<_>>()
        ),
    )
}

/// `phi_hat` = top-`d` eigenfunctions plus Gaussian noise of relative size `scale`.
fn perturbed_encoder(p: &AugmentationProcess, dec: &SpectralDecomposition, d: usize, scale: f64, seed: u64) -> Option<Encoder> {
    let noise = random_encoder(p, d, seed).ok()?;
    let top = dec.phi().columns(0, d).transpose();
    Encoder::build(p, top + noise.phi_hat() * scale).ok()
}

fn c8_lemma32() -> Outcome {
    let procs = mixed_processes();
    let mut accepted = 0;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut attempt = 0u64;
    while accepted < 1000 && attempt < 20_000 {
        let (p, dec) = &procs[attempt as usize % procs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(attempt);
        let d = rng.random_range(1..dec.rank().min(6));
        let scale = [0.0, 0.05, 0.2, 0.5, 1.0, 3.0][rng.random_range(0..6)];
        let eps = rng.random_range(0.0..0.9);
        attempt += 1;
        let Some(enc) = perturbed_encoder(p, dec, d, scale, attempt) else { continue };
        let Ok(tau_sq) = trace_gap(&enc, dec) else { continue };
        if !(tau_sq < 1.0) {
            continue;
        }
        let Ok(target) = sample_target(dec, 1.0 + rng.random_range(0.0..2.0), eps, attempt) else { continue };
        let (_, err) = project_fpsi(&target, &enc, dec).unwrap();
        let ctx = BoundContext { tau_sq, epsilon: eps, b: target.b(), ..dummy_context() };
        let rhs = evaluate_bounds(&ctx).lemma32_rhs.unwrap();
        worst = worst.max(err - rhs);
        if err > rhs + 1e-9 {
            violations += 1;
        }
        accepted += 1;
    }
    (
        accepted == 1000 && violations == 0,
        format!("{accepted} triples with tau < 1, {violations} violations, max(err - rhs) {worst:.3e}"),
    )
}

fn dummy_context() -> BoundContext {
    BoundContext {
        tau_sq: 0.0,
        epsilon: 0.0,
        b: 1.0,
        kappa: 1.0,
        s_lambda_d1: 1.0,
        n: 1,
        sigma: 0.0,
        c0: 1.0,
        d: 1,
        lambda_d: 1.0,
        lambda_d1: 0.0,
        lambda_bar_d: 1.0,
        gamma_g: 1.0,
        n_unlabeled: 1,
        delta: 0.05,
        fourth_moment_c: None,
    }
}

fn c9_worst_case() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (scheme, dx, alpha, d) in [
        (Scheme::RandomMask, 4, 0.5, 5),
        (Scheme::BlockMaskFlip, 4, 0.3, 3),
        (Scheme::BlockMask, 4, 0.3, 3),
    ] {
        let (p, dec) = decomposed(scheme, dx, alpha);
        let enc = optimal_encoder(&p, &dec, d).unwrap();
        let l = dec.lambda(d);
        for eps in [0.05, 0.1, 0.2] {
            if (l / (1.0 - l)) * (eps / (1.0 - eps)) > 0.5 {
                continue;
            }
            let b = 1.5;
            let t = worst_case_target(&dec, d, b, eps).unwrap();
            let err = l2_approximation_error(&enc, t.values(), p.p_x()).unwrap();
            let want = (l / (1.0 - l)) * (eps / (1.0 - eps)) * b * b;
            worst = worst.max((err - want).abs());
            cases += 1;
        }
    }
    (worst <= 1e-8 && cases == 9, format!("{cases} cases, max |error - formula| {worst:.2e}"))
}

fn c10_regression() -> Outcome {
    let prepared = Prepared::build(HypercubeConfig::new(Scheme::RandomMask, 4, 0.5), DEFAULT_BUDGET).unwrap();
    let (p, dec) = (&prepared.process, &prepared.decomposition);

    let enc = optimal_encoder(p, dec, 5).unwrap();
    let mut u = DVector::zeros(dec.rank());
    u[0] = 0.8;
    u[2] = 0.4;
    u[4] = -0.2;
    let target = TargetFunction::new(dec, u, 1.0, 0.5).unwrap();
    let samples = generate_labels(&target, p, 64, 0.0, 3).unwrap();
    let recovery = fit_least_squares(&enc, dec, &samples, 1.0, 0.5).unwrap().prediction_error(&target, p.p_x());

    let mut pythagoras = 0.0f64;
    for seed in 0..5 {
        let t = sample_target(dec, 1.0, 0.3, seed).unwrap();
        for d in [2, 5, 8] {
            let enc = optimal_encoder(p, dec, d).unwrap();
            let fit = fit_population(&enc, dec, &t).unwrap();
            let (f_psi, approx) = project_fpsi(&t, &enc, dec).unwrap();
            let diff: Vec<f64> = fit.f_hat_values.iter().zip(&f_psi).map(|(a, b)| a - b).collect();
            let est = weighted_norm_sq(&diff, p.p_x());
            pythagoras = pythagoras.max((fit.prediction_error(&t, p.p_x()) - est - approx).abs());
        }
    }

    let mut points = Vec::new();
    for k in 5..=11 {
        for seed in 0..20 {
            let cell = RegressCell { encoder: EncoderKind::Optimal, d: 5, n: 1 << k, sigma: 0.1, b: 1.0, epsilon: 0.3, seed };
            let r = regress_point(&prepared, &cell, 0, 1.0).unwrap();
            points.push((cell.n, r.est_err));
        }
    }
    let slope = fit_rate(&points).unwrap().slope;
    let ok = recovery <= 1e-12 && pythagoras <= 1e-8 && (-1.3..=-0.7).contains(&slope);
    (ok, format!("in-span error {recovery:.1e}; Pythagorean gap {pythagoras:.1e}; estimation slope {slope:.3} (band [-1.3, -0.7])"))
}

fn c11_monte_carlo() -> Outcome {
    let mut worst = 0.0f64;
    let mut deterministic = true;
    for scheme in Scheme::ALL {
        for alpha in [0.3, 0.6] {
            let p = cube(scheme, 4, alpha);
            let exact = kappa_percentile(&p, 99.0).unwrap();
            let mc = kappa_monte_carlo(&p, p.x_size(), 100_000, 99.0, 17).unwrap();
            worst = worst.max((mc.estimate - exact).abs() / exact);
            let again = kappa_monte_carlo(&p, p.x_size(), 100_000, 99.0, 17).unwrap();
            deterministic &= again == mc;
        }
    }
    (worst <= 0.05 && deterministic, format!("max relative error {worst:.2e} (tol 5e-2); same-seed identical: {deterministic}"))
}

fn c12_figures() -> Outcome {
    let fig = figure_4a_data();
    let csv = fig.to_csv();
    let mut curve_err = 0.0f64;
    let mut rows = 0;
    for (k, line) in csv.lines().skip(1).enumerate() {
        let f: Vec<f64> = line.split(',').skip(1).take(4).map(|s| s.parse().unwrap()).collect();
        let a = k as f64 / 100.0;
        let want = [2.0 - a, 2f64.powf(1.0 - a), (a * a - 2.0 * a + 2.0).powf(1.0 - a / 2.0)];
        curve_err = curve_err.max((f[0] - a).abs());
        for (g, w) in f[1..].iter().zip(want) {
            curve_err = curve_err.max((g - w).abs());
        }
        rows += 1;
    }

    let config = ExperimentConfig::from_json(
        r#"{"command": "sweep",
            "grid": {"scheme": ["random_mask", "random_mask_flip", "block_mask", "block_mask_flip"],
                     "d_x": [4, 6, 8],
                     "alpha": [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]},
            "seeds": [0], "output_dir": "unused", "options": {"mc_draws": 50}}"#,
    )
    .unwrap();
    let out = run_sweep(&config);
    let text = &out.files.iter().find(|f| f.0 == "figure_4b.csv").unwrap().1;
    // (alpha, log p99, log max) per (scheme, d_x), in grid order.
    let mut series: BTreeMap<(String, usize), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap();
        series.entry((f[1].to_string(), f[2].parse().unwrap())).or_default().push((num(3), num(4), num(5)));
    }
    let mut breaks = Vec::new();
    for ((scheme, d), pts) in &series {
        for w in pts.windows(2) {
            if w[1].1 > w[0].1 + 1e-12 || w[1].2 > w[0].2 + 1e-12 {
                breaks.push(format!("{scheme} d_x={d} alpha {}->{}", w[0].0, w[1].0));
            }
        }
    }
    let ok = rows == 101 && curve_err <= 1e-12 && breaks.is_empty() && series.len() == 12;
    (
        ok,
        format!(
            "{rows} rows, max curve error {curve_err:.1e}; {} sweeps, monotonicity breaks: {}",
            series.len(),
            if breaks.is_empty() { "none".to_string() } else { breaks.join("; ") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("closed-form kappa for random masking", c1_closed_form_kappa),
        ("block masking equality and bounds", c2_block_bounds),
        ("random masking spectrum law", c3_spectrum_law),
        ("duality, reconstruction, trace identity", c4_duality),
        ("objective landscapes and gradients", c5_landscapes),
        ("trace gap optimality", c6_trace_gap),
        ("near-optimal trace gap rate", c7_tracegap_rate),
        ("approximation error bound soundness", c8_lemma32),
        ("worst-case target equality", c9_worst_case),
        ("regression behavior", c10_regression),
        ("Monte Carlo kappa estimator", c11_monte_carlo),
        ("figure data and monotonicity", c12_figures),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += usize::from(!ok);
        println!(
            "{} {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} PASS in {:.1}s", criteria.len() - failed, criteria.len(), total.elapsed().as_secs_f64());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

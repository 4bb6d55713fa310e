use augrkhs::complexity::kappa_exact;
use augrkhs::process::{build_hypercube, HypercubeConfig, Scheme, DEFAULT_BUDGET};
use augrkhs::spectral::{decompose, DEFAULT_RANK_TOL};

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// `{(1 - alpha)^k with multiplicity C(d, k)}`, descending.
fn law(d: usize, alpha: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=d)
        .flat_map(|k| std::iter::repeat((1.0 - alpha).powi(k as i32)).take(binomial(d, k)))
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn random_mask_spectrum_law() {
    for d in 1..=6 {
        for alpha in [0.1, 0.5, 0.9] {
            let p = build_hypercube(&HypercubeConfig::new(Scheme::RandomMask, d, alpha), DEFAULT_BUDGET).unwrap();
            let dec = decompose(&p, DEFAULT_RANK_TOL).unwrap();
            let want = law(d, alpha);
            assert_eq!(dec.rank(), want.len(), "d={d} alpha={alpha}");
            for (got, w) in dec.lambdas().iter().zip(&want) {
                assert!((got - w).abs() <= 1e-8, "d={d} alpha={alpha}: {got} vs {w}");
            }
        }
    }
}

#[test]
fn duality_reconstruction_and_trace_identity() {
    for scheme in Scheme::ALL {
        for d in [2, 4, 5] {
            for alpha in [0.1, 0.5, 0.9] {
                let p = build_hypercube(&HypercubeConfig::new(scheme, d, alpha), DEFAULT_BUDGET).unwrap();
                let dec = decompose(&p, DEFAULT_RANK_TOL).unwrap();
                let (rx, ra) = dec.duality_residuals(&p, 1e-6);
                assert!(rx <= 1e-8 && ra <= 1e-8, "{scheme:?} {d} {alpha}");
                assert!(dec.reconstruction_residual() <= 1e-8);
                let report = kappa_exact(&p, &dec, 99.0).unwrap();
                assert!(report.chi_sq_identity_residual <= 1e-10, "{scheme:?} {d} {alpha}");
                assert!(report.route_gap <= 1e-9);
            }
        }
    }
}

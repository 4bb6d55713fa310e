use augrkhs_wasm::curves::{brute_kappa, closed_form_curves, spectrum, DemoError, MAX_DX};

#[test]
fn closed_form_rows() {
    let rows = closed_form_curves(4, 11).unwrap();
    assert_eq!(rows.len(), 44);
    assert_eq!(&rows[..4], &[0.0, 16.0, 16.0, 16.0]);
    let last = &rows[40..];
    assert_eq!(last[0], 1.0);
    assert!((last[1] - 1.0).abs() < 1e-15 && (last[2] - 1.0).abs() < 1e-15);
    assert!(matches!(closed_form_curves(4, 1), Err(DemoError::Points)));
}

#[test]
fn brute_force_matches_random_mask_formula() {
    let alphas = [0.2, 0.5, 0.8];
    for (k, a) in brute_kappa("random_mask", 5, &alphas).unwrap().into_iter().zip(alphas) {
        assert!((k / (2.0 - a).powi(5) - 1.0).abs() < 1e-10);
    }
}

#[test]
fn spectrum_is_descending_from_one() {
    let l = spectrum("block_mask_flip", 4, 0.5).unwrap();
    assert!((l[0] - 1.0).abs() < 1e-10);
    assert!(l.windows(2).all(|w| w[0] >= w[1] - 1e-12));
}

#[test]
fn rejects_bad_input() {
    assert!(matches!(spectrum("random_mask", MAX_DX + 1, 0.5), Err(DemoError::Dimension(_))));
    assert!(matches!(spectrum("rotate", 3, 0.5), Err(DemoError::Core(_))));
    assert!(brute_kappa("random_mask", 3, &[1.5]).is_err());
}

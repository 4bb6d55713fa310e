//! `wasm-bindgen` exports behind `www/index.html`.
//!
//! The plain functions live in [`curves`] so they can be tested natively.

pub mod curves;

use wasm_bindgen::prelude::*;

fn js(e: curves::DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn max_dx() -> usize {
    curves::MAX_DX
}

#[wasm_bindgen]
pub fn closed_form_curves(d_x: usize, points: usize) -> Result<Vec<f64>, JsError> {
    curves::closed_form_curves(d_x, points).map_err(js)
}

#[wasm_bindgen]
pub fn brute_kappa(scheme: &str, d_x: usize, alphas: Vec<f64>) -> Result<Vec<f64>, JsError> {
    curves::brute_kappa(scheme, d_x, &alphas).map_err(js)
}

#[wasm_bindgen]
pub fn spectrum(scheme: &str, d_x: usize, alpha: f64) -> Result<Vec<f64>, JsError> {
    curves::spectrum(scheme, d_x, alpha).map_err(js)
}

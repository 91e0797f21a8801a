//! wasm-bindgen entry points for the browser demo in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

pub use demo::{Heatmap, NormCurve, Observability};

fn js(e: kdv_core::KdvError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = normCurve)]
pub fn norm_curve(law: &str, lambda: f64, amplitude: f64, horizon: f64, n: usize, dt: f64) -> Result<NormCurve, JsError> {
    demo::norm_curve(law, lambda, amplitude, horizon, n, dt).map_err(js)
}

#[wasm_bindgen]
pub fn spacetime(amplitude: f64, mu: f64, horizon: f64, frames: usize, damped: bool, n: usize) -> Result<Heatmap, JsError> {
    demo::spacetime(amplitude, mu, horizon, frames, damped, n).map_err(js)
}

#[wasm_bindgen]
pub fn observability(center: f64, width: f64, horizon: f64, band: u32, n: usize) -> Result<Observability, JsError> {
    demo::observability(center, width, horizon, i64::from(band), n).map_err(js)
}

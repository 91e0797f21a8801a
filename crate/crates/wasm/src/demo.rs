//! The three computations behind the browser page. Everything here is plain
//! Rust so it can be tested natively; `lib.rs` only adapts errors for JS.

use std::f64::consts::PI;

use kdv_core::control::{build_control_gramian, ControlProfile};
use kdv_core::diagnostics::{fit_decay, observability_constant};
use kdv_core::dynamics::{simulate, step_count, LinearSymbol, SampleOptions, StepperConfig};
use kdv_core::feedback::{FeedbackLaw, LawKind};
use kdv_core::spectral::{Field, SpectralGrid};
use kdv_core::{KdvError, Result};
use wasm_bindgen::prelude::*;

// control region used by the first two panels
const CENTER: f64 = PI;
const WIDTH: f64 = PI / 2.0;

fn bad(name: &'static str, reason: impl Into<String>) -> KdvError {
    KdvError::Parameter {
        name,
        reason: reason.into(),
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(name, format!("must be positive, got {v}")))
    }
}

fn parse_law(law: &str, lambda: f64) -> Result<LawKind> {
    match law {
        "none" => Ok(LawKind::None),
        "damping" => Ok(LawKind::Damping),
        "gramian_rate" => {
            positive("lambda", lambda)?;
            Ok(LawKind::GramianRate { lambda })
        }
        other => Err(bad("law", format!("unknown law `{other}`"))),
    }
}

/// `‖u(t) − [u]‖₀` under one feedback law, with the fitted decay rate over
/// the second half of the run.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct NormCurve {
    times: Vec<f64>,
    norms: Vec<f64>,
    rate: f64,
}

#[wasm_bindgen]
impl NormCurve {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn norms(&self) -> Vec<f64> {
        self.norms.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rate(&self) -> f64 {
        self.rate
    }
}

pub fn norm_curve(law: &str, lambda: f64, amplitude: f64, horizon: f64, n: usize, dt: f64) -> Result<NormCurve> {
    positive("amplitude", amplitude)?;
    positive("horizon", horizon)?;
    positive("dt", dt)?;
    let kind = parse_law(law, lambda)?;
    let grid = SpectralGrid::new(n)?;
    let sym = LinearSymbol::new(0.0);
    let profile = ControlProfile::new(CENTER, WIDTH, &grid)?;
    let drive = FeedbackLaw::build(kind, &profile, &sym, horizon)?;
    let u0 = Field::from_fn(&grid, |x| amplitude * (x.cos() + 0.4 * (2.0 * x).sin()));
    let opts = SampleOptions {
        sample_every: (step_count(horizon, dt) / 400).max(1),
        s: 0.0,
        keep_fields: false,
    };
    let rec = simulate(&u0, horizon, &StepperConfig::with_dt(dt), &sym, &drive, &opts)?;
    let fit = fit_decay(&rec, 0.0, (0.5 * horizon, horizon))?;
    Ok(NormCurve {
        times: rec.times,
        norms: rec.l2,
        rate: fit.rate,
    })
}

/// Physical values `u(t_r, x_c)` laid out row by row, one row per frame.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Heatmap {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    min: f64,
    max: f64,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f64 {
        self.min
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> f64 {
        self.max
    }
}

/// A localized hump evolving under KdV, optionally with the damping control.
pub fn spacetime(amplitude: f64, mu: f64, horizon: f64, frames: usize, damped: bool, n: usize) -> Result<Heatmap> {
    positive("amplitude", amplitude)?;
    positive("horizon", horizon)?;
    if !mu.is_finite() {
        return Err(bad("mu", "must be finite"));
    }
    if frames < 2 {
        return Err(bad("frames", "need at least 2"));
    }
    let grid = SpectralGrid::new(n)?;
    let sym = LinearSymbol::new(mu);
    let drive = if damped {
        FeedbackLaw::damping(&ControlProfile::new(CENTER, WIDTH, &grid)?)
    } else {
        FeedbackLaw::none()
    };
    // keeps dt·amplitude·k_max well inside the explicit limit
    let dt = (0.05 / (amplitude * grid.max_mode() as f64)).min(1e-2);
    let steps = step_count(horizon, dt);
    let dt = horizon / steps as f64;
    let opts = SampleOptions {
        sample_every: (steps / (frames - 1)).max(1),
        s: 0.0,
        keep_fields: true,
    };
    let u0 = Field::from_fn(&grid, |x| amplitude * (-4.0 * (x - 0.5 * PI).powi(2)).exp());
    let rec = simulate(&u0, horizon, &StepperConfig::with_dt(dt), &sym, &drive, &opts)?;
    let values: Vec<f64> = rec.fields.iter().flat_map(|f| f.to_physical()).collect();
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(Heatmap {
        rows: rec.fields.len(),
        cols: n,
        values,
        min,
        max,
    })
}

/// Control profile samples and the observability constant of the Gramian
/// restricted to `1 ≤ |k| ≤ band`.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Observability {
    x: Vec<f64>,
    g: Vec<f64>,
    delta: f64,
}

#[wasm_bindgen]
impl Observability {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn g(&self) -> Vec<f64> {
        self.g.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

pub fn observability(center: f64, width: f64, horizon: f64, band: i64, n: usize) -> Result<Observability> {
    positive("horizon", horizon)?;
    let grid = SpectralGrid::new(n)?;
    let profile = ControlProfile::new(center, width, &grid)?;
    let gt = build_control_gramian(&profile, horizon, &LinearSymbol::new(0.0))?;
    Ok(Observability {
        x: grid.points(),
        g: profile.samples().to_vec(),
        delta: observability_constant(&gt, band)?,
    })
}

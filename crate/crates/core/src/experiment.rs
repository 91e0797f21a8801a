//! Declarative experiments: a TOML config names the grid, physics, profile,
//! law and initial data; running it yields a trajectory plus a diagnostics
//! report, and a `[sweep]` table crosses parameter lists into a grid of runs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::control::{build_control_gramian, build_ggstar, build_l_lambda_with_horizon, ControlProfile, OperatorKind, OperatorMatrix};
use crate::controllability::{hum_linear_with, steer_global, steer_local, ControlSignal, Machinery, SteerOptions, SteeringProblem};
use crate::diagnostics::{default_window, energy_residual, fit_decay, mass_drift, observability_constant, DecayFit};
use crate::dynamics::{simulate, LinearSymbol, SampleOptions, Scheme, StepperConfig, TrajectoryRecord};
use crate::error::{KdvError, Result};
use crate::feedback::{FeedbackLaw, LawKind, TimeVaryingParams};
use crate::spectral::{Field, SpectralGrid};

pub const SCHEMA_VERSION: u32 = 1;

/// A real number that may also be written as a multiple of π, e.g.
/// `"pi/2"`, `"3pi/4"`, `"-pi/2"` or `"2*pi"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Angle(pub f64);

impl Angle {
    pub fn parse(text: &str) -> std::result::Result<f64, String> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
        let bad = || format!("cannot read `{text}` as a number or multiple of pi");
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (a, b.parse::<f64>().map_err(|_| bad())?),
            None => (s.as_str(), 1.0),
        };
        let value = match num.strip_suffix("pi") {
            Some(coef) => {
                let coef = coef.strip_suffix('*').unwrap_or(coef);
                let c = match coef {
                    "" | "+" => 1.0,
                    "-" => -1.0,
                    c => c.parse::<f64>().map_err(|_| bad())?,
                };
                c * PI
            }
            None => num.parse::<f64>().map_err(|_| bad())?,
        };
        Ok(value / den)
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Angle(v)),
            Raw::Int(v) => Ok(Angle(v as f64)),
            Raw::Text(t) => Angle::parse(&t).map(Angle).map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 128 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Mean value `μ = [u]`; the simulation runs in `u − μ`.
    #[serde(default)]
    pub mu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperSection {
    pub dt: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    pub nonlinear: bool,
}

impl Default for StepperSection {
    fn default() -> Self {
        let d = StepperConfig::default();
        StepperSection {
            dt: d.dt,
            scheme: d.scheme,
            dealias: d.dealias,
            nonlinear: d.nonlinear,
        }
    }
}

impl StepperSection {
    pub fn to_config(&self) -> StepperConfig {
        StepperConfig {
            dt: self.dt,
            scheme: self.scheme,
            dealias: self.dealias,
            nonlinear: self.nonlinear,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub center: Angle,
    pub width: Angle,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            center: Angle(PI),
            width: Angle(PI / 2.0),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    // empty braces rather than unit variants: serde only rejects unknown
    // keys of internally tagged variants that have fields
    None {},
    Damping {},
    GramianRate {
        lambda: f64,
        /// Upper limit of the weighted Gramian integral.
        #[serde(default = "one")]
        horizon: f64,
    },
    TimeVarying {
        #[serde(default = "tv_lambda")]
        lambda: f64,
        #[serde(default = "tv_t_switch")]
        t_switch: f64,
        #[serde(default = "tv_delta")]
        delta: f64,
        #[serde(default = "tv_r0")]
        r0: f64,
        #[serde(default)]
        s: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
}

impl Default for LawConfig {
    fn default() -> Self {
        LawConfig::Damping {}
    }
}

fn tv_lambda() -> f64 {
    TimeVaryingParams::default().lambda
}
fn tv_t_switch() -> f64 {
    TimeVaryingParams::default().t_switch
}
fn tv_delta() -> f64 {
    TimeVaryingParams::default().delta
}
fn tv_r0() -> f64 {
    TimeVaryingParams::default().r0
}

impl LawConfig {
    pub fn kind(&self) -> LawKind {
        match *self {
            LawConfig::None {} => LawKind::None,
            LawConfig::Damping {} => LawKind::Damping,
            LawConfig::GramianRate { lambda, .. } => LawKind::GramianRate { lambda },
            LawConfig::TimeVarying {
                lambda,
                t_switch,
                delta,
                r0,
                s,
                ..
            } => LawKind::TimeVarying(TimeVaryingParams {
                lambda,
                t_switch,
                delta,
                r0,
                s,
            }),
        }
    }

    pub fn horizon(&self) -> f64 {
        match *self {
            LawConfig::GramianRate { horizon, .. } | LawConfig::TimeVarying { horizon, .. } => horizon,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `Σ a_j cos(k_j x + φ_j)`.
    Cosines,
    /// Uniformly random coefficients on modes `1..=band`.
    Random,
    /// `a·sech²((x − c)/w)` with its mean removed.
    Sech2,
    Zero,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineTerm {
    pub k: i64,
    pub amplitude: f64,
    #[serde(default = "zero_angle")]
    pub phase: Angle,
}

fn zero_angle() -> Angle {
    Angle(0.0)
}

/// Initial (or target) state; always mean-free, the mean comes from `μ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<CosineTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Angle>,
    /// Rescale so that `‖u − μ‖₀` equals this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_to_l2: Option<f64>,
}

impl InitialSpec {
    pub fn cosines(terms: &[(i64, f64)]) -> Self {
        InitialSpec {
            shape: Shape::Cosines,
            terms: terms
                .iter()
                .map(|&(k, amplitude)| CosineTerm {
                    k,
                    amplitude,
                    phase: Angle(0.0),
                })
                .collect(),
            band: None,
            seed: None,
            amplitude: None,
            width: None,
            center: None,
            scale_to_l2: None,
        }
    }

    pub fn random(band: i64, seed: u64) -> Self {
        InitialSpec {
            shape: Shape::Random,
            band: Some(band),
            seed: Some(seed),
            ..InitialSpec::cosines(&[])
        }
    }

    pub fn validate(&self, grid_n: usize, what: &str) -> Result<()> {
        let err = |msg: String| Err(KdvError::Config(format!("{what}: {msg}")));
        let kmax = (grid_n / 2) as i64 - 1;
        match self.shape {
            Shape::Cosines => {
                if self.terms.is_empty() {
                    return err("shape `cosines` needs at least one entry in `terms`".into());
                }
                for t in &self.terms {
                    if t.k < 1 || t.k > kmax {
                        return err(format!("cosine wavenumber {} must lie in [1, {kmax}]", t.k));
                    }
                    if !t.amplitude.is_finite() {
                        return err("cosine amplitudes must be finite".into());
                    }
                }
            }
            Shape::Random => match self.band {
                Some(b) if b >= 1 && b <= kmax => {}
                _ => return err(format!("shape `random` needs `band` in [1, {kmax}]")),
            },
            Shape::Sech2 => {
                if !self.width.is_some_and(|w| w > 0.0) {
                    return err("shape `sech2` needs a positive `width`".into());
                }
                if !self.amplitude.is_some_and(f64::is_finite) {
                    return err("shape `sech2` needs a finite `amplitude`".into());
                }
            }
            Shape::Zero => {}
        }
        if let Some(r) = self.scale_to_l2 {
            if !(r >= 0.0 && r.is_finite()) {
                return err("`scale_to_l2` must be finite and nonnegative".into());
            }
            if r > 0.0 && self.shape == Shape::Zero {
                return err("cannot rescale the zero state".into());
            }
        }
        Ok(())
    }

    /// The mean-free field described by this spec.
    pub fn build(&self, grid: &SpectralGrid) -> Result<Field> {
        let f = match self.shape {
            Shape::Zero => Field::zeros(grid),
            Shape::Cosines => Field::from_fn(grid, |x| {
                self.terms
                    .iter()
                    .map(|t| t.amplitude * (t.k as f64 * x + t.phase.0).cos())
                    .sum()
            }),
            Shape::Random => {
                let band = self.band.unwrap_or(8);
                let amp = self.amplitude.unwrap_or(1.0);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(0));
                let modes: Vec<(i64, Complex64)> = (1..=band)
                    .map(|k| {
                        let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                        (k, c * amp)
                    })
                    .collect();
                Field::from_modes(grid, &modes)?
            }
            Shape::Sech2 => {
                let a = self.amplitude.unwrap_or(1.0);
                let w = self.width.unwrap_or(1.0);
                let c = self.center.map_or(PI, |c| c.0);
                Field::from_fn(grid, |x| {
                    let d = (x - c + PI).rem_euclid(2.0 * PI) - PI;
                    a / (d / w).cosh().powi(2)
                })
            }
        };
        let mut f = f.mean_project();
        f.zero_nyquist();
        if let Some(r) = self.scale_to_l2 {
            let n = f.l2_norm();
            if r > 0.0 && n == 0.0 {
                return Err(KdvError::Config("cannot rescale a state with zero norm".into()));
            }
            if n > 0.0 {
                f = f.scale(r / n);
            }
        }
        Ok(f)
    }
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::cosines(&[(1, 1.0)])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub horizon: f64,
    pub sample_every: usize,
    /// Sobolev index of the `h_s` column.
    pub s: f64,
    /// Also write the sampled fields.
    pub keep_fields: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon: 10.0,
            sample_every: 20,
            s: 1.0,
            keep_fields: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityConfig {
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default = "default_band")]
    pub band: i64,
}

fn default_band() -> i64 {
    16
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub fit: bool,
    /// Fit window; defaults to the horizon minus its first 20%.
    pub window: Option<[f64; 2]>,
    pub fit_s: f64,
    pub observability: Option<ObservabilityConfig>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            fit: true,
            window: None,
            fit_s: 0.0,
            observability: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerMode {
    Linear,
    Local,
    Global,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerConfig {
    pub mode: SteerMode,
    pub target: InitialSpec,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_picard")]
    pub max_picard: usize,
    #[serde(default)]
    pub options: SteerOptions,
    /// Number of intervals in the written control file.
    #[serde(default = "default_export")]
    pub export_samples: usize,
    /// Step used to replay linear controls; defaults to `stepper.dt`.
    #[serde(default)]
    pub replay_dt: Option<f64>,
}

fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_picard() -> usize {
    12
}
fn default_export() -> usize {
    2000
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Dotted config path → list of values, e.g. `"law.lambda" = [0.5, 1, 2]`.
    pub parameters: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub stepper: StepperSection,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub law: LawConfig,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer: Option<SteerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| KdvError::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KdvError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        let version = value.get("schema_version").and_then(toml::Value::as_integer);
        match version {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(KdvError::Config(format!(
                    "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(KdvError::Config("missing `schema_version`".into())),
        }
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| KdvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field against the preconditions of the module it feeds,
    /// before anything is allocated or written.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(KdvError::Config(msg));
        let n = self.grid.n;
        if n < 8 || n % 2 != 0 {
            return cfg(format!("grid.n must be even and at least 8, got {n}"));
        }
        if n > 4096 {
            return cfg(format!("grid.n = {n} exceeds the supported maximum 4096"));
        }
        if !self.physics.mu.is_finite() {
            return cfg("physics.mu must be finite".into());
        }
        if !(self.stepper.dt > 0.0 && self.stepper.dt.is_finite()) {
            return cfg(format!("stepper.dt must be positive, got {}", self.stepper.dt));
        }
        let w = self.profile.width.0;
        if !(w > 0.0 && w <= 2.0 * PI) {
            return cfg(format!("profile.width must lie in (0, 2pi], got {w}"));
        }
        if !self.profile.center.0.is_finite() {
            return cfg("profile.center must be finite".into());
        }
        match &self.law {
            LawConfig::GramianRate { lambda, horizon } => {
                if !(*lambda > 0.0) || !(*horizon > 0.0) {
                    return cfg("law.lambda and law.horizon must be positive".into());
                }
            }
            LawConfig::TimeVarying { horizon, .. } => {
                if let LawKind::TimeVarying(p) = self.law.kind() {
                    p.validate().map_err(|e| KdvError::Config(format!("law: {e}")))?;
                }
                if !(*horizon > 0.0) {
                    return cfg("law.horizon must be positive".into());
                }
            }
            _ => {}
        }
        self.initial.validate(n, "initial")?;
        if !(self.run.horizon > 0.0 && self.run.horizon.is_finite()) {
            return cfg(format!("run.horizon must be positive, got {}", self.run.horizon));
        }
        if self.run.sample_every == 0 {
            return cfg("run.sample_every must be at least 1".into());
        }
        if !(self.run.s >= 0.0) {
            return cfg("run.s must be nonnegative".into());
        }
        if let Some([a, b]) = self.diagnostics.window {
            if !(a < b) {
                return cfg("diagnostics.window must be [start, end] with start < end".into());
            }
        }
        if self.diagnostics.fit_s != 0.0 && self.diagnostics.fit_s != self.run.s {
            return cfg("diagnostics.fit_s must be 0 or equal to run.s".into());
        }
        if let Some(o) = &self.diagnostics.observability {
            if !(o.t > 0.0) {
                return cfg("diagnostics.observability.t must be positive".into());
            }
            if o.band < 1 || o.band > (n / 2) as i64 - 1 {
                return cfg(format!("diagnostics.observability.band must lie in [1, {}]", n / 2 - 1));
            }
        }
        if let Some(op) = &self.operator {
            let ok = match *op {
                OperatorKind::GgStar => true,
                OperatorKind::LLambda { lambda, horizon } => lambda > 0.0 && horizon > 0.0,
                OperatorKind::ControlGramian { t } => t > 0.0,
            };
            if !ok {
                return cfg("operator parameters must be positive".into());
            }
        }
        if let Some(s) = &self.steer {
            s.target.validate(n, "steer.target")?;
            if !(s.horizon > 0.0) || !(s.tolerance > 0.0) {
                return cfg("steer.horizon and steer.tolerance must be positive".into());
            }
            if let Some(dt) = s.replay_dt {
                if !(dt > 0.0) {
                    return cfg("steer.replay_dt must be positive".into());
                }
            }
            s.options.validate().map_err(|e| KdvError::Config(format!("steer.options: {e}")))?;
            if s.mode == SteerMode::Global && !self.profile_is_even() {
                return cfg(
                    "steer.mode = \"global\" needs an even profile (g(-x) = g(x)); set profile.center to 0 or pi"
                        .into(),
                );
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.parameters.is_empty() {
                return cfg("sweep.parameters is empty".into());
            }
            for (k, v) in &sw.parameters {
                if v.is_empty() {
                    return cfg(format!("sweep parameter `{k}` has no values"));
                }
            }
            if sw.workers == Some(0) {
                return cfg("sweep.workers must be at least 1".into());
            }
        }
        Ok(())
    }

    fn profile_is_even(&self) -> bool {
        let c = self.profile.center.0.rem_euclid(PI);
        c.min(PI - c) <= 1e-12
    }

    /// Overrides the seed of every random initial shape.
    pub fn apply_seed(&mut self, seed: u64) {
        if self.initial.shape == Shape::Random {
            self.initial.seed = Some(seed);
        }
        if let Some(s) = &mut self.steer {
            if s.target.shape == Shape::Random {
                s.target.seed = Some(seed.wrapping_add(1));
            }
        }
    }

    /// Run-time objects built from the config.
    pub fn setup(&self) -> Result<Setup> {
        let grid = SpectralGrid::new(self.grid.n)?;
        let sym = LinearSymbol::new(self.physics.mu);
        let profile = ControlProfile::new(self.profile.center.0, self.profile.width.0, &grid)?;
        let u0 = self.initial.build(&grid)?;
        Ok(Setup {
            grid,
            sym,
            profile,
            u0,
            stepper: self.stepper.to_config(),
        })
    }
}

pub struct Setup {
    pub grid: SpectralGrid,
    pub sym: LinearSymbol,
    pub profile: ControlProfile,
    /// Mean-free initial state `u₀ − μ`.
    pub u0: Field,
    pub stepper: StepperConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub rate: f64,
    pub residual: f64,
    pub window: (f64, f64),
    pub s: f64,
    pub samples: usize,
}

impl From<DecayFit> for FitReport {
    fn from(f: DecayFit) -> Self {
        FitReport {
            rate: f.rate,
            residual: f.residual,
            window: f.window,
            s: f.norm_index,
            samples: f.samples,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservabilityReport {
    #[serde(rename = "T")]
    pub t: f64,
    pub band: i64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConservationReport {
    pub mass_drift: f64,
    /// Largest `|‖u(t)−μ‖₀² / ‖u₀−μ‖₀² − 1|` over the samples.
    pub l2_sq_drift: f64,
}

/// JSON report of one simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub generator: String,
    pub drive: String,
    pub mu: f64,
    pub final_time: f64,
    pub final_l2: f64,
    pub max_l2_increase: f64,
    pub conservation: ConservationReport,
    pub fit: Option<FitReport>,
    pub fit_error: Option<String>,
    pub energy_residual: Option<f64>,
    pub observability: Option<ObservabilityReport>,
    pub config: ExperimentConfig,
}

pub fn generator() -> String {
    format!("kdvctl {}", env!("CARGO_PKG_VERSION"))
}

pub struct RunOutcome {
    pub record: TrajectoryRecord,
    pub report: RunReport,
}

/// Diagnostics requested by the config, computed from a finished record.
pub fn diagnose(cfg: &ExperimentConfig, rec: &TrajectoryRecord, profile: &ControlProfile, sym: &LinearSymbol) -> Result<RunReport> {
    let (fit, fit_error) = if cfg.diagnostics.fit {
        let window = cfg
            .diagnostics
            .window
            .map_or_else(|| default_window(rec), |[a, b]| (a, b));
        match fit_decay(rec, cfg.diagnostics.fit_s, window) {
            Ok(f) => (Some(FitReport::from(f)), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let energy = match rec.drive {
        crate::dynamics::DriveKind::Damping => Some(energy_residual(rec)?),
        _ => None,
    };
    let observability = match &cfg.diagnostics.observability {
        Some(o) => {
            let gt = build_control_gramian(profile, o.t, sym)?;
            Some(ObservabilityReport {
                t: o.t,
                band: o.band,
                delta: observability_constant(&gt, o.band)?,
            })
        }
        None => None,
    };
    let e0 = rec.l2[0].powi(2);
    let l2_sq_drift = if e0 > 0.0 {
        rec.l2.iter().fold(0.0f64, |d, v| d.max((v * v / e0 - 1.0).abs()))
    } else {
        0.0
    };
    Ok(RunReport {
        name: cfg.name.clone(),
        generator: generator(),
        drive: serde_json::to_value(rec.drive)?.as_str().unwrap_or_default().to_string(),
        mu: cfg.physics.mu,
        final_time: *rec.times.last().unwrap_or(&0.0),
        final_l2: *rec.l2.last().unwrap_or(&0.0),
        max_l2_increase: rec.max_l2_increase,
        conservation: ConservationReport {
            mass_drift: mass_drift(rec),
            l2_sq_drift,
        },
        fit,
        fit_error,
        energy_residual: energy,
        observability,
        config: cfg.clone(),
    })
}

/// Runs the simulation described by `cfg`.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let st = cfg.setup()?;
    let law = FeedbackLaw::build(cfg.law.kind(), &st.profile, &st.sym, cfg.law.horizon())?;
    let opts = SampleOptions {
        sample_every: cfg.run.sample_every,
        s: cfg.run.s,
        keep_fields: cfg.run.keep_fields,
    };
    let mut record = simulate(&st.u0, cfg.run.horizon, &st.stepper, &st.sym, &law, &opts)?;
    record.mass.iter_mut().for_each(|m| *m += cfg.physics.mu);
    let report = diagnose(cfg, &record, &st.profile, &st.sym)?;
    Ok(RunOutcome { record, report })
}

/// Builds the operator requested in `[operator]`.
pub fn build_operator(cfg: &ExperimentConfig) -> Result<OperatorMatrix> {
    cfg.validate()?;
    let st = cfg.setup()?;
    match cfg.operator {
        None => Err(KdvError::Config("missing [operator] table".into())),
        Some(OperatorKind::GgStar) => Ok(build_ggstar(&st.profile, &st.sym)),
        Some(OperatorKind::LLambda { lambda, horizon }) => {
            build_l_lambda_with_horizon(&st.profile, lambda, horizon, &st.sym)
        }
        Some(OperatorKind::ControlGramian { t }) => build_control_gramian(&st.profile, t, &st.sym),
    }
}

/// Summary written next to an operator dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorSummary {
    pub dim: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub condition: f64,
    pub hermitian_defect: f64,
    pub band_min_eigenvalues: BTreeMap<i64, f64>,
}

pub fn summarize_operator(op: &OperatorMatrix) -> Result<OperatorSummary> {
    let mut bands = BTreeMap::new();
    let kmax = op.grid().max_mode();
    for b in [4, 8, 16, 32] {
        if b <= kmax {
            bands.insert(b, op.restricted_min_eigenvalue(b)?);
        }
    }
    Ok(OperatorSummary {
        dim: op.dim(),
        min_eigenvalue: op.min_eigenvalue(),
        max_eigenvalue: op.max_eigenvalue(),
        condition: op.condition(),
        hermitian_defect: op.hermitian_defect(),
        band_min_eigenvalues: bands,
    })
}

/// Result of a steering run.
pub struct SteerOutcome {
    pub control: ControlSignal,
    pub profile: ControlProfile,
    pub replay: TrajectoryRecord,
    pub report: SteerReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteerReport {
    pub name: String,
    pub generator: String,
    pub mode: SteerMode,
    pub total_time: f64,
    /// `‖u(T) − u1‖₀` of the replay through the simulator.
    pub replay_error: f64,
    /// Replay error divided by `‖u1 − W(T)u0‖₀` (linear mode) or `‖u1 − μ‖₀`.
    pub relative_error: f64,
    pub mass_drift: f64,
    pub iterations: Option<usize>,
    pub residuals: Vec<f64>,
    pub stages: Option<serde_json::Value>,
    pub config: ExperimentConfig,
}

/// Runs the `[steer]` block: u0 from `initial`, u1 from `steer.target`.
pub fn run_steering(cfg: &ExperimentConfig) -> Result<SteerOutcome> {
    cfg.validate()?;
    let sc = cfg
        .steer
        .as_ref()
        .ok_or_else(|| KdvError::Config("missing [steer] table".into()))?;
    let st = cfg.setup()?;
    let w1 = sc.target.build(&st.grid)?;
    let mu = cfg.physics.mu;
    let shift = |w: &Field| w.axpy(1.0, &Field::constant(&st.grid, mu));
    let pb = SteeringProblem {
        u0: shift(&st.u0),
        u1: shift(&w1),
        horizon: sc.horizon,
        mu,
        tolerance: sc.tolerance,
        max_picard: sc.max_picard,
    };
    let machinery = Machinery {
        profile: st.profile.clone(),
        stepper: st.stepper,
        options: sc.options,
    };
    let opts = SampleOptions {
        sample_every: cfg.run.sample_every,
        s: cfg.run.s,
        keep_fields: cfg.run.keep_fields,
    };
    let (control, replay, iterations, residuals, stages, denom) = match sc.mode {
        SteerMode::Linear => {
            let dt = sc.replay_dt.unwrap_or(st.stepper.dt);
            let t = crate::dynamics::step_count(sc.horizon, dt) as f64 * dt;
            let gt = build_control_gramian(&st.profile, t, &st.sym)?;
            let control = hum_linear_with(&st.u0, &w1, t, &gt, &st.profile, &st.sym, sc.options.regularization)?;
            let m = Machinery {
                stepper: StepperConfig { dt, ..st.stepper.linear() },
                ..machinery
            };
            let replay = crate::controllability::replay(&st.u0, &control, &m, &st.sym, &opts)?;
            let denom = (&w1 - &crate::dynamics::w_propagate(&st.u0, t, &st.sym)).l2_norm();
            (control, replay, None, Vec::new(), None, denom)
        }
        SteerMode::Local => {
            let local = steer_local(&pb, &machinery)?;
            let replay = crate::controllability::replay(&st.u0, &local.control, &machinery, &st.sym, &opts)?;
            (local.control, replay, Some(local.iterations), local.residuals, None, w1.l2_norm())
        }
        SteerMode::Global => {
            let g = steer_global(&pb, &machinery, cfg.run.sample_every)?;
            let stages = serde_json::to_value(&g.report)?;
            let residuals = g.report.picard_residuals.clone();
            (g.control, g.replay, None, residuals, Some(stages), w1.l2_norm())
        }
    };
    let mut replay = replay;
    let replay_error = (&replay.final_state - &w1).l2_norm();
    replay.mass.iter_mut().for_each(|m| *m += mu);
    let report = SteerReport {
        name: cfg.name.clone(),
        generator: generator(),
        mode: sc.mode,
        total_time: control.duration(),
        replay_error,
        relative_error: if denom > 0.0 { replay_error / denom } else { replay_error },
        mass_drift: mass_drift(&replay),
        iterations,
        residuals,
        stages,
        config: cfg.clone(),
    };
    Ok(SteerOutcome {
        control,
        profile: st.profile,
        replay,
        report,
    })
}

/// One cell of a parameter sweep.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub index: usize,
    pub overrides: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

impl fmt::Display for SweepCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "cell {} ({})", self.index, parts.join(", "))
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| KdvError::Config(format!("sweep path `{path}`: `{key}` is not inside a table")))?;
        if i + 1 == keys.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(KdvError::Config(format!("empty sweep path `{path}`")))
}

/// Expands `[sweep]` into the cross product of its parameter lists; every
/// cell config is validated before any cell runs.
pub fn expand_sweep(text: &str) -> Result<Vec<SweepCell>> {
    let base = ExperimentConfig::from_toml_str(text)?;
    let sweep = base
        .sweep
        .clone()
        .ok_or_else(|| KdvError::Config("missing [sweep] table".into()))?;
    let mut value: toml::Value = toml::from_str(text).map_err(|e| KdvError::Config(e.to_string()))?;
    if let Some(t) = value.as_table_mut() {
        t.remove("sweep");
    }
    let params: Vec<(&String, &Vec<toml::Value>)> = sweep.parameters.iter().collect();
    let total: usize = params.iter().map(|(_, v)| v.len()).product();
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        let mut rest = index;
        let mut overrides = Vec::new();
        let mut v = value.clone();
        for (path, values) in params.iter().rev() {
            let choice = values[rest % values.len()].clone();
            rest /= values.len();
            set_path(&mut v, path, choice.clone())?;
            overrides.push(((*path).clone(), choice));
        }
        overrides.reverse();
        let config = ExperimentConfig::from_value(v).map_err(|e| match e {
            KdvError::Config(m) => KdvError::Config(format!("sweep cell {index}: {m}")),
            e => e,
        })?;
        cells.push(SweepCell {
            index,
            overrides,
            config,
        });
    }
    Ok(cells)
}

/// Per-cell outcome of a sweep.
pub struct CellResult {
    pub cell: SweepCell,
    pub outcome: Result<RunOutcome>,
}

/// Runs all cells on up to `workers` threads; failures stay per cell.
pub fn run_sweep(cells: Vec<SweepCell>, workers: usize) -> Result<Vec<CellResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| KdvError::Usage(format!("cannot start worker pool: {e}")))?;
    let mut out: Vec<CellResult> = pool.install(|| {
        cells
            .into_par_iter()
            .map(|cell| {
                let outcome = run_simulation(&cell.config);
                CellResult { cell, outcome }
            })
            .collect()
    });
    out.sort_by_key(|r| r.cell.index);
    Ok(out)
}

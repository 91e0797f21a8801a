//! Exact steering: minimal-norm linear controls from the controllability
//! Gramian, Picard correction for the nonlinear equation near a constant
//! state, and the stabilize / connect / reverse pipeline for large data.
//!
//! All controls live in the shifted variable `ũ = u − μ`, whose linear part
//! is `W(t)` with symbol `k³ − μk`.

use log::{info, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{build_control_gramian, ControlProfile, OperatorMatrix, MAX_CONDITION};
use crate::dynamics::{
    simulate_with, step_count, w_propagate, DriveKind, Forcing, LinearSymbol, SampleOptions, StageTime, Stepper,
    StepperConfig, TrajectoryRecord,
};
use crate::error::{KdvError, Result};
use crate::feedback::FeedbackLaw;
use crate::spectral::{Field, SpectralGrid};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Time-indexed fields stored by their nonnegative modes `0..N/2`, evaluated
/// by cubic Lagrange interpolation over the nearest four samples.
#[derive(Clone, Debug)]
struct SampleTable {
    times: Vec<f64>,
    width: usize,
    data: Vec<Complex64>,
}

impl SampleTable {
    fn new(grid: &SpectralGrid) -> Self {
        SampleTable {
            times: Vec::new(),
            width: grid.n() / 2,
            data: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, f: &Field) {
        if let Some(&last) = self.times.last() {
            debug_assert!(t > last, "sample times must increase");
        }
        self.times.push(t);
        self.data.extend_from_slice(&f.coeffs()[..self.width]);
    }

    fn len(&self) -> usize {
        self.times.len()
    }

    fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn field(&self, grid: &SpectralGrid, half: &[Complex64]) -> Field {
        let n = grid.n();
        let mut coeffs = vec![ZERO; n];
        coeffs[0] = Complex64::new(half[0].re, 0.0);
        for k in 1..self.width {
            coeffs[k] = half[k];
            coeffs[n - k] = half[k].conj();
        }
        Field::from_coeffs(grid, coeffs).expect("length matches grid")
    }

    fn sample(&self, grid: &SpectralGrid, i: usize) -> Field {
        self.field(grid, self.row(i))
    }

    fn eval(&self, grid: &SpectralGrid, s: f64) -> Field {
        let m = self.len();
        match m {
            0 => return Field::zeros(grid),
            1 => return self.sample(grid, 0),
            _ => {}
        }
        let i = self.times.partition_point(|&t| t <= s).saturating_sub(1);
        if self.times[i] == s {
            return self.sample(grid, i);
        }
        let width = m.min(4);
        let lo = i.saturating_sub(1).min(m - width);
        let nodes = &self.times[lo..lo + width];
        let mut acc = vec![ZERO; self.width];
        for (a, &ta) in nodes.iter().enumerate() {
            let mut w = 1.0;
            for (b, &tb) in nodes.iter().enumerate() {
                if a != b {
                    w *= (s - tb) / (ta - tb);
                }
            }
            for (c, v) in acc.iter_mut().zip(self.row(lo + a)) {
                *c += v * w;
            }
        }
        self.field(grid, &acc)
    }
}

/// One piece of an open-loop control, in its own local time `s ∈ [0, duration]`.
#[derive(Clone, Debug)]
pub enum Segment {
    /// `h(s) = G W(s − duration) φ`, the minimal-norm control for `G_T φ = target`.
    Hum { duration: f64, phi: Field, sym: LinearSymbol },
    /// `h(s) = sign · G y(s)` along a recorded state trajectory `y`, stored in
    /// the interaction picture `W(−s) y(s)` so that interpolation only sees
    /// the slow part of the motion.
    Trajectory {
        duration: f64,
        sign: f64,
        sym: LinearSymbol,
        table: SampleTableHandle,
    },
    /// `h` given directly by samples.
    Sampled { duration: f64, table: SampleTableHandle },
}

/// Opaque storage for sampled segments.
#[derive(Clone, Debug)]
pub struct SampleTableHandle(SampleTable);

impl SampleTableHandle {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn times(&self) -> &[f64] {
        &self.0.times
    }
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Hum { duration, .. } | Segment::Trajectory { duration, .. } | Segment::Sampled { duration, .. } => {
                *duration
            }
        }
    }
}

/// Piecewise open-loop control `h(·, t)`; the forcing applied is `G h`.
#[derive(Clone, Debug)]
pub struct ControlSignal {
    grid: SpectralGrid,
    pieces: Vec<(f64, Segment)>,
    profile_samples: Vec<f64>,
}

impl ControlSignal {
    /// The identically zero control on `[0, duration]`.
    pub fn zero(profile: &ControlProfile, duration: f64) -> Self {
        let mut s = Self::empty(profile);
        let grid = profile.grid().clone();
        s.push(Segment::Sampled {
            duration,
            table: SampleTableHandle(SampleTable::new(&grid)),
        });
        s
    }

    fn empty(profile: &ControlProfile) -> Self {
        ControlSignal {
            grid: profile.grid().clone(),
            pieces: Vec::new(),
            profile_samples: profile.samples().to_vec(),
        }
    }

    /// Appends a segment starting where the previous one ends.
    pub fn push(&mut self, seg: Segment) {
        let start = self.duration();
        self.pieces.push((start, seg));
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, &Segment)> {
        self.pieces.iter().map(|(t, s)| (*t, s))
    }

    pub fn duration(&self) -> f64 {
        self.pieces.last().map_or(0.0, |(t, s)| t + s.duration())
    }

    /// Concatenation `self` then `other`.
    pub fn then(mut self, other: ControlSignal) -> Self {
        for (_, seg) in other.pieces {
            self.push(seg);
        }
        self
    }

    fn locate(&self, at: StageTime) -> Option<(f64, &Segment)> {
        let probe = if at.dt > 0.0 { at.step_mid() } else { at.t };
        let idx = self.pieces.partition_point(|(start, _)| *start <= probe);
        let (start, seg) = self.pieces.get(idx.checked_sub(1)?)?;
        let s = (at.t - start).clamp(0.0, seg.duration());
        if probe > start + seg.duration() && idx == self.pieces.len() {
            return None;
        }
        Some((s, seg))
    }

    /// `h` at a stage time; zero outside the control window.
    pub fn h_at(&self, at: StageTime, profile: &ControlProfile) -> Result<Field> {
        match self.locate(at) {
            Some((s, seg)) => self.segment_h(seg, s, profile),
            None => Ok(Field::zeros(&self.grid)),
        }
    }

    /// `h` evaluated at plain times (no step context).
    pub fn h(&self, t: f64, profile: &ControlProfile) -> Result<Field> {
        self.h_at(StageTime::at(t), profile)
    }

    /// Samples `h` at `count + 1` equally spaced times, the portable form
    /// written to control files.
    pub fn to_dump(&self, profile: &ControlProfile, count: usize) -> Result<ControlDump> {
        let count = count.max(1);
        let total = self.duration();
        let mut times = Vec::with_capacity(count + 1);
        let mut values = Vec::with_capacity(count + 1);
        for i in 0..=count {
            let t = total * i as f64 / count as f64;
            times.push(t);
            values.push(self.h(t, profile)?.to_physical());
        }
        Ok(ControlDump {
            n: self.grid.n(),
            duration: total,
            profile: self.profile_samples.clone(),
            times,
            values,
        })
    }

    /// Rebuilds a sampled control from a dump.
    pub fn from_dump(dump: &ControlDump, profile: &ControlProfile) -> Result<Self> {
        let grid = profile.grid();
        if dump.n != grid.n() {
            return Err(KdvError::Dimension {
                expected: grid.n(),
                got: dump.n,
            });
        }
        if dump.times.len() != dump.values.len() {
            return Err(KdvError::Config("control dump: times and values differ in length".into()));
        }
        if dump.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KdvError::Config("control dump: times must increase".into()));
        }
        let mut table = SampleTable::new(grid);
        for (t, v) in dump.times.iter().zip(&dump.values) {
            table.push(*t, &Field::from_physical(v, grid)?);
        }
        let mut s = Self::empty(profile);
        s.push(Segment::Sampled {
            duration: dump.duration,
            table: SampleTableHandle(table),
        });
        Ok(s)
    }

    /// `(∫ ‖h‖₀² dt)^{1/2}` by composite Simpson on `2m` panels per segment.
    pub fn l2_norm(&self, profile: &ControlProfile, m: usize) -> Result<f64> {
        let mut total = 0.0;
        for (_, seg) in &self.pieces {
            let n = 2 * m.max(1);
            let h = seg.duration() / n as f64;
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let v = self.segment_h(seg, i as f64 * h, profile)?;
                total += w * h / 3.0 * v.l2_norm().powi(2);
            }
        }
        Ok(total.sqrt())
    }

    fn segment_h(&self, seg: &Segment, s: f64, profile: &ControlProfile) -> Result<Field> {
        match seg {
            Segment::Hum { duration, phi, sym } => profile.apply_g(&w_propagate(phi, s - duration, sym)),
            Segment::Trajectory { sign, sym, table, .. } => {
                let y = w_propagate(&table.0.eval(&self.grid, s), s, sym);
                Ok(profile.apply_g(&y)?.scale(*sign))
            }
            Segment::Sampled { table, .. } => Ok(table.0.eval(&self.grid, s)),
        }
    }

    /// The forcing `G h(t)` for the stepper.
    pub fn forcing<'a>(&'a self, profile: &'a ControlProfile) -> OpenLoop<'a> {
        OpenLoop { signal: self, profile }
    }
}

/// Time-stamped samples of `h` in physical space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlDump {
    pub n: usize,
    pub duration: f64,
    pub profile: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Open-loop forcing `G h(t)`.
pub struct OpenLoop<'a> {
    signal: &'a ControlSignal,
    profile: &'a ControlProfile,
}

impl Forcing for OpenLoop<'_> {
    fn force(&self, _u: &Field, at: StageTime) -> Result<Field> {
        let h = self.signal.h_at(at, self.profile)?;
        self.profile.apply_g(&h)
    }

    fn kind(&self) -> DriveKind {
        DriveKind::OpenLoop
    }
}

/// Solves `G_T φ = rhs`, switching to a Tikhonov shift when the Gramian is
/// too ill-conditioned for a plain solve.
pub fn gramian_solve(gt: &OperatorMatrix, rhs: &Field, alpha: Option<f64>) -> Result<Field> {
    let auto = gt.condition() > MAX_CONDITION;
    match alpha {
        Some(a) if a > 0.0 => gt.solve_regularized(rhs, a),
        _ if auto => {
            let trace: f64 = gt.eigenvalues().iter().sum();
            let a = 1e-12 * trace / gt.dim() as f64;
            let bias = a / (gt.min_eigenvalue().max(0.0) + a);
            warn!(
                "Gramian condition {:.3e} exceeds {:.0e}; regularizing with alpha = {a:.3e} \
                 (relative bias up to {bias:.3e} on the weakest mode)",
                gt.condition(),
                MAX_CONDITION
            );
            gt.solve_regularized(rhs, a)
        }
        _ => gt.solve(rhs),
    }
}

/// Minimal-norm control steering the linear system from `v0` to `v1` in
/// time `t`: `h(s) = G W(s − t) φ` with `G_T φ = v1 − W(t) v0`.
pub fn hum_linear(
    v0: &Field,
    v1: &Field,
    t: f64,
    gt: &OperatorMatrix,
    p: &ControlProfile,
    sym: &LinearSymbol,
) -> Result<ControlSignal> {
    hum_linear_with(v0, v1, t, gt, p, sym, None)
}

pub fn hum_linear_with(
    v0: &Field,
    v1: &Field,
    t: f64,
    gt: &OperatorMatrix,
    p: &ControlProfile,
    sym: &LinearSymbol,
    alpha: Option<f64>,
) -> Result<ControlSignal> {
    for (name, v) in [("v0", v0), ("v1", v1)] {
        if v.mean().abs() > 1e-10 * (1.0 + v.l2_norm()) {
            return Err(KdvError::param(name, "must be mean-free"));
        }
    }
    let target = (v1 - &w_propagate(v0, t, sym)).mean_project();
    let phi = gramian_solve(gt, &target, alpha)?;
    let mut s = ControlSignal::empty(p);
    s.push(Segment::Hum {
        duration: t,
        phi,
        sym: *sym,
    });
    Ok(s)
}

/// Endpoints and parameters of a steering task, in original variables.
#[derive(Clone, Debug)]
pub struct SteeringProblem {
    pub u0: Field,
    pub u1: Field,
    /// Horizon of the local (linear or Picard) steering leg.
    pub horizon: f64,
    pub mu: f64,
    pub tolerance: f64,
    pub max_picard: usize,
}

impl SteeringProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(KdvError::param("horizon", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(KdvError::param("tolerance", "must be positive"));
        }
        if self.u0.grid() != self.u1.grid() {
            return Err(KdvError::Dimension {
                expected: self.u0.grid().n(),
                got: self.u1.grid().n(),
            });
        }
        for (name, u) in [("u0", &self.u0), ("u1", &self.u1)] {
            if (u.mean() - self.mu).abs() > 1e-10 {
                return Err(KdvError::param(
                    name,
                    format!("mean {} differs from mu = {}", u.mean(), self.mu),
                ));
            }
        }
        Ok(())
    }

    fn shifted(&self) -> (Field, Field) {
        (self.u0.mean_project(), self.u1.mean_project())
    }
}

/// Numerical knobs shared by the steering routines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerOptions {
    /// Largest `‖u − μ‖₀` accepted by local steering.
    pub smallness: f64,
    /// Level the stabilization stages must reach.
    pub epsilon: f64,
    pub max_stabilization_time: f64,
    /// Steps between stored states of the stabilization stages.
    pub sample_stride: usize,
    /// Fixed Tikhonov shift for Gramian solves; automatic when absent.
    pub regularization: Option<f64>,
}

impl Default for SteerOptions {
    fn default() -> Self {
        SteerOptions {
            smallness: 0.3,
            epsilon: 0.1,
            max_stabilization_time: 2000.0,
            sample_stride: 4,
            regularization: None,
        }
    }
}

impl SteerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.smallness > 0.0) {
            return Err(KdvError::param("smallness", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.smallness) {
            return Err(KdvError::param("epsilon", "must lie in (0, smallness)"));
        }
        if !(self.max_stabilization_time > 0.0) {
            return Err(KdvError::param("max_stabilization_time", "must be positive"));
        }
        if self.sample_stride == 0 {
            return Err(KdvError::param("sample_stride", "must be at least 1"));
        }
        Ok(())
    }
}

/// Everything except the endpoints: where the control acts and how the
/// equation is integrated.
#[derive(Clone, Debug)]
pub struct Machinery {
    pub profile: ControlProfile,
    pub stepper: StepperConfig,
    pub options: SteerOptions,
}

/// Outcome of Picard steering.
#[derive(Clone, Debug)]
pub struct LocalSteering {
    pub control: ControlSignal,
    /// `‖w(T) − u1‖₀` before each correction, then after the last one.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl LocalSteering {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("at least one residual")
    }
}

fn endpoint(stepper: &Stepper, w0: &Field, signal: &ControlSignal, p: &ControlProfile) -> Result<Field> {
    let opts = SampleOptions {
        sample_every: usize::MAX,
        s: 0.0,
        keep_fields: false,
    };
    let rec = simulate_with(stepper, w0, signal.duration(), &signal.forcing(p), &opts)?;
    Ok(rec.final_state)
}

/// Horizon rounded to a whole number of steps.
fn aligned(t: f64, dt: f64) -> f64 {
    step_count(t, dt) as f64 * dt
}

/// Picard correction around the linear model: each pass adds the linear
/// minimal-norm control that would remove the current terminal miss.
pub fn steer_local(pb: &SteeringProblem, m: &Machinery) -> Result<LocalSteering> {
    pb.validate()?;
    m.options.validate()?;
    let (w0, w1) = pb.shifted();
    for (name, w) in [("u0", &w0), ("u1", &w1)] {
        if w.l2_norm() > m.options.smallness {
            return Err(KdvError::param(
                name,
                format!(
                    "‖{name} − μ‖₀ = {:.3e} exceeds the local smallness threshold {}",
                    w.l2_norm(),
                    m.options.smallness
                ),
            ));
        }
    }
    let sym = LinearSymbol::new(pb.mu);
    let stepper = Stepper::new(w0.grid(), m.stepper, sym)?;
    let t = aligned(pb.horizon, m.stepper.dt);
    let gt = build_control_gramian(&m.profile, t, &sym)?;
    picard(&stepper, &w0, &w1, t, &gt, pb, m)
}

fn picard(
    stepper: &Stepper,
    w0: &Field,
    w1: &Field,
    t: f64,
    gt: &OperatorMatrix,
    pb: &SteeringProblem,
    m: &Machinery,
) -> Result<LocalSteering> {
    let sym = *stepper.symbol();
    let grid = w0.grid();
    let mut phi = Field::zeros(grid);
    let signal_for = |phi: &Field| {
        let mut s = ControlSignal::empty(&m.profile);
        s.push(Segment::Hum {
            duration: t,
            phi: phi.clone(),
            sym,
        });
        s
    };
    let mut residuals = Vec::new();
    let mut rises = 0;
    for iter in 0..=pb.max_picard {
        let signal = signal_for(&phi);
        let end = if w0.l2_norm() == 0.0 && phi.l2_norm() == 0.0 {
            Field::zeros(grid)
        } else {
            endpoint(stepper, w0, &signal, &m.profile)?
        };
        let miss = (w1 - &end).mean_project();
        let r = miss.l2_norm();
        if let Some(&prev) = residuals.last() {
            rises = if r > prev { rises + 1 } else { 0 };
        }
        residuals.push(r);
        info!("picard iteration {iter}: residual {r:.3e}");
        if r <= pb.tolerance {
            return Ok(LocalSteering {
                control: signal,
                residuals,
                iterations: iter,
            });
        }
        if rises >= 3 {
            return Err(KdvError::Divergence {
                iterations: iter,
                residual: r,
            });
        }
        if iter == pb.max_picard {
            return Err(KdvError::NotConverged {
                iterations: iter,
                residual: r,
                tolerance: pb.tolerance,
            });
        }
        phi = &phi + &gramian_solve(gt, &miss, m.options.regularization)?;
    }
    unreachable!("loop returns on its last iteration")
}

/// A damped run recorded until it is `epsilon`-small.
struct Stabilized {
    table: SampleTable,
    steps: usize,
    end: Field,
}

fn stabilize(
    stepper: &Stepper,
    w0: &Field,
    law: &FeedbackLaw,
    opts: &SteerOptions,
    stage: &'static str,
) -> Result<Stabilized> {
    let dt = stepper.config().dt;
    let max_steps = step_count(opts.max_stabilization_time, dt);
    let mut table = SampleTable::new(w0.grid());
    let mut u = w0.clone();
    table.push(0.0, &u);
    let mut n = 0;
    while u.l2_norm() > opts.epsilon {
        if n >= max_steps {
            return Err(KdvError::StabilizationTimeout {
                stage,
                epsilon: opts.epsilon,
                max_time: opts.max_stabilization_time,
            });
        }
        u = stepper.step(&u, n as f64 * dt, law)?;
        n += 1;
        if n % opts.sample_stride == 0 {
            table.push(n as f64 * dt, &u);
        }
    }
    if n % opts.sample_stride != 0 {
        table.push(n as f64 * dt, &u);
    }
    Ok(Stabilized {
        table,
        steps: n,
        end: u,
    })
}

/// Per-stage summary of a global steering run.
#[derive(Clone, Debug, Serialize)]
pub struct GlobalReport {
    pub stage_a_time: f64,
    pub stage_b_time: f64,
    pub stage_c_time: f64,
    pub total_time: f64,
    pub picard_residuals: Vec<f64>,
    /// Distance between the reversed stage-B replay endpoint and `u1`.
    pub reversal_error: f64,
    /// `‖u(T_total) − u1‖₀` for the replay of the full control from `u0`.
    pub replay_error: f64,
    /// Largest `|[u(t)] − [u0]|` over the full replay.
    pub mass_drift: f64,
}

pub struct GlobalSteering {
    pub control: ControlSignal,
    pub report: GlobalReport,
    pub replay: TrajectoryRecord,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ KdvError::StabilizationTimeout { .. } => e,
        e => KdvError::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Steers arbitrary data with equal means: damp `u0` to a small state (A),
/// damp the reflection of `u1` and run it backwards in time (B), and join
/// the two small states by Picard steering (C). Needs an even profile so
/// that the reflected damping is again a control supported in the arc.
pub fn steer_global(pb: &SteeringProblem, m: &Machinery, sample_every: usize) -> Result<GlobalSteering> {
    pb.validate()?;
    m.options.validate()?;
    if !m.profile.is_even() {
        return Err(KdvError::param(
            "profile",
            "global steering needs an even profile, g(−x) = g(x); center the arc at 0 or π",
        ));
    }
    let (w0, w1) = pb.shifted();
    let sym = LinearSymbol::new(pb.mu);
    let stepper = Stepper::new(w0.grid(), m.stepper, sym)?;
    let dt = m.stepper.dt;
    let grid = w0.grid().clone();
    let law = FeedbackLaw::damping(&m.profile);

    let a = stabilize(&stepper, &w0, &law, &m.options, "A")?;
    let b = stabilize(&stepper, &w1.reflect(), &law, &m.options, "B")?;
    let (ta, tb) = (a.steps as f64 * dt, b.steps as f64 * dt);
    info!("stage A reached {:.3e} at t = {ta}", a.end.l2_norm());
    info!("stage B reached {:.3e} at t = {tb}", b.end.l2_norm());

    let mut seg_a = SampleTable::new(&grid);
    for i in 0..a.table.len() {
        let s = a.table.times[i];
        seg_a.push(s, &w_propagate(&a.table.sample(&grid, i), -s, &sym));
    }
    let mut seg_b = SampleTable::new(&grid);
    for i in (0..b.table.len()).rev() {
        let s = tb - b.table.times[i];
        let y = b.table.sample(&grid, i).reflect();
        seg_b.push(s.max(0.0), &w_propagate(&y, -s, &sym));
    }
    let mut first = ControlSignal::empty(&m.profile);
    first.push(Segment::Trajectory {
        duration: ta,
        sign: -1.0,
        sym,
        table: SampleTableHandle(seg_a),
    });
    let mut last = ControlSignal::empty(&m.profile);
    last.push(Segment::Trajectory {
        duration: tb,
        sign: 1.0,
        sym,
        table: SampleTableHandle(seg_b),
    });

    // Join from where the open-loop replay of stage A actually lands.
    let a_end = if ta > 0.0 {
        stage("A", endpoint(&stepper, &w0, &first, &m.profile))?
    } else {
        w0.clone()
    };
    let b_start = b.end.reflect();
    let reversal_error = if tb > 0.0 {
        (&stage("B", endpoint(&stepper, &b_start, &last, &m.profile))? - &w1).l2_norm()
    } else {
        0.0
    };
    let local_pb = SteeringProblem {
        u0: a_end.axpy(1.0, &Field::constant(&grid, pb.mu)),
        u1: b_start.axpy(1.0, &Field::constant(&grid, pb.mu)),
        ..pb.clone()
    };
    let local = stage("C", steer_local(&local_pb, m))?;
    let tc = local.control.duration();

    let control = first.then(local.control.clone()).then(last);
    let total = control.duration();
    let opts = SampleOptions {
        sample_every: sample_every.max(1),
        s: 0.0,
        keep_fields: false,
    };
    let replay = simulate_with(&stepper, &w0, total, &control.forcing(&m.profile), &opts)?;
    let replay_error = (&replay.final_state - &w1).l2_norm();
    let mass_drift = replay
        .mass
        .iter()
        .fold(0.0f64, |d, v| d.max((v - w0.mean()).abs()));
    let report = GlobalReport {
        stage_a_time: ta,
        stage_b_time: tb,
        stage_c_time: tc,
        total_time: total,
        picard_residuals: local.residuals,
        reversal_error,
        replay_error,
        mass_drift,
    };
    Ok(GlobalSteering {
        control,
        report,
        replay,
    })
}

/// Replays an open-loop control from `u0` (shifted variable).
pub fn replay(
    u0: &Field,
    control: &ControlSignal,
    m: &Machinery,
    sym: &LinearSymbol,
    opts: &SampleOptions,
) -> Result<TrajectoryRecord> {
    let stepper = Stepper::new(u0.grid(), m.stepper, *sym)?;
    simulate_with(&stepper, u0, control.duration(), &control.forcing(&m.profile), opts)
}

//! Closed-loop control laws: static damping `−GG*u`, the rapid-decay law
//! `−K_λ u = −GG* L_λ⁻¹ u`, and a time-varying law that switches smoothly
//! between the two depending on time and on the size of the state.

use serde::{Deserialize, Serialize};

use crate::control::{build_l_lambda_with_horizon, ControlProfile, FeedbackGain, OperatorKind, OperatorMatrix};
use crate::dynamics::{DriveKind, Forcing, LinearSymbol, StageTime};
use crate::error::{KdvError, Result};
use crate::spectral::Field;

/// `C^∞` transition from 0 at `x ≤ 0` to 1 at `x ≥ 1`.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// 2-periodic switch: 1 on `[δ, 1−δ]`, 0 on `[1, 2]`, smooth ramps between.
pub fn theta(t: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.1) {
        return Err(KdvError::param("delta", format!("must lie in (0, 1/10), got {delta}")));
    }
    let tau = t.rem_euclid(2.0);
    Ok(if tau >= 1.0 {
        0.0
    } else if tau < delta {
        smoothstep(tau / delta)
    } else if tau > 1.0 - delta {
        smoothstep((1.0 - tau) / delta)
    } else {
        1.0
    })
}

/// Cutoff in the squared state norm: 1 for `r ≤ r₀`, 0 for `r ≥ 1`.
pub fn rho(r: f64, r0: f64) -> Result<f64> {
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(KdvError::param("r0", format!("must lie in (0, 1), got {r0}")));
    }
    if !(r >= 0.0) {
        return Err(KdvError::param("r", format!("must be nonnegative, got {r}")));
    }
    Ok(1.0 - smoothstep((r - r0) / (1.0 - r0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingParams {
    pub lambda: f64,
    /// Switching period `T`; the law alternates every `T` time units.
    pub t_switch: f64,
    /// Ramp width `δ` of the time switch, in units of `T`.
    pub delta: f64,
    /// Lower plateau `r₀` of the state cutoff.
    pub r0: f64,
    /// Sobolev index of the norm fed to the cutoff.
    pub s: f64,
}

impl Default for TimeVaryingParams {
    fn default() -> Self {
        TimeVaryingParams {
            lambda: 2.0,
            t_switch: 4.0,
            delta: 0.05,
            r0: 0.5,
            s: 0.0,
        }
    }
}

impl TimeVaryingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(KdvError::param("lambda", "must be positive"));
        }
        if !(self.t_switch > 0.0) {
            return Err(KdvError::param("t_switch", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 0.1) {
            return Err(KdvError::param("delta", "must lie in (0, 1/10)"));
        }
        if !(self.r0 > 0.0 && self.r0 < 1.0) {
            return Err(KdvError::param("r0", "must lie in (0, 1)"));
        }
        if !(self.s >= 0.0) {
            return Err(KdvError::param("s", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LawKind {
    None,
    Damping,
    GramianRate { lambda: f64 },
    TimeVarying(TimeVaryingParams),
}

/// A feedback law together with the operators it needs.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    kind: LawKind,
    profile: Option<ControlProfile>,
    gain: Option<FeedbackGain>,
}

fn require_rate_operator(l: &OperatorMatrix) -> Result<f64> {
    match l.kind() {
        OperatorKind::LLambda { lambda, .. } if lambda > 0.0 => {
            if l.min_eigenvalue() <= 0.0 {
                return Err(KdvError::NotPositiveDefinite {
                    min_eigenvalue: l.min_eigenvalue(),
                });
            }
            Ok(lambda)
        }
        other => Err(KdvError::Usage(format!(
            "rapid-decay law needs L_lambda with lambda > 0, got {other:?}"
        ))),
    }
}

impl FeedbackLaw {
    pub fn none() -> Self {
        FeedbackLaw {
            kind: LawKind::None,
            profile: None,
            gain: None,
        }
    }

    pub fn damping(profile: &ControlProfile) -> Self {
        FeedbackLaw {
            kind: LawKind::Damping,
            profile: Some(profile.clone()),
            gain: None,
        }
    }

    pub fn gramian_rate(profile: &ControlProfile, l: &OperatorMatrix) -> Result<Self> {
        let lambda = require_rate_operator(l)?;
        Ok(FeedbackLaw {
            kind: LawKind::GramianRate { lambda },
            profile: Some(profile.clone()),
            gain: Some(FeedbackGain::new(profile, l)?),
        })
    }

    pub fn time_varying(profile: &ControlProfile, l: &OperatorMatrix, params: TimeVaryingParams) -> Result<Self> {
        params.validate()?;
        let lambda = require_rate_operator(l)?;
        if (lambda - params.lambda).abs() > 1e-15 * lambda {
            return Err(KdvError::Usage(format!(
                "operator was built for lambda = {lambda}, law asks for {}",
                params.lambda
            )));
        }
        Ok(FeedbackLaw {
            kind: LawKind::TimeVarying(params),
            profile: Some(profile.clone()),
            gain: Some(FeedbackGain::new(profile, l)?),
        })
    }

    /// Builds the law and any operator it needs; `horizon` is the `L_λ`
    /// integration horizon.
    pub fn build(kind: LawKind, profile: &ControlProfile, sym: &LinearSymbol, horizon: f64) -> Result<Self> {
        match kind {
            LawKind::None => Ok(Self::none()),
            LawKind::Damping => Ok(Self::damping(profile)),
            LawKind::GramianRate { lambda } => {
                let l = build_l_lambda_with_horizon(profile, lambda, horizon, sym)?;
                Self::gramian_rate(profile, &l)
            }
            LawKind::TimeVarying(params) => {
                params.validate()?;
                let l = build_l_lambda_with_horizon(profile, params.lambda, horizon, sym)?;
                Self::time_varying(profile, &l, params)
            }
        }
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    pub fn profile(&self) -> Option<&ControlProfile> {
        self.profile.as_ref()
    }

    pub fn gain(&self) -> Option<&FeedbackGain> {
        self.gain.as_ref()
    }

    fn ggstar(&self, u: &Field) -> Result<Field> {
        let p = self.profile.as_ref().expect("law with control has a profile");
        p.apply_g(&p.apply_gstar(u)?)
    }

    fn k_lambda(&self, u: &Field) -> Field {
        self.gain.as_ref().expect("rate law has a gain").apply(u)
    }

    /// The switching weights `(ρ·θ(t/T), ρ·θ((t−T)/T), 1−ρ)` multiplying
    /// `K_λu`, `GG*u` and `GG*u` respectively.
    pub fn switch_weights(params: &TimeVaryingParams, u: &Field, t: f64) -> Result<(f64, f64, f64)> {
        let r = u.mean_project().hs_norm(params.s).powi(2);
        let cut = rho(r, params.r0)?;
        let on = theta(t / params.t_switch, params.delta)?;
        let off = theta((t - params.t_switch) / params.t_switch, params.delta)?;
        Ok((cut * on, cut * off, 1.0 - cut))
    }

    /// Control term `−K(u, t)` to add to the right-hand side.
    pub fn eval(&self, u: &Field, t: f64) -> Result<Field> {
        let u = u.mean_project();
        let out = match self.kind {
            LawKind::None => Field::zeros(u.grid()),
            LawKind::Damping => self.ggstar(&u)?,
            LawKind::GramianRate { .. } => self.k_lambda(&u),
            LawKind::TimeVarying(params) => {
                let (w_rate, w_damp_on, w_damp_off) = Self::switch_weights(&params, &u, t)?;
                let w_damp = w_damp_on + w_damp_off;
                match (w_rate != 0.0, w_damp != 0.0) {
                    (false, false) => Field::zeros(u.grid()),
                    (true, false) if w_rate == 1.0 => self.k_lambda(&u),
                    (false, true) if w_damp == 1.0 => self.ggstar(&u)?,
                    _ => {
                        let mut acc = Field::zeros(u.grid());
                        if w_rate != 0.0 {
                            acc = acc.axpy(w_rate, &self.k_lambda(&u));
                        }
                        if w_damp != 0.0 {
                            acc = acc.axpy(w_damp, &self.ggstar(&u)?);
                        }
                        acc
                    }
                }
            }
        };
        Ok(-&out)
    }
}

/// `−K(u, t)` for any law variant.
pub fn eval_feedback(law: &FeedbackLaw, u: &Field, t: f64) -> Result<Field> {
    law.eval(u, t)
}

impl Forcing for FeedbackLaw {
    fn force(&self, u: &Field, at: StageTime) -> Result<Field> {
        self.eval(u, at.t)
    }

    fn kind(&self) -> DriveKind {
        match self.kind {
            LawKind::None => DriveKind::None,
            LawKind::Damping => DriveKind::Damping,
            LawKind::GramianRate { .. } => DriveKind::GramianRate,
            LawKind::TimeVarying(_) => DriveKind::TimeVarying,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::build_l_lambda;
    use crate::spectral::SpectralGrid;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(n: usize) -> (SpectralGrid, ControlProfile, LinearSymbol) {
        let g = SpectralGrid::new(n).unwrap();
        let p = ControlProfile::new(PI, PI / 2.0, &g).unwrap();
        (g, p, LinearSymbol::new(0.0))
    }

    fn random_state(g: &SpectralGrid, norm: f64, rng: &mut ChaCha8Rng) -> Field {
        let modes: Vec<_> = (1..=10)
            .map(|k| (k, Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
            .collect();
        let f = Field::from_modes(g, &modes).unwrap();
        f.scale(norm / f.l2_norm())
    }

    #[test]
    fn theta_plateaus_and_period() {
        assert_eq!(theta(0.5, 0.05).unwrap(), 1.0);
        assert_eq!(theta(1.5, 0.05).unwrap(), 0.0);
        assert_eq!(theta(0.0, 0.05).unwrap(), 0.0);
        for i in 0..200 {
            let t = -3.0 + i as f64 * 0.0371;
            let a = theta(t, 0.07).unwrap();
            let b = theta(t + 2.0, 0.07).unwrap();
            assert!((a - b).abs() < 1e-12, "t={t}");
            assert!((0.0..=1.0).contains(&a));
        }
        assert!(theta(0.5, 0.1).is_err());
        assert!(theta(0.5, 0.0).is_err());
    }

    #[test]
    fn theta_ramps_are_monotone() {
        let d = 0.05;
        let mut prev = 0.0;
        for i in 0..=100 {
            let v = theta(d * i as f64 / 100.0, d).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = theta(1.0 - d + d * i as f64 / 100.0, d).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn rho_plateaus_and_monotone() {
        let r0 = 0.4;
        assert_eq!(rho(r0 / 2.0, r0).unwrap(), 1.0);
        assert_eq!(rho(2.0, r0).unwrap(), 0.0);
        let mut prev = 1.0;
        for i in 0..=300 {
            let v = rho(i as f64 / 200.0, r0).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        assert!(rho(-0.1, r0).is_err());
        assert!(rho(0.5, 1.0).is_err());
    }

    #[test]
    fn zero_state_gives_zero_control() {
        let (g, p, sym) = setup(32);
        let z = Field::zeros(&g);
        let kinds = [
            LawKind::None,
            LawKind::Damping,
            LawKind::GramianRate { lambda: 1.0 },
            LawKind::TimeVarying(TimeVaryingParams::default()),
        ];
        for kind in kinds {
            let law = FeedbackLaw::build(kind, &p, &sym, 1.0).unwrap();
            assert_eq!(law.eval(&z, 0.7).unwrap().l2_norm(), 0.0);
        }
    }

    #[test]
    fn large_states_get_pure_damping() {
        let (g, p, sym) = setup(32);
        let params = TimeVaryingParams::default();
        let tv = FeedbackLaw::build(LawKind::TimeVarying(params), &p, &sym, 1.0).unwrap();
        let damp = FeedbackLaw::damping(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..20 {
            let u = random_state(&g, 1.0 + 0.1 * i as f64, &mut rng);
            let t = 0.37 * i as f64;
            assert_eq!(tv.eval(&u, t).unwrap().coeffs(), damp.eval(&u, t).unwrap().coeffs());
        }
    }

    #[test]
    fn output_is_mean_free_and_localized() {
        let (g, p, sym) = setup(64);
        let law = FeedbackLaw::build(LawKind::TimeVarying(TimeVaryingParams::default()), &p, &sym, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10 {
            let u = random_state(&g, 0.3 + 0.2 * i as f64, &mut rng);
            let out = law.eval(&u, 0.9 * i as f64).unwrap();
            assert_eq!(out.mean(), 0.0);
            // outside the support only the removed Nyquist pattern c(-1)^j survives
            let values = out.to_physical();
            let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut alt = None;
            for (j, (v, gv)) in values.iter().zip(p.samples()).enumerate() {
                if *gv == 0.0 {
                    let c = if j % 2 == 0 { *v } else { -*v };
                    let c0 = *alt.get_or_insert(c);
                    assert!((c - c0).abs() <= 1e-12 * top);
                }
            }
        }
    }

    #[test]
    fn time_varying_is_lipschitz_on_bounded_sets() {
        let (g, p, sym) = setup(32);
        let law = FeedbackLaw::build(LawKind::TimeVarying(TimeVaryingParams::default()), &p, &sym, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for i in 0..50 {
            let a = random_state(&g, rng.random_range(0.0..2.0), &mut rng);
            let b = random_state(&g, rng.random_range(0.0..2.0), &mut rng);
            let t = 0.31 * i as f64;
            let d = (&law.eval(&a, t).unwrap() - &law.eval(&b, t).unwrap()).l2_norm();
            worst = worst.max(d / (&a - &b).l2_norm());
        }
        log::info!("time-varying Lipschitz estimate {worst}");
        assert!(worst.is_finite() && worst > 0.0);
    }

    #[test]
    fn rate_law_needs_positive_lambda_operator() {
        let (_, p, sym) = setup(16);
        let l0 = build_l_lambda(&p, 0.0, &sym).unwrap();
        assert!(FeedbackLaw::gramian_rate(&p, &l0).is_err());
        let l = build_l_lambda(&p, 1.0, &sym).unwrap();
        let bad = TimeVaryingParams {
            lambda: 1.0,
            delta: 0.2,
            ..Default::default()
        };
        assert!(FeedbackLaw::time_varying(&p, &l, bad).is_err());
    }
}

use std::f64::consts::PI;

use kdv_core::control::{build_control_gramian, ControlProfile};
use kdv_core::controllability::{
    hum_linear, replay, steer_global, steer_local, ControlSignal, Machinery, SteerOptions, SteeringProblem,
};
use kdv_core::dynamics::{simulate, w_propagate, FnForcing, LinearSymbol, SampleOptions, StepperConfig};
use kdv_core::experiment::InitialSpec;
use kdv_core::feedback::FeedbackLaw;
use kdv_core::spectral::{Field, SpectralGrid};
use kdv_core::KdvError;
use num_complex::Complex64;

fn setup(n: usize) -> (SpectralGrid, ControlProfile) {
    let g = SpectralGrid::new(n).unwrap();
    let p = ControlProfile::new(PI, PI / 2.0, &g).unwrap();
    (g, p)
}

fn random(g: &SpectralGrid, band: i64, seed: u64, l2: f64) -> Field {
    let mut spec = InitialSpec::random(band, seed);
    spec.scale_to_l2 = Some(l2);
    spec.build(g).unwrap()
}

fn machinery(p: &ControlProfile, stepper: StepperConfig) -> Machinery {
    Machinery {
        profile: p.clone(),
        stepper,
        options: SteerOptions::default(),
    }
}

fn end_only() -> SampleOptions {
    SampleOptions {
        sample_every: usize::MAX,
        s: 0.0,
        keep_fields: false,
    }
}

/// `∫₀ᵀ⟨a(s), b(s)⟩ ds` by composite Simpson.
fn time_inner(a: impl Fn(f64) -> Field, b: impl Fn(f64) -> Field, t: f64, m: usize) -> Complex64 {
    let h = t / (2 * m) as f64;
    (0..=2 * m)
        .map(|i| {
            let w = if i == 0 || i == 2 * m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let s = i as f64 * h;
            a(s).inner(&b(s)) * (w * h / 3.0)
        })
        .sum()
}

#[test]
fn hum_between_zero_states_is_zero() {
    let (g, p) = setup(16);
    let sym = LinearSymbol::new(0.0);
    let gt = build_control_gramian(&p, 1.0, &sym).unwrap();
    let z = Field::zeros(&g);
    let c = hum_linear(&z, &z, 1.0, &gt, &p, &sym).unwrap();
    for t in [0.0, 0.3, 1.0] {
        assert_eq!(c.h(t, &p).unwrap().l2_norm(), 0.0);
    }
}

#[test]
fn hum_along_free_motion_is_zero() {
    let (g, p) = setup(16);
    let sym = LinearSymbol::new(0.4);
    let gt = build_control_gramian(&p, 1.0, &sym).unwrap();
    let v0 = random(&g, 6, 3, 1.0);
    let v1 = w_propagate(&v0, 1.0, &sym);
    let c = hum_linear(&v0, &v1, 1.0, &gt, &p, &sym).unwrap();
    assert!(c.l2_norm(&p, 200).unwrap() <= 1e-12);
}

#[test]
fn hum_rejects_states_with_mean() {
    let (g, p) = setup(16);
    let sym = LinearSymbol::new(0.0);
    let gt = build_control_gramian(&p, 1.0, &sym).unwrap();
    let v = Field::constant(&g, 1.0);
    let z = Field::zeros(&g);
    assert!(matches!(hum_linear(&v, &z, 1.0, &gt, &p, &sym), Err(KdvError::Parameter { .. })));
}

#[test]
fn hum_replay_reaches_target() {
    let (g, p) = setup(32);
    let sym = LinearSymbol::new(0.0);
    let gt = build_control_gramian(&p, 1.0, &sym).unwrap();
    let v0 = random(&g, 6, 1, 1.0);
    let v1 = random(&g, 6, 2, 0.5);
    let c = hum_linear(&v0, &v1, 1.0, &gt, &p, &sym).unwrap();
    let m = machinery(&p, StepperConfig::with_dt(1e-4).linear());
    let rec = replay(&v0, &c, &m, &sym, &end_only()).unwrap();
    let err = (&rec.final_state - &v1).l2_norm() / v1.l2_norm();
    assert!(err <= 1e-6, "relative error {err:e}");
}

/// Any control steering 0 to 0 is L²-orthogonal to the minimal-norm control,
/// so adding it cannot shorten the control.
#[test]
fn hum_control_is_orthogonal_to_null_controls() {
    let (g, p) = setup(16);
    let sym = LinearSymbol::new(0.0);
    let t = 1.0;
    let gt = build_control_gramian(&p, t, &sym).unwrap();
    let v0 = random(&g, 5, 4, 1.0);
    let v1 = random(&g, 5, 5, 1.0);
    let h = hum_linear(&v0, &v1, t, &gt, &p, &sym).unwrap();

    // A constant-in-time control c reaches ∫₀ᵀ W(T−s) G c ds; close form per mode.
    let c = random(&g, 7, 6, 0.7);
    let gc = p.apply_g(&c).unwrap();
    let reach: Vec<(i64, Complex64)> = (1..=7)
        .map(|k| {
            let w = sym.omega(k);
            let factor = (Complex64::new(0.0, w * t).exp() - 1.0) / Complex64::new(0.0, w);
            (k, gc.coeff(k) * factor)
        })
        .collect();
    let reach = Field::from_modes(&g, &reach).unwrap();
    let fix = hum_linear(&Field::zeros(&g), &(-&reach), t, &gt, &p, &sym).unwrap();
    let null = |s: f64| &c + &fix.h(s, &p).unwrap();

    // the null control really returns to zero
    let m = machinery(&p, StepperConfig::with_dt(1e-4).linear());
    let forcing = FnForcing(|_u: &Field, at: kdv_core::dynamics::StageTime| p.apply_g(&null(at.t)));
    let rec = simulate(&Field::zeros(&g), t, &m.stepper, &sym, &forcing, &end_only()).unwrap();
    assert!(rec.final_state.l2_norm() <= 1e-8, "null control end {:e}", rec.final_state.l2_norm());

    let hh = |s: f64| h.h(s, &p).unwrap();
    let cross = time_inner(&hh, &null, t, 2000);
    let hn = time_inner(&hh, &hh, t, 2000).re.sqrt();
    let kn = time_inner(&null, &null, t, 2000).re.sqrt();
    assert!(cross.norm() <= 1e-6 * hn * kn, "cross {:e} vs {:e}", cross.norm(), hn * kn);
}

#[test]
fn local_steering_between_equal_constants_is_trivial() {
    let (g, p) = setup(16);
    let pb = SteeringProblem {
        u0: Field::constant(&g, 0.2),
        u1: Field::constant(&g, 0.2),
        horizon: 1.0,
        mu: 0.2,
        tolerance: 1e-10,
        max_picard: 5,
    };
    let out = steer_local(&pb, &machinery(&p, StepperConfig::default())).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.final_residual(), 0.0);
    assert_eq!(out.control.l2_norm(&p, 50).unwrap(), 0.0);
}

#[test]
fn local_steering_reaches_small_target_with_mean() {
    let (g, p) = setup(32);
    let mu = 0.3;
    let pb = SteeringProblem {
        u0: Field::from_fn(&g, |x| mu + 0.05 * (2.0 * x).sin()),
        u1: Field::from_fn(&g, |x| mu + 0.08 * x.cos()),
        horizon: 1.0,
        mu,
        tolerance: 1e-6,
        max_picard: 12,
    };
    let m = machinery(&p, StepperConfig::default());
    let out = steer_local(&pb, &m).unwrap();
    assert!(out.final_residual() <= 1e-6);
    assert!(out.residuals.windows(2).all(|w| w[1] < w[0]));
    // independent replay of the control in the shifted variable
    let sym = LinearSymbol::new(mu);
    let rec = replay(&pb.u0.mean_project(), &out.control, &m, &sym, &end_only()).unwrap();
    assert!((&rec.final_state - &pb.u1.mean_project()).l2_norm() <= 1e-6);
}

#[test]
fn local_steering_rejects_bad_problems() {
    let (g, p) = setup(16);
    let m = machinery(&p, StepperConfig::default());
    let base = SteeringProblem {
        u0: Field::zeros(&g),
        u1: Field::from_fn(&g, |x| 0.05 * x.cos()),
        horizon: 1.0,
        mu: 0.0,
        tolerance: 1e-6,
        max_picard: 12,
    };
    let large = SteeringProblem {
        u1: Field::from_fn(&g, |x| 2.0 * x.cos()),
        ..base.clone()
    };
    assert!(matches!(steer_local(&large, &m), Err(KdvError::Parameter { .. })));
    let means = SteeringProblem {
        u1: Field::from_fn(&g, |x| 0.1 + 0.05 * x.cos()),
        ..base.clone()
    };
    assert!(matches!(steer_local(&means, &m), Err(KdvError::Parameter { .. })));
    let other_grid = SteeringProblem {
        u1: Field::zeros(&SpectralGrid::new(32).unwrap()),
        ..base.clone()
    };
    assert!(matches!(steer_local(&other_grid, &m), Err(KdvError::Dimension { .. })));
    let no_time = SteeringProblem { horizon: 0.0, ..base };
    assert!(matches!(steer_local(&no_time, &m), Err(KdvError::Parameter { .. })));
}

#[test]
fn picard_outside_its_basin_fails_cleanly() {
    let (g, p) = setup(32);
    let mut m = machinery(&p, StepperConfig::default());
    m.options.smallness = 100.0;
    m.options.epsilon = 0.1;
    let pb = SteeringProblem {
        u0: Field::from_fn(&g, |x| 4.0 * x.cos()),
        u1: Field::from_fn(&g, |x| 4.0 * (3.0 * x).sin()),
        horizon: 0.5,
        mu: 0.0,
        tolerance: 1e-8,
        max_picard: 8,
    };
    let err = steer_local(&pb, &m).unwrap_err();
    assert!(err.is_steering(), "{err}");
    assert!(matches!(
        err,
        KdvError::Divergence { .. } | KdvError::NotConverged { .. } | KdvError::BlowUp { .. }
    ));
}

/// A damped run read backwards in time and space is again a trajectory of
/// the controlled equation, driven by `+GG*` instead of `−GG*`.
#[test]
fn reversed_damped_run_is_a_controlled_trajectory() {
    let (g, p) = setup(32);
    let sym = LinearSymbol::new(0.3);
    let cfg = StepperConfig::with_dt(2.5e-4);
    let v0 = Field::from_fn(&g, |x| 0.8 * x.cos() + 0.3 * (2.0 * x).sin());
    let damp = FeedbackLaw::damping(&p);
    let tb = 2.0;
    let fwd = simulate(&v0, tb, &cfg, &sym, &damp, &end_only()).unwrap();
    assert!(fwd.final_state.l2_norm() < v0.l2_norm());
    let anti = FnForcing(|u: &Field, at: kdv_core::dynamics::StageTime| Ok(-&damp.eval(u, at.t)?));
    let back = simulate(&fwd.final_state.reflect(), tb, &cfg, &sym, &anti, &end_only()).unwrap();
    let err = (&back.final_state - &v0.reflect()).l2_norm() / v0.l2_norm();
    assert!(err <= 1e-9, "reversal error {err:e}");
}

#[test]
fn global_steering_needs_an_even_profile() {
    let g = SpectralGrid::new(16).unwrap();
    let p = ControlProfile::new(PI / 2.0, PI / 2.0, &g).unwrap();
    assert!(!p.is_even());
    let pb = SteeringProblem {
        u0: Field::from_fn(&g, f64::cos),
        u1: Field::from_fn(&g, f64::sin),
        horizon: 1.0,
        mu: 0.0,
        tolerance: 1e-6,
        max_picard: 12,
    };
    let err = steer_global(&pb, &machinery(&p, StepperConfig::default()), 10).err().unwrap();
    assert!(matches!(err, KdvError::Parameter { name: "profile", .. }));
}

#[test]
fn global_steering_with_small_data_is_local_steering() {
    let (g, p) = setup(32);
    let pb = SteeringProblem {
        u0: Field::from_fn(&g, |x| 0.05 * x.cos()),
        u1: Field::from_fn(&g, |x| 0.05 * (2.0 * x).sin()),
        horizon: 1.0,
        mu: 0.0,
        tolerance: 1e-6,
        max_picard: 12,
    };
    let out = steer_global(&pb, &machinery(&p, StepperConfig::default()), 10).unwrap();
    assert_eq!(out.report.stage_a_time, 0.0);
    assert_eq!(out.report.stage_b_time, 0.0);
    assert!((out.report.total_time - 1.0).abs() <= 1e-12);
    assert!(out.report.replay_error <= 1e-6);
    assert_eq!(out.report.mass_drift, 0.0);
}

#[test]
fn global_steering_with_mean_and_moderate_data() {
    let (g, p) = setup(32);
    let mu = 0.5;
    let pb = SteeringProblem {
        u0: Field::from_fn(&g, |x| mu + 0.6 * x.cos()),
        u1: Field::from_fn(&g, |x| mu + 0.5 * (2.0 * x).sin()),
        horizon: 1.0,
        mu,
        tolerance: 1e-6,
        max_picard: 15,
    };
    let mut m = machinery(&p, StepperConfig::default());
    m.options.epsilon = 0.15;
    let out = steer_global(&pb, &m, 50).unwrap();
    let r = &out.report;
    assert!(r.stage_a_time > 0.0 && r.stage_b_time > 0.0);
    assert!(r.replay_error / pb.u1.mean_project().l2_norm() <= 1e-3, "{r:?}");
    assert!(r.mass_drift <= 1e-10);
    assert!((out.control.duration() - r.total_time).abs() <= 1e-9);
}

#[test]
fn stabilization_timeout_is_reported() {
    let (g, p) = setup(16);
    let mut m = machinery(&p, StepperConfig::default());
    m.options.max_stabilization_time = 0.01;
    let pb = SteeringProblem {
        u0: Field::from_fn(&g, |x| 2.0 * x.cos()),
        u1: Field::zeros(&g),
        horizon: 1.0,
        mu: 0.0,
        tolerance: 1e-6,
        max_picard: 12,
    };
    let err = steer_global(&pb, &m, 10).err().unwrap();
    assert!(matches!(err, KdvError::StabilizationTimeout { stage: "A", .. }));
    assert!(err.is_steering());
}

#[test]
fn zero_control_and_dump_round_trip() {
    let (g, p) = setup(16);
    let z = ControlSignal::zero(&p, 2.0);
    assert_eq!(z.duration(), 2.0);
    assert_eq!(z.h(1.0, &p).unwrap().l2_norm(), 0.0);

    let sym = LinearSymbol::new(0.0);
    let gt = build_control_gramian(&p, 1.0, &sym).unwrap();
    let c = hum_linear(&Field::zeros(&g), &random(&g, 4, 9, 1.0), 1.0, &gt, &p, &sym).unwrap();
    let joined = c.clone().then(ControlSignal::zero(&p, 0.5));
    assert_eq!(joined.segments().count(), 2);
    assert_eq!(joined.h(1.25, &p).unwrap().l2_norm(), 0.0);
    assert_eq!(joined.h(7.0, &p).unwrap().l2_norm(), 0.0);

    let dump = c.to_dump(&p, 400).unwrap();
    assert_eq!(dump.times.len(), 401);
    let back = ControlSignal::from_dump(&dump, &p).unwrap();
    for (t, v) in dump.times.iter().zip(&dump.values) {
        let h = back.h(*t, &p).unwrap().to_physical();
        let d = h.iter().zip(v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 1e-12);
    }
    let json = serde_json::to_string(&dump).unwrap();
    let again: kdv_core::controllability::ControlDump = serde_json::from_str(&json).unwrap();
    assert_eq!(again.values, dump.values);

    let mut bad = dump.clone();
    bad.n = 32;
    assert!(matches!(ControlSignal::from_dump(&bad, &p), Err(KdvError::Dimension { .. })));
}

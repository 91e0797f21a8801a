use std::f64::consts::PI;

use kdv_core::control::{basis, build_control_gramian, build_l_lambda, ControlProfile, FeedbackGain};
use kdv_core::diagnostics::{energy_residual, fit_decay, observability_constant};
use kdv_core::dynamics::{simulate, LinearSymbol, SampleOptions, StepperConfig};
use kdv_core::feedback::{FeedbackLaw, LawKind};
use kdv_core::spectral::{Field, SpectralGrid};
use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use proptest::prelude::*;

fn setup(n: usize) -> (SpectralGrid, ControlProfile, LinearSymbol) {
    let g = SpectralGrid::new(n).unwrap();
    let p = ControlProfile::new(PI, PI / 2.0, &g).unwrap();
    (g, p, LinearSymbol::new(0.0))
}

fn opts(every: usize) -> SampleOptions {
    SampleOptions {
        sample_every: every,
        s: 1.0,
        keep_fields: false,
    }
}

/// Largest real part of the eigenvalues of `diag(iω_k) − K` on the
/// nonzero modes, from a complex Schur form.
fn spectral_abscissa(gain: &DMatrix<Complex64>, g: &SpectralGrid, sym: &LinearSymbol) -> f64 {
    let ks = basis(g);
    let a = DMatrix::from_fn(ks.len(), ks.len(), |i, j| {
        let d = if i == j { Complex64::new(0.0, sym.omega(ks[i])) } else { Complex64::new(0.0, 0.0) };
        d - gain[(i, j)]
    });
    let (_, t) = Schur::new(a).unpack();
    (0..ks.len()).map(|i| t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn k_lambda_loop_decays_at_least_at_rate_lambda() {
    let (g, p, sym) = setup(32);
    for lambda in [0.5, 1.0, 2.0] {
        let l = build_l_lambda(&p, lambda, &sym).unwrap();
        let gain = FeedbackGain::new(&p, &l).unwrap();
        let abscissa = spectral_abscissa(gain.matrix(), &g, &sym);
        assert!(-abscissa >= lambda, "λ = {lambda}: abscissa {abscissa}");
    }
}

#[test]
fn fitted_k_lambda_rate_matches_the_spectrum() {
    let (g, p, sym) = setup(32);
    let l = build_l_lambda(&p, 1.0, &sym).unwrap();
    let gain = FeedbackGain::new(&p, &l).unwrap();
    let predicted = -spectral_abscissa(gain.matrix(), &g, &sym);
    let law = FeedbackLaw::build(LawKind::GramianRate { lambda: 1.0 }, &p, &sym, 1.0).unwrap();
    let u0 = Field::from_fn(&g, |x| x.cos() + 0.3 * (3.0 * x).sin());
    let rec = simulate(&u0, 10.0, &StepperConfig::with_dt(1e-4).linear(), &sym, &law, &opts(100)).unwrap();
    let fit = fit_decay(&rec, 0.0, (4.0, 10.0)).unwrap();
    assert!(fit.rate >= 0.95, "rate {}", fit.rate);
    assert!((fit.rate - predicted).abs() <= 0.15 * predicted, "fitted {} vs spectrum {predicted}", fit.rate);
}

#[test]
fn damping_rate_matches_the_spectrum() {
    let (g, p, sym) = setup(32);
    let gg = kdv_core::control::build_ggstar(&p, &sym);
    let predicted = -spectral_abscissa(gg.entries(), &g, &sym);
    assert!(predicted > 0.0);
    let u0 = Field::from_fn(&g, |x| x.cos() - 0.4 * (2.0 * x).sin());
    let rec = simulate(
        &u0,
        200.0,
        &StepperConfig::with_dt(2e-3).linear(),
        &sym,
        &FeedbackLaw::damping(&p),
        &opts(500),
    )
    .unwrap();
    let fit = fit_decay(&rec, 0.0, (60.0, 200.0)).unwrap();
    assert!((fit.rate - predicted).abs() <= 0.05 * predicted, "fitted {} vs spectrum {predicted}", fit.rate);
}

#[test]
fn energy_residual_shrinks_with_the_step() {
    let (g, p, sym) = setup(32);
    let u0 = Field::from_fn(&g, f64::cos);
    // the ratio is pre-asymptotic above dt ≈ 0.01
    let res: Vec<f64> = [0.005, 0.0025]
        .iter()
        .map(|&dt| {
            let rec = simulate(&u0, 5.0, &StepperConfig::with_dt(dt), &sym, &FeedbackLaw::damping(&p), &opts(1)).unwrap();
            energy_residual(&rec).unwrap()
        })
        .collect();
    assert!(res[0] / res[1] >= 8.0, "residuals {res:?}");
}

#[test]
fn observability_constant_grows_with_horizon() {
    let (_, p, sym) = setup(32);
    let deltas: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&t| observability_constant(&build_control_gramian(&p, t, &sym).unwrap(), 8).unwrap())
        .collect();
    assert!(deltas[0] > 0.0);
    assert!(deltas.windows(2).all(|w| w[1] > w[0]), "{deltas:?}");
}

#[test]
fn observability_constant_shrinks_with_band() {
    let (_, p, sym) = setup(64);
    let gt = build_control_gramian(&p, 1.0, &sym).unwrap();
    let d: Vec<f64> = [2, 4, 8, 16, 31].iter().map(|&b| observability_constant(&gt, b).unwrap()).collect();
    assert!(d.windows(2).all(|w| w[1] <= w[0]), "{d:?}");
    assert!((d[4] - gt.min_eigenvalue()).abs() <= 1e-12 * gt.max_eigenvalue());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fitted_rate_ignores_amplitude(c in 1e-3f64..1e3, seed in 0u64..50) {
        let (g, p, sym) = setup(16);
        let u0 = Field::from_fn(&g, |x| (x + seed as f64).cos() + 0.2 * (2.0 * x).sin());
        let rec = simulate(&u0, 4.0, &StepperConfig::with_dt(1e-3), &sym, &FeedbackLaw::damping(&p), &opts(20)).unwrap();
        let a = fit_decay(&rec, 0.0, (1.0, 4.0)).unwrap();
        let b = fit_decay(&rec.rescaled(c), 0.0, (1.0, 4.0)).unwrap();
        prop_assert!((a.rate - b.rate).abs() <= 1e-9 * (1.0 + a.rate.abs()));
        prop_assert!((b.intercept - a.intercept - c.ln()).abs() <= 1e-9);
        let ea = energy_residual(&rec).unwrap();
        let eb = energy_residual(&rec.rescaled(c)).unwrap();
        // a cancellation of O(1) terms, so only absolute agreement is meaningful
        prop_assert!((ea - eb).abs() <= 1e-14);
    }

    #[test]
    fn damping_never_increases_the_norm(seed in 0u64..1000, amp in 0.1f64..3.0) {
        let (g, p, sym) = setup(32);
        let mut spec = kdv_core::experiment::InitialSpec::random(6, seed);
        spec.scale_to_l2 = Some(amp);
        let u0 = spec.build(&g).unwrap();
        let rec = simulate(&u0, 1.0, &StepperConfig::default(), &sym, &FeedbackLaw::damping(&p), &opts(50)).unwrap();
        prop_assert!(rec.max_l2_increase <= 1e-9);
        prop_assert_eq!(kdv_core::diagnostics::mass_drift(&rec), 0.0);
    }
}

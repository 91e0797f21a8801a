//! Decay-rate fits, energy-identity residuals and observability constants.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::control::OperatorMatrix;
use crate::dynamics::{DriveKind, TrajectoryRecord};
use crate::error::{KdvError, Result};

/// Norms at or below this are treated as rounding noise by [`fit_decay`].
pub const NOISE_FLOOR: f64 = 1e-14;

/// Least-squares fit of `log ‖u(t)‖ ≈ intercept − rate·t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// RMS deviation of the log-norms from the line.
    pub residual: f64,
    pub norm_index: f64,
    pub samples: usize,
}

/// Which norm column of a record to fit.
fn column(rec: &TrajectoryRecord, s: f64) -> Result<&[f64]> {
    if s == 0.0 {
        Ok(&rec.l2)
    } else if s == rec.s {
        Ok(&rec.hs)
    } else {
        Err(KdvError::param(
            "s",
            format!("record carries norms for s = 0 and s = {}, not {s}", rec.s),
        ))
    }
}

/// Default fit window: the horizon with its first 20% dropped.
pub fn default_window(rec: &TrajectoryRecord) -> (f64, f64) {
    let (a, b) = (rec.times[0], *rec.times.last().expect("nonempty"));
    (a + 0.2 * (b - a), b)
}

/// Fits the exponential rate of `‖u(t) − [u]‖_s` over `window`. Samples at
/// the noise floor end the window early (with a warning).
pub fn fit_decay(rec: &TrajectoryRecord, s: f64, window: (f64, f64)) -> Result<DecayFit> {
    if rec.is_empty() {
        return Err(KdvError::param("record", "is empty"));
    }
    if !(window.0 < window.1) {
        return Err(KdvError::param("window", "start must precede end"));
    }
    let norms = column(rec, s)?;
    let mut pts = Vec::new();
    for (&t, &v) in rec.times.iter().zip(norms) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(v > NOISE_FLOOR) {
            warn!("norm reached the noise floor at t = {t}; truncating the fit window");
            break;
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 10 {
        return Err(KdvError::param(
            "window",
            format!("needs at least 10 samples above the noise floor, found {}", pts.len()),
        ));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DecayFit {
        rate: -slope,
        intercept,
        window: (pts[0].0, pts[pts.len() - 1].0),
        residual,
        norm_index: s,
        samples: pts.len(),
    })
}

/// Largest relative defect of `‖u(t)‖₀² − ‖u₀‖₀² − 2∫₀ᵗ Re⟨u, F⟩ dτ` over a
/// damped run, where `F = −GG*u` so that the integral is `−2∫‖G*u‖₀²`.
pub fn energy_residual(rec: &TrajectoryRecord) -> Result<f64> {
    if rec.drive != DriveKind::Damping {
        return Err(KdvError::Usage(format!(
            "energy_residual needs a damping-law record, got {:?}",
            rec.drive
        )));
    }
    if rec.is_empty() {
        return Err(KdvError::param("record", "is empty"));
    }
    let e0 = rec.l2[0].powi(2);
    if e0 == 0.0 {
        return Ok(0.0);
    }
    Ok(rec
        .l2
        .iter()
        .zip(&rec.work)
        .map(|(l2, w)| (l2 * l2 - e0 - w).abs() / e0)
        .fold(0.0, f64::max))
}

/// Smallest eigenvalue of the Gramian on modes `|k| ≤ band`: the discrete
/// observability constant at that resolution.
pub fn observability_constant(gt: &OperatorMatrix, band: i64) -> Result<f64> {
    gt.restricted_min_eigenvalue(band)
}

/// Whether `‖u‖₀` never rose by more than `tol` between consecutive steps.
pub fn is_monotone(rec: &TrajectoryRecord, tol: f64) -> bool {
    rec.max_l2_increase <= tol
}

/// Largest `|[u(t)] − [u(0)]|` over the samples.
pub fn mass_drift(rec: &TrajectoryRecord) -> f64 {
    let m0 = rec.mass.first().copied().unwrap_or(0.0);
    rec.mass.iter().fold(0.0, |d, m| d.max((m - m0).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Field, SpectralGrid};

    fn synthetic(f: impl Fn(f64) -> f64, drive: DriveKind) -> TrajectoryRecord {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let l2: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        let grid = SpectralGrid::new(8).unwrap();
        TrajectoryRecord {
            drive,
            dt: 0.1,
            s: 1.0,
            hs: l2.clone(),
            mass: vec![0.0; times.len()],
            control_effort: vec![0.0; times.len()],
            work: vec![0.0; times.len()],
            fields: Vec::new(),
            max_l2_increase: 0.0,
            final_state: Field::zeros(&grid),
            times,
            l2,
        }
    }

    #[test]
    fn exact_exponential_is_recovered() {
        let rec = synthetic(|t| 3.0 * (-2.0 * t).exp(), DriveKind::None);
        let fit = fit_decay(&rec, 0.0, (0.0, 10.0)).unwrap();
        assert!((fit.rate - 2.0).abs() <= 1e-10);
        assert!((fit.intercept - 3f64.ln()).abs() <= 1e-10);
        assert!(fit.residual <= 1e-12);
    }

    #[test]
    fn constant_norm_has_zero_rate() {
        let rec = synthetic(|_| 0.7, DriveKind::None);
        assert_eq!(fit_decay(&rec, 0.0, (0.0, 10.0)).unwrap().rate, 0.0);
    }

    #[test]
    fn noise_floor_truncates_window() {
        let rec = synthetic(|t| if t < 5.0 { (-t).exp() } else { 1e-16 }, DriveKind::None);
        let fit = fit_decay(&rec, 0.0, (0.0, 10.0)).unwrap();
        assert!(fit.window.1 < 5.0);
        assert!((fit.rate - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let rec = synthetic(|t| (-t).exp(), DriveKind::None);
        assert!(fit_decay(&rec, 0.0, (0.0, 0.5)).is_err());
        assert!(fit_decay(&rec, 0.0, (2.0, 1.0)).is_err());
        assert!(fit_decay(&rec, 2.0, (0.0, 10.0)).is_err());
    }

    #[test]
    fn energy_residual_needs_damping() {
        let rec = synthetic(|_| 1.0, DriveKind::GramianRate);
        assert!(matches!(energy_residual(&rec), Err(KdvError::Usage(_))));
        let zero = synthetic(|_| 0.0, DriveKind::Damping);
        assert_eq!(energy_residual(&zero).unwrap(), 0.0);
    }

    #[test]
    fn default_window_skips_transient() {
        let rec = synthetic(|_| 1.0, DriveKind::None);
        assert_eq!(default_window(&rec), (2.0, 10.0));
    }
}

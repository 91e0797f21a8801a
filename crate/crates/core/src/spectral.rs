//! Fourier representation of real periodic fields on the torus of length 2π.
//!
//! A field is stored as its truncated coefficients `û_k`, with
//! `u(x) = Σ_k û_k e^{ikx}` and `û_k = (1/2π) ∫ u e^{-ikx} dx`, so the mean
//! value of the field is `û_0`. Coefficients are kept in FFT order: slot `j`
//! holds wavenumber `j` for `j < N/2` and `j - N` otherwise.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{KdvError, Result};

/// Uniform collocation grid `x_j = 2πj/N` with its FFT plans.
#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid").field("n", &self.n).finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl SpectralGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(KdvError::param(
                "n_modes",
                format!("must be even and at least 8, got {n}"),
            ));
        }
        let mut planner = FftPlanner::new();
        Ok(SpectralGrid {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest wavenumber kept by the operators, `N/2 - 1`.
    pub fn max_mode(&self) -> i64 {
        (self.n / 2) as i64 - 1
    }

    /// Largest wavenumber kept by the 2/3 rule (strictly below N/3).
    pub fn dealias_cutoff(&self) -> i64 {
        ((self.n as i64) - 1) / 3
    }

    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.spacing()).collect()
    }

    /// Wavenumber stored in FFT slot `j`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// FFT slot of wavenumber `k`, for `-N/2 <= k < N/2`.
    pub fn slot(&self, k: i64) -> usize {
        debug_assert!(k >= -(self.n as i64) / 2 && k < self.n as i64 / 2);
        k.rem_euclid(self.n as i64) as usize
    }

    pub fn nyquist_slot(&self) -> usize {
        self.n / 2
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.n).map(|j| self.wavenumber(j))
    }

    /// In-place forward transform of physical samples into coefficients.
    pub(crate) fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
    }

    /// In-place inverse transform of coefficients into physical samples.
    pub(crate) fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(KdvError::Dimension {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }
}

/// A real-valued periodic field held as Fourier coefficients.
#[derive(Clone, Debug)]
pub struct Field {
    grid: SpectralGrid,
    coeffs: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: &SpectralGrid) -> Self {
        Field {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n()],
        }
    }

    pub fn constant(grid: &SpectralGrid, value: f64) -> Self {
        let mut f = Field::zeros(grid);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    /// Builds a field from coefficients in FFT order, projecting onto real
    /// fields (Hermitian symmetry) on the way in.
    pub fn from_coeffs(grid: &SpectralGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        grid.check_len(coeffs.len())?;
        let mut f = Field {
            grid: grid.clone(),
            coeffs,
        };
        f.symmetrize();
        Ok(f)
    }

    /// Builds a field from a list of `(k, û_k)` pairs; the conjugate mode is
    /// filled in automatically.
    pub fn from_modes(grid: &SpectralGrid, modes: &[(i64, Complex64)]) -> Result<Self> {
        let mut f = Field::zeros(grid);
        let half = grid.n() as i64 / 2;
        for &(k, c) in modes {
            if k.abs() >= half {
                return Err(KdvError::param(
                    "wavenumber",
                    format!("|{k}| must be below N/2 = {half}"),
                ));
            }
            if k == 0 {
                f.coeffs[0] += Complex64::new(c.re, 0.0);
            } else {
                f.coeffs[grid.slot(k)] += c;
                f.coeffs[grid.slot(-k)] += c.conj();
            }
        }
        Ok(f)
    }

    pub fn from_physical(samples: &[f64], grid: &SpectralGrid) -> Result<Self> {
        grid.check_len(samples.len())?;
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.forward_in_place(&mut buf);
        Ok(Field {
            grid: grid.clone(),
            coeffs: buf,
        })
    }

    pub fn from_fn(grid: &SpectralGrid, f: impl Fn(f64) -> f64) -> Self {
        let samples: Vec<f64> = grid.points().into_iter().map(f).collect();
        Field::from_physical(&samples, grid).expect("sample count matches grid")
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut buf = self.coeffs.clone();
        self.grid.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn coeff(&self, k: i64) -> Complex64 {
        self.coeffs[self.grid.slot(k)]
    }

    /// Mean value `[u] = û_0`.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Sobolev norm `(Σ_k ⟨k⟩^{2s} |û_k|²)^{1/2}` with `⟨k⟩ = (1+k²)^{1/2}`.
    pub fn hs_norm(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let k = self.grid.wavenumber(j) as f64;
                (1.0 + k * k).powf(s) * c.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Coefficient-space inner product `Σ_k û_k conj(v̂_k)`.
    pub fn inner(&self, other: &Field) -> Complex64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    /// Fractional derivative `D^r`: scales `û_k` by `|k|^r` for `k ≠ 0` and
    /// leaves the mean alone.
    pub fn dr_apply(&self, r: f64) -> Field {
        let mut out = self.clone();
        for (j, c) in out.coeffs.iter_mut().enumerate().skip(1) {
            let k = self.grid.wavenumber(j).unsigned_abs() as f64;
            *c *= k.powf(r);
        }
        out
    }

    pub fn mean_project(&self) -> Field {
        let mut out = self.clone();
        out.coeffs[0] = Complex64::new(0.0, 0.0);
        out
    }

    /// Spatial derivative `∂_x`.
    pub fn dx(&self) -> Field {
        let mut out = self.clone();
        for (j, c) in out.coeffs.iter_mut().enumerate() {
            let k = self.grid.wavenumber(j) as f64;
            *c *= Complex64::new(0.0, k);
        }
        out.coeffs[self.grid.nyquist_slot()] = Complex64::new(0.0, 0.0);
        out
    }

    /// Reflection `(Ru)(x) = u(-x)`.
    pub fn reflect(&self) -> Field {
        let n = self.grid.n();
        let coeffs = (0..n).map(|j| self.coeffs[(n - j) % n]).collect();
        Field {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    pub fn scale(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let mut out = self.clone();
        for (c, o) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *c += o * a;
        }
        out
    }

    pub fn zero_nyquist(&mut self) {
        let ny = self.grid.nyquist_slot();
        self.coeffs[ny] = Complex64::new(0.0, 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest `|û_{-k} - conj(û_k)|` over the spectrum.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        (0..n)
            .map(|j| (self.coeffs[(n - j) % n] - self.coeffs[j].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Projects onto real fields: `û_k ← (û_k + conj(û_{-k}))/2`.
    pub fn symmetrize(&mut self) {
        let n = self.grid.n();
        self.coeffs[0].im = 0.0;
        self.coeffs[n / 2].im = 0.0;
        for j in 1..n / 2 {
            let avg = (self.coeffs[j] + self.coeffs[n - j].conj()) * 0.5;
            self.coeffs[j] = avg;
            self.coeffs[n - j] = avg.conj();
        }
    }

    /// Energy in modes strictly above the 2/3 cutoff relative to the L² norm.
    pub fn tail_fraction(&self) -> f64 {
        let cut = self.grid.dealias_cutoff();
        let tail: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(j, _)| self.grid.wavenumber(*j).abs() > cut)
            .map(|(_, c)| c.norm_sqr())
            .sum();
        let total = self.l2_norm();
        if total == 0.0 {
            0.0
        } else {
            tail.sqrt() / total
        }
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

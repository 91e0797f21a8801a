//! Localized control operator `Gh = g·(h − ∫g h)` and the dense Gramian-type
//! operators built from it on the truncated mean-zero Fourier basis.
//!
//! `G` is applied by collocation: pointwise products on the grid with the
//! integral taken by the trapezoid rule. The matrices below are the exact
//! coefficient-space representation of that discrete operator, so the
//! matrix and matrix-free paths agree to rounding.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::LinearSymbol;
use crate::error::{KdvError, Result};
use crate::spectral::{Field, SpectralGrid};

/// Solves with a condition estimate above this are refused.
pub const MAX_CONDITION: f64 = 1e14;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Nonnegative weight `g` with `∫g = 1` localizing the control to an arc.
#[derive(Clone, Debug)]
pub struct ControlProfile {
    center: f64,
    width: f64,
    samples: Vec<f64>,
    g: Field,
}

/// `C^∞` bump `exp(−1/(1−y²))` on `(−1, 1)`, zero outside.
fn bump(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - y * y)).exp()
    }
}

impl ControlProfile {
    /// Bump supported on the arc of the given `width` around `center`,
    /// normalized so that its trapezoid integral over the grid is 1.
    pub fn new(center: f64, width: f64, grid: &SpectralGrid) -> Result<Self> {
        if !(width > 0.0 && width <= 2.0 * PI) {
            return Err(KdvError::param(
                "width",
                format!("must lie in (0, 2π], got {width}"),
            ));
        }
        if !center.is_finite() {
            return Err(KdvError::param("center", "must be finite"));
        }
        let half = 0.5 * width;
        let samples: Vec<f64> = grid
            .points()
            .into_iter()
            .map(|x| {
                let d = (x - center + PI).rem_euclid(2.0 * PI) - PI;
                bump(d / half)
            })
            .collect();
        let mut p = Self::from_samples(&samples, grid)?;
        p.center = center;
        p.width = width;
        Ok(p)
    }

    /// Arbitrary nonnegative profile given by its grid values.
    pub fn from_samples(samples: &[f64], grid: &SpectralGrid) -> Result<Self> {
        if samples.len() != grid.n() {
            return Err(KdvError::Dimension {
                expected: grid.n(),
                got: samples.len(),
            });
        }
        if samples.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(KdvError::param("profile", "values must be finite and nonnegative"));
        }
        let total: f64 = samples.iter().sum::<f64>() * grid.spacing();
        if total <= 0.0 {
            return Err(KdvError::param("profile", "must not vanish identically"));
        }
        let samples: Vec<f64> = samples.iter().map(|v| v / total).collect();
        let g = Field::from_physical(&samples, grid)?;
        Ok(ControlProfile {
            center: f64::NAN,
            width: f64::NAN,
            samples,
            g,
        })
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.g.grid()
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn field(&self) -> &Field {
        &self.g
    }

    /// Whether `g(−x) = g(x)` on the grid.
    pub fn is_even(&self) -> bool {
        let n = self.samples.len();
        let scale = self.samples.iter().fold(0.0f64, |m, v| m.max(*v));
        (1..n).all(|j| (self.samples[j] - self.samples[n - j]).abs() <= 1e-14 * scale)
    }

    /// `Gh = g·(h − ∫ g h dx)`, mean and Nyquist mode removed.
    pub fn apply_g(&self, h: &Field) -> Result<Field> {
        if h.grid() != self.grid() {
            return Err(KdvError::Dimension {
                expected: self.grid().n(),
                got: h.grid().n(),
            });
        }
        let mut h = h.clone();
        h.zero_nyquist();
        let values = h.to_physical();
        let weighted: f64 = self.samples.iter().zip(&values).map(|(g, v)| g * v).sum::<f64>()
            * self.grid().spacing();
        let out: Vec<f64> = self
            .samples
            .iter()
            .zip(&values)
            .map(|(g, v)| g * (v - weighted))
            .collect();
        let mut f = Field::from_physical(&out, self.grid())?;
        let scale = out.iter().fold(0.0f64, |m, v| m.max(v.abs())) + f64::MIN_POSITIVE;
        // non-finite input passes through; the stepper reports it as blow-up
        debug_assert!(!f.mean().is_finite() || f.mean().abs() <= 1e-12 * scale, "mean {}", f.mean());
        f.coeffs_mut()[0] = ZERO;
        f.zero_nyquist();
        Ok(f)
    }

    /// `G*` coincides with `G`.
    pub fn apply_gstar(&self, v: &Field) -> Result<Field> {
        self.apply_g(v)
    }

    /// Matrix of `G` on the truncated mean-zero basis (see [`basis`]).
    pub fn g_matrix(&self) -> DMatrix<Complex64> {
        let grid = self.grid();
        let ks = basis(grid);
        let ghat = |k: i64| self.g.coeffs()[k.rem_euclid(grid.n() as i64) as usize];
        DMatrix::from_fn(ks.len(), ks.len(), |i, j| {
            let (k, m) = (ks[i], ks[j]);
            ghat(k - m) - ghat(k) * ghat(-m) * (2.0 * PI)
        })
    }
}

/// Wavenumbers of the truncated mean-zero basis in matrix order:
/// `−(N/2−1), …, −1, 1, …, N/2−1`.
pub fn basis(grid: &SpectralGrid) -> Vec<i64> {
    let m = grid.max_mode();
    (-m..=m).filter(|&k| k != 0).collect()
}

pub fn to_vector(f: &Field) -> DVector<Complex64> {
    let ks = basis(f.grid());
    DVector::from_iterator(ks.len(), ks.iter().map(|&k| f.coeff(k)))
}

pub fn from_vector(grid: &SpectralGrid, v: &DVector<Complex64>) -> Field {
    let ks = basis(grid);
    let mut coeffs = vec![ZERO; grid.n()];
    for (&k, c) in ks.iter().zip(v.iter()) {
        coeffs[grid.slot(k)] = *c;
    }
    Field::from_coeffs(grid, coeffs).expect("length matches grid")
}

/// `(e^a − 1)/a`, with its series near zero.
pub(crate) fn phi1(a: Complex64) -> Complex64 {
    if a.norm() < 1e-12 {
        return Complex64::new(1.0, 0.0);
    }
    if a.norm() < 0.1 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for n in 2..=14 {
            term *= a / n as f64;
            sum += term;
        }
        return sum;
    }
    (a.exp() - 1.0) / a
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    GgStar,
    LLambda { lambda: f64, horizon: f64 },
    ControlGramian { t: f64 },
}

/// Dense Hermitian operator on the truncated mean-zero basis, with its
/// spectrum and (for the positive-definite kinds) a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    grid: SpectralGrid,
    mu: f64,
    kind: OperatorKind,
    entries: DMatrix<Complex64>,
    eigenvalues: Vec<f64>,
    cholesky: Option<Cholesky<Complex64, Dyn>>,
}

impl OperatorMatrix {
    fn assemble(grid: &SpectralGrid, mu: f64, kind: OperatorKind, entries: DMatrix<Complex64>) -> Self {
        let mut eigenvalues: Vec<f64> = SymmetricEigen::new(entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        let cholesky = match kind {
            OperatorKind::GgStar => None,
            _ => Cholesky::new(entries.clone()),
        };
        OperatorMatrix {
            grid: grid.clone(),
            mu,
            kind,
            entries,
            eigenvalues,
            cholesky,
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty")
    }

    pub fn condition(&self) -> f64 {
        let lo = self.min_eigenvalue();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            self.max_eigenvalue() / lo
        }
    }

    pub fn hermitian_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn apply(&self, f: &Field) -> Field {
        from_vector(&self.grid, &(&self.entries * to_vector(f)))
    }

    /// `v†Mv` for the mean-zero part of `f`.
    pub fn quadratic_form(&self, f: &Field) -> f64 {
        let v = to_vector(f);
        (v.adjoint() * &self.entries * &v)[(0, 0)].re
    }

    fn factor(&self) -> Result<&Cholesky<Complex64, Dyn>> {
        if self.min_eigenvalue() <= 0.0 {
            return Err(KdvError::NotPositiveDefinite {
                min_eigenvalue: self.min_eigenvalue(),
            });
        }
        if self.condition() > MAX_CONDITION {
            return Err(KdvError::IllConditioned {
                condition: self.condition(),
            });
        }
        self.cholesky.as_ref().ok_or(KdvError::NotPositiveDefinite {
            min_eigenvalue: self.min_eigenvalue(),
        })
    }

    /// Solves `M w = v` on the truncated basis.
    pub fn solve(&self, v: &Field) -> Result<Field> {
        let chol = self.factor()?;
        Ok(from_vector(&self.grid, &chol.solve(&to_vector(v))))
    }

    /// Solves `(M + αI) w = v`; used for Tikhonov-regularised Gramian solves.
    pub fn solve_regularized(&self, v: &Field, alpha: f64) -> Result<Field> {
        let d = self.dim();
        let shifted = &self.entries + DMatrix::<Complex64>::identity(d, d) * Complex64::new(alpha, 0.0);
        let chol = Cholesky::new(shifted).ok_or(KdvError::NotPositiveDefinite {
            min_eigenvalue: self.min_eigenvalue() + alpha,
        })?;
        Ok(from_vector(&self.grid, &chol.solve(&to_vector(v))))
    }

    /// Smallest eigenvalue of the principal block on modes `|k| ≤ band`.
    pub fn restricted_min_eigenvalue(&self, band: i64) -> Result<f64> {
        if band < 1 || band > self.grid.max_mode() {
            return Err(KdvError::param(
                "band",
                format!("must lie in [1, {}], got {band}", self.grid.max_mode()),
            ));
        }
        let ks = basis(&self.grid);
        let idx: Vec<usize> = ks
            .iter()
            .enumerate()
            .filter(|(_, k)| k.abs() <= band)
            .map(|(i, _)| i)
            .collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.entries[(idx[i], idx[j])]);
        Ok(SymmetricEigen::new(sub)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min))
    }

    pub fn to_dump(&self) -> OperatorDump {
        let d = self.dim();
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let c = self.entries[(i, j)];
                entries.push([c.re, c.im]);
            }
        }
        OperatorDump {
            n: self.grid.n(),
            mu: self.mu,
            kind: self.kind,
            entries,
        }
    }

    pub fn from_dump(dump: &OperatorDump) -> Result<Self> {
        let grid = SpectralGrid::new(dump.n)?;
        let d = basis(&grid).len();
        if dump.entries.len() != d * d {
            return Err(KdvError::Dimension {
                expected: d * d,
                got: dump.entries.len(),
            });
        }
        let entries = DMatrix::from_fn(d, d, |i, j| {
            let [re, im] = dump.entries[i * d + j];
            Complex64::new(re, im)
        });
        Ok(Self::assemble(&grid, dump.mu, dump.kind, entries))
    }
}

/// On-disk form of an [`OperatorMatrix`]: header then row-major entries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorDump {
    pub n: usize,
    pub mu: f64,
    #[serde(flatten)]
    pub kind: OperatorKind,
    pub entries: Vec<[f64; 2]>,
}

fn ggstar_entries(p: &ControlProfile) -> DMatrix<Complex64> {
    let g = p.g_matrix();
    let mut m = &g * &g;
    // symmetrize away rounding
    let d = m.nrows();
    for i in 0..d {
        for j in i..d {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
    m
}

/// The damping operator `GG*`.
pub fn build_ggstar(p: &ControlProfile, sym: &LinearSymbol) -> OperatorMatrix {
    OperatorMatrix::assemble(p.grid(), sym.mu(), OperatorKind::GgStar, ggstar_entries(p))
}

/// `L_λ = ∫₀^H e^{−2λτ} W(−τ) GG* W(τ) dτ` with the default horizon `H = 1`.
pub fn build_l_lambda(p: &ControlProfile, lambda: f64, sym: &LinearSymbol) -> Result<OperatorMatrix> {
    build_l_lambda_with_horizon(p, lambda, 1.0, sym)
}

pub fn build_l_lambda_with_horizon(
    p: &ControlProfile,
    lambda: f64,
    horizon: f64,
    sym: &LinearSymbol,
) -> Result<OperatorMatrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(KdvError::param("lambda", format!("must be ≥ 0, got {lambda}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(KdvError::param("horizon", format!("must be positive, got {horizon}")));
    }
    let ks = basis(p.grid());
    let m = ggstar_entries(p);
    let entries = DMatrix::from_fn(ks.len(), ks.len(), |i, j| {
        let (k, l) = (ks[i], ks[j]);
        let freq = if sym.resonant(k, l, 1e-12) {
            0.0
        } else {
            sym.omega(l) - sym.omega(k)
        };
        let a = Complex64::new(-2.0 * lambda, freq) * horizon;
        m[(i, j)] * phi1(a) * horizon
    });
    Ok(OperatorMatrix::assemble(
        p.grid(),
        sym.mu(),
        OperatorKind::LLambda { lambda, horizon },
        entries,
    ))
}

/// Controllability Gramian `G_T = ∫₀ᵀ W(σ) GG* W(−σ) dσ`.
pub fn build_control_gramian(p: &ControlProfile, t: f64, sym: &LinearSymbol) -> Result<OperatorMatrix> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(KdvError::param("T", format!("must be positive, got {t}")));
    }
    let ks = basis(p.grid());
    let m = ggstar_entries(p);
    let entries = DMatrix::from_fn(ks.len(), ks.len(), |i, j| {
        let (k, l) = (ks[i], ks[j]);
        if sym.resonant(k, l, 1e-12 * t) {
            m[(i, j)] * t
        } else {
            let delta = sym.omega(k) - sym.omega(l);
            m[(i, j)] * phi1(Complex64::new(0.0, delta * t)) * t
        }
    });
    Ok(OperatorMatrix::assemble(
        p.grid(),
        sym.mu(),
        OperatorKind::ControlGramian { t },
        entries,
    ))
}

/// Dense feedback gain `K_λ = GG* L_λ⁻¹` (or `GG*` itself when `λ = 0`).
#[derive(Clone, Debug)]
pub struct FeedbackGain {
    grid: SpectralGrid,
    lambda: f64,
    matrix: DMatrix<Complex64>,
    spectral_radius: f64,
}

impl FeedbackGain {
    pub fn new(p: &ControlProfile, l: &OperatorMatrix) -> Result<Self> {
        let lambda = match l.kind() {
            OperatorKind::LLambda { lambda, .. } => lambda,
            other => {
                return Err(KdvError::Usage(format!(
                    "feedback gain needs an L_lambda operator, got {other:?}"
                )))
            }
        };
        let m = ggstar_entries(p);
        let (matrix, spectral_radius) = if lambda == 0.0 {
            let top = SymmetricEigen::new(m.clone()).eigenvalues.max();
            (m, top)
        } else {
            let chol = l.factor()?;
            // K = M L⁻¹ is similar to C⁻¹ M C⁻† with L = C C†
            let c = chol.l();
            let x = c.solve_lower_triangular(&m).expect("Cholesky factor is invertible");
            let y = c
                .solve_lower_triangular(&x.adjoint())
                .expect("Cholesky factor is invertible");
            let top = SymmetricEigen::new(y).eigenvalues.max();
            // K = M L⁻¹ = (L⁻¹ M)† since both are Hermitian
            (chol.solve(&m).adjoint(), top)
        };
        Ok(FeedbackGain {
            grid: p.grid().clone(),
            lambda,
            matrix,
            spectral_radius,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn apply(&self, v: &Field) -> Field {
        from_vector(&self.grid, &(&self.matrix * to_vector(v)))
    }

    /// Largest `|eigenvalue|` of the gain; bounds the explicit step size.
    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }
}

/// `K_λ v = GG* L_λ⁻¹ v`, with `K₀ = GG*`.
pub fn apply_k_lambda(v: &Field, l: &OperatorMatrix, p: &ControlProfile) -> Result<Field> {
    let w = match l.kind() {
        OperatorKind::LLambda { lambda, .. } if lambda == 0.0 => v.mean_project(),
        OperatorKind::LLambda { .. } => l.solve(v)?,
        other => {
            return Err(KdvError::Usage(format!(
                "K_lambda needs an L_lambda operator, got {other:?}"
            )))
        }
    };
    p.apply_g(&p.apply_gstar(&w)?)
}

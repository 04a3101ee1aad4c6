//! Emission spectra from the quantum regression theorem.
//!
//! Two-time correlations `c(t, tau) = (<a^dag(t+tau) a(t)>, <sigma^+_d(t+tau) a(t)>,
//! <sigma^+_ud(t+tau) a(t)>)` obey `dc/dtau = M c`. With `M` frozen at the
//! inversions of time `t`, the spectrum is `S(w) = 2 Re[(i w - M)^-1 c(t, 0)]_0`.
//! A class with no atoms decouples from the field row and is dropped from
//! the system.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{CumulantState, LorentzianFit, SpectrumGrid, SystemParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error(
        "regression matrix is marginally stable (eigenvalue {re:e}{im:+e}i); resolvent undefined on the real axis"
    )]
    MarginalStability { re: f64, im: f64 },
    #[error("singular resolvent at omega = {omega}")]
    Singular { omega: f64 },
    #[error("frequency grid must be non-empty and strictly increasing")]
    InvalidGrid,
    #[error("fit needs at least {needed} grid points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("double-Lorentzian fit did not converge after {iterations} iterations")]
    FitFailed { best: LorentzianFit, iterations: usize },
}

/// Number of grid points of the default uniform frequency grid.
pub const DEFAULT_GRID_POINTS: usize = 2001;
/// Minimum number of samples for a double-Lorentzian fit.
pub const MIN_FIT_POINTS: usize = 50;

/// Regression matrix and the classes that take part in it
/// (`active[0]` is the field and always present).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSystem {
    pub m: [[Complex64; 3]; 3],
    pub active: [bool; 3],
}

/// Builds `M` from the class sizes and the inversions:
///
/// ```text
/// [ -kappa/2        i N_d Omega      i N_ud Omega ]
/// [ -i Omega s_z_d  -(Gamma+g+)/2    0            ]
/// [ -i Omega s_z_ud 0                -Gamma/2     ]
/// ```
pub fn regression_matrix(p: &SystemParams, s_z_d: f64, s_z_ud: f64) -> RegressionSystem {
    let i = Complex64::i();
    let z = Complex64::default();
    let om = p.omega;
    let re = |x: f64| Complex64::new(x, 0.0);
    RegressionSystem {
        m: [
            [re(-0.5 * p.kappa), i * (p.n_d as f64 * om), i * (p.n_ud as f64 * om)],
            [-i * (om * s_z_d), re(-0.5 * (p.gamma + p.gamma_plus)), z],
            [-i * (om * s_z_ud), z, re(-0.5 * p.gamma)],
        ],
        active: [true, p.n_d > 0, p.n_ud > 0],
    }
}

/// Equal-time correlation vector `c(t, 0) = (<a^dag a>, <sigma^+_d a>, <sigma^+_ud a>)`
/// built from single-spin moments (`<sigma^+_mu a> = <a^dag sigma^-_mu>^*`).
pub fn correlation_vector(s: &CumulantState) -> [Complex64; 3] {
    [Complex64::new(s.n_phot, 0.0), s.ad_sm_d.conj(), s.ad_sm_ud.conj()]
}

impl RegressionSystem {
    fn indices(&self) -> Vec<usize> {
        (0..3).filter(|&k| self.active[k]).collect()
    }

    /// The active block of `M`.
    pub fn active_matrix(&self) -> DMatrix<Complex64> {
        let idx = self.indices();
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.m[idx[r]][idx[c]])
    }

    /// Eigenvalues of the active block.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let m = self.active_matrix();
        m.eigenvalues()
            .expect("complex Schur form is triangular")
            .iter()
            .copied()
            .collect()
    }

    /// Fails if an eigenvalue is not strictly in the left half-plane.
    pub fn check_stable(&self) -> Result<(), SpectrumError> {
        let scale = self
            .m
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for l in self.eigenvalues() {
            if l.re >= -1e-14 * scale {
                return Err(SpectrumError::MarginalStability { re: l.re, im: l.im });
            }
        }
        Ok(())
    }

    /// `2 Re[(i w - M)^-1 c]_0` restricted to the active classes.
    pub fn resolvent(&self, c: &[Complex64; 3], omega: f64) -> Result<f64, SpectrumError> {
        let idx = self.indices();
        let n = idx.len();
        let a = DMatrix::from_fn(n, n, |r, k| {
            let diag = if r == k {
                Complex64::new(0.0, omega)
            } else {
                Complex64::default()
            };
            diag - self.m[idx[r]][idx[k]]
        });
        let b = DVector::from_fn(n, |r, _| c[idx[r]]);
        let x = a.lu().solve(&b).ok_or(SpectrumError::Singular { omega })?;
        let v = 2.0 * x[0].re;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SpectrumError::Singular { omega })
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<(), SpectrumError> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|w| !w.is_finite()) {
        return Err(SpectrumError::InvalidGrid);
    }
    Ok(())
}

fn evaluate(sys: &RegressionSystem, c: &[Complex64; 3], grid: &[f64]) -> Result<SpectrumGrid, SpectrumError> {
    check_grid(grid)?;
    sys.check_stable()?;
    let raw = grid
        .iter()
        .map(|&w| sys.resolvent(c, w))
        .collect::<Result<Vec<_>, _>>()?;
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let mut clamped = 0;
    let mut min_raw = 0.0f64;
    let values = raw
        .into_iter()
        .map(|v| {
            if v < 0.0 {
                min_raw = min_raw.min(v);
                if v < -1e-12 * peak {
                    log::warn!("spectral density {v:e} below clamping tolerance (peak {peak:e})");
                }
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(SpectrumGrid {
        omegas: grid.to_vec(),
        values,
        clamped,
        min_raw,
    })
}

/// Stationary spectrum on `grid`.
pub fn steady_state_spectrum(
    sys: &RegressionSystem,
    c_ss: &[Complex64; 3],
    grid: &[f64],
) -> Result<SpectrumGrid, SpectrumError> {
    evaluate(sys, c_ss, grid)
}

/// Whether freezing the inversions over a correlation time is justified:
/// their relaxation rate `Gamma` must be small against the line offset.
pub fn quasi_static_valid(p: &SystemParams, omega: f64) -> bool {
    p.gamma < 0.1 * omega.abs()
}

/// Quasi-static spectrum at one instant of a cumulant trajectory, with `M`
/// built from the instantaneous inversions.
pub fn transient_spectrum(
    p: &SystemParams,
    state: &CumulantState,
    grid: &[f64],
) -> Result<SpectrumGrid, SpectrumError> {
    let sys = regression_matrix(p, state.s_z_d, state.s_z_ud);
    evaluate(&sys, &correlation_vector(state), grid)
}

/// `(delta_nu, delta) = (-Re l, |Im l|)` of the slowest-decaying eigenvalue.
pub fn linewidth_from_eigenvalues(sys: &RegressionSystem) -> (f64, f64) {
    let slowest = sys
        .eigenvalues()
        .into_iter()
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .expect("field mode is always active");
    (-slowest.re, slowest.im.abs())
}

/// `2001` uniform points over `±max(10 dnu, 3 delta, 0.5 V)`, merged with
/// 401-point windows of half-width `20 dnu` around `±delta` whenever the
/// uniform spacing does not resolve the line (spacing > `dnu / 5`).
pub fn default_grid(p: &SystemParams, delta_nu: f64, delta: f64) -> Vec<f64> {
    let span = (10.0 * delta_nu).max(3.0 * delta).max(0.5 * p.v);
    let mut grid = linspace(-span, span, DEFAULT_GRID_POINTS);
    let spacing = 2.0 * span / (DEFAULT_GRID_POINTS - 1) as f64;
    if delta_nu > 0.0 && spacing > delta_nu / 5.0 {
        let half = 20.0 * delta_nu;
        if delta <= half {
            grid.extend(linspace(-(delta + half), delta + half, 801));
        } else {
            grid.extend(linspace(delta - half, delta + half, 401));
            grid.extend(linspace(-delta - half, -delta + half, 401));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * span);
    }
    grid
}

/// Grid focused on the line(s): the window `±(delta + 20 dnu)` on a
/// uniform grid merged with dense windows around each peak.
pub fn fit_grid(delta_nu: f64, delta: f64) -> Vec<f64> {
    let half = 20.0 * delta_nu;
    let mut grid = linspace(-(delta + half), delta + half, 801);
    if delta > half {
        grid.extend(linspace(delta - half, delta + half, 401));
        grid.extend(linspace(-delta - half, -delta + half, 401));
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (delta + half));
    }
    grid
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { b } else { a + step * k as f64 })
        .collect()
}

/// Position `|w| >= 0` of the spectral maximum: coarse search on `grid`,
/// then golden-section refinement of the resolvent between the neighbours
/// of the best sample.
pub fn peak_frequency(sys: &RegressionSystem, c: &[Complex64; 3], grid: &[f64]) -> Result<f64, SpectrumError> {
    check_grid(grid)?;
    sys.check_stable()?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &w) in grid.iter().enumerate() {
        let s = sys.resolvent(c, w)?;
        if s > best.1 {
            best = (k, s);
        }
    }
    let k = best.0;
    let mut lo = grid[k.saturating_sub(1)];
    let mut hi = grid[(k + 1).min(grid.len() - 1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = sys.resolvent(c, x1)?;
    let mut f2 = sys.resolvent(c, x2)?;
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = sys.resolvent(c, x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = sys.resolvent(c, x2)?;
        }
    }
    let w = 0.5 * (lo + hi);
    let refined = sys.resolvent(c, w)?;
    Ok(if refined >= best.1 { w.abs() } else { grid[k].abs() })
}

/// Sum of two Lorentzians at `±delta` sharing width `delta_nu`.
pub fn double_lorentzian(omega: f64, amplitude: f64, delta_nu: f64, delta: f64) -> f64 {
    let l = |u: f64| delta_nu / (delta_nu * delta_nu + u * u);
    amplitude / std::f64::consts::PI * (l(omega - delta) + l(omega + delta))
}

fn model_and_jacobian(omega: f64, x: &[f64; 3]) -> (f64, [f64; 3]) {
    let [a, w, d] = *x;
    let pi = std::f64::consts::PI;
    let u1 = omega - d;
    let u2 = omega + d;
    let q1 = w * w + u1 * u1;
    let q2 = w * w + u2 * u2;
    let l1 = w / q1;
    let l2 = w / q2;
    let dl1_dw = (u1 * u1 - w * w) / (q1 * q1);
    let dl2_dw = (u2 * u2 - w * w) / (q2 * q2);
    // d/d delta: u1 decreases, u2 increases
    let dl1_dd = 2.0 * w * u1 / (q1 * q1);
    let dl2_dd = -2.0 * w * u2 / (q2 * q2);
    (
        a / pi * (l1 + l2),
        [(l1 + l2) / pi, a / pi * (dl1_dw + dl2_dw), a / pi * (dl1_dd + dl2_dd)],
    )
}

fn rms_residual(spec: &SpectrumGrid, x: &[f64; 3]) -> f64 {
    let ss: f64 = spec
        .omegas
        .iter()
        .zip(&spec.values)
        .map(|(&w, &s)| (double_lorentzian(w, x[0], x[1], x[2]) - s).powi(2))
        .sum();
    (ss / spec.len() as f64).sqrt()
}

const MAX_FIT_ITERATIONS: usize = 500;

/// Levenberg-Marquardt with Marquardt scaling over the parameters flagged
/// in `free`; `delta >= 0` and `delta_nu > 0` are enforced by projection.
fn levenberg_marquardt(spec: &SpectrumGrid, x0: [f64; 3], free: [bool; 3]) -> (LorentzianFit, bool, usize) {
    let min_width = 1e-12 * spec.omegas.last().unwrap().abs().max(spec.omegas[0].abs()).max(1e-300);
    let project = |mut x: [f64; 3]| {
        x[1] = x[1].abs().max(min_width);
        x[2] = x[2].max(0.0);
        x
    };
    let mut x = project(x0);
    let mut cost = rms_residual(spec, &x);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for (&w, &s) in spec.omegas.iter().zip(&spec.values) {
            let (f, mut jac) = model_and_jacobian(w, &x);
            for k in 0..3 {
                if !free[k] {
                    jac[k] = 0.0;
                }
            }
            let r = s - f;
            for a in 0..3 {
                jtr[a] += jac[a] * r;
                for b in 0..3 {
                    jtj[(a, b)] += jac[a] * jac[b];
                }
            }
        }
        for k in 0..3 {
            if !free[k] {
                jtj[(k, k)] = 1.0;
            }
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut lhs = jtj;
            for k in 0..3 {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = lhs.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = project([x[0] + step[0], x[1] + step[1], x[2] + step[2]]);
            let trial_cost = rms_residual(spec, &trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_change = (0..3)
                    .map(|k| (trial[k] - x[k]).abs() / x[k].abs().max(min_width))
                    .fold(0.0, f64::max);
                let cost_change = cost - trial_cost;
                x = trial;
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_change < 1e-12 || cost_change <= 1e-15 * cost {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: at a (projected) minimum
            converged = true;
        }
        if converged {
            break;
        }
    }
    (
        LorentzianFit {
            amplitude: x[0],
            delta_nu: x[1],
            delta: x[2],
            residual: cost,
        },
        converged,
        iterations,
    )
}

/// Initial guess from the spectrum alone: outermost maximum for `delta`,
/// half-maximum crossing for `delta_nu`, amplitude from the peak height.
pub fn guess_from_peaks(spec: &SpectrumGrid) -> (f64, f64, f64) {
    let (k, smax) = spec
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, &v)| (k, v))
        .unwrap_or((0, 0.0));
    let delta = spec.omegas[k].abs();
    let half = 0.5 * smax;
    let mut j = k;
    while j + 1 < spec.len() && spec.values[j] > half {
        j += 1;
    }
    let mut i = k;
    while i > 0 && spec.values[i] > half {
        i -= 1;
    }
    let width = (0.5 * (spec.omegas[j] - spec.omegas[i])).max(1e-12 * delta.max(1e-300));
    let amp = std::f64::consts::PI * smax / (1.0 / width + width / (width * width + 4.0 * delta * delta));
    (amp, width, delta)
}

/// Fits `(A/pi) [dnu/(dnu^2 + (w-d)^2) + dnu/(dnu^2 + (w+d)^2)]` by
/// nonlinear least squares. `init` is `(dnu, delta)` (typically from the
/// regression eigenvalues); without it the guess comes from the peaks. A
/// single-peak fit with `delta = 0` is always tried as well and kept when it
/// is at least as good, which resolves merged lines exactly.
pub fn fit_double_lorentzian(spec: &SpectrumGrid, init: Option<(f64, f64)>) -> Result<LorentzianFit, SpectrumError> {
    if spec.len() < MIN_FIT_POINTS {
        return Err(SpectrumError::TooFewPoints {
            needed: MIN_FIT_POINTS,
            got: spec.len(),
        });
    }
    let (a_peak, w_peak, d_peak) = guess_from_peaks(spec);
    let start = match init {
        Some((w, d)) if w > 0.0 && w.is_finite() && d.is_finite() => {
            let smax = spec.max_value();
            let amp = std::f64::consts::PI * smax / (1.0 / w + w / (w * w + 4.0 * d * d));
            [amp, w, d.abs()]
        }
        _ => [a_peak, w_peak, d_peak],
    };
    let (two, ok_two, it_two) = levenberg_marquardt(spec, start, [true, true, true]);
    let (one, ok_one, it_one) = levenberg_marquardt(spec, [start[0], start[1], 0.0], [true, true, false]);
    let (best, ok, it) = if one.residual <= two.residual * (1.0 + 1e-9) {
        (one, ok_one, it_one)
    } else {
        (two, ok_two, it_two)
    };
    if ok {
        Ok(best)
    } else {
        Err(SpectrumError::FitFailed { best, iterations: it })
    }
}

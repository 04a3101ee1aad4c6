//! Second-order cumulant equations for finite atom numbers.
//!
//! Permutation symmetry within each class reduces the moment hierarchy to
//! eight quantities; the global U(1) symmetry removes all first moments
//! (`<a>`, `<sigma^+>`), so they never appear here. N only enters through
//! the class sizes, making the cost independent of N.

use num_complex::Complex64;
use thiserror::Error;

use crate::integrate::{self, IntegratorOptions, SolverError};
use crate::model::{CumulantState, SystemParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CumulantError {
    #[error("non-finite cumulant state")]
    NonFinite,
    #[error("cumulant integration failed: {0}")]
    Solver(#[from] SolverError),
}

/// Time derivative of the eight moments. Moments belonging to an empty
/// class are constant.
pub fn cumulant_rhs(s: &CumulantState, p: &SystemParams) -> CumulantState {
    let i = Complex64::i();
    let om = p.omega;
    let (gp, gm, g, kappa) = (p.gamma_plus, p.gamma_minus, p.gamma, p.kappa);
    let n_d = p.n_d as f64;
    let n_ud = p.n_ud as f64;
    let x_d = s.ad_sm_d;
    let x_ud = s.ad_sm_ud;
    let c = s.sp_d_sm_ud;

    let mut d = CumulantState {
        s_z_d: -gm * (s.s_z_d + 1.0) - gp * (s.s_z_d - 1.0) - 4.0 * om * x_d.im,
        s_z_ud: -gm * (s.s_z_ud + 1.0) - 4.0 * om * x_ud.im,
        n_phot: -kappa * s.n_phot + 2.0 * om * (n_d * x_d.im + n_ud * x_ud.im),
        ad_sm_d: -0.5 * (gp + g + kappa) * x_d
            + i * om * ((n_d - 1.0) * s.sp_sm_dd + 0.5 * (1.0 + s.s_z_d) + n_ud * c.conj() + s.n_phot * s.s_z_d),
        ad_sm_ud: -0.5 * (g + kappa) * x_ud
            + i * om * ((n_ud - 1.0) * s.sp_sm_udud + 0.5 * (1.0 + s.s_z_ud) + n_d * c + s.n_phot * s.s_z_ud),
        sp_sm_dd: -(gp + g) * s.sp_sm_dd + 2.0 * om * s.s_z_d * x_d.im,
        sp_sm_udud: -g * s.sp_sm_udud + 2.0 * om * s.s_z_ud * x_ud.im,
        sp_d_sm_ud: -(0.5 * gp + g) * c + i * om * (s.s_z_ud * x_d.conj() - s.s_z_d * x_ud),
    };
    // moments of an empty class do not exist and are held fixed
    if p.n_d == 0 {
        d.s_z_d = 0.0;
        d.ad_sm_d = Complex64::default();
        d.sp_sm_dd = 0.0;
    }
    if p.n_ud == 0 {
        d.s_z_ud = 0.0;
        d.ad_sm_ud = Complex64::default();
        d.sp_sm_udud = 0.0;
    }
    if p.n_d == 0 || p.n_ud == 0 {
        d.sp_d_sm_ud = Complex64::default();
    }
    d
}

pub fn cumulant_rhs_packed(p: &SystemParams, y: &[f64], dy: &mut [f64]) {
    dy.copy_from_slice(&cumulant_rhs(&CumulantState::unpack(y), p).pack());
}

/// Default options for cumulant runs: stationarity threshold
/// `1e-10 * max rate` and a horizon long enough for the slowest
/// population relaxation at the given rates.
pub fn default_options(p: &SystemParams) -> IntegratorOptions {
    let slowest = [p.gamma_plus, p.gamma, p.v]
        .into_iter()
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min);
    let t_max = if slowest.is_finite() {
        (200.0 / slowest).max(1e3 / p.max_rate().max(1e-300))
    } else {
        1e5
    };
    IntegratorOptions::default()
        .with_ss_tol(1e-10 * p.max_rate().max(1.0))
        .with_t_max(t_max)
}

/// Integrates the moments and samples them at `t_eval` (increasing, `>= t0`).
pub fn integrate_cumulants_at(
    p: &SystemParams,
    initial: &CumulantState,
    t0: f64,
    t_eval: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<CumulantState>, CumulantError> {
    let traj = integrate::integrate_at(
        |_, y, dy| cumulant_rhs_packed(p, y, dy),
        &initial.pack(),
        t0,
        t_eval,
        opts,
    )?;
    Ok(traj.states.iter().map(|y| CumulantState::unpack(y)).collect())
}

const EXTRA_HORIZONS: usize = 12;

/// Steady state reached from `initial`.
///
/// The trajectory is followed until the derivative is small, then the fixed
/// point is polished by Newton iteration; if polishing fails, integration
/// resumes with a tighter threshold, down to `opts.ss_tol`. A class without
/// any relaxation (`gamma_- = Gamma = 0`, and `gamma_+ = 0` for the driven
/// class) conserves `s_z^2 + 4 <sigma^+ sigma^->`; its fixed points form a
/// family and the one on the leaf of `initial` is selected.
pub fn steady_state_from(
    p: &SystemParams,
    initial: &CumulantState,
    opts: &IntegratorOptions,
) -> Result<CumulantState, CumulantError> {
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| cumulant_rhs_packed(p, y, dy);
    let scale = p.max_rate().max(1.0);
    let mut y = initial.pack();
    let tols: Vec<f64> = [1e-5, 1e-7, 1e-9]
        .map(|f| f * scale)
        .into_iter()
        .filter(|t| *t > opts.ss_tol)
        .collect();
    for &coarse_tol in &tols {
        let coarse = IntegratorOptions {
            ss_tol: coarse_tol,
            ..opts.clone()
        };
        // slow relaxation oscillations may outlast the horizon; keep going
        // from where the run stopped
        y = match integrate::integrate_to_steady(rhs, &y, &coarse) {
            Ok(ss) => ss.state,
            Err(SolverError::NotConverged { tail, .. }) => tail.last().map(|(_, y)| y.clone()).unwrap_or(y),
            Err(SolverError::Oscillatory { state, .. }) => state,
            Err(e) => return Err(e.into()),
        };
        if let Some(s) = newton_polish(p, initial, &y, opts.ss_tol) {
            return Ok(s);
        }
        log::debug!("Newton polishing failed at coarse tolerance {coarse_tol:e}");
    }
    // close to threshold the trajectory can linger near the ghost of a
    // fixed point, where the derivative is small but no root exists, for
    // many horizons; follow it through
    if !tols.is_empty() {
        for _ in 0..EXTRA_HORIZONS {
            let traj = integrate::integrate_at(rhs, &y, 0.0, &[opts.t_max], opts)?;
            y = traj.states.last().cloned().unwrap_or(y);
            if let Some(s) = newton_polish(p, initial, &y, opts.ss_tol) {
                return Ok(s);
            }
        }
        log::debug!("Newton polishing failed after {EXTRA_HORIZONS} extra horizons");
    }
    let ss = integrate::integrate_to_steady(rhs, &y, opts)?;
    let s = CumulantState::unpack(&ss.state);
    if !s.pack().iter().all(|x| x.is_finite()) {
        return Err(CumulantError::NonFinite);
    }
    Ok(s)
}

/// Indices held fixed (empty classes) and, per class, whether the class
/// has no relaxation at all.
fn structure(p: &SystemParams) -> (Vec<usize>, [bool; 2]) {
    let mut frozen = Vec::new();
    if p.n_d == 0 {
        frozen.extend([0, 3, 4, 7]);
    }
    if p.n_ud == 0 {
        frozen.extend([1, 5, 6, 8]);
    }
    if p.n_d == 0 || p.n_ud == 0 {
        frozen.extend([9, 10]);
    }
    let undamped = p.gamma_minus == 0.0 && p.gamma == 0.0;
    let conserving = [p.n_d > 0 && undamped && p.gamma_plus == 0.0, p.n_ud > 0 && undamped];
    (frozen, conserving)
}

/// Residual whose root is the fixed point on the leaf of `initial`.
fn constrained_residual(
    p: &SystemParams,
    initial: &[f64],
    frozen: &[usize],
    conserving: [bool; 2],
    y: &[f64],
) -> Vec<f64> {
    let mut f = vec![0.0; CumulantState::DIM];
    cumulant_rhs_packed(p, y, &mut f);
    for &k in frozen {
        f[k] = y[k] - initial[k];
    }
    // (s_z index, sp_sm index) per class
    for (c, (iz, ic)) in [(0, 7), (1, 8)].into_iter().enumerate() {
        if conserving[c] {
            let inv = |v: &[f64]| v[iz] * v[iz] + 4.0 * v[ic];
            f[iz] = inv(y) - inv(initial);
        }
    }
    f
}

/// Newton iteration on the constrained residual. Iterates past `tol` down
/// to round-off, since spectra near transmission zeros are sensitive to
/// residual correlations.
fn newton_polish(p: &SystemParams, initial: &CumulantState, start: &[f64], tol: f64) -> Option<CumulantState> {
    let init = initial.pack();
    let (frozen, conserving) = structure(p);
    let residual = |y: &[f64]| constrained_residual(p, &init, &frozen, conserving, y);
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let converged = |y: &[f64], f: &[f64]| {
        let mut dy = vec![0.0; CumulantState::DIM];
        cumulant_rhs_packed(p, y, &mut dy);
        let bound = tol * norm(y).max(1.0);
        norm(&dy) < bound && norm(f) < bound
    };
    let dim = CumulantState::DIM;
    let mut y = start.to_vec();
    let mut f = residual(&y);
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let f_start = l2(&f);
    for iter in 0..40 {
        let f0 = l2(&f);
        if f0 == 0.0 || (iter == 10 && f0 > 1e-3 * f_start && !converged(&y, &f)) {
            break;
        }
        let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for k in 0..dim {
            let h = 1e-7 * y[k].abs().max(1e-3);
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let (fp, fm) = (residual(&yp), residual(&ym));
            for r in 0..dim {
                jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let Some(step) = jac.lu().solve(&nalgebra::DVector::from_column_slice(&f)) else {
            break;
        };
        // backtracking on the Euclidean residual norm, along which the
        // Newton direction is a descent direction
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1e-6 {
            let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, b)| a - lambda * b).collect();
            let ft = residual(&trial);
            if ft.iter().all(|x| x.is_finite()) && l2(&ft) < f0 {
                y = trial;
                f = ft;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        // stop once progress stalls at round-off
        if !accepted || (converged(&y, &f) && l2(&f) > 0.5 * f0) {
            break;
        }
    }
    let s = CumulantState::unpack(&y);
    (converged(&y, &f) && s.within_bounds(p, 1e-9)).then_some(s)
}

/// Steady state from the all-ground, uncorrelated initial condition.
pub fn cumulant_steady_state(p: &SystemParams, opts: &IntegratorOptions) -> Result<CumulantState, CumulantError> {
    steady_state_from(p, &CumulantState::ground(), opts)
}

/// Output power and photon numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputPower {
    /// `kappa <a^dag a>`
    pub power: f64,
    pub n_phot: f64,
    pub n_phot_per_atom: f64,
}

pub fn output_power(s: &CumulantState, p: &SystemParams) -> OutputPower {
    OutputPower {
        power: p.kappa * s.n_phot,
        n_phot: s.n_phot,
        n_phot_per_atom: s.n_phot / p.n as f64,
    }
}

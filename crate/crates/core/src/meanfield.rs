//! Mean-field dynamics of the two spin classes: equations of motion with and
//! without the cavity field, phase dynamics, traveling-wave frequency, fixed
//! points, lasing thresholds and the good-cavity (standard laser) limit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::integrate::{self, IntegratorOptions, SolverError, SteadyState, Trajectory};
use crate::model::{MeanFieldState, SystemParams, TravelingWaveSolution, DEFAULT_BAD_CAVITY_THRESHOLD};

/// Magnitude of the symmetry-breaking coherence added to dynamical runs.
pub const SEED_COHERENCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("no gain: gamma_plus must be > 0")]
    NoGain,
    #[error("no population inversion: gamma_plus ({gamma_plus}) must exceed gamma_minus ({gamma_minus})")]
    NoInversion { gamma_plus: f64, gamma_minus: f64 },
    #[error("incoherent fixed point undefined for gamma_plus = gamma_minus = 0")]
    UndefinedFixedPoint,
    #[error("singular denominator in the adiabatically eliminated {class} spin term")]
    SingularDenominator { class: &'static str },
    #[error("state carries no cavity amplitude")]
    MissingCavityAmplitude,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Derivative of the reduced (cavity-eliminated) mean-field equations,
/// including spontaneous emission and dephasing. With
/// `gamma_minus = gamma_z = 0` these are the dissipation-free equations.
///
/// A class with zero weight (`p_d = 0` or `p_ud = 0`) does not exist; its
/// components are held fixed.
pub fn reduced_rhs(state: &MeanFieldState, p: &SystemParams) -> MeanFieldState {
    let s_plus = state.average_coherence(p);
    let v = p.v;
    let mut d = MeanFieldState {
        s_plus_d: v * s_plus * state.s_z_d - 0.5 * (p.gamma + p.gamma_plus) * state.s_plus_d,
        s_plus_ud: v * s_plus * state.s_z_ud - 0.5 * p.gamma * state.s_plus_ud,
        s_z_d: -4.0 * v * (state.s_plus_d.conj() * s_plus).re - p.gamma_minus * (1.0 + state.s_z_d)
            + p.gamma_plus * (1.0 - state.s_z_d),
        s_z_ud: -4.0 * v * (state.s_plus_ud.conj() * s_plus).re - p.gamma_minus * (1.0 + state.s_z_ud),
        alpha: None,
    };
    if p.p_d == 0.0 {
        d.s_plus_d = Complex64::default();
        d.s_z_d = 0.0;
    }
    if p.p_ud == 0.0 {
        d.s_plus_ud = Complex64::default();
        d.s_z_ud = 0.0;
    }
    d
}

/// `reduced_rhs` on the packed layout of [`MeanFieldState::pack`].
pub fn reduced_rhs_packed(p: &SystemParams, y: &[f64], dy: &mut [f64]) {
    let d = reduced_rhs(&MeanFieldState::unpack(&y[..MeanFieldState::REDUCED_DIM]), p);
    dy[..MeanFieldState::REDUCED_DIM].copy_from_slice(&d.pack());
}

/// Adiabatic cavity amplitude `-2 i N Omega s^- / kappa` slaved to the spins.
pub fn adiabatic_cavity_amplitude(state: &MeanFieldState, p: &SystemParams) -> Complex64 {
    let s_minus = state.average_coherence(p).conj();
    Complex64::new(0.0, -2.0 * p.n as f64 * p.omega / p.kappa) * s_minus
}

/// Derivative of the mean-field equations with an explicit cavity amplitude.
/// Empty classes are held fixed as in [`reduced_rhs`].
pub fn with_cavity_rhs(state: &MeanFieldState, p: &SystemParams) -> Result<MeanFieldState, MeanFieldError> {
    let alpha = state.alpha.ok_or(MeanFieldError::MissingCavityAmplitude)?;
    let i = Complex64::i();
    let om = p.omega;
    let s_minus = state.average_coherence(p).conj();
    Ok(MeanFieldState {
        s_plus_d: -0.5 * (p.gamma_plus + p.gamma_minus + 2.0 * p.gamma_z) * state.s_plus_d
            - i * om * alpha.conj() * state.s_z_d,
        s_plus_ud: -0.5 * (p.gamma_minus + 2.0 * p.gamma_z) * state.s_plus_ud - i * om * alpha.conj() * state.s_z_ud,
        s_z_d: -p.gamma_minus * (state.s_z_d + 1.0) - p.gamma_plus * (state.s_z_d - 1.0)
            + 4.0 * om * (alpha * state.s_plus_d).im,
        s_z_ud: -p.gamma_minus * (state.s_z_ud + 1.0) + 4.0 * om * (alpha * state.s_plus_ud).im,
        alpha: Some(-0.5 * p.kappa * alpha - i * p.n as f64 * om * s_minus),
    })
    .map(|mut d| {
        if p.p_d == 0.0 {
            d.s_plus_d = Complex64::default();
            d.s_z_d = 0.0;
        }
        if p.p_ud == 0.0 {
            d.s_plus_ud = Complex64::default();
            d.s_z_ud = 0.0;
        }
        d
    })
}

pub fn with_cavity_rhs_packed(p: &SystemParams, y: &[f64], dy: &mut [f64]) {
    let s = MeanFieldState::unpack(y);
    let d = with_cavity_rhs(&s, p).expect("packed with-cavity state has 8 components");
    dy.copy_from_slice(&d.pack());
}

/// Phases, magnitudes and average phase of the coherences. Phases lie in
/// `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseView {
    pub phi_d: f64,
    pub phi_ud: f64,
    pub phi_bar: f64,
    pub abs_d: f64,
    pub abs_ud: f64,
    pub abs_bar: f64,
}

pub fn phase_view(state: &MeanFieldState, p: &SystemParams) -> PhaseView {
    let s_plus = state.average_coherence(p);
    PhaseView {
        phi_d: state.s_plus_d.arg(),
        phi_ud: state.s_plus_ud.arg(),
        phi_bar: s_plus.arg(),
        abs_d: state.s_plus_d.norm(),
        abs_ud: state.s_plus_ud.norm(),
        abs_bar: s_plus.norm(),
    }
}

/// Phase velocities of the two classes. `None` marks a class whose
/// coherence vanishes, leaving its phase undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRates {
    pub d: Option<f64>,
    pub ud: Option<f64>,
}

/// `dphi_mu/dt = s_z_mu V |s+| / |s+_mu| sin(phi_bar - phi_mu)`: driven
/// (inverted) spins are pulled toward the average phase, undriven spins are
/// pushed away from it.
pub fn phase_rhs(state: &MeanFieldState, p: &SystemParams) -> PhaseRates {
    let view = phase_view(state, p);
    let rate =
        |s_z: f64, abs: f64, phi: f64| (abs > 0.0).then(|| s_z * p.v * view.abs_bar / abs * (view.phi_bar - phi).sin());
    PhaseRates {
        d: rate(state.s_z_d, view.abs_d, view.phi_d),
        ud: rate(state.s_z_ud, view.abs_ud, view.phi_ud),
    }
}

/// Rotation rate of the average coherence, `Im[(ds+/dt) / s+]`.
pub fn instantaneous_frequency(state: &MeanFieldState, p: &SystemParams) -> Option<f64> {
    let s_plus = state.average_coherence(p);
    if s_plus.norm() == 0.0 {
        return None;
    }
    let d = reduced_rhs(state, p);
    Some((d.average_coherence(p) / s_plus).im)
}

/// Frequency of the traveling-wave states,
/// `omega = ±sqrt{(g+/4) [v - 2 V p_ud - sqrt(v (v - 4 V p_ud))]}` with
/// `v = 2V - g+`. Evaluated in complex arithmetic; the state exists when the
/// result is real to `1e-12 V`. Derived for `gamma_minus = gamma_z = 0`.
pub fn traveling_wave_frequency(p: &SystemParams) -> TravelingWaveSolution {
    let v_big = p.v;
    let v = Complex64::new(2.0 * v_big - p.gamma_plus, 0.0);
    let inner = v - 2.0 * v_big * p.p_ud - (v * (v - 4.0 * v_big * p.p_ud)).sqrt();
    let omega = (0.25 * p.gamma_plus * inner).sqrt();
    let scale = if v_big > 0.0 { v_big } else { 1.0 };
    if omega.im.abs() > 1e-12 * scale || !omega.re.is_finite() {
        TravelingWaveSolution {
            omega: None,
            exists: false,
        }
    } else {
        TravelingWaveSolution {
            omega: Some(omega.re.abs()),
            exists: true,
        }
    }
}

/// Critical driven fraction above which the incoherent state is unstable,
/// `p_c = (1/2)(1 + g-/g+)(1 + Gamma/V + g+/(2V))`. Values above one mean no
/// lasing at any driven fraction.
pub fn lasing_threshold(p: &SystemParams) -> Result<f64, MeanFieldError> {
    if !(p.gamma_plus > 0.0) {
        return Err(MeanFieldError::NoGain);
    }
    if p.v == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(0.5 * (1.0 + p.gamma_minus / p.gamma_plus) * (1.0 + p.gamma / p.v + p.gamma_plus / (2.0 * p.v)))
}

/// Threshold when the undriven spins do not couple to the cavity,
/// `(g- + g+)(Gamma + g+) / (2 (g+ - g-) V)`.
pub fn lasing_threshold_decoupled(p: &SystemParams) -> Result<f64, MeanFieldError> {
    if !(p.gamma_plus > p.gamma_minus) {
        return Err(MeanFieldError::NoInversion {
            gamma_plus: p.gamma_plus,
            gamma_minus: p.gamma_minus,
        });
    }
    if p.v == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((p.gamma_minus + p.gamma_plus) * (p.gamma + p.gamma_plus) / (2.0 * (p.gamma_plus - p.gamma_minus) * p.v))
}

/// Effective squared linewidths `(G~_d^2, G~_ud^2)` of the good-cavity limit.
pub fn standard_laser_widths(p: &SystemParams) -> (f64, f64) {
    let gm = p.gamma_minus;
    (
        (gm + p.gamma_plus) * (gm + p.gamma_plus + 2.0 * p.gamma_z),
        gm * (gm + 2.0 * p.gamma_z),
    )
}

/// Cavity amplitude equation after eliminating the spins (good cavity). The
/// gain bracket is real, so `arg(alpha)` is conserved.
pub fn standard_laser_rhs(alpha: Complex64, p: &SystemParams) -> Result<Complex64, MeanFieldError> {
    let (gd2, gud2) = standard_laser_widths(p);
    let n = p.n as f64;
    let a2 = 8.0 * alpha.norm_sqr();
    let om2 = p.omega * p.omega;
    let mut bracket = -0.5 * p.kappa;
    if p.omega > 0.0 {
        if p.p_d > 0.0 {
            let den = gd2 / om2 + a2;
            if den == 0.0 {
                return Err(MeanFieldError::SingularDenominator { class: "driven" });
            }
            bracket += 2.0 * n * p.p_d * (p.gamma_plus - p.gamma_minus) / den;
        }
        if p.p_ud > 0.0 {
            let den = gud2 / om2 + a2;
            if den == 0.0 {
                return Err(MeanFieldError::SingularDenominator { class: "undriven" });
            }
            bracket -= 2.0 * n * p.p_ud * p.gamma_minus / den;
        }
    }
    Ok(alpha * bracket)
}

/// Outcome of the good-cavity threshold condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardLaserThreshold {
    pub lasing: bool,
    /// `p_d (g+ - g-)/G~_d^2 - p_ud g-/G~_ud^2 - 1/(2V)`.
    pub margin: f64,
}

pub fn standard_laser_threshold(p: &SystemParams) -> Result<StandardLaserThreshold, MeanFieldError> {
    let (gd2, gud2) = standard_laser_widths(p);
    let mut lhs = 0.0;
    if p.p_d > 0.0 {
        if gd2 <= 0.0 {
            return Err(MeanFieldError::SingularDenominator { class: "driven" });
        }
        lhs += p.p_d * (p.gamma_plus - p.gamma_minus) / gd2;
    }
    if p.p_ud > 0.0 {
        if gud2 <= 0.0 {
            return Err(MeanFieldError::SingularDenominator { class: "undriven" });
        }
        lhs -= p.p_ud * p.gamma_minus / gud2;
    }
    let rhs = if p.v > 0.0 { 1.0 / (2.0 * p.v) } else { f64::INFINITY };
    let margin = lhs - rhs;
    Ok(StandardLaserThreshold {
        lasing: margin > 0.0,
        margin,
    })
}

/// The non-lasing fixed point: no coherence, driven inversion
/// `(g+ - g-)/(g+ + g-)`, undriven spins in the ground state.
pub fn incoherent_fixed_point(p: &SystemParams) -> Result<MeanFieldState, MeanFieldError> {
    let total = p.gamma_plus + p.gamma_minus;
    if !(total > 0.0) {
        return Err(MeanFieldError::UndefinedFixedPoint);
    }
    Ok(MeanFieldState {
        s_plus_d: Complex64::default(),
        s_plus_ud: Complex64::default(),
        s_z_d: (p.gamma_plus - p.gamma_minus) / total,
        s_z_ud: -1.0,
        alpha: None,
    })
}

/// Incoherent fixed point plus a coherence `1e-3 e^{i theta}` in both
/// classes, `theta` drawn from a ChaCha8 stream seeded with `seed`.
/// Inversions are shrunk where needed so each Bloch vector stays in the
/// unit ball. When `gamma_plus = gamma_minus = 0` the driven class starts in
/// the ground state.
pub fn seeded_initial_state(p: &SystemParams, seed: u64) -> MeanFieldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let base = incoherent_fixed_point(p).unwrap_or(MeanFieldState {
        s_z_d: -1.0,
        s_z_ud: -1.0,
        ..Default::default()
    });
    let seed_c = Complex64::from_polar(SEED_COHERENCE, theta);
    let cap = (1.0 - 4.0 * SEED_COHERENCE * SEED_COHERENCE).sqrt();
    MeanFieldState {
        s_plus_d: seed_c,
        s_plus_ud: seed_c,
        s_z_d: base.s_z_d.clamp(-cap, cap),
        s_z_ud: base.s_z_ud.clamp(-cap, cap),
        alpha: None,
    }
}

fn warn_if_good_cavity(p: &SystemParams) {
    if !p.is_bad_cavity(DEFAULT_BAD_CAVITY_THRESHOLD) {
        log::warn!(
            "kappa/(sqrt(N) Omega) = {:.3} is below {}; the reduced mean-field equations assume a bad cavity",
            p.bad_cavity_ratio,
            DEFAULT_BAD_CAVITY_THRESHOLD
        );
    }
}

/// Integrates the reduced equations over `t_span`.
pub fn integrate_reduced(
    p: &SystemParams,
    initial: &MeanFieldState,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory, MeanFieldError> {
    warn_if_good_cavity(p);
    let y0 = MeanFieldState {
        alpha: None,
        ..*initial
    }
    .pack();
    Ok(integrate::integrate(
        |_, y, dy| reduced_rhs_packed(p, y, dy),
        &y0,
        t_span,
        opts,
    )?)
}

/// Samples the reduced dynamics at the increasing times `t_eval`.
pub fn integrate_reduced_at(
    p: &SystemParams,
    initial: &MeanFieldState,
    t0: f64,
    t_eval: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<MeanFieldState>, MeanFieldError> {
    warn_if_good_cavity(p);
    let y0 = MeanFieldState {
        alpha: None,
        ..*initial
    }
    .pack();
    let traj = integrate::integrate_at(|_, y, dy| reduced_rhs_packed(p, y, dy), &y0, t0, t_eval, opts)?;
    Ok(traj.states.iter().map(|y| MeanFieldState::unpack(y)).collect())
}

/// Integrates the with-cavity equations over `t_span`.
pub fn integrate_with_cavity(
    p: &SystemParams,
    initial: &MeanFieldState,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory, MeanFieldError> {
    if initial.alpha.is_none() {
        return Err(MeanFieldError::MissingCavityAmplitude);
    }
    Ok(integrate::integrate(
        |_, y, dy| with_cavity_rhs_packed(p, y, dy),
        &initial.pack(),
        t_span,
        opts,
    )?)
}

/// Runs the reduced equations until stationary.
pub fn steady_state_reduced(
    p: &SystemParams,
    initial: &MeanFieldState,
    opts: &IntegratorOptions,
) -> Result<(MeanFieldState, f64), MeanFieldError> {
    warn_if_good_cavity(p);
    let y0 = MeanFieldState {
        alpha: None,
        ..*initial
    }
    .pack();
    let SteadyState { state, time, .. } =
        integrate::integrate_to_steady(|_, y, dy| reduced_rhs_packed(p, y, dy), &y0, opts)?;
    Ok((MeanFieldState::unpack(&state), time))
}

/// Central finite-difference Jacobian of the packed reduced equations.
pub fn reduced_jacobian(p: &SystemParams, state: &MeanFieldState) -> DMatrix<f64> {
    let y = state.pack();
    let n = MeanFieldState::REDUCED_DIM;
    let mut jac = DMatrix::zeros(n, n);
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let h = 1e-7 * y[j].abs().max(1.0);
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[j] += h;
        ym[j] -= h;
        reduced_rhs_packed(p, &yp, &mut fp);
        reduced_rhs_packed(p, &ym, &mut fm);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Largest real part among the eigenvalues of the finite-difference
/// Jacobian at the incoherent fixed point.
pub fn incoherent_growth_rate(p: &SystemParams) -> Result<f64, MeanFieldError> {
    let fp = incoherent_fixed_point(p)?;
    let jac = reduced_jacobian(p, &fp);
    Ok(jac
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Locates the driven fraction at which the incoherent fixed point loses
/// stability by bisection on the sign of [`incoherent_growth_rate`].
///
/// Without spontaneous emission the undriven inversion is a neutral
/// direction (eigenvalue exactly zero), so instability is declared when the
/// growth rate exceeds `1e-9 V`. Returns `None` if the fixed point is stable
/// at `p_d = 1` or unstable at `p_d = 0`.
pub fn bisect_lasing_threshold(p: &SystemParams, tol: f64) -> Result<Option<f64>, MeanFieldError> {
    let margin = 1e-9 * p.v.max(f64::MIN_POSITIVE);
    let unstable = |p_d: f64| -> Result<bool, MeanFieldError> {
        let q = SystemParams {
            p_d,
            p_ud: 1.0 - p_d,
            ..*p
        };
        Ok(incoherent_growth_rate(&q)? > margin)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if unstable(lo)? || !unstable(hi)? {
        return Ok(None);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if unstable(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

//! Adaptive Dormand-Prince 5(4) integration with PI step control, dense
//! output and steady-state detection.
//!
//! States are flat `f64` slices. Complex systems are integrated through
//! [`integrate_complex`], which interleaves real and imaginary parts.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("derivative is not finite; last valid time t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t} (h = {h}); system is too stiff for an explicit method")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({steps}) reached at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("no steady state by t = {t}: bounded oscillation, |rhs| stays at {rhs_norm:e}")]
    Oscillatory { t: f64, rhs_norm: f64, state: Vec<f64> },
    #[error("no steady state by t = {t}: solution diverges (|y| = {state_norm:e})")]
    Divergent { t: f64, state_norm: f64 },
    #[error("no steady state by t = {t}: |rhs| = {rhs_norm:e} still decaying")]
    NotConverged {
        t: f64,
        rhs_norm: f64,
        /// Last few accepted states, oldest first.
        tail: Vec<(f64, Vec<f64>)>,
    },
    #[error("invalid integrator options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Horizon for [`integrate_to_steady`].
    pub t_max: f64,
    /// Stationarity threshold on `|rhs|_inf / max(1, |y|_inf)`.
    pub ss_tol: f64,
    pub max_steps: usize,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: f64::INFINITY,
            t_max: 1e5,
            ss_tol: 1e-10,
            max_steps: 50_000_000,
            h0: None,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_ss_tol(mut self, ss_tol: f64) -> Self {
        self.ss_tol = ss_tol;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(SolverError::Options("tolerances must be > 0".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(SolverError::Options("max_step must be > 0".into()));
        }
        if !(self.ss_tol > 0.0) {
            return Err(SolverError::Options("ss_tol must be > 0".into()));
        }
        Ok(())
    }
}

// Dormand-Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Single-trajectory Dormand-Prince stepper. Holds the current point, the
/// derivative there (first-same-as-last) and the interpolant of the last
/// accepted step.
pub struct Dopri5<F> {
    rhs: F,
    opts: IntegratorOptions,
    t: f64,
    y: Vec<f64>,
    dydt: Vec<f64>,
    h: f64,
    err_old: f64,
    steps: usize,
    // stage storage
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    k5: Vec<f64>,
    k6: Vec<f64>,
    k7: Vec<f64>,
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    // interpolant of the last accepted step on [t_old, t]
    t_old: f64,
    rcont: [Vec<f64>; 5],
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(mut rhs: F, t0: f64, y0: &[f64], opts: &IntegratorOptions) -> Result<Self, SolverError> {
        opts.validate()?;
        let n = y0.len();
        let mut dydt = vec![0.0; n];
        rhs(t0, y0, &mut dydt);
        if !dydt.iter().chain(y0).all(|x| x.is_finite()) {
            return Err(SolverError::NonFinite { t: t0 });
        }
        let mut s = Dopri5 {
            rhs,
            opts: opts.clone(),
            t: t0,
            y: y0.to_vec(),
            dydt,
            h: 0.0,
            err_old: 1e-4,
            steps: 0,
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            k5: vec![0.0; n],
            k6: vec![0.0; n],
            k7: vec![0.0; n],
            y_stage: vec![0.0; n],
            y_new: vec![0.0; n],
            t_old: t0,
            rcont: std::array::from_fn(|i| if i == 0 { y0.to_vec() } else { vec![0.0; n] }),
        };
        s.h = match opts.h0 {
            Some(h) => h.min(opts.max_step),
            None => s.initial_step(),
        };
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point.
    pub fn dydt(&self) -> &[f64] {
        &self.dydt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.opts.atol + self.opts.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len().max(1) as f64;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            dnf += (self.dydt[i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let (dnf, dny) = ((dnf / n).sqrt(), (dny / n).sqrt());
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            0.01 * dny / dnf
        };
        h = h.min(self.opts.max_step);
        for i in 0..self.y.len() {
            self.y_stage[i] = self.y[i] + h * self.dydt[i];
        }
        (self.rhs)(self.t + h, &self.y_stage, &mut self.k2);
        let mut der2 = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i], self.y[i]);
            der2 += ((self.k2[i] - self.dydt[i]) / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.abs().max(dnf);
        let h1 = if der12 <= 1e-15 || !der12.is_finite() {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        (100.0 * h).min(h1).min(self.opts.max_step)
    }

    /// Attempts stages with step `h`; returns the scaled error norm, or
    /// `None` if a stage produced a non-finite derivative.
    fn try_step(&mut self, h: f64) -> Option<f64> {
        let n = self.y.len();
        let t = self.t;
        let y = &self.y;
        let k1 = &self.dydt;
        for i in 0..n {
            self.y_stage[i] = y[i] + h * A21 * k1[i];
        }
        (self.rhs)(t + C2 * h, &self.y_stage, &mut self.k2);
        for i in 0..n {
            self.y_stage[i] = y[i] + h * (A31 * k1[i] + A32 * self.k2[i]);
        }
        (self.rhs)(t + C3 * h, &self.y_stage, &mut self.k3);
        for i in 0..n {
            self.y_stage[i] = y[i] + h * (A41 * k1[i] + A42 * self.k2[i] + A43 * self.k3[i]);
        }
        (self.rhs)(t + C4 * h, &self.y_stage, &mut self.k4);
        for i in 0..n {
            self.y_stage[i] = y[i] + h * (A51 * k1[i] + A52 * self.k2[i] + A53 * self.k3[i] + A54 * self.k4[i]);
        }
        (self.rhs)(t + C5 * h, &self.y_stage, &mut self.k5);
        for i in 0..n {
            self.y_stage[i] =
                y[i] + h * (A61 * k1[i] + A62 * self.k2[i] + A63 * self.k3[i] + A64 * self.k4[i] + A65 * self.k5[i]);
        }
        (self.rhs)(t + h, &self.y_stage, &mut self.k6);
        for i in 0..n {
            self.y_new[i] =
                y[i] + h * (A71 * k1[i] + A73 * self.k3[i] + A74 * self.k4[i] + A75 * self.k5[i] + A76 * self.k6[i]);
        }
        (self.rhs)(t + h, &self.y_new, &mut self.k7);

        let mut err = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i]
                    + E3 * self.k3[i]
                    + E4 * self.k4[i]
                    + E5 * self.k5[i]
                    + E6 * self.k6[i]
                    + E7 * self.k7[i]);
            let sk = self.opts.atol + self.opts.rtol * y[i].abs().max(self.y_new[i].abs());
            err += (e / sk).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        let finite = err.is_finite() && self.k7.iter().chain(&self.y_new).all(|x| x.is_finite());
        finite.then_some(err)
    }

    /// Takes one accepted step, never stepping past `t_end`.
    pub fn step(&mut self, t_end: f64) -> Result<(), SolverError> {
        if self.steps >= self.opts.max_steps {
            return Err(SolverError::MaxSteps {
                t: self.t,
                steps: self.steps,
            });
        }
        let mut h = self.h.min(self.opts.max_step);
        let mut last = false;
        if self.t + h >= t_end {
            h = t_end - self.t;
            last = true;
        }
        let mut non_finite = 0;
        loop {
            if h.abs() <= 16.0 * f64::EPSILON * self.t.abs().max(1e-300) {
                if non_finite > 0 {
                    return Err(SolverError::NonFinite { t: self.t });
                }
                return Err(SolverError::StepUnderflow { t: self.t, h });
            }
            let Some(err) = self.try_step(h) else {
                non_finite += 1;
                if non_finite > 12 {
                    return Err(SolverError::NonFinite { t: self.t });
                }
                h *= 0.25;
                last = false;
                continue;
            };
            let fac11 = err.powf(0.2 - BETA * 0.75);
            if err <= 1.0 {
                let fac = (fac11 / self.err_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let h_new = (h / fac).min(self.opts.max_step);
                self.err_old = err.max(1e-4);
                self.accept(h);
                if last {
                    self.t = t_end;
                }
                // keep the proposed step when clipped by the end of the interval
                self.h = if last { self.h.max(h_new) } else { h_new };
                return Ok(());
            }
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last = false;
        }
    }

    fn accept(&mut self, h: f64) {
        let n = self.y.len();
        for i in 0..n {
            let ydiff = self.y_new[i] - self.y[i];
            let bspl = h * self.dydt[i] - ydiff;
            self.rcont[0][i] = self.y[i];
            self.rcont[1][i] = ydiff;
            self.rcont[2][i] = bspl;
            self.rcont[3][i] = ydiff - h * self.k7[i] - bspl;
            self.rcont[4][i] = h
                * (D1 * self.dydt[i]
                    + D3 * self.k3[i]
                    + D4 * self.k4[i]
                    + D5 * self.k5[i]
                    + D6 * self.k6[i]
                    + D7 * self.k7[i]);
        }
        self.t_old = self.t;
        self.t += h;
        std::mem::swap(&mut self.y, &mut self.y_new);
        std::mem::swap(&mut self.dydt, &mut self.k7);
        self.steps += 1;
    }

    /// Fifth-order interpolant on the last accepted step `[t_old, t]`.
    pub fn dense(&self, t: f64, out: &mut [f64]) {
        let h = self.t - self.t_old;
        if h == 0.0 {
            out.copy_from_slice(&self.y);
            return;
        }
        let theta = (t - self.t_old) / h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}

/// Accepted steps of an integration, monotone in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> (f64, &[f64]) {
        (*self.times.last().unwrap(), self.states.last().unwrap())
    }
}

/// Integrates over `t_span`, recording every accepted step.
pub fn integrate<F>(rhs: F, y0: &[f64], t_span: (f64, f64), opts: &IntegratorOptions) -> Result<Trajectory, SolverError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (t0, t1) = t_span;
    let mut stepper = Dopri5::new(rhs, t0, y0, opts)?;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
    };
    while stepper.t() < t1 {
        stepper.step(t1)?;
        traj.times.push(stepper.t());
        traj.states.push(stepper.y().to_vec());
    }
    Ok(traj)
}

/// Integrates from `t0` and samples the dense interpolant at each of the
/// increasing times `t_eval` (all `>= t0`).
pub fn integrate_at<F>(
    rhs: F,
    y0: &[f64],
    t0: f64,
    t_eval: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory, SolverError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut stepper = Dopri5::new(rhs, t0, y0, opts)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(t_eval.len()),
        states: Vec::with_capacity(t_eval.len()),
    };
    let t_final = t_eval.last().copied().unwrap_or(t0);
    let mut buf = vec![0.0; y0.len()];
    let mut next = 0;
    while next < t_eval.len() && t_eval[next] <= t0 {
        traj.times.push(t_eval[next]);
        traj.states.push(y0.to_vec());
        next += 1;
    }
    while next < t_eval.len() {
        stepper.step(t_final)?;
        while next < t_eval.len() && t_eval[next] <= stepper.t() {
            stepper.dense(t_eval[next], &mut buf);
            traj.times.push(t_eval[next]);
            traj.states.push(buf.clone());
            next += 1;
        }
    }
    Ok(traj)
}

/// Complex-valued trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
}

pub fn interleave(z: &[Complex64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn deinterleave(y: &[f64]) -> Vec<Complex64> {
    y.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Integrates a complex system `z' = f(t, z)`.
pub fn integrate_complex<F>(
    mut rhs: F,
    z0: &[Complex64],
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<ComplexTrajectory, SolverError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = z0.len();
    let mut zin = vec![Complex64::default(); n];
    let mut zout = vec![Complex64::default(); n];
    let real_rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        for (k, z) in zin.iter_mut().enumerate() {
            *z = Complex64::new(y[2 * k], y[2 * k + 1]);
        }
        rhs(t, &zin, &mut zout);
        for (k, z) in zout.iter().enumerate() {
            dy[2 * k] = z.re;
            dy[2 * k + 1] = z.im;
        }
    };
    let traj = integrate(real_rhs, &interleave(z0), t_span, opts)?;
    Ok(ComplexTrajectory {
        times: traj.times,
        states: traj.states.iter().map(|y| deinterleave(y)).collect(),
    })
}

/// A state where the derivative has (numerically) vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub state: Vec<f64>,
    /// Time at which the stationarity criterion was first met.
    pub time: f64,
    pub rhs_norm: f64,
}

const HISTORY_BINS: usize = 16;
const TAIL_LEN: usize = 8;

/// Integrates from `t = 0` until `|rhs(y)|_inf < ss_tol * max(1, |y|_inf)`
/// or `opts.t_max` is reached. Non-convergence is classified as bounded
/// oscillation (the derivative norm does not decay over the last quarter of
/// the run), divergence, or slow convergence.
pub fn integrate_to_steady<F>(rhs: F, y0: &[f64], opts: &IntegratorOptions) -> Result<SteadyState, SolverError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !opts.t_max.is_finite() {
        return Err(SolverError::Options(
            "t_max must be finite for steady-state search".into(),
        ));
    }
    let mut stepper = Dopri5::new(rhs, 0.0, y0, opts)?;
    let stationary = |s: &Dopri5<F>| {
        let r = inf_norm(s.dydt());
        (r < opts.ss_tol * inf_norm(s.y()).max(1.0), r)
    };
    let (done, r) = stationary(&stepper);
    if done {
        return Ok(SteadyState {
            state: y0.to_vec(),
            time: 0.0,
            rhs_norm: r,
        });
    }
    let y_bound = 1e8 * inf_norm(y0).max(1.0);
    let bin_width = opts.t_max / HISTORY_BINS as f64;
    let mut rhs_max = [0.0f64; HISTORY_BINS];
    let mut tail: std::collections::VecDeque<(f64, Vec<f64>)> = Default::default();

    while stepper.t() < opts.t_max {
        match stepper.step(opts.t_max) {
            Ok(()) => {}
            Err(SolverError::NonFinite { t }) | Err(SolverError::StepUnderflow { t, .. })
                if inf_norm(stepper.y()) > y_bound.sqrt() =>
            {
                return Err(SolverError::Divergent {
                    t,
                    state_norm: inf_norm(stepper.y()),
                })
            }
            Err(e) => return Err(e),
        }
        let (done, r) = stationary(&stepper);
        if done {
            return Ok(SteadyState {
                state: stepper.y().to_vec(),
                time: stepper.t(),
                rhs_norm: r,
            });
        }
        let ynorm = inf_norm(stepper.y());
        if ynorm > y_bound {
            return Err(SolverError::Divergent {
                t: stepper.t(),
                state_norm: ynorm,
            });
        }
        let bin = ((stepper.t() / bin_width) as usize).min(HISTORY_BINS - 1);
        rhs_max[bin] = rhs_max[bin].max(r);
        if tail.len() == TAIL_LEN {
            tail.pop_front();
        }
        tail.push_back((stepper.t(), stepper.y().to_vec()));
    }

    let q = HISTORY_BINS / 4;
    let late = rhs_max[3 * q..].iter().copied().fold(0.0, f64::max);
    let earlier = rhs_max[2 * q..3 * q].iter().copied().fold(0.0, f64::max);
    let rhs_norm = inf_norm(stepper.dydt());
    if late >= 0.5 * earlier {
        Err(SolverError::Oscillatory {
            t: stepper.t(),
            rhs_norm,
            state: stepper.y().to_vec(),
        })
    } else {
        Err(SolverError::NotConverged {
            t: stepper.t(),
            rhs_norm,
            tail: tail.into_iter().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn exponential_decay() {
        let opts = IntegratorOptions::default();
        let traj = integrate(|_, y, dy| dy[0] = -y[0], &[1.0], (0.0, 1.0), &opts).unwrap();
        let (t, y) = traj.last();
        assert_eq!(t, 1.0);
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9 * (-1.0f64).exp());
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn complex_phase_rotation() {
        let w = 3.0;
        let opts = IntegratorOptions::default();
        let traj = integrate_complex(
            |_, z, dz| dz[0] = Complex64::i() * w * z[0],
            &[Complex64::new(1.0, 0.0)],
            (0.0, 2.0 * PI / w),
            &opts,
        )
        .unwrap();
        let z = traj.states.last().unwrap()[0];
        assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        for s in &traj.states {
            assert!((s[0].norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_oscillator_energy_drift() {
        // x'' = -x over 1e3 periods against the closed form cos t
        let opts = IntegratorOptions::default().with_tolerances(1e-9, 1e-12);
        let t1 = 2.0 * PI * 1000.0;
        let traj = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[1.0, 0.0],
            (0.0, t1),
            &opts,
        )
        .unwrap();
        let (_, y) = traj.last();
        let energy = 0.5 * (y[0] * y[0] + y[1] * y[1]);
        assert!((energy - 0.5).abs() < 1e-6, "drift {}", energy - 0.5);
        assert!((y[0] - t1.cos()).abs() < 1e-5);
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let run = |rtol: f64| {
            let opts = IntegratorOptions::default().with_tolerances(rtol, rtol * 1e-3);
            let traj = integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                &[1.0, 0.0],
                (0.0, 50.0),
                &opts,
            )
            .unwrap();
            (traj.last().1[0] - 50f64.cos()).abs()
        };
        let coarse = run(1e-5);
        let fine = run(0.5e-5);
        let finer = run(1e-8);
        assert!(fine < coarse, "{fine} !< {coarse}");
        assert!(finer < fine);
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let opts = IntegratorOptions::default();
        let t_eval: Vec<f64> = (0..=100).map(|k| k as f64 * 0.05).collect();
        let traj = integrate_at(|_, y, dy| dy[0] = -y[0], &[1.0], 0.0, &t_eval, &opts).unwrap();
        assert_eq!(traj.times, t_eval);
        for (t, y) in traj.times.iter().zip(&traj.states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn relaxes_to_fixed_point() {
        let opts = IntegratorOptions::default().with_t_max(200.0);
        let ss = integrate_to_steady(|_, y, dy| dy[0] = -(y[0] - 3.0), &[0.0], &opts).unwrap();
        assert!((ss.state[0] - 3.0).abs() < 1e-9);
        assert!(ss.time > 0.0 && ss.time < 200.0);
    }

    #[test]
    fn limit_cycle_is_not_a_steady_state() {
        let opts = IntegratorOptions::default().with_t_max(100.0);
        let err = integrate_to_steady(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[1.0, 0.0],
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::Oscillatory { .. }), "{err:?}");
    }

    #[test]
    fn growth_is_divergence() {
        let opts = IntegratorOptions::default().with_t_max(100.0);
        let err = integrate_to_steady(|_, y, dy| dy[0] = y[0], &[1.0], &opts).unwrap_err();
        assert!(matches!(err, SolverError::Divergent { .. }), "{err:?}");
    }

    #[test]
    fn slow_decay_is_reported_with_tail() {
        let opts = IntegratorOptions::default().with_t_max(20.0);
        let err = integrate_to_steady(|_, y, dy| dy[0] = -0.5 * y[0], &[1.0], &opts).unwrap_err();
        match err {
            SolverError::NotConverged { tail, .. } => assert!(!tail.is_empty()),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn nan_derivative_fails_with_last_valid_time() {
        let opts = IntegratorOptions::default();
        let err = integrate(
            |t, y, dy| dy[0] = if t > 0.5 { f64::NAN } else { -y[0] },
            &[1.0],
            (0.0, 1.0),
            &opts,
        )
        .unwrap_err();
        match err {
            SolverError::NonFinite { t } => assert!(t <= 0.5 && t > 0.3, "t = {t}"),
            e => panic!("unexpected {e:?}"),
        }
    }
}

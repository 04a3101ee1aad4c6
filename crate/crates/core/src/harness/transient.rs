//! Relaxation of the frequency shift after spontaneous emission and
//! dephasing are switched on (Fig. 3(b) and N-scaling data).
//!
//! Protocol: the stationary state without decay or dephasing (for the
//! cumulants) or the settled traveling wave (for mean field) is taken as
//! the state at `t = 0`, then evolved with the full rates.

use crate::config::{Config, PARAM_KEYS};
use crate::cumulant;
use crate::integrate::IntegratorOptions;
use crate::meanfield;
use crate::model::{MeanFieldState, SystemParams};
use crate::spectrum::{self, linspace};

use super::{add_param_metadata, parallel_map, with_default, HarnessError, PointFailure, Table, Value};

const KEYS: &[&str] = &["Ns", "t_end", "samples", "t_settle", "omega_max", "grid_points"];

/// `y = amplitude * exp(-rate t)` fitted by least squares on the linear
/// scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub amplitude: f64,
    pub rate: f64,
    pub r_squared: f64,
}

/// Fits a single decaying exponential. Needs at least three points and a
/// positive start for the log-linear initial guess.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Option<ExpFit> {
    if t.len() != y.len() || t.len() < 3 {
        return None;
    }
    // log-linear guess on the positive samples
    let pos: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, y)| **y > 0.0)
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if pos.len() < 2 {
        return None;
    }
    let m = pos.len() as f64;
    let (st, sl) = pos.iter().fold((0.0, 0.0), |(a, b), (t, l)| (a + t, b + l));
    let (tm, lm) = (st / m, sl / m);
    let (cov, var) = pos.iter().fold((0.0, 0.0), |(c, v), (t, l)| {
        (c + (t - tm) * (l - lm), v + (t - tm) * (t - tm))
    });
    if var == 0.0 {
        return None;
    }
    let slope = cov / var;
    let mut a = (lm - slope * tm).exp();
    let mut k = -slope;

    let sse = |a: f64, k: f64| -> f64 { t.iter().zip(y).map(|(t, y)| (a * (-k * t).exp() - y).powi(2)).sum() };
    let mut cost = sse(a, k);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        // normal equations of the 2x2 Gauss-Newton system
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&ti, &yi) in t.iter().zip(y) {
            let e = (-k * ti).exp();
            let r = a * e - yi;
            let j = [e, -a * ti * e];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m00 = jtj[0][0] * (1.0 + lambda);
            let m11 = jtj[1][1] * (1.0 + lambda);
            let det = m00 * m11 - jtj[0][1] * jtj[1][0];
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
            let dk = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
            let trial = sse(a + da, k + dk);
            if trial.is_finite() && trial < cost {
                let rel = (cost - trial) / cost.max(f64::MIN_POSITIVE);
                a += da;
                k += dk;
                cost = trial;
                lambda = (lambda * 0.1).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - cost / sst } else { f64::NAN };
    Some(ExpFit {
        amplitude: a,
        rate: k,
        r_squared,
    })
}

/// One sampled instant of a finite-N run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    pub t: f64,
    pub n_phot: f64,
    pub s_z_d: f64,
    pub s_z_ud: f64,
    pub peak_omega: f64,
    pub delta_nu_eig: f64,
    pub delta_eig: f64,
    pub quasi_static: bool,
    /// Spectrum on the common grid, normalized to a maximum of one.
    pub spectrum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NTrack {
    pub params: SystemParams,
    pub result: Result<Vec<TrackSample>, (String, String)>,
}

impl NTrack {
    /// Peak frequency at the last sample.
    pub fn residual(&self) -> Option<f64> {
        self.result.as_ref().ok().and_then(|s| s.last()).map(|s| s.peak_omega)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub config: Config,
    /// Full-rate parameters of the first `N`.
    pub base: SystemParams,
    pub times: Vec<f64>,
    pub omegas: Vec<f64>,
    /// Mean-field `|omega(t)|` at `times`.
    pub omega_mf: Vec<f64>,
    pub mean_field: Vec<MeanFieldState>,
    /// Traveling-wave frequency before the switch.
    pub omega_mf_initial: f64,
    pub fit: Option<ExpFit>,
    pub tracks: Vec<NTrack>,
}

/// Keys: the parameter keys (defaults `N = 1e5`, `p_d = 0.8`,
/// `gamma_plus = 1`, `gamma_minus = 1e-4`, `gamma_z = 1e-3`), `Ns` (list of
/// atom numbers at fixed V and cavity ratio, default `N`), `t_end` (1e4), `samples` (101), `t_settle`
/// (mean-field settling time without decay, 5000), `omega_max` (0.3),
/// `grid_points` (601). Times and frequencies are in units of V.
pub fn compute_transient(config: &Config, seed: u64, workers: usize) -> Result<TransientResult, HarnessError> {
    let mut config = config.clone();
    with_default(&mut config, "N", 100000);
    with_default(&mut config, "p_d", 0.8);
    with_default(&mut config, "gamma_plus", 1);
    with_default(&mut config, "gamma_minus", 1e-4);
    with_default(&mut config, "gamma_z", 1e-3);
    let n_default = config.get_u64("N")?.unwrap_or(100000);
    with_default(&mut config, "Ns", n_default);
    with_default(&mut config, "t_end", 1e4);
    with_default(&mut config, "samples", 101);
    with_default(&mut config, "t_settle", 5000);
    with_default(&mut config, "omega_max", 0.3);
    with_default(&mut config, "grid_points", 601);
    config.warn_unknown(&[PARAM_KEYS, KEYS].concat());

    let base = config.system_params(0.8)?;
    let ns = config.get_u64_list("Ns")?.unwrap_or_default();
    let t_end = config.f64_or("t_end", 1e4)?;
    let samples = config.get_u64("samples")?.unwrap_or(101).max(2) as usize;
    let t_settle = config.f64_or("t_settle", 5000.0)?;
    let omega_max = config.f64_or("omega_max", 0.3)?;
    let n_grid = config.get_u64("grid_points")?.unwrap_or(601).max(2) as usize;
    if !(t_end > 0.0 && t_settle >= 0.0 && omega_max > 0.0) {
        return Err(HarnessError::Run(
            "t_end and omega_max must be > 0, t_settle >= 0".into(),
        ));
    }
    let times = linspace(0.0, t_end, samples);
    let omegas = linspace(-omega_max, omega_max, n_grid);
    let undamped = base.with_rates(base.gamma_plus, 0.0, 0.0)?;

    // mean field: settle on the traveling wave, then switch on the decay
    let opts = IntegratorOptions::default();
    let start = meanfield::seeded_initial_state(&undamped, seed);
    let settled = meanfield::integrate_reduced_at(&undamped, &start, 0.0, &[t_settle], &opts)
        .map_err(|e| HarnessError::Run(format!("mean-field settling run: {e}")))?[0];
    let omega_mf_initial = meanfield::instantaneous_frequency(&settled, &undamped).map_or(f64::NAN, f64::abs);
    let mean_field = meanfield::integrate_reduced_at(&base, &settled, 0.0, &times, &opts)
        .map_err(|e| HarnessError::Run(format!("mean-field transient: {e}")))?;
    let omega_mf: Vec<f64> = mean_field
        .iter()
        .map(|s| meanfield::instantaneous_frequency(s, &base).map_or(f64::NAN, f64::abs))
        .collect();
    let fit = fit_exponential(&times, &omega_mf);
    if let Some(f) = fit {
        log::info!(
            "mean-field decay rate {:.6e} V (Gamma = {:.6e}, Gamma/2 = {:.6e}), R^2 = {:.6}",
            f.rate,
            base.gamma,
            0.5 * base.gamma,
            f.r_squared
        );
    }

    let params = ns
        .iter()
        .map(|&n| base.with_n_at_fixed_v(n))
        .collect::<Result<Vec<_>, _>>()?;
    let tracks = parallel_map(&params, workers, |p| NTrack {
        params: *p,
        result: finite_n_track(p, &times, &omegas),
    })?;
    Ok(TransientResult {
        config,
        base: params.first().copied().unwrap_or(base),
        times,
        omegas,
        omega_mf,
        mean_field,
        omega_mf_initial,
        fit,
        tracks,
    })
}

fn finite_n_track(p: &SystemParams, times: &[f64], omegas: &[f64]) -> Result<Vec<TrackSample>, (String, String)> {
    let undamped = p
        .with_rates(p.gamma_plus, 0.0, 0.0)
        .map_err(|e| ("params".to_string(), e.to_string()))?;
    let initial = cumulant::cumulant_steady_state(&undamped, &cumulant::default_options(&undamped))
        .map_err(|e| ("initial steady state".to_string(), e.to_string()))?;
    let states = cumulant::integrate_cumulants_at(p, &initial, 0.0, times, &cumulant::default_options(p))
        .map_err(|e| ("cumulant transient".to_string(), e.to_string()))?;
    let mut invalid = 0usize;
    let mut out = Vec::with_capacity(states.len());
    for (&t, s) in times.iter().zip(&states) {
        let stage = |e: spectrum::SpectrumError| (format!("spectrum at t = {t}"), e.to_string());
        let sys = spectrum::regression_matrix(p, s.s_z_d, s.s_z_ud);
        let (dnu, delta) = spectrum::linewidth_from_eigenvalues(&sys);
        let c = spectrum::correlation_vector(s);
        let peak = spectrum::peak_frequency(&sys, &c, &spectrum::default_grid(p, dnu, delta)).map_err(stage)?;
        let spec = spectrum::transient_spectrum(p, s, omegas).map_err(stage)?;
        let max = spec.max_value();
        let quasi_static = spectrum::quasi_static_valid(p, peak);
        if !quasi_static {
            invalid += 1;
        }
        out.push(TrackSample {
            t,
            n_phot: s.n_phot,
            s_z_d: s.s_z_d,
            s_z_ud: s.s_z_ud,
            peak_omega: peak,
            delta_nu_eig: dnu,
            delta_eig: delta,
            quasi_static,
            spectrum: spec
                .values
                .iter()
                .map(|v| if max > 0.0 { v / max } else { 0.0 })
                .collect(),
        });
    }
    if invalid > 0 {
        log::warn!(
            "N = {}: {invalid} of {} samples have Gamma >= 0.1 |omega_peak|; the quasi-static spectrum is approximate there",
            p.n,
            out.len()
        );
    }
    Ok(out)
}

impl TransientResult {
    pub fn failures(&self) -> Vec<PointFailure> {
        self.tracks
            .iter()
            .filter_map(|tr| {
                tr.result.as_ref().err().map(|(stage, error)| PointFailure {
                    point: format!("N = {}", tr.params.n),
                    stage: stage.clone(),
                    error: error.clone(),
                })
            })
            .collect()
    }

    /// `transient_mean_field`, `transient_tracks`, `transient_spectrogram`
    /// and `transient_summary`.
    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut mf = Table::new(
            "transient_mean_field",
            &["t", "omega_mf", "s_z_d", "s_z_ud", "abs_s_plus_d", "abs_s_plus_ud"],
        );
        let mut tracks = Table::new(
            "transient_tracks",
            &[
                "N",
                "t",
                "peak_omega",
                "delta_nu_eig",
                "delta_eig",
                "n_phot",
                "s_z_d",
                "s_z_ud",
                "omega_mf",
                "quasi_static",
            ],
        );
        let mut spectro = Table::new("transient_spectrogram", &["N", "t", "omega", "S_norm"]);
        let mut summary = Table::new(
            "transient_summary",
            &[
                "N",
                "residual_omega",
                "omega_mf_end",
                "residual_over_mf",
                "fit_rate",
                "fit_amplitude",
                "fit_r_squared",
                "Gamma",
                "rate_over_Gamma",
                "rate_over_half_Gamma",
                "closer_candidate",
                "omega_mf_initial",
                "omega_traveling_wave",
                "status",
            ],
        );
        for t in [&mut mf, &mut tracks, &mut spectro, &mut summary] {
            add_param_metadata(t, &self.base);
            t.meta("seed", seed);
            t.meta(
                "protocol",
                "t = 0: stationary state at gamma_minus = gamma_z = 0, then evolved with the full rates",
            );
        }
        for (s, (t, w)) in self.mean_field.iter().zip(self.times.iter().zip(&self.omega_mf)) {
            mf.push(vec![
                (*t).into(),
                (*w).into(),
                s.s_z_d.into(),
                s.s_z_ud.into(),
                s.s_plus_d.norm().into(),
                s.s_plus_ud.norm().into(),
            ]);
        }
        let mf_end = self.omega_mf.last().copied().unwrap_or(f64::NAN);
        let gamma = self.base.gamma;
        let undamped = self.base.with_rates(self.base.gamma_plus, 0.0, 0.0).ok();
        let tw = undamped.and_then(|p| meanfield::traveling_wave_frequency(&p).omega);
        let (rate, amp, r2) = self
            .fit
            .map_or((f64::NAN, f64::NAN, f64::NAN), |f| (f.rate, f.amplitude, f.r_squared));
        let closer = if !rate.is_finite() || gamma <= 0.0 {
            "none"
        } else if (rate - gamma).abs() < (rate - 0.5 * gamma).abs() {
            "Gamma"
        } else {
            "Gamma/2"
        };
        for tr in &self.tracks {
            let n = tr.params.n;
            if let Ok(samples) = &tr.result {
                for (s, w_mf) in samples.iter().zip(&self.omega_mf) {
                    tracks.push(vec![
                        n.into(),
                        s.t.into(),
                        s.peak_omega.into(),
                        s.delta_nu_eig.into(),
                        s.delta_eig.into(),
                        s.n_phot.into(),
                        s.s_z_d.into(),
                        s.s_z_ud.into(),
                        (*w_mf).into(),
                        s.quasi_static.into(),
                    ]);
                    for (w, v) in self.omegas.iter().zip(&s.spectrum) {
                        spectro.push(vec![n.into(), s.t.into(), (*w).into(), (*v).into()]);
                    }
                }
            }
            let residual = tr.residual();
            let status = match &tr.result {
                Ok(_) => "ok".to_string(),
                Err((stage, error)) => format!("{stage}: {error}"),
            };
            summary.push(vec![
                n.into(),
                residual.into(),
                mf_end.into(),
                residual.map(|r| r / mf_end).into(),
                rate.into(),
                amp.into(),
                r2.into(),
                gamma.into(),
                (rate / gamma).into(),
                (rate / (0.5 * gamma)).into(),
                closer.into(),
                self.omega_mf_initial.into(),
                Value::from(tw),
                status.into(),
            ]);
        }
        vec![mf, tracks, spectro, summary]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_fit_recovers_parameters() {
        let t = linspace(0.0, 10.0, 50);
        let y: Vec<f64> = t.iter().map(|t| 0.2 * (-0.3 * t).exp()).collect();
        let f = fit_exponential(&t, &y).unwrap();
        assert_relative_eq!(f.amplitude, 0.2, max_relative = 1e-8);
        assert_relative_eq!(f.rate, 0.3, max_relative = 1e-8);
        assert!(f.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn exponential_fit_penalizes_plateau() {
        let t = linspace(0.0, 10.0, 50);
        let y: Vec<f64> = t.iter().map(|t| 0.5 * (-t).exp() + 0.3).collect();
        let f = fit_exponential(&t, &y).unwrap();
        assert!(f.r_squared < 0.9, "{}", f.r_squared);
        assert!(fit_exponential(&t[..2], &y[..2]).is_none());
    }
}

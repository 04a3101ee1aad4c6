//! Spectrum as a function of the driven fraction (Fig. 2 style data).

use crate::config::{Config, PARAM_KEYS};
use crate::meanfield;
use crate::model::SystemParams;
use crate::spectrum::{self, linspace};

use super::{
    add_param_metadata, analyze_steady, parallel_map, with_default, HarnessError, PointFailure, SteadyAnalysis, Table,
    Value,
};

const KEYS: &[&str] = &["omega_max", "grid_points"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub params: SystemParams,
    /// Positive traveling-wave frequency, `None` where it does not exist.
    pub omega_mf: Option<f64>,
    /// Spectrum on the common grid, or the failure of this point.
    pub result: Result<(SteadyAnalysis, Vec<f64>), (String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSweep {
    pub config: Config,
    pub base: SystemParams,
    pub omegas: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

/// For each `p_d`: cumulant steady state, stationary spectrum on a common
/// grid `±omega_max`, peak position and fit, and the mean-field frequency.
///
/// Keys: the parameter keys (defaults `N = 1000`, `gamma_plus = V`),
/// `p_d` (list or range, default `0.5:1:51`), `omega_max` (default `0.5 V`),
/// `grid_points` (default 2001).
pub fn compute_spectrum_sweep(config: &Config, workers: usize) -> Result<SpectrumSweep, HarnessError> {
    let mut config = config.clone();
    with_default(&mut config, "N", 1000);
    with_default(&mut config, "gamma_plus", 1);
    with_default(&mut config, "p_d", "0.5:1:51");
    with_default(&mut config, "omega_max", 0.5);
    with_default(&mut config, "grid_points", spectrum::DEFAULT_GRID_POINTS);
    config.warn_unknown(&[PARAM_KEYS, KEYS].concat());
    let p_ds = config.get_list("p_d")?.unwrap_or_default();
    let mut base_cfg = config.clone();
    base_cfg.set("p_d", p_ds.first().copied().unwrap_or(1.0));
    let base = base_cfg.system_params(1.0)?;
    let omega_max = config.f64_or("omega_max", 0.5)? * base.v;
    let n_grid = config.get_u64("grid_points")?.unwrap_or(2001).max(2) as usize;
    let omegas = linspace(-omega_max, omega_max, n_grid);

    let params = p_ds
        .iter()
        .map(|&p_d| base.with_p_d(p_d))
        .collect::<Result<Vec<_>, _>>()?;
    let points = parallel_map(&params, workers, |p| {
        let omega_mf = meanfield::traveling_wave_frequency(p).omega;
        let result = analyze_steady(p)
            .map_err(|e| (e.stage().to_string(), e.to_string()))
            .and_then(|a| {
                let c = spectrum::correlation_vector(&a.state);
                spectrum::steady_state_spectrum(&a.system, &c, &omegas)
                    .map(|s| (a, s.values))
                    .map_err(|e| ("spectrum".to_string(), e.to_string()))
            });
        SweepPoint {
            params: *p,
            omega_mf,
            result,
        }
    })?;
    Ok(SpectrumSweep {
        config,
        base,
        omegas,
        points,
    })
}

impl SpectrumSweep {
    pub fn failures(&self) -> Vec<PointFailure> {
        self.points
            .iter()
            .filter_map(|pt| {
                pt.result.as_ref().err().map(|(stage, error)| PointFailure {
                    point: format!("p_d = {}", pt.params.p_d),
                    stage: stage.clone(),
                    error: error.clone(),
                })
            })
            .collect()
    }

    /// `spectrum_sweep` (long format, one block per `p_d`) and
    /// `spectrum_sweep_points` (one row per `p_d`).
    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut spectra = Table::new("spectrum_sweep", &["p_d", "omega", "S", "omega_mf"]);
        let mut summary = Table::new(
            "spectrum_sweep_points",
            &[
                "p_d",
                "N_d",
                "N_ud",
                "n_phot",
                "power",
                "s_z_d",
                "s_z_ud",
                "delta_nu_eig",
                "delta_eig",
                "peak_omega",
                "fit_amplitude",
                "fit_delta_nu",
                "fit_delta",
                "fit_residual",
                "omega_mf",
                "status",
            ],
        );
        for t in [&mut spectra, &mut summary] {
            add_param_metadata(t, &self.base);
            t.meta("seed", seed);
            t.meta("sweep", "p_d");
        }
        spectra.meta("omega_mf", "positive traveling-wave frequency, NaN where none exists");
        for pt in &self.points {
            let p_d = pt.params.p_d;
            let mf = Value::from(pt.omega_mf);
            match &pt.result {
                Ok((a, values)) => {
                    for (w, s) in self.omegas.iter().zip(values) {
                        spectra.push(vec![p_d.into(), (*w).into(), (*s).into(), mf.clone()]);
                    }
                    let (fit, status) = match &a.fit {
                        Ok(f) => (Some(*f), "ok".to_string()),
                        Err(e) => (None, format!("fit: {e}")),
                    };
                    summary.push(vec![
                        p_d.into(),
                        pt.params.n_d.into(),
                        pt.params.n_ud.into(),
                        a.state.n_phot.into(),
                        (pt.params.kappa * a.state.n_phot).into(),
                        a.state.s_z_d.into(),
                        a.state.s_z_ud.into(),
                        a.delta_nu_eig.into(),
                        a.delta_eig.into(),
                        a.peak_omega.into(),
                        fit.map(|f| f.amplitude).into(),
                        fit.map(|f| f.delta_nu).into(),
                        fit.map(|f| f.delta).into(),
                        fit.map(|f| f.residual).into(),
                        mf,
                        status.into(),
                    ]);
                }
                Err((stage, error)) => {
                    let mut row = vec![p_d.into(), pt.params.n_d.into(), pt.params.n_ud.into()];
                    row.extend((0..11).map(|_| Value::Num(f64::NAN)));
                    row.push(mf);
                    row.push(format!("{stage}: {error}").into());
                    summary.push(row);
                }
            }
        }
        vec![spectra, summary]
    }
}

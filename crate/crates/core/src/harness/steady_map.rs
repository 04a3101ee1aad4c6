//! Steady-state power, linewidth and frequency shift over the
//! (drive rate, driven fraction) plane (Fig. 3 style data).

use crate::config::{Config, PARAM_KEYS};
use crate::meanfield;
use crate::model::{LorentzianFit, SystemParams};
use crate::spectrum::linspace;

use super::{add_param_metadata, analyze_steady, parallel_map, with_default, HarnessError, PointFailure, Table, Value};

const KEYS: &[&str] = &["hatch_min_factor", "hatch_width_factor", "threshold_points"];

/// A point shows a frequency shift when `delta > min_factor * V / N` and
/// `delta > width_factor * delta_nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatchCriterion {
    pub min_factor: f64,
    pub width_factor: f64,
}

impl Default for HatchCriterion {
    fn default() -> Self {
        HatchCriterion {
            min_factor: 3.0,
            width_factor: 0.5,
        }
    }
}

impl HatchCriterion {
    pub fn shifted(&self, p: &SystemParams, fit: &LorentzianFit) -> bool {
        let dnu_min = p.v / p.n as f64;
        fit.delta > self.min_factor * dnu_min && fit.delta > self.width_factor * fit.delta_nu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub params: SystemParams,
    pub n_phot: f64,
    pub s_z_d: f64,
    pub s_z_ud: f64,
    pub delta_nu_eig: f64,
    pub delta_eig: f64,
    pub fit: Option<LorentzianFit>,
    /// Empty when every stage succeeded.
    pub failure: Option<(String, String)>,
}

impl MapPoint {
    pub fn power(&self) -> f64 {
        self.params.kappa * self.n_phot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyMap {
    pub config: Config,
    pub base: SystemParams,
    pub hatch: HatchCriterion,
    /// Row-major: all `p_d` for the first `gamma_plus`, then the next.
    pub points: Vec<MapPoint>,
    /// `(gamma_plus, coupled p_c, decoupled p_c)`.
    pub threshold_curve: Vec<(f64, f64, f64)>,
}

/// Keys: the parameter keys, `gamma_plus` (list, default `0.05:2:40`),
/// `p_d` (list, default `0.5:1:51`), `hatch_min_factor` (3),
/// `hatch_width_factor` (0.5), `threshold_points` (200).
pub fn compute_steady_map(config: &Config, workers: usize) -> Result<SteadyMap, HarnessError> {
    let mut config = config.clone();
    with_default(&mut config, "gamma_plus", "0.05:2:40");
    with_default(&mut config, "p_d", "0.5:1:51");
    with_default(&mut config, "hatch_min_factor", 3);
    with_default(&mut config, "hatch_width_factor", 0.5);
    with_default(&mut config, "threshold_points", 200);
    config.warn_unknown(&[PARAM_KEYS, KEYS].concat());
    let gps = config.get_list("gamma_plus")?.unwrap_or_default();
    let p_ds = config.get_list("p_d")?.unwrap_or_default();
    let hatch = HatchCriterion {
        min_factor: config.f64_or("hatch_min_factor", 3.0)?,
        width_factor: config.f64_or("hatch_width_factor", 0.5)?,
    };
    let mut base_cfg = config.clone();
    base_cfg.set("gamma_plus", gps.first().copied().unwrap_or(1.0));
    base_cfg.set("p_d", p_ds.first().copied().unwrap_or(1.0));
    let base = base_cfg.system_params(1.0)?;
    // gamma_plus in the config is in the same units as the other rates
    let unit = base.reference_rate;

    let mut params = Vec::with_capacity(gps.len() * p_ds.len());
    for &gp in &gps {
        let q = base.with_rates(gp / unit, base.gamma_minus, base.gamma_z)?;
        for &p_d in &p_ds {
            params.push(q.with_p_d(p_d)?);
        }
    }
    let points = parallel_map(&params, workers, |p| match analyze_steady(p) {
        Ok(a) => MapPoint {
            params: *p,
            n_phot: a.state.n_phot,
            s_z_d: a.state.s_z_d,
            s_z_ud: a.state.s_z_ud,
            delta_nu_eig: a.delta_nu_eig,
            delta_eig: a.delta_eig,
            failure: a.fit.as_ref().err().map(|e| ("fit".to_string(), e.to_string())),
            fit: a.fit.ok(),
        },
        Err(e) => MapPoint {
            params: *p,
            n_phot: f64::NAN,
            s_z_d: f64::NAN,
            s_z_ud: f64::NAN,
            delta_nu_eig: f64::NAN,
            delta_eig: f64::NAN,
            fit: None,
            failure: Some((e.stage().to_string(), e.to_string())),
        },
    })?;

    let n_curve = config.get_u64("threshold_points")?.unwrap_or(200).max(2) as usize;
    let (lo, hi) = gps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    let curve_gps = if gps.is_empty() {
        Vec::new()
    } else {
        linspace(lo, hi, n_curve)
    };
    let mut threshold_curve = Vec::with_capacity(curve_gps.len());
    for gp in curve_gps {
        let q = base.with_rates(gp / unit, base.gamma_minus, base.gamma_z)?;
        threshold_curve.push((
            gp,
            meanfield::lasing_threshold(&q).unwrap_or(f64::NAN),
            meanfield::lasing_threshold_decoupled(&q).unwrap_or(f64::NAN),
        ));
    }
    Ok(SteadyMap {
        config,
        base,
        hatch,
        points,
        threshold_curve,
    })
}

impl SteadyMap {
    pub fn failures(&self) -> Vec<PointFailure> {
        self.points
            .iter()
            .filter_map(|pt| {
                pt.failure.as_ref().map(|(stage, error)| PointFailure {
                    point: format!("gamma_plus = {}, p_d = {}", pt.params.gamma_plus, pt.params.p_d),
                    stage: stage.clone(),
                    error: error.clone(),
                })
            })
            .collect()
    }

    pub fn point(&self, gamma_plus: f64, p_d: f64) -> Option<&MapPoint> {
        self.points
            .iter()
            .find(|pt| (pt.params.gamma_plus - gamma_plus).abs() < 1e-12 && (pt.params.p_d - p_d).abs() < 1e-12)
    }

    /// `steady_map` (one row per grid point) and `steady_map_threshold`.
    /// Rates in the tables are in units of V.
    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut map = Table::new(
            "steady_map",
            &[
                "gamma_plus",
                "p_d",
                "power",
                "n_phot",
                "n_phot_per_atom",
                "s_z_d",
                "s_z_ud",
                "delta_nu_fit",
                "delta_fit",
                "delta_nu_eig",
                "delta_eig",
                "delta_nu_min",
                "p_c",
                "above_threshold",
                "hatched",
                "fit_failed",
                "status",
            ],
        );
        let mut curve = Table::new("steady_map_threshold", &["gamma_plus", "p_c", "p_c_decoupled"]);
        for t in [&mut map, &mut curve] {
            add_param_metadata(t, &self.base);
            t.meta("seed", seed);
            t.meta("rate_unit", "V");
        }
        map.meta(
            "hatched",
            format!(
                "delta_fit > {} * delta_nu_min and delta_fit > {} * delta_nu_fit",
                self.hatch.min_factor, self.hatch.width_factor
            ),
        );
        for pt in &self.points {
            let p = &pt.params;
            let p_c = meanfield::lasing_threshold(p).unwrap_or(f64::NAN);
            let hatched = pt.fit.as_ref().is_some_and(|f| self.hatch.shifted(p, f));
            let status = match &pt.failure {
                None => "ok".to_string(),
                Some((stage, error)) => format!("{stage}: {error}"),
            };
            map.push(vec![
                p.gamma_plus.into(),
                p.p_d.into(),
                pt.power().into(),
                pt.n_phot.into(),
                (pt.n_phot / p.n as f64).into(),
                pt.s_z_d.into(),
                pt.s_z_ud.into(),
                pt.fit.map(|f| f.delta_nu).into(),
                pt.fit.map(|f| f.delta).into(),
                pt.delta_nu_eig.into(),
                pt.delta_eig.into(),
                (p.v / p.n as f64).into(),
                p_c.into(),
                (p.p_d > p_c).into(),
                hatched.into(),
                pt.fit.is_none().into(),
                Value::Text(status),
            ]);
        }
        for &(gp, pc, pcd) in &self.threshold_curve {
            curve.push(vec![(gp / self.base.reference_rate).into(), pc.into(), pcd.into()]);
        }
        vec![map, curve]
    }
}

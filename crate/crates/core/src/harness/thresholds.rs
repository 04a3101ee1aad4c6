//! Table of the lasing conditions: coupled and decoupled mean-field
//! thresholds, the good-cavity (standard laser) condition, and the
//! numerically bisected loss of stability of the incoherent state.

use crate::config::{Config, PARAM_KEYS};
use crate::meanfield::{self, MeanFieldError};
use crate::model::SystemParams;

use super::{add_param_metadata, parallel_map, with_default, HarnessError, PointFailure, Table, Value};

const KEYS: &[&str] = &["bisection_tol"];

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub params: SystemParams,
    pub coupled: Result<f64, MeanFieldError>,
    pub decoupled: Result<f64, MeanFieldError>,
    /// `Ok(None)` when the incoherent state is stable at every `p_d`.
    pub bisected: Result<Option<f64>, MeanFieldError>,
    /// Good-cavity condition at the configured `p_d`.
    pub standard: Result<meanfield::StandardLaserThreshold, MeanFieldError>,
    /// Driven fraction where the good-cavity margin changes sign.
    pub standard_critical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub config: Config,
    pub base: SystemParams,
    pub rows: Vec<ThresholdRow>,
}

/// The good-cavity margin is affine in `p_d`:
/// `p_d A - (1 - p_d) B - 1/(2V)`. Returns its root when `A` and `B` are
/// defined.
fn standard_critical(p: &SystemParams) -> Option<f64> {
    let (gd2, gud2) = meanfield::standard_laser_widths(p);
    if !(gd2 > 0.0 && gud2 > 0.0 && p.v > 0.0) {
        return None;
    }
    let a = (p.gamma_plus - p.gamma_minus) / gd2;
    let b = p.gamma_minus / gud2;
    let root = (0.5 / p.v + b) / (a + b);
    root.is_finite().then_some(root)
}

/// Keys: the parameter keys (`N` defaults to 1000, `p_d` to 1),
/// `gamma_plus` (list, default `0.25, 0.5, 1, 1.5, 2`), `bisection_tol`
/// (`1e-8`).
pub fn compute_threshold_report(config: &Config, workers: usize) -> Result<ThresholdReport, HarnessError> {
    let mut config = config.clone();
    with_default(&mut config, "N", 1000);
    with_default(&mut config, "p_d", 1);
    with_default(&mut config, "gamma_plus", "0.25, 0.5, 1, 1.5, 2");
    with_default(&mut config, "bisection_tol", 1e-8);
    config.warn_unknown(&[PARAM_KEYS, KEYS].concat());
    let gps = config.get_list("gamma_plus")?.unwrap_or_default();
    let tol = config.f64_or("bisection_tol", 1e-8)?;
    let mut base_cfg = config.clone();
    base_cfg.set("gamma_plus", gps.first().copied().unwrap_or(1.0));
    let base = base_cfg.system_params(1.0)?;
    let unit = base.reference_rate;
    let params = gps
        .iter()
        .map(|&gp| base.with_rates(gp / unit, base.gamma_minus, base.gamma_z))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = parallel_map(&params, workers, |p| ThresholdRow {
        params: *p,
        coupled: meanfield::lasing_threshold(p),
        decoupled: meanfield::lasing_threshold_decoupled(p),
        bisected: meanfield::bisect_lasing_threshold(p, tol),
        standard: meanfield::standard_laser_threshold(p),
        standard_critical: standard_critical(p),
    })?;
    Ok(ThresholdReport { config, base, rows })
}

impl ThresholdReport {
    pub fn failures(&self) -> Vec<PointFailure> {
        let mut out = Vec::new();
        for r in &self.rows {
            let point = format!("gamma_plus = {}", r.params.gamma_plus);
            let errors = [
                ("coupled threshold", r.coupled.as_ref().err()),
                ("decoupled threshold", r.decoupled.as_ref().err()),
                ("bisection", r.bisected.as_ref().err()),
                ("standard laser", r.standard.as_ref().err()),
            ];
            for (stage, e) in errors {
                if let Some(e) = e {
                    out.push(PointFailure {
                        point: point.clone(),
                        stage: stage.to_string(),
                        error: e.to_string(),
                    });
                }
            }
        }
        out
    }

    /// `thresholds`: one row per drive rate (rates in units of V).
    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut t = Table::new(
            "thresholds",
            &[
                "gamma_plus",
                "gamma_minus",
                "gamma_z",
                "p_c_coupled",
                "p_c_decoupled",
                "p_c_bisected",
                "bisected_minus_coupled",
                "p_d",
                "standard_margin",
                "standard_lasing",
                "p_c_standard",
            ],
        );
        add_param_metadata(&mut t, &self.base);
        t.meta("seed", seed);
        t.meta("rate_unit", "V");
        t.meta("p_c_bisected", "NaN where the incoherent state is stable for all p_d");
        for r in &self.rows {
            let p = &r.params;
            let coupled = r.coupled.as_ref().ok().copied();
            let bisected = r.bisected.as_ref().ok().copied().flatten();
            let diff = coupled.zip(bisected).map(|(c, b)| b - c);
            let std = r.standard.as_ref().ok();
            t.push(vec![
                p.gamma_plus.into(),
                p.gamma_minus.into(),
                p.gamma_z.into(),
                coupled.into(),
                r.decoupled.as_ref().ok().copied().into(),
                bisected.into(),
                diff.into(),
                p.p_d.into(),
                std.map(|s| s.margin).into(),
                std.map_or(Value::Text("undefined".into()), |s| s.lasing.into()),
                r.standard_critical.into(),
            ]);
        }
        vec![t]
    }
}

//! Physical parameters and the state containers shared by every solver.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default lower bound on `kappa / (sqrt(N) * Omega)` for the reduced
/// (cavity-eliminated) mean-field equations to be trusted.
pub const DEFAULT_BAD_CAVITY_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("invalid parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ParamError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ParamError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Atom count, driven fraction and all rates, together with the derived
/// couplings. Rates are in units of `reference_rate` (1.0 means "whatever
/// units the caller used"; after [`SystemParams::normalized`] the unit is V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: u64,
    pub p_d: f64,
    pub omega: f64,
    pub kappa: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub gamma_z: f64,
    /// Size of one rate unit in the caller's original units.
    pub reference_rate: f64,

    // derived
    pub v: f64,
    pub gamma: f64,
    pub p_ud: f64,
    pub n_d: u64,
    pub n_ud: u64,
    pub bad_cavity_ratio: f64,
}

impl SystemParams {
    /// Builds a parameter set from the (N, Omega, kappa) input style.
    pub fn new(
        n: u64,
        p_d: f64,
        omega: f64,
        kappa: f64,
        gamma_plus: f64,
        gamma_minus: f64,
        gamma_z: f64,
    ) -> Result<Self, ParamError> {
        let raw = SystemParams {
            n,
            p_d,
            omega,
            kappa,
            gamma_plus,
            gamma_minus,
            gamma_z,
            reference_rate: 1.0,
            v: 0.0,
            gamma: 0.0,
            p_ud: 0.0,
            n_d: 0,
            n_ud: 0,
            bad_cavity_ratio: 0.0,
        };
        raw.derive()
    }

    /// Builds a parameter set from the (V, N) input style. `cavity_ratio`
    /// fixes `kappa = cavity_ratio * sqrt(N) * Omega`, which together with
    /// V determines Omega and kappa.
    pub fn from_coupling(
        n: u64,
        p_d: f64,
        v: f64,
        cavity_ratio: f64,
        gamma_plus: f64,
        gamma_minus: f64,
        gamma_z: f64,
    ) -> Result<Self, ParamError> {
        if !(v.is_finite() && v > 0.0) {
            return Err(ParamError::invalid("V", format!("must be finite and > 0, got {v}")));
        }
        if !(cavity_ratio.is_finite() && cavity_ratio > 0.0) {
            return Err(ParamError::invalid(
                "cavity_ratio",
                format!("must be finite and > 0, got {cavity_ratio}"),
            ));
        }
        if n == 0 {
            return Err(ParamError::invalid("N", "must be >= 1"));
        }
        // V = 2 N Omega^2 / kappa with kappa = r sqrt(N) Omega  =>  Omega = r V / (2 sqrt(N))
        let sqrt_n = (n as f64).sqrt();
        let omega = cavity_ratio * v / (2.0 * sqrt_n);
        let kappa = cavity_ratio * sqrt_n * omega;
        Self::new(n, p_d, omega, kappa, gamma_plus, gamma_minus, gamma_z)
    }

    /// Validates the input fields and recomputes every derived field.
    /// Applying it to an already derived set is a no-op.
    pub fn derive(&self) -> Result<Self, ParamError> {
        if self.n == 0 {
            return Err(ParamError::invalid("N", "must be >= 1"));
        }
        if !(self.p_d.is_finite() && (0.0..=1.0).contains(&self.p_d)) {
            return Err(ParamError::invalid(
                "p_d",
                format!("must lie in [0, 1], got {}", self.p_d),
            ));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(ParamError::invalid(
                "kappa",
                format!("must be finite and > 0, got {}", self.kappa),
            ));
        }
        for (field, value) in [
            ("Omega", self.omega),
            ("gamma_plus", self.gamma_plus),
            ("gamma_minus", self.gamma_minus),
            ("gamma_z", self.gamma_z),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamError::invalid(
                    field,
                    format!("must be finite and >= 0, got {value}"),
                ));
            }
        }
        if !(self.reference_rate.is_finite() && self.reference_rate > 0.0) {
            return Err(ParamError::invalid("reference_rate", "must be finite and > 0"));
        }

        let n = self.n as f64;
        let v = 2.0 * n * self.omega * self.omega / self.kappa;
        if !v.is_finite() {
            return Err(ParamError::invalid(
                "Omega",
                "coupling V = 2 N Omega^2 / kappa is not finite",
            ));
        }
        let exact = self.p_d * n;
        let n_d = (exact + 0.5).floor() as u64;
        if (exact - exact.round()).abs() > 1e-9 * n.max(1.0) {
            log::warn!("p_d * N = {exact} is not an integer; using N_d = {n_d}");
        }
        let bad_cavity_ratio = if self.omega > 0.0 {
            self.kappa / (n.sqrt() * self.omega)
        } else {
            f64::INFINITY
        };
        Ok(SystemParams {
            v,
            gamma: self.gamma_minus + 2.0 * self.gamma_z,
            p_ud: 1.0 - self.p_d,
            n_d,
            n_ud: self.n - n_d,
            bad_cavity_ratio,
            ..*self
        })
    }

    /// Rescales every rate so that V = 1. Returns an unchanged copy when
    /// V = 0 (uncoupled system).
    pub fn normalized(&self) -> Self {
        if self.v <= 0.0 {
            return *self;
        }
        let s = 1.0 / self.v;
        SystemParams {
            omega: self.omega * s,
            kappa: self.kappa * s,
            gamma_plus: self.gamma_plus * s,
            gamma_minus: self.gamma_minus * s,
            gamma_z: self.gamma_z * s,
            reference_rate: self.reference_rate * self.v,
            v: 1.0,
            gamma: self.gamma * s,
            ..*self
        }
    }

    pub fn with_p_d(&self, p_d: f64) -> Result<Self, ParamError> {
        SystemParams { p_d, ..*self }.derive()
    }

    pub fn with_n(&self, n: u64) -> Result<Self, ParamError> {
        SystemParams { n, ..*self }.derive()
    }

    /// Changes N along the thermodynamic-limit path: `Omega` scales as
    /// `1/sqrt(N)`, keeping `V` and `kappa / (sqrt(N) Omega)` fixed.
    pub fn with_n_at_fixed_v(&self, n: u64) -> Result<Self, ParamError> {
        let omega = self.omega * (self.n as f64 / n as f64).sqrt();
        SystemParams { n, omega, ..*self }.derive()
    }

    pub fn with_rates(&self, gamma_plus: f64, gamma_minus: f64, gamma_z: f64) -> Result<Self, ParamError> {
        SystemParams {
            gamma_plus,
            gamma_minus,
            gamma_z,
            ..*self
        }
        .derive()
    }

    pub fn with_coupling(&self, omega: f64, kappa: f64) -> Result<Self, ParamError> {
        SystemParams { omega, kappa, ..*self }.derive()
    }

    /// Whether the reduced mean-field equations are applicable at the given
    /// threshold on `kappa / (sqrt(N) Omega)`.
    pub fn is_bad_cavity(&self, threshold: f64) -> bool {
        self.bad_cavity_ratio >= threshold
    }

    /// Largest rate in the problem; sets the scale of stationarity checks.
    pub fn max_rate(&self) -> f64 {
        [
            self.kappa,
            self.v,
            self.gamma_plus,
            self.gamma_minus,
            self.gamma_z,
            self.gamma,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// `key = value` lines echoing the full parameter set, used as dataset
    /// metadata.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("N".into(), self.n.to_string()),
            ("p_d".into(), self.p_d.to_string()),
            ("Omega".into(), self.omega.to_string()),
            ("kappa".into(), self.kappa.to_string()),
            ("gamma_plus".into(), self.gamma_plus.to_string()),
            ("gamma_minus".into(), self.gamma_minus.to_string()),
            ("gamma_z".into(), self.gamma_z.to_string()),
            ("reference_rate".into(), self.reference_rate.to_string()),
            ("V".into(), self.v.to_string()),
            ("Gamma".into(), self.gamma.to_string()),
            ("p_ud".into(), self.p_ud.to_string()),
            ("N_d".into(), self.n_d.to_string()),
            ("N_ud".into(), self.n_ud.to_string()),
            ("bad_cavity_ratio".into(), self.bad_cavity_ratio.to_string()),
        ]
    }
}

/// Per-class Bloch vectors of the mean-field description. `alpha` is the
/// coherent cavity amplitude and is only carried by the with-cavity variant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanFieldState {
    pub s_plus_d: Complex64,
    pub s_plus_ud: Complex64,
    pub s_z_d: f64,
    pub s_z_ud: f64,
    pub alpha: Option<Complex64>,
}

impl MeanFieldState {
    /// Real dimension of the packed reduced state.
    pub const REDUCED_DIM: usize = 6;
    /// Real dimension of the packed state including the cavity amplitude.
    pub const CAVITY_DIM: usize = 8;

    /// Ensemble-averaged coherence `p_d s+_d + p_ud s+_ud`.
    pub fn average_coherence(&self, params: &SystemParams) -> Complex64 {
        self.s_plus_d * params.p_d + self.s_plus_ud * params.p_ud
    }

    /// `(s_z)^2 + 4 |s+|^2` for the driven and the undriven class.
    pub fn bloch_norms(&self) -> (f64, f64) {
        (
            self.s_z_d * self.s_z_d + 4.0 * self.s_plus_d.norm_sqr(),
            self.s_z_ud * self.s_z_ud + 4.0 * self.s_plus_ud.norm_sqr(),
        )
    }

    /// Layout: `[Re s+_d, Im s+_d, Re s+_ud, Im s+_ud, s_z_d, s_z_ud (, Re a, Im a)]`.
    pub fn pack(&self) -> Vec<f64> {
        let mut y = vec![
            self.s_plus_d.re,
            self.s_plus_d.im,
            self.s_plus_ud.re,
            self.s_plus_ud.im,
            self.s_z_d,
            self.s_z_ud,
        ];
        if let Some(a) = self.alpha {
            y.push(a.re);
            y.push(a.im);
        }
        y
    }

    pub fn unpack(y: &[f64]) -> Self {
        let alpha = if y.len() >= Self::CAVITY_DIM {
            Some(Complex64::new(y[6], y[7]))
        } else {
            None
        };
        MeanFieldState {
            s_plus_d: Complex64::new(y[0], y[1]),
            s_plus_ud: Complex64::new(y[2], y[3]),
            s_z_d: y[4],
            s_z_ud: y[5],
            alpha,
        }
    }
}

/// The eight moments closed at second order. Correlations between two
/// *different* spins of the same class are `sp_sm_dd` and `sp_sm_udud`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CumulantState {
    pub s_z_d: f64,
    pub s_z_ud: f64,
    pub n_phot: f64,
    /// `<a^dag sigma^-_d>`
    pub ad_sm_d: Complex64,
    /// `<a^dag sigma^-_ud>`
    pub ad_sm_ud: Complex64,
    pub sp_sm_dd: f64,
    pub sp_sm_udud: f64,
    /// `<sigma^+_d sigma^-_ud>`
    pub sp_d_sm_ud: Complex64,
}

impl CumulantState {
    pub const DIM: usize = 11;

    /// All spins in the ground state, no photons, no correlations.
    pub fn ground() -> Self {
        CumulantState {
            s_z_d: -1.0,
            s_z_ud: -1.0,
            ..Default::default()
        }
    }

    /// Layout: `[s_z_d, s_z_ud, n, Re/Im ad_sm_d, Re/Im ad_sm_ud,
    /// sp_sm_dd, sp_sm_udud, Re/Im sp_d_sm_ud]`.
    pub fn pack(&self) -> Vec<f64> {
        vec![
            self.s_z_d,
            self.s_z_ud,
            self.n_phot,
            self.ad_sm_d.re,
            self.ad_sm_d.im,
            self.ad_sm_ud.re,
            self.ad_sm_ud.im,
            self.sp_sm_dd,
            self.sp_sm_udud,
            self.sp_d_sm_ud.re,
            self.sp_d_sm_ud.im,
        ]
    }

    pub fn unpack(y: &[f64]) -> Self {
        CumulantState {
            s_z_d: y[0],
            s_z_ud: y[1],
            n_phot: y[2],
            ad_sm_d: Complex64::new(y[3], y[4]),
            ad_sm_ud: Complex64::new(y[5], y[6]),
            sp_sm_dd: y[7],
            sp_sm_udud: y[8],
            sp_d_sm_ud: Complex64::new(y[9], y[10]),
        }
    }

    /// Checks the physical bounds up to `tol`. Correlations between two
    /// different spins of a class may be negative, but not below the value
    /// where `<S^+ S^->` of that class would turn negative:
    /// `<sigma^+_i sigma^-_j> >= -(1 + s_z) / (2 (N_mu - 1))`.
    pub fn within_bounds(&self, p: &SystemParams, tol: f64) -> bool {
        let finite = self.pack().iter().all(|x| x.is_finite());
        let unit = |x: f64| (-1.0 - tol..=1.0 + tol).contains(&x);
        let pair = |x: f64, s_z: f64, n: u64| {
            let floor = if n > 1 {
                -0.5 * (1.0 + s_z) / (n - 1) as f64
            } else {
                0.0
            };
            (floor - tol..=1.0 + tol).contains(&x)
        };
        finite
            && unit(self.s_z_d)
            && unit(self.s_z_ud)
            && self.n_phot >= -tol
            && pair(self.sp_sm_dd, self.s_z_d, p.n_d)
            && pair(self.sp_sm_udud, self.s_z_ud, p.n_ud)
    }
}

/// Spectral density sampled on an increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub omegas: Vec<f64>,
    pub values: Vec<f64>,
    /// Number of slightly negative values clamped to zero.
    pub clamped: usize,
    /// Most negative raw value before clamping (0 if none).
    pub min_raw: f64,
}

impl SpectrumGrid {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Frequency of the largest sample.
    pub fn argmax(&self) -> Option<f64> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.omegas[i])
    }
}

/// Result of fitting `(A/pi) [dnu / (dnu^2 + (w - d)^2) + dnu / (dnu^2 + (w + d)^2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub delta_nu: f64,
    pub delta: f64,
    pub residual: f64,
}

/// Frequency of the traveling-wave states; when it exists both `+omega`
/// and `-omega` are valid branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelingWaveSolution {
    pub omega: Option<f64>,
    pub exists: bool,
}

impl TravelingWaveSolution {
    /// Both branches, positive first.
    pub fn branches(&self) -> Option<[f64; 2]> {
        self.omega.map(|w| [w.abs(), -w.abs()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coupling_from_figure_two_parameters() {
        // N = 1e3, kappa = 10 sqrt(N) Omega with Omega = 1
        let n = 1000u64;
        let kappa = 10.0 * (n as f64).sqrt();
        let p = SystemParams::new(n, 1.0, 1.0, kappa, 0.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(p.v, 2.0 * 10f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(p.v, 6.3246, max_relative = 1e-4);
        assert_relative_eq!(p.bad_cavity_ratio, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn gamma_from_rates() {
        let p = SystemParams::from_coupling(1000, 0.8, 1.0, 10.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(p.gamma, 0.0);
        let p = p.with_rates(1.0, 1e-4, 1e-3).unwrap();
        assert_relative_eq!(p.gamma, 2.1e-3, max_relative = 1e-12);
    }

    #[test]
    fn coupling_style_reconciles() {
        let p = SystemParams::from_coupling(100_000, 1.0, 1.0, 10.0, 0.5, 0.0, 0.0).unwrap();
        assert_relative_eq!(p.v, 1.0, max_relative = 1e-12);
        assert_relative_eq!(p.kappa, 50.0, max_relative = 1e-12);
        assert_relative_eq!(p.bad_cavity_ratio, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn validation_names_the_field() {
        let err = SystemParams::new(10, 0.5, 1.0, 0.0, 1.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, ParamError::Invalid { field: "kappa", .. }));
        let err = SystemParams::new(10, 1.5, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, ParamError::Invalid { field: "p_d", .. }));
        let err = SystemParams::new(10, 0.5, 1.0, 1.0, 1.0, -1.0, 0.0).unwrap_err();
        assert!(matches!(
            err,
            ParamError::Invalid {
                field: "gamma_minus",
                ..
            }
        ));
        let err = SystemParams::new(0, 0.5, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, ParamError::Invalid { field: "N", .. }));
    }

    #[test]
    fn driven_count_rounds_half_up() {
        let p = SystemParams::new(10, 0.25, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(p.n_d, 3);
        assert_eq!(p.n_ud, 7);
        let p = p.with_p_d(0.8).unwrap();
        assert_eq!((p.n_d, p.n_ud), (8, 2));
    }

    #[test]
    fn normalization_sets_v_to_one() {
        let p = SystemParams::new(1000, 0.8, 2.0, 10.0 * 1000f64.sqrt() * 2.0, 3.0, 0.1, 0.2).unwrap();
        let q = p.normalized();
        assert_relative_eq!(q.v, 1.0);
        assert_relative_eq!(q.derive().unwrap().v, 1.0, max_relative = 1e-12);
        assert_relative_eq!(q.gamma_plus, 3.0 / p.v, max_relative = 1e-12);
        assert_relative_eq!(q.reference_rate, p.v, max_relative = 1e-12);
        assert_relative_eq!(q.bad_cavity_ratio, p.bad_cavity_ratio, max_relative = 1e-12);
    }

    #[test]
    fn packing_layouts() {
        let s = CumulantState {
            s_z_d: 0.1,
            s_z_ud: -0.2,
            n_phot: 3.0,
            ad_sm_d: Complex64::new(0.4, 0.5),
            ad_sm_ud: Complex64::new(0.6, 0.7),
            sp_sm_dd: 0.8,
            sp_sm_udud: 0.9,
            sp_d_sm_ud: Complex64::new(1.0, 1.1),
        };
        assert_eq!(CumulantState::unpack(&s.pack()), s);
        let m = MeanFieldState {
            s_plus_d: Complex64::new(0.1, 0.2),
            s_plus_ud: Complex64::new(0.3, 0.4),
            s_z_d: 0.5,
            s_z_ud: -0.6,
            alpha: Some(Complex64::new(7.0, 8.0)),
        };
        assert_eq!(MeanFieldState::unpack(&m.pack()), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn derive_is_idempotent_and_counts_add_up(
                n in 1u64..2_000_000,
                p_d in 0.0f64..=1.0,
                omega in 0.0f64..10.0,
                kappa in 1e-3f64..1e3,
                gp in 0.0f64..5.0,
                gm in 0.0f64..1.0,
                gz in 0.0f64..1.0,
            ) {
                let p = SystemParams::new(n, p_d, omega, kappa, gp, gm, gz).unwrap();
                prop_assert_eq!(p.derive().unwrap(), p);
                prop_assert_eq!(p.n_d + p.n_ud, p.n);
                prop_assert_eq!(p.p_d + p.p_ud, 1.0);
                prop_assert!(p.v.is_finite() && p.v >= 0.0);
                prop_assert!(p.gamma >= 0.0);
            }
        }
    }
}

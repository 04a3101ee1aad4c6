//! Plain-text `key = value` configuration files.
//!
//! Blank lines and everything after `#` are ignored. Lists are written
//! `a, b, c`; evenly spaced ranges `start:stop:count`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::model::{ParamError, SystemParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("conflicting keys: {0}")]
    Conflict(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: k + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: k + 1,
                    text: raw.to_string(),
                });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: k + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Config { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.clone(),
                    expected: "a number",
                })
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.entries
            .get(key)
            .map(|v| {
                // accept 1e5-style integers
                v.parse::<u64>()
                    .ok()
                    .or_else(|| {
                        v.parse::<f64>()
                            .ok()
                            .filter(|x| *x >= 0.0 && x.fract() == 0.0 && *x < 1.8e19)
                            .map(|x| x as u64)
                    })
                    .ok_or_else(|| ConfigError::Value {
                        key: key.to_string(),
                        value: v.clone(),
                        expected: "a non-negative integer",
                    })
            })
            .transpose()
    }

    /// A list `a, b, c` or a range `start:stop:count` (count >= 1, endpoints
    /// included).
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        let bad = |expected| ConfigError::Value {
            key: key.to_string(),
            value: v.clone(),
            expected,
        };
        if v.contains(':') {
            let parts: Vec<&str> = v.split(':').map(str::trim).collect();
            let [a, b, n] = parts[..] else {
                return Err(bad("a range start:stop:count"));
            };
            let a: f64 = a.parse().map_err(|_| bad("a range start:stop:count"))?;
            let b: f64 = b.parse().map_err(|_| bad("a range start:stop:count"))?;
            let n: usize = n.parse().map_err(|_| bad("a range start:stop:count"))?;
            if n == 0 {
                return Err(bad("a range with count >= 1"));
            }
            return Ok(Some(crate::spectrum::linspace(a, b, n)));
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad("a comma-separated list of numbers"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        let Some(list) = self.get_list(key)? else {
            return Ok(None);
        };
        list.into_iter()
            .map(|x| {
                if x >= 1.0 && x.fract() == 0.0 {
                    Ok(x as u64)
                } else {
                    Err(ConfigError::Value {
                        key: key.to_string(),
                        value: self.entries[key].clone(),
                        expected: "a list of positive integers",
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Physical parameters, normalized so that V = 1.
    ///
    /// Either `Omega` and `kappa` are given (rates in the same units), or
    /// `V` with an optional `cavity_ratio = kappa / (sqrt(N) Omega)`
    /// (default 10). `p_d` defaults to `default_p_d`.
    pub fn system_params(&self, default_p_d: f64) -> Result<SystemParams, ConfigError> {
        let n = self.get_u64("N")?.ok_or(ConfigError::Missing("N"))?;
        let p_d = self.f64_or("p_d", default_p_d)?;
        let gp = self.f64_or("gamma_plus", 0.0)?;
        let gm = self.f64_or("gamma_minus", 0.0)?;
        let gz = self.f64_or("gamma_z", 0.0)?;
        let omega = self.get_f64("Omega")?;
        let kappa = self.get_f64("kappa")?;
        let v = self.get_f64("V")?;
        let params = match (omega, kappa, v) {
            (Some(om), Some(k), None) => {
                if self.contains("cavity_ratio") {
                    return Err(ConfigError::Conflict(
                        "cavity_ratio is implied by Omega and kappa".into(),
                    ));
                }
                SystemParams::new(n, p_d, om, k, gp, gm, gz)?
            }
            (None, None, Some(v)) => {
                let ratio = self.f64_or("cavity_ratio", 10.0)?;
                SystemParams::from_coupling(n, p_d, v, ratio, gp, gm, gz)?
            }
            (None, None, None) => {
                let ratio = self.f64_or("cavity_ratio", 10.0)?;
                SystemParams::from_coupling(n, p_d, 1.0, ratio, gp, gm, gz)?
            }
            _ => {
                return Err(ConfigError::Conflict(
                    "give either both Omega and kappa, or V (with optional cavity_ratio)".into(),
                ))
            }
        };
        Ok(params.normalized())
    }

    /// Warns about keys outside `known`.
    pub fn warn_unknown(&self, known: &[&str]) {
        for key in self.entries.keys() {
            if !known.contains(&key.as_str()) {
                log::warn!("unknown config key `{key}` ignored");
            }
        }
    }
}

/// Keys understood by [`Config::system_params`].
pub const PARAM_KEYS: &[&str] = &[
    "N",
    "p_d",
    "Omega",
    "kappa",
    "V",
    "cavity_ratio",
    "gamma_plus",
    "gamma_minus",
    "gamma_z",
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_comments_lists_and_ranges() {
        let cfg =
            Config::parse("# figure 2\nN = 1e3\nV = 1   # unit\n\ngamma_plus=1.0\np_d = 0.5:1.0:6\nNs = 1000, 10000\n")
                .unwrap();
        assert_eq!(cfg.get_u64("N").unwrap(), Some(1000));
        assert_eq!(cfg.get_list("p_d").unwrap().unwrap().len(), 6);
        assert_relative_eq!(cfg.get_list("p_d").unwrap().unwrap()[1], 0.6, max_relative = 1e-12);
        assert_eq!(cfg.get_u64_list("Ns").unwrap().unwrap(), vec![1000, 10000]);
        assert_eq!(cfg.get_f64("missing").unwrap(), None);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(
            Config::parse("N 1000"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Config::parse("N=1\nN=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        let cfg = Config::parse("N = many").unwrap();
        assert!(matches!(cfg.get_u64("N"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn both_input_styles_agree() {
        let a = Config::parse("N = 1000\np_d = 0.8\nV = 2\ngamma_plus = 2\n")
            .unwrap()
            .system_params(1.0)
            .unwrap();
        let om = 10.0 * 2.0 / (2.0 * 1000f64.sqrt());
        let text = format!(
            "N = 1000\np_d = 0.8\nOmega = {om}\nkappa = {}\ngamma_plus = 2\n",
            10.0 * 1000f64.sqrt() * om
        );
        let b = Config::parse(&text).unwrap().system_params(1.0).unwrap();
        assert_relative_eq!(a.v, 1.0);
        assert_relative_eq!(a.gamma_plus, 1.0, max_relative = 1e-12);
        assert_relative_eq!(a.kappa, b.kappa, max_relative = 1e-12);
        assert_relative_eq!(a.gamma_plus, b.gamma_plus, max_relative = 1e-12);
        assert_relative_eq!(a.reference_rate, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn conflicting_styles_rejected() {
        let cfg = Config::parse("N = 10\nV = 1\nOmega = 1\n").unwrap();
        assert!(matches!(cfg.system_params(1.0), Err(ConfigError::Conflict(_))));
        let cfg = Config::parse("p_d = 1\n").unwrap();
        assert!(matches!(cfg.system_params(1.0), Err(ConfigError::Missing("N"))));
        let cfg = Config::parse("N = 10\np_d = 2\n").unwrap();
        assert!(matches!(cfg.system_params(1.0), Err(ConfigError::Param(_))));
    }
}

//! System configuration and unit conversion.
//!
//! All fields of [`SystemConfig`] are held in SI units. Configuration files
//! may instead provide logarithmic quantities under `*_dbm` / `*_db` keys,
//! which are converted when the file is loaded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Errors raised while building or loading a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` given both in linear and logarithmic form")]
    Duplicate { key: String },
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(x_dbm: f64) -> f64 {
    10f64.powf(x_dbm / 10.0) / 1000.0
}

/// Converts a ratio in dB to a linear ratio.
pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Scalar parameters of the joint communication and computing system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Base-station antennas.
    pub num_antennas: usize,
    /// Single-antenna devices served.
    pub num_users: usize,
    /// Joint power budget shared by transmission and computing (W).
    pub p_max: f64,
    /// Transmit power budget of communication-only allocations (W).
    pub p_max_tx: f64,
    /// Computing power budget of computing-only allocations (W).
    pub p_max_co: f64,
    /// System bandwidth (Hz).
    pub bandwidth: f64,
    /// Noise power spectral density (W/Hz).
    pub noise_psd: f64,
    /// SNR gap to capacity as a linear ratio.
    pub sinr_gap: f64,
    /// Total CPU capacity (cycles/s).
    pub f_max: f64,
    /// CPU power-model coefficient.
    pub tau: f64,
    /// CPU power-model exponent.
    pub mu: f64,
    /// Output data size per user (bits), transmitted on the downlink.
    pub d_out: f64,
    /// Input data size per user (bits), processed at the base station.
    pub d_in: f64,
    /// Per-coefficient channel estimation error variance.
    pub sigma_h_sq: f64,
    /// Computing-intensity estimation error variance.
    pub sigma_w_sq: f64,
    /// Quantile level of robust utilities.
    pub gamma: f64,
    /// Regularization of the zero-forcing beamformer.
    pub rzf_alpha: f64,
    /// Lower clamp for computing intensities (cycles/bit).
    pub omega_floor: f64,
    /// Delay above which a benchmark candidate is classified infeasible (s).
    pub t_feas: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let p_max = dbm_to_watts(34.0);
        Self {
            num_antennas: 4,
            num_users: 4,
            p_max,
            p_max_tx: p_max,
            p_max_co: p_max,
            bandwidth: 5e6,
            noise_psd: dbm_to_watts(-75.0),
            sinr_gap: db_to_linear(9.5),
            f_max: 4.6e9,
            tau: 1e-28,
            mu: 3.0,
            d_out: 2.5e4,
            d_in: 5e4,
            sigma_h_sq: 0.15,
            sigma_w_sq: 3200.0,
            gamma: 0.05,
            rzf_alpha: 0.2,
            omega_floor: 1.0,
            t_feas: 0.1,
        }
    }
}

impl SystemConfig {
    /// Noise power over the full bandwidth (W).
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth
    }

    /// True when more users than antennas are configured. Regularized
    /// zero-forcing stays defined, but interference cannot be nulled.
    pub fn overloaded(&self) -> bool {
        self.num_users > self.num_antennas
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.num_antennas == 0 || self.num_users == 0 {
            return bad("num_antennas and num_users must be at least 1");
        }
        let positive = [
            ("p_max", self.p_max),
            ("p_max_tx", self.p_max_tx),
            ("p_max_co", self.p_max_co),
            ("bandwidth", self.bandwidth),
            ("noise_psd", self.noise_psd),
            ("sinr_gap", self.sinr_gap),
            ("f_max", self.f_max),
            ("tau", self.tau),
            ("d_out", self.d_out),
            ("d_in", self.d_in),
            ("omega_floor", self.omega_floor),
            ("t_feas", self.t_feas),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        // Partial budgets must fit in the joint budget, otherwise a convex
        // combination of single-domain allocations can leave the joint set.
        if self.p_max_tx > self.p_max || self.p_max_co > self.p_max {
            return bad("p_max_tx and p_max_co must not exceed p_max");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.mu >= 1.0) {
            return bad("mu must be >= 1");
        }
        if !(self.sigma_h_sq >= 0.0 && self.sigma_h_sq < 1.0) {
            return bad("sigma_h_sq must lie in [0, 1)");
        }
        if !(self.sigma_w_sq >= 0.0 && self.sigma_w_sq.is_finite()) {
            return bad("sigma_w_sq must be finite and >= 0");
        }
        if !(self.rzf_alpha >= 0.0 && self.rzf_alpha.is_finite()) {
            return bad("rzf_alpha must be finite and >= 0");
        }
        Ok(())
    }

    /// Builds a configuration from a JSON object whose keys are field names,
    /// optionally given in logarithmic units. Missing keys keep their
    /// defaults.
    pub fn from_json_value(value: &Value) -> Result<Self, ConfigError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::Invalid("system config must be an object".into()))?;
        let mut cfg = SystemConfig::default();
        let mut tx_given = false;
        let mut co_given = false;
        let mut seen = std::collections::BTreeSet::new();

        for (key, v) in obj {
            let (field, converted) = match key.as_str() {
                "p_max_dbm" => ("p_max", dbm_to_watts(num(key, v)?)),
                "p_max_tx_dbm" => ("p_max_tx", dbm_to_watts(num(key, v)?)),
                "p_max_co_dbm" => ("p_max_co", dbm_to_watts(num(key, v)?)),
                // dBm/Hz density
                "noise_psd_dbm" => ("noise_psd", dbm_to_watts(num(key, v)?)),
                "sinr_gap_db" => ("sinr_gap", db_to_linear(num(key, v)?)),
                other => (other, f64::NAN),
            };
            if !seen.insert(field.to_string()) {
                return Err(ConfigError::Duplicate {
                    key: field.to_string(),
                });
            }
            let val = if converted.is_nan() {
                None
            } else {
                Some(converted)
            };
            match field {
                "num_antennas" => cfg.num_antennas = count(key, v)?,
                "num_users" => cfg.num_users = count(key, v)?,
                "p_max" => cfg.p_max = val.map_or_else(|| num(key, v), Ok)?,
                "p_max_tx" => {
                    tx_given = true;
                    cfg.p_max_tx = val.map_or_else(|| num(key, v), Ok)?
                }
                "p_max_co" => {
                    co_given = true;
                    cfg.p_max_co = val.map_or_else(|| num(key, v), Ok)?
                }
                "bandwidth" => cfg.bandwidth = num(key, v)?,
                "noise_psd" => cfg.noise_psd = val.map_or_else(|| num(key, v), Ok)?,
                "sinr_gap" => cfg.sinr_gap = val.map_or_else(|| num(key, v), Ok)?,
                "f_max" => cfg.f_max = num(key, v)?,
                "tau" => cfg.tau = num(key, v)?,
                "mu" => cfg.mu = num(key, v)?,
                "d_out" => cfg.d_out = num(key, v)?,
                "d_in" => cfg.d_in = num(key, v)?,
                "sigma_h_sq" => cfg.sigma_h_sq = num(key, v)?,
                "sigma_w_sq" => cfg.sigma_w_sq = num(key, v)?,
                "gamma" => cfg.gamma = num(key, v)?,
                "rzf_alpha" => cfg.rzf_alpha = num(key, v)?,
                "omega_floor" => cfg.omega_floor = num(key, v)?,
                "t_feas" => cfg.t_feas = num(key, v)?,
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        // Partial budgets follow the joint budget unless set explicitly.
        if !tx_given {
            cfg.p_max_tx = cfg.p_max;
        }
        if !co_given {
            cfg.p_max_co = cfg.p_max;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a configuration document. The system keys may sit at the top
    /// level or under a `"system"` section.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)?;
        let section = value.get("system").unwrap_or(&value);
        Self::from_json_value(section)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }
}

fn num(key: &str, v: &Value) -> Result<f64, ConfigError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigError::Invalid(format!("`{key}` must be a finite number")))
}

fn count(key: &str, v: &Value) -> Result<usize, ConfigError> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| ConfigError::Invalid(format!("`{key}` must be a non-negative integer")))
}

/// The bundled default configuration file.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../data/config/default.json");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversions() {
        assert_eq!(dbm_to_watts(0.0), 0.001);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(34.0) - 2.51189).abs() < 1e-5);
    }

    #[test]
    fn bundled_file_matches_default() {
        let cfg = SystemConfig::from_json_str(DEFAULT_CONFIG_JSON).unwrap();
        let def = SystemConfig::default();
        assert_eq!(cfg.num_antennas, def.num_antennas);
        assert_eq!(cfg.num_users, def.num_users);
        for (a, b) in [
            (cfg.p_max, def.p_max),
            (cfg.p_max_tx, def.p_max_tx),
            (cfg.p_max_co, def.p_max_co),
            (cfg.noise_psd, def.noise_psd),
            (cfg.sinr_gap, def.sinr_gap),
            (cfg.f_max, def.f_max),
            (cfg.tau, def.tau),
            (cfg.sigma_h_sq, def.sigma_h_sq),
            (cfg.sigma_w_sq, def.sigma_w_sq),
            (cfg.gamma, def.gamma),
            (cfg.rzf_alpha, def.rzf_alpha),
        ] {
            assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn log_and_linear_keys_conflict() {
        let err = SystemConfig::from_json_str(r#"{"p_max": 1.0, "p_max_dbm": 30}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { .. }));
    }

    #[test]
    fn partial_budgets_follow_joint_budget() {
        let cfg = SystemConfig::from_json_str(r#"{"p_max_dbm": 30}"#).unwrap();
        assert!((cfg.p_max_tx - 1.0).abs() < 1e-12);
        assert!((cfg.p_max_co - 1.0).abs() < 1e-12);
        let cfg = SystemConfig::from_json_str(r#"{"p_max_dbm": 30, "p_max_co": 0.5}"#).unwrap();
        assert_eq!(cfg.p_max_co, 0.5);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(SystemConfig::from_json_str(r#"{"gamma": 1.5}"#).is_err());
        assert!(SystemConfig::from_json_str(r#"{"num_users": 0}"#).is_err());
        assert!(SystemConfig::from_json_str(r#"{"sigma_h_sq": -0.1}"#).is_err());
        assert!(SystemConfig::from_json_str(r#"{"mu": 0.5}"#).is_err());
        assert!(SystemConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
        assert!(SystemConfig::from_json_str(r#"{"p_max_tx": 100.0}"#).is_err());
    }

    #[test]
    fn system_section_is_accepted() {
        let cfg =
            SystemConfig::from_json_str(r#"{"system": {"num_users": 2}, "gate": {}}"#).unwrap();
        assert_eq!(cfg.num_users, 2);
    }
}

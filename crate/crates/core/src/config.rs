//! Flat `key = value` configuration files for the linkage geometry and the
//! simulated device.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::kinematics::{KinematicsError, LinkageGeometry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid geometry: {0}")]
    Geometry(#[from] KinematicsError),
    #[error("invalid setting `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.message().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub base_separation_mm: f64,
    pub proximal_mm: f64,
    pub distal_mm: f64,
    pub servo_min_deg: f64,
    pub servo_max_deg: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            base_separation_mm: 40.0,
            proximal_mm: 30.0,
            distal_mm: 35.0,
            servo_min_deg: 30.0,
            servo_max_deg: 150.0,
        }
    }
}

impl std::str::FromStr for GeometryConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        parse(text, "<geometry>")
    }
}

impl GeometryConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse(&read(path)?, &path.display().to_string())
    }

    pub fn to_geometry(&self) -> Result<LinkageGeometry, ConfigError> {
        Ok(LinkageGeometry::new(
            self.base_separation_mm,
            self.proximal_mm,
            self.distal_mm,
            self.servo_min_deg.to_radians(),
            self.servo_max_deg.to_radians(),
        )?)
    }
}

/// One value for all units, or one per unit.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerUnit {
    Uniform(f64),
    Each([f64; 3]),
}

impl PerUnit {
    pub fn values(&self) -> [f64; 3] {
        match *self {
            PerUnit::Uniform(v) => [v; 3],
            PerUnit::Each(v) => v,
        }
    }
}

/// Palm, sensor and controller settings. Every key is optional.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub surface_y_mm: PerUnit,
    pub palm_compliance_n_per_m: f64,
    pub noise_sigma_n: f64,
    pub sensor_bias_n: f64,
    pub saturation_n: f64,
    /// No-contact position the force controller retracts to; also the start pose.
    pub home_y_mm: f64,
    pub approach_speed_mm_s: f64,
    /// Penetration past the palm surface used when rendering static patterns.
    pub contact_depth_mm: f64,
    /// Depth of the virtual surface past the palm used by impedance control.
    pub nominal_depth_mm: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            surface_y_mm: PerUnit::Uniform(44.0),
            palm_compliance_n_per_m: 500.0,
            noise_sigma_n: 0.02,
            sensor_bias_n: 0.0,
            saturation_n: 10.0,
            home_y_mm: 38.0,
            approach_speed_mm_s: 20.0,
            contact_depth_mm: 2.0,
            nominal_depth_mm: 5.0,
        }
    }
}

impl std::str::FromStr for SimConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        parse::<Self>(text, "<sim>")?.validated()
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse::<Self>(&read(path)?, &path.display().to_string())?.validated()
    }

    pub fn validated(self) -> Result<Self, ConfigError> {
        let invalid = |key, message: &str| ConfigError::Invalid {
            key,
            message: message.to_string(),
        };
        if !(self.palm_compliance_n_per_m > 0.0) {
            return Err(invalid("palm_compliance_n_per_m", "must be positive"));
        }
        if !(self.noise_sigma_n >= 0.0) {
            return Err(invalid("noise_sigma_n", "must be non-negative"));
        }
        if !self.sensor_bias_n.is_finite() {
            return Err(invalid("sensor_bias_n", "must be finite"));
        }
        if !(self.saturation_n > 0.0) {
            return Err(invalid("saturation_n", "must be positive"));
        }
        if !(self.approach_speed_mm_s > 0.0) {
            return Err(invalid("approach_speed_mm_s", "must be positive"));
        }
        let surfaces = self.surface_y_mm.values();
        if surfaces.iter().any(|s| !s.is_finite()) {
            return Err(invalid("surface_y_mm", "must be finite"));
        }
        if surfaces.iter().any(|&s| !(self.home_y_mm < s)) {
            return Err(invalid("home_y_mm", "must lie below every palm surface"));
        }
        if !(self.contact_depth_mm >= 0.0) || !(self.nominal_depth_mm >= 0.0) {
            return Err(invalid("contact_depth_mm", "depths must be non-negative"));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    #[test]
    fn geometry_file_round_trip() {
        let text = "base_separation_mm = 40\nproximal_mm = 30\ndistal_mm = 35\n\
                    servo_min_deg = 30\nservo_max_deg = 150\n";
        let cfg = GeometryConfig::from_str(text).unwrap();
        assert_eq!(cfg, GeometryConfig::default());
        assert_eq!(cfg.to_geometry().unwrap(), LinkageGeometry::default());
    }

    #[test]
    fn geometry_rejects_missing_and_unknown_keys() {
        assert!(GeometryConfig::from_str("proximal_mm = 30").is_err());
        let text = "base_separation_mm = 40\nproximal_mm = 30\ndistal_mm = 35\n\
                    servo_min_deg = 30\nservo_max_deg = 150\nlength = 3\n";
        assert!(GeometryConfig::from_str(text).is_err());
    }

    #[test]
    fn sim_defaults_and_overrides() {
        let cfg = SimConfig::from_str("").unwrap();
        assert_eq!(cfg, SimConfig::default());
        let cfg = SimConfig::from_str("surface_y_mm = [44, 45, 46]\nnoise_sigma_n = 0").unwrap();
        assert_eq!(cfg.surface_y_mm.values(), [44.0, 45.0, 46.0]);
        assert_eq!(cfg.noise_sigma_n, 0.0);
    }

    #[test]
    fn sim_validation() {
        assert!(SimConfig::from_str("palm_compliance_n_per_m = 0").is_err());
        assert!(SimConfig::from_str("home_y_mm = 50").is_err());
        assert!(SimConfig::from_str("noise_sigma_n = -1").is_err());
    }
}

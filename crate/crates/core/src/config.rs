//! TOML configuration shared by the generator and the checker. Every key is
//! optional; missing keys take the built-in defaults.
//!
//! ```toml
//! system_message = "..."
//! omitted = ["V", "UA"]
//!
//! [sampling]
//! damkohler_range = [0.1, 10.0]
//! initial_damkohler_max = 1000.0
//!
//! [tolerances]
//! residual = 1e-4
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::Tolerances;
use crate::codegen::DEFAULT_SYSTEM_MESSAGE;
use crate::corpus::CorpusOptions;
use crate::scenario::{SamplingConfig, DEFAULT_OMITTED};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system_message: String,
    pub omitted: Vec<String>,
    pub sampling: SamplingConfig,
    pub tolerances: Tolerances,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            system_message: DEFAULT_SYSTEM_MESSAGE.to_string(),
            omitted: DEFAULT_OMITTED.iter().map(|s| s.to_string()).collect(),
            sampling: SamplingConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let s = &self.sampling;
        for (name, (lo, hi)) in [
            ("prompt_range", s.prompt_range),
            ("damkohler_range", s.damkohler_range),
            ("residence_time_range", s.residence_time_range),
            ("volume_range", s.volume_range),
            ("concentration_range", s.concentration_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(ConfigError::Invalid(format!("sampling.{name} must satisfy 0 < lo <= hi")));
            }
        }
        if !(s.initial_damkohler_max >= s.damkohler_range.1) {
            return bad("sampling.initial_damkohler_max must be at least the top of damkohler_range");
        }
        if !(0.0..=1.0).contains(&s.keep_si_probability) {
            return bad("sampling.keep_si_probability must be in [0, 1]");
        }
        if s.significant_digits == 0 || s.max_attempts == 0 {
            return bad("sampling.significant_digits and sampling.max_attempts must be positive");
        }
        let t = &self.tolerances;
        if !(t.value_rtol > 0.0 && t.residual > 0.0) || t.sample_rows == 0 {
            return bad("tolerances must be positive");
        }
        if self.omitted.is_empty() {
            return bad("omitted must name at least one parameter");
        }
        Ok(())
    }

    pub fn corpus_options(&self) -> CorpusOptions {
        CorpusOptions {
            sampling: self.sampling.clone(),
            system_message: self.system_message.clone(),
            omitted: self.omitted.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
        assert_eq!(Config::default().corpus_options(), CorpusOptions::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = Config::from_toml("[tolerances]\nresidual = 1e-3\n[sampling]\nmax_attempts = 7\n").unwrap();
        assert_eq!(c.tolerances.residual, 1e-3);
        assert_eq!(c.tolerances.sample_rows, 64);
        assert_eq!(c.sampling.max_attempts, 7);
        assert_eq!(c.sampling.prompt_range, SamplingConfig::default().prompt_range);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(matches!(Config::from_toml("seed = 3"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            Config::from_toml("[sampling]\ndamkohler_range = [2.0, 1.0]"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(Config::from_toml("[tolerances]\nresidual = 0.0").is_err());
    }
}

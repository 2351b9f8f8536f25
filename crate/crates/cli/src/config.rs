//! JSON run configuration.

use serde::Deserialize;

use crate::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: Option<u32>,
    pub model: Option<String>,
    pub theta: Option<Vec<f64>>,
    pub theta0: Option<Vec<f64>>,
    pub theta_true: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub r: Option<usize>,
    pub oversampling: Option<usize>,
    pub crossover_lag: Option<usize>,
    pub split: Option<bool>,
    pub trunc_tol: Option<f64>,
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub trials: Option<usize>,
    pub count: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub standard_errors: Option<bool>,
    pub threads: Option<usize>,
    pub y_file: Option<String>,
    pub out: Option<String>,
}

impl Config {
    pub fn load(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{path}: {m}")),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        match cfg.schema {
            Some(SCHEMA) => Ok(cfg),
            Some(v) => Err(CliError::Usage(format!("unsupported config schema {v} (expected {SCHEMA})"))),
            None => Err(CliError::Usage(format!("config lacks \"schema\": {SCHEMA}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_is_required_and_checked() {
        assert!(Config::parse(r#"{"schema": 1, "model": "ar1", "theta": [1, 0.5]}"#).is_ok());
        assert!(matches!(Config::parse(r#"{"model": "ar1"}"#), Err(CliError::Usage(_))));
        assert!(matches!(Config::parse(r#"{"schema": 2}"#), Err(CliError::Usage(_))));
        assert!(matches!(Config::parse(r#"{"schema": 1, "colour": 3}"#), Err(CliError::Usage(_))));
    }
}

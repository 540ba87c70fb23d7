//! TOML configuration files. Keys mirror [`NetworkConfig`] field names;
//! unknown keys are rejected.
//!
//! ```toml
//! noise_power = 1e-9          # watts
//! modulation_order = 4
//! margins = 3.1622776601683795e-5   # uniform, or a per-user list
//! users = 8                   # count, or [{ position = [x, y] }, ...]
//! fairness_weight = 1.0       # optional, default 1
//! ps_magnitude = 0.25         # optional, default 1/sqrt(N_g)
//! seed = 1                    # optional, default 0
//! ci_power_caps = true        # optional, default true
//!
//! [geometry]                  # optional
//! cell_radius = 0.5           # km
//! min_bs_user_distance = 0.01 # km
//!
//! [[bs_list]]
//! class = "macro"             # or "pico"
//! antennas = 16
//! rf_chains = 8
//! power_budget = 39.81        # watts
//! position = [0.0, 0.0]       # km
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::NetworkConfig;

pub fn parse_config(text: &str) -> Result<NetworkConfig> {
    let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn format_config(config: &NetworkConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Margins, Users};

    #[test]
    fn round_trip_desk_config() {
        let cfg = NetworkConfig::desk();
        let text = format_config(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let text = r#"
            noise_power = 1e-9
            modulation_order = 2
            margins = [0.1, 0.2]
            users = 2
            [[bs_list]]
            class = "pico"
            antennas = 4
            rf_chains = 2
            power_budget = 1.0
            position = [0.0, 0.0]
        "#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.users, Users::Count(2));
        assert_eq!(cfg.margins, Margins::PerUser(vec![0.1, 0.2]));
        assert_eq!(cfg.fairness_weight, 1.0);
        assert!(cfg.ci_power_caps);
        assert_eq!(cfg.geometry, Default::default());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut text = format_config(&NetworkConfig::desk()).unwrap();
        text.insert_str(0, "noise_figure = 3\n");
        assert!(matches!(parse_config(&text), Err(Error::Config(_))));
        let bad_bs = format_config(&NetworkConfig::desk())
            .unwrap()
            .replacen("rf_chains", "tilt = 1\nrf_chains", 1);
        assert!(matches!(parse_config(&bad_bs), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_errors() {
        let text = format_config(&NetworkConfig::desk())
            .unwrap()
            .replace("modulation_order = 4", "modulation_order = 3");
        assert!(matches!(parse_config(&text), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_config(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }
}

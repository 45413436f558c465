//! Built-in scenarios, compiled into the binary.
//!
//! | name | what it exercises |
//! |------|-------------------|
//! | `calm` | baseline demand, par every day |
//! | `march2020` | a forced long-duration sale larger than dealer capacity |
//! | `slr_bottleneck` | dealers at their SLR bound; the SRF cannot help |
//! | `stablecoin_run` | a surge of two thirds of coins |
//! | `regime_shift` | a confidence shock across the run threshold |
//! | `paxos_mint_error` | an erroneous mint burned the same day |
//! | `svb_2023` | a weekend confidence shock under intermediated access |

use super::config::ScenarioConfig;
use super::ScenarioError;

pub const PRESETS: &[(&str, &str)] = &[
    ("calm", include_str!("../../presets/calm.toml")),
    ("march2020", include_str!("../../presets/march2020.toml")),
    ("slr_bottleneck", include_str!("../../presets/slr_bottleneck.toml")),
    ("stablecoin_run", include_str!("../../presets/stablecoin_run.toml")),
    ("regime_shift", include_str!("../../presets/regime_shift.toml")),
    ("paxos_mint_error", include_str!("../../presets/paxos_mint_error.toml")),
    ("svb_2023", include_str!("../../presets/svb_2023.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let src = source(name).ok_or_else(|| {
        ScenarioError::Validation(format!("unknown preset `{name}`; available: {}", names().collect::<Vec<_>>().join(", ")))
    })?;
    ScenarioConfig::from_toml(src)
}

/// `(name, description)` for every preset.
pub fn list() -> Vec<(&'static str, String)> {
    PRESETS
        .iter()
        .map(|(n, src)| (*n, ScenarioConfig::from_toml(src).map(|c| c.description).unwrap_or_default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in names() {
            let cfg = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
            assert!(!cfg.description.is_empty());
        }
        assert!(load("nope").is_err());
    }
}

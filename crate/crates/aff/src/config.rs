use std::path::Path;

use aff_core::model::ModelConfig;

use crate::{Error, Result};

pub fn parse(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_json(cfg: &ModelConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

pub fn save(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(cfg)).map_err(|e| Error::io(path, e))
}

/// A preset by name: `aff-nano`, `aff-mini`, `aff-tiny` or `aff-small`.
pub fn preset(name: &str) -> Option<ModelConfig> {
    match name {
        "aff-nano" => Some(ModelConfig::aff_nano()),
        "aff-mini" => Some(ModelConfig::aff_mini()),
        "aff-tiny" => Some(ModelConfig::aff_tiny()),
        "aff-small" => Some(ModelConfig::aff_small()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        for name in ["aff-nano", "aff-mini", "aff-tiny", "aff-small"] {
            let cfg = preset(name).unwrap();
            assert_eq!(parse(&to_json(&cfg)).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_invalid() {
        let mut cfg = ModelConfig::aff_nano();
        cfg.keep_fraction = 0.0;
        assert!(matches!(parse(&to_json(&cfg)), Err(Error::Core(_))));
        assert!(matches!(parse("{"), Err(Error::Config(_))));
    }
}

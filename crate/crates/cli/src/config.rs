//! Plain-text run configuration: `[section]` headers followed by
//! `key = value` lines. Keys mirror the library config field names.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use est_core::data::GenConfig;
use est_core::model::ModelConfig;
use est_core::train::TrainConfig;

pub const SECTIONS: &[&str] = &["data", "model", "train"];

/// A malformed or unknown entry in a config file.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub data: Vec<(String, String)>,
    pub model: Vec<(String, String)>,
    pub train: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = ConfigFile::default();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let at = |msg: String| ConfigError(format!("line {}: {msg}", i + 1));
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("unterminated section header `{line}`")))?
                    .trim();
                section = Some(SECTIONS.iter().copied().find(|s| *s == name).ok_or_else(|| {
                    at(format!("unknown section `[{name}]`; valid sections: {}", SECTIONS.join(", ")))
                })?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            let entry = (key.trim().to_string(), value.trim().to_string());
            match section {
                Some("data") => out.data.push(entry),
                Some("model") => out.model.push(entry),
                Some("train") => out.train.push(entry),
                _ => return Err(at(format!("`{}` appears before any section header", entry.0))),
            }
        }
        out.check()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Ok(Self::parse(&text).with_context(|| format!("in config {}", path.display()))?)
    }

    /// Applies every section to defaults so unknown keys and bad values
    /// surface before any work starts.
    fn check(&self) -> Result<(), ConfigError> {
        let mut data = GenConfig::default();
        self.apply_data(&mut data)?;
        let mut model = ModelConfig::for_data(&data);
        self.apply_model(&mut model)?;
        self.apply_train(&mut TrainConfig::default())?;
        Ok(())
    }

    pub fn apply_data(&self, cfg: &mut GenConfig) -> Result<(), ConfigError> {
        for (k, v) in &self.data {
            cfg.set(k, v).map_err(|e| ConfigError(format!("[data] {e}")))?;
        }
        Ok(())
    }

    pub fn apply_model(&self, cfg: &mut ModelConfig) -> Result<(), ConfigError> {
        for (k, v) in &self.model {
            cfg.set(k, v).map_err(|e| ConfigError(format!("[model] {e}")))?;
        }
        Ok(())
    }

    pub fn apply_train(&self, cfg: &mut TrainConfig) -> Result<(), ConfigError> {
        for (k, v) in &self.train {
            cfg.set(k, v).map_err(|e| ConfigError(format!("[train] {e}")))?;
        }
        Ok(())
    }
}

/// Reads `--config` if given; an absent file means all defaults.
pub fn load_optional(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_whitespace() {
        let c = ConfigFile::parse("# run\n[data]\nnum_users = 10\n\n[model]\n layers=3 \n; note\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(c.data, vec![("num_users".into(), "10".into())]);
        assert_eq!(c.model, vec![("layers".into(), "3".into())]);
        assert_eq!(c.train, vec![("epochs".into(), "2".into())]);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let e = ConfigFile::parse("[data]\nusers = 10\n").unwrap_err().to_string();
        assert!(e.contains("unknown key `users`"), "{e}");
        assert!(e.contains("num_users"), "{e}");
        let e = ConfigFile::parse("[model]\ndepth = 2\n").unwrap_err().to_string();
        assert!(e.contains("layers") && e.contains("emb_dim"), "{e}");
    }

    #[test]
    fn structural_errors() {
        assert!(ConfigFile::parse("[optim]\n").unwrap_err().0.contains("valid sections"));
        assert!(ConfigFile::parse("epochs = 1\n").unwrap_err().0.contains("before any section"));
        assert!(ConfigFile::parse("[train]\nepochs\n").unwrap_err().0.contains("line 2"));
        assert!(ConfigFile::parse("[train\n").is_err());
        assert!(ConfigFile::parse("[train]\nepochs = two\n").is_err());
    }

    #[test]
    fn later_entries_win() {
        let c = ConfigFile::parse("[train]\nepochs = 1\nepochs = 4\n").unwrap();
        let mut t = TrainConfig::default();
        c.apply_train(&mut t).unwrap();
        assert_eq!(t.epochs, 4);
    }
}

//! Layered configuration: built-in defaults, then one TOML file, then
//! `--set section.key=value` overrides, then dedicated flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use curator_core::clean::CleanConfig;
use curator_core::preselect::PreselectConfig;
use curator_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// +1 smoothing of BLEU n-gram precisions.
    pub bleu_smoothing: bool,
    pub recall_cutoffs: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bleu_smoothing: false,
            recall_cutoffs: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub lease_minutes: f64,
    pub media_url: String,
    pub snapshot_every: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            lease_minutes: 30.0,
            media_url: "/media/{id}.mp4".into(),
            snapshot_every: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub clean: CleanConfig,
    pub preselect: PreselectConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    // Bare words such as `off` are taken as strings.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_override(table: &mut toml::Table, pair: &str) -> Result<()> {
    let Some((key, value)) = pair.split_once('=') else {
        bail!(Error::Invalid(format!("override {pair:?} is not key=value")));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Invalid(format!("override {key}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

impl Config {
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Invalid(format!("config: {e}")))?;
        cfg.clean
            .validate()
            ?;
        if cfg.eval.recall_cutoffs.is_empty() {
            bail!(Error::Invalid("eval.recall_cutoffs is empty".into()));
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the resolved configuration's canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[clean]\nocr_char_threshold = 30\nmosaic_face_threshold = 4\n").unwrap();
        let cfg = Config::resolve(Some(&path), &["clean.ocr_char_threshold=10".into()]).unwrap();
        assert_eq!(cfg.clean.ocr_char_threshold, 10);
        assert_eq!(cfg.clean.mosaic_face_threshold, 4);
        assert_eq!(cfg.clean.face_area_ratio, 0.5);
    }

    #[test]
    fn bare_words_and_bad_keys() {
        let cfg = Config::resolve(None, &["clean.char_filter=off".into()]).unwrap();
        assert_eq!(cfg.clean.char_filter, curator_core::clean::CharFilter::Off);
        assert!(Config::resolve(None, &["clean.nonsense=1".into()]).is_err());
        assert!(Config::resolve(None, &["clean.face_area_ratio=1.5".into()]).is_err());
        assert!(Config::resolve(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn digest_tracks_values() {
        let a = Config::default();
        let b = Config::resolve(None, &["preselect.k=50".into()]).unwrap();
        assert_eq!(a.digest(), Config::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}

//! Pipeline configuration file: one TOML table per subcommand.

use std::path::Path;

use serde::Deserialize;
use talkmesh_core::audio::MfccConfig;
use talkmesh_core::model::ModelConfig;
use talkmesh_core::operators::DEFAULT_K;
use talkmesh_core::training::{SynthConfig, TrainConfig};
use talkmesh_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpsSection {
    pub k: usize,
}

impl Default for OpsSection {
    fn default() -> Self {
        OpsSection { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnimateSection {
    pub fps: f64,
    pub chunk_rows: usize,
}

impl Default for AnimateSection {
    fn default() -> Self {
        AnimateSection {
            fps: 30.0,
            chunk_rows: talkmesh_core::model::DEFAULT_CHUNK_ROWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub pre_emphasis: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub delta_width: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        let m = MfccConfig::default();
        ExtractSection {
            window_ms: m.window_ms,
            hop_ms: m.hop_ms,
            pre_emphasis: m.pre_emphasis,
            n_mels: m.n_mels,
            n_ceps: m.n_ceps,
            delta_width: m.delta_width,
        }
    }
}

impl ExtractSection {
    pub fn mfcc(&self) -> MfccConfig {
        MfccConfig {
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            pre_emphasis: self.pre_emphasis,
            n_mels: self.n_mels,
            n_ceps: self.n_ceps,
            delta_width: self.delta_width,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub ops: OpsSection,
    pub animate: AnimateSection,
    pub extract: ExtractSection,
    /// Whether `model.feature_dim` was given; otherwise training infers it.
    #[serde(skip)]
    pub feature_dim_set: bool,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<FileConfig> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let feature_dim_set = table
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("feature_dim"));
        let mut cfg: FileConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {e}")))?;
        cfg.feature_dim_set = feature_dim_set;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                FileConfig::parse(&text, &p.display().to_string())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = FileConfig::parse("", "x").unwrap();
        assert_eq!(c, FileConfig::default());
        assert!(!c.feature_dim_set);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = FileConfig::parse("[train]\nepoch = 3\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("x.toml"), "{err}");
        assert!(FileConfig::parse("[nope]\n", "x").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = FileConfig::parse("[model]\nfeature_dim = 8\ncell = \"gru\"\n", "x").unwrap();
        assert!(c.feature_dim_set);
        assert_eq!(c.model.feature_dim, 8);
        assert_eq!(c.model.hidden, ModelConfig::default().hidden);
    }
}

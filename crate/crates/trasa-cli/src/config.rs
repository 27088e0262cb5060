//! The flat key-value configuration file shared by every subcommand, plus
//! the parsing helpers that turn its string-typed fields into library types.
//!
//! Every key is optional and defaults to the library default; command-line
//! flags override file values. Unknown keys are rejected so typos surface
//! immediately.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use trasa_core::data::{ColumnRef, HeaderMode, IngestFormat, PipelineConfig};
use trasa_core::model::{Ablation, LossMode, ModelConfig, Readout};
use trasa_core::train::TrainConfig;
use trasa_core::Dtype;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    // Numeric precision of parameters and training: "f32" or "f64".
    pub dtype: String,

    // Model architecture.
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_inner: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub path_cap: usize,
    pub ablation: String,
    pub readout: String,
    pub loss_mode: String,

    // Optimization.
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub target_train_p1: Option<f64>,

    // Preprocessing.
    pub min_item_support: usize,
    pub test_fraction: f64,
    pub valid_fraction: f64,
    pub augment: bool,

    // Raw event-log layout. Columns are zero-based indices or, with a
    // header, column names. The delimiter accepts a single character or
    // the word "tab".
    pub delimiter: String,
    pub header: String,
    pub session_col: String,
    pub item_col: String,
    pub time_col: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            dtype: "f64".into(),
            d_model: 64,
            n_heads: 4,
            n_layers: 1,
            ffn_inner: 256,
            dropout: 0.2,
            max_positions: 50,
            path_cap: 16,
            ablation: "full".into(),
            readout: "soft-attention".into(),
            loss_mode: "full-bce".into(),
            learning_rate: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_every: 3,
            weight_decay: 1e-5,
            batch_size: 512,
            max_epochs: 30,
            patience: 3,
            seed: 0,
            target_train_p1: None,
            min_item_support: 5,
            test_fraction: 0.1,
            valid_fraction: 0.1,
            augment: true,
            delimiter: ",".into(),
            header: "auto".into(),
            session_col: "0".into(),
            item_col: "1".into(),
            time_col: "2".into(),
        }
    }
}

impl AppConfig {
    /// Defaults, overlaid with `path`'s contents when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(AppConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("cannot parse config file {}", p.display()))
            }
        }
    }

    pub fn parse_dtype(&self) -> Result<Dtype> {
        match self.dtype.as_str() {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => bail!("unknown dtype '{other}'; expected f32 or f64"),
        }
    }

    /// The model architecture for a vocabulary of `n_items` items.
    pub fn model_config(&self, n_items: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            n_items,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_inner: self.ffn_inner,
            dropout: self.dropout,
            max_positions: self.max_positions,
            path_cap: self.path_cap,
            ablation: Ablation::from_str(&self.ablation)?,
            readout: Readout::from_str(&self.readout)?,
            loss_mode: LossMode::from_str(&self.loss_mode)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every: self.lr_decay_every,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            target_train_p1: self.target_train_p1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            min_item_support: self.min_item_support,
            test_fraction: self.test_fraction,
            valid_fraction: self.valid_fraction,
            augment: self.augment,
            seed: self.seed,
        }
    }

    pub fn ingest_format(&self) -> Result<IngestFormat> {
        Ok(IngestFormat {
            delimiter: parse_delimiter(&self.delimiter)?,
            header: parse_header(&self.header)?,
            session_col: parse_column(&self.session_col),
            item_col: parse_column(&self.item_col),
            time_col: parse_column(&self.time_col),
        })
    }
}

pub fn parse_delimiter(s: &str) -> Result<char> {
    match s {
        "tab" | "\\t" => Ok('\t'),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => bail!("delimiter must be a single character or 'tab', got {s:?}"),
            }
        }
    }
}

pub fn parse_header(s: &str) -> Result<HeaderMode> {
    match s {
        "auto" => Ok(HeaderMode::Auto),
        "present" => Ok(HeaderMode::Present),
        "absent" => Ok(HeaderMode::Absent),
        other => bail!("unknown header mode '{other}'; expected auto, present, or absent"),
    }
}

/// A column is an index when the string parses as one, a name otherwise.
pub fn parse_column(s: &str) -> ColumnRef {
    match s.parse::<usize>() {
        Ok(i) => ColumnRef::Index(i),
        Err(_) => ColumnRef::Name(s.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_valid_library_configs() {
        let cfg = AppConfig::default();
        assert!(cfg.model_config(100).is_ok());
        assert!(cfg.train_config().is_ok());
        assert!(cfg.ingest_format().is_ok());
        assert_eq!(cfg.parse_dtype().unwrap(), Dtype::F64);
    }

    #[test]
    fn toml_overlays_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "d_model = 32\nablation = \"wo-pos\"\ndelimiter = \"tab\"\n")
            .unwrap();
        let cfg = AppConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.model_config(10).unwrap().ablation, Ablation::WoPos);
        assert_eq!(cfg.ingest_format().unwrap().delimiter, '\t');
        assert_eq!(cfg.n_heads, 4, "unset keys keep their defaults");

        std::fs::write(&path, "d_modell = 32\n").unwrap();
        assert!(AppConfig::load(Some(&path)).is_err());
    }

    #[test]
    fn column_and_header_parsing() {
        assert_eq!(parse_column("3"), ColumnRef::Index(3));
        assert_eq!(parse_column("item_id"), ColumnRef::Name("item_id".into()));
        assert!(matches!(parse_header("present"), Ok(HeaderMode::Present)));
        assert!(parse_header("maybe").is_err());
        assert_eq!(parse_delimiter(";").unwrap(), ';');
        assert!(parse_delimiter("ab").is_err());
    }
}

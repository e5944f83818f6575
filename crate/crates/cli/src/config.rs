//! Run configuration. Values resolve as flags, then the TOML config file,
//! then the named preset.

use std::path::Path;

use anyhow::{bail, Context, Result};
use paydpi::dataset::ColumnMap;
use paydpi::eval::Mode;
use paydpi::model::ModelConfig;
use paydpi::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, HyperArgs};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    #[serde(default)]
    pub model: toml::Table,
    #[serde(default)]
    pub train: toml::Table,
    #[serde(default)]
    pub columns: toml::Table,
    #[serde(default)]
    pub synthetic: toml::Table,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub ablation: AblationSection,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub preset: Option<String>,
    pub classes: Option<Vec<String>>,
    pub time_offset: Option<i64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub conditions: Option<Vec<String>>,
    pub equalize_lengths: Option<bool>,
    pub band: Option<u64>,
    pub fixed_timestamp: Option<u64>,
    /// Extra conditions: `name` plus any cipher-spec fields, laid over the
    /// AES-256-CBC defaults.
    #[serde(default)]
    pub custom: Vec<toml::Table>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())).into())
    }
}

/// Replaces fields of `base` with the entries of `table`, rejecting keys
/// `base` does not have. Keys in `skip` are ignored.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: &toml::Table, skip: &[&str]) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("config types serialize as maps");
    for (k, v) in table {
        if skip.contains(&k.as_str()) {
            continue;
        }
        if !obj.contains_key(k) {
            return Err(CliError::Usage(format!("unknown config key {k:?}")).into());
        }
        obj.insert(k.clone(), serde_json::to_value(v)?);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")).into())
}

fn preset_name(flag: &Option<String>, table: &toml::Table) -> Result<String> {
    if let Some(f) = flag {
        return Ok(f.clone());
    }
    match table.get("preset") {
        None => Ok("desk".into()),
        Some(toml::Value::String(s)) => Ok(s.clone()),
        Some(other) => bail!(CliError::Usage(format!("preset must be a string, got {other}"))),
    }
}

pub fn resolve_mode(flag: Option<Mode>, file: &FileConfig) -> Mode {
    flag.or(file.mode).unwrap_or(Mode::Binary)
}

pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.seed).unwrap_or(0)
}

/// Model and training configuration for `mode`, with `seed` driving both
/// initialization and batch order.
pub fn resolve_hyper(h: &HyperArgs, file: &FileConfig, mode: Mode, seed: u64) -> Result<(ModelConfig, TrainConfig)> {
    for (name, table) in [("model", &file.model), ("train", &file.train)] {
        if table.contains_key("seed") {
            bail!(CliError::Usage(format!("[{name}] may not set seed; use the top-level seed")));
        }
    }
    let k = mode.num_labels();
    let mut model = overlay(&ModelConfig::preset(&preset_name(&h.model_preset, &file.model)?, k)?, &file.model, &["preset"])?;
    if model.num_labels != k {
        bail!(CliError::Usage(format!("mode {mode} needs num_labels = {k}, config says {}", model.num_labels)));
    }
    let mut train = overlay(&TrainConfig::preset(&preset_name(&h.train_preset, &file.train)?)?, &file.train, &["preset"])?;

    macro_rules! set {
        ($dst:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $dst = v;
            }
        };
    }
    set!(model.hidden_size, h.hidden_size);
    set!(model.num_hidden_layers, h.num_hidden_layers);
    set!(model.num_attention_heads, h.num_attention_heads);
    set!(model.intermediate_size, h.intermediate_size);
    set!(model.max_position_embeddings, h.max_position_embeddings);
    set!(model.dropout_p, h.dropout);
    set!(train.epochs, h.epochs);
    set!(train.learning_rate, h.learning_rate);
    set!(train.batch_size, h.batch_size);
    set!(train.warmup_fraction, h.warmup_fraction);
    set!(train.weight_decay, h.weight_decay);
    model.seed = seed;
    train.seed = seed;
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

pub fn resolve_columns(file: &FileConfig, preset: Option<&str>) -> Result<ColumnMap> {
    let base = match preset {
        Some("unsw") => ColumnMap::unsw_nb15(),
        _ => ColumnMap::default(),
    };
    overlay(&base, &file.columns, &[])
}

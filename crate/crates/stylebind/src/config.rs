//! Command settings shared by flags and `key = value` config files.
//!
//! A config file holds `config_version` and one `[section]` per command,
//! keyed by the command name; keys are the long flag names. Flags override
//! file values.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenCorpusArgs {
    /// Style transform name.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    /// Transform parameter override as `name=value`; repeatable.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<Vec<String>>,
    /// `styleref`, `aux` or `base`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    /// Person scenes; for `aux` the corpus size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persons: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backgrounds: Option<usize>,
    /// Corpus size for `base`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Root directory; the corpus goes to `<out>/<style_id>`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// `single`, `multi` or `dreambooth`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Checkpoint interval in steps; 0 keeps only the final checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    /// StyleRef dataset directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub styleref: Option<PathBuf>,
    /// Aux dataset directory (single and multi modes).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux: Option<PathBuf>,
    /// Base model checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    /// Prior images generated in dreambooth mode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SampleArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Prompt text; repeatable.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<String>>,
    /// Use the generated evaluation prompt set of this size instead.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_set: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_set_seed: Option<u64>,
    /// Identifier form of evaluation prompts: `single` or `multi`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    /// Images per prompt.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct StylizeArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// A PPM file or a directory of images.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Noising depth as a fraction of the horizon.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// Directory of generated images, optionally with `prompts.tsv`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Alignment tower checkpoint; enables the CLIP score.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tower: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_id: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepArgs {
    /// Training run directory; repeatable, one arm each.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tower: Option<PathBuf>,
    /// Fixed prompt; repeatable. Defaults to the evaluation prompt set.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_set: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_set_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_seed: Option<u64>,
    /// Worker threads evaluating checkpoints.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct InspectAttnArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory whose records are inspected.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Diffusion timestep; repeatable.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestep: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PretrainArgs {
    /// `autoencoder`, `base` or `tower`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub what: Option<String>,
    /// Base corpus size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Autoencoder checkpoint, for `base`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub autoencoder: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Contents of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(rename = "config_version")]
    pub config_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_corpus: Option<GenCorpusArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stylize: Option<StylizeArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inspect_attn: Option<InspectAttnArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainArgs>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION,
            gen_corpus: None,
            train: None,
            sample: None,
            stylize: None,
            evaluate: None,
            sweep: None,
            inspect_attn: None,
            pretrain: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config_version {} unsupported, expected {CONFIG_VERSION}",
                cfg.config_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| CliError::io(path, e))
    }
}

/// `flags` laid over `file`: every setting present in `flags` wins.
pub fn overlay<T: Serialize + DeserializeOwned>(file: &T, flags: &T) -> Result<T> {
    let to_table = |v: &T| match toml::Value::try_from(v) {
        Ok(toml::Value::Table(t)) => Ok(t),
        Ok(_) => Err(CliError::Config("settings must form a table".into())),
        Err(e) => Err(CliError::Config(e.to_string())),
    };
    let mut merged = to_table(file)?;
    merged.extend(to_table(flags)?);
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

/// Value of a required setting.
pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required setting --{flag}")))
}

/// Path of an input that must already exist.
pub fn existing(v: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = required(v, flag)?;
    if !p.exists() {
        return Err(CliError::Config(format!("--{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

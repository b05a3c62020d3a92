//! Run configuration: one TOML file with `data`, `model`, `train` and
//! `output` sections. Unknown keys are errors, and everything is validated
//! before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gmd_core::cases::ModalityCase;
use gmd_core::ds_model::{LossKind, ModelSpec};
use gmd_core::synth_data::{load_tabular, GeneratorConfig, MultimodalDataset, SplitSource, TabularSchema, TaskKind};
use gmd_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(GeneratorConfig),
    File(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub path: PathBuf,
    pub schema: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses, resolves relative paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path
            .parent()
            .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
            .unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(base).map_err(|e| CliError::io(base, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("{source_name}: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DataConfig::File(f) = &mut self.data {
            f.path = absolute(base, &f.path);
            if let Some(serde_json::Value::Object(files)) = f.schema.get_mut("splits") {
                for v in files.values_mut() {
                    if let Some(s) = v.as_str() {
                        *v = serde_json::Value::String(absolute(base, Path::new(s)).display().to_string());
                    }
                }
            }
        }
        if let Some(d) = &self.output.dir {
            self.output.dir = Some(absolute(base, d));
        }
    }

    /// Schema of a file data section.
    pub fn schema(&self) -> Result<Option<TabularSchema>> {
        match &self.data {
            DataConfig::Synthetic(_) => Ok(None),
            DataConfig::File(f) => TabularSchema::from_map(&f.schema, Path::new("."))
                .map(Some)
                .map_err(|e| CliError::config(format!("data.schema: {e}"))),
        }
    }

    pub fn modalities(&self) -> Result<usize> {
        Ok(match &self.data {
            DataConfig::Synthetic(g) => g.dims.len(),
            DataConfig::File(_) => self.schema()?.map_or(0, |s| s.modalities.len()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        fn section(name: &'static str) -> impl Fn(gmd_core::Error) -> CliError {
            move |e| CliError::config(format!("{name}: {e}"))
        }
        let task = match &self.data {
            DataConfig::Synthetic(g) => {
                g.validate().map_err(section("data"))?;
                TaskKind::Classification
            }
            DataConfig::File(f) => {
                let schema = self.schema()?.expect("file data has a schema");
                if !f.path.is_file() {
                    return Err(CliError::config(format!(
                        "data.path: no such file {}",
                        f.path.display()
                    )));
                }
                if let SplitSource::IndexFiles { train, val, test } = &schema.splits {
                    for p in [train, val, test] {
                        if !p.is_file() {
                            return Err(CliError::config(format!(
                                "data.schema.splits: no such file {}",
                                p.display()
                            )));
                        }
                    }
                }
                schema.task
            }
        };
        let m = self.modalities()?;
        if m > gmd_core::cases::MAX_MODALITIES {
            return Err(CliError::config(format!(
                "data: at most {} modalities",
                gmd_core::cases::MAX_MODALITIES
            )));
        }
        self.model.validate().map_err(section("model"))?;
        self.train.validate(m).map_err(section("train"))?;
        match (task, self.train.loss) {
            (TaskKind::Classification, LossKind::Mse) => {
                Err(CliError::config("train.loss: mse needs a regression task"))
            }
            (TaskKind::Regression, LossKind::CrossEntropy) => Err(CliError::config(
                "train.loss: cross_entropy needs a classification task",
            )),
            _ => Ok(()),
        }
    }

    pub fn load_dataset(&self) -> Result<MultimodalDataset> {
        Ok(match &self.data {
            DataConfig::Synthetic(g) => g.generate()?,
            DataConfig::File(f) => {
                let schema = self.schema()?.expect("file data has a schema");
                load_tabular(&f.path, &schema)?
            }
        })
    }

    /// Fully resolved config as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot render config: {e}")))
    }

    /// Canonical JSON of each top-level section, for hashing.
    pub fn sections(&self) -> Result<BTreeMap<&'static str, serde_json::Value>> {
        let v = |x: serde_json::Result<serde_json::Value>| x.map_err(gmd_core::Error::from);
        Ok(BTreeMap::from([
            ("data", v(serde_json::to_value(&self.data))?),
            ("model", v(serde_json::to_value(&self.model))?),
            ("train", v(serde_json::to_value(&self.train))?),
            ("output", v(serde_json::to_value(&self.output))?),
        ]))
    }
}

/// Parses a `--cases` filter: a pool policy such as `all`, `missing1` or
/// `full`.
pub fn parse_case_filter(s: &str) -> Result<gmd_core::cases::PoolPolicy> {
    s.parse()
        .map_err(|e: gmd_core::Error| CliError::config(format!("--cases: {e}")))
}

/// Bit-string label of the single-modality case for modality `i`.
pub fn singleton_mask(i: usize, m: usize) -> Result<String> {
    Ok(ModalityCase::from_members(&[i], m)?.bits())
}

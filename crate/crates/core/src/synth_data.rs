//! Multimodal datasets: a synthetic generator with a controllable dominant
//! modality, and a delimited-text loader.
//!
//! Generated features for modality `i` and class `c` are
//!
//! ```text
//! x_i = s_i * (sqrt(r) * A_i u_c + sqrt(1 - r) * v_ic) + sigma_i * noise
//! ```
//!
//! where `u_c` is a class prototype shared by all modalities (seen through a
//! per-modality random map `A_i`), `v_ic` a modality-specific prototype,
//! `s_i` the signal strength, `r` the redundancy and `sigma_i` the noise
//! level. Redundancy controls how much the modalities agree about the label.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::ds_model::{MultimodalBatch, Targets};
use crate::error::{Error, Result};

/// How informative and how noisy each modality is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominanceSpec {
    /// Per modality, in `[0, 1]`.
    pub signal_strength: Vec<f64>,
    pub noise_std: Vec<f64>,
    /// Fraction of class information shared across modalities, in `[0, 1]`.
    pub redundancy: f64,
}

impl DominanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.signal_strength.is_empty() {
            return Err(Error::invalid("signal_strength needs one entry per modality"));
        }
        if self.noise_std.len() != self.signal_strength.len() {
            return Err(Error::invalid(format!(
                "noise_std has {} entries, signal_strength has {}",
                self.noise_std.len(),
                self.signal_strength.len()
            )));
        }
        if self.signal_strength.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("signal_strength values must be in [0, 1]"));
        }
        if !self.signal_strength.iter().any(|&s| s > 0.0) {
            return Err(Error::invalid("at least one modality needs signal_strength > 0"));
        }
        if self.noise_std.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
            return Err(Error::invalid("noise_std values must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.redundancy) {
            return Err(Error::invalid("redundancy must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    /// Feature width of each modality.
    pub dims: Vec<usize>,
    pub signal_strength: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub redundancy: f64,
    pub seed: u64,
    /// Train / validation / test fractions.
    #[serde(default = "default_splits")]
    pub splits: [f64; 3],
}

fn default_splits() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl GeneratorConfig {
    pub fn dominance(&self) -> DominanceSpec {
        DominanceSpec {
            signal_strength: self.signal_strength.clone(),
            noise_std: self.noise_std.clone(),
            redundancy: self.redundancy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dominance().validate()?;
        if self.dims.len() != self.signal_strength.len() {
            return Err(Error::invalid(format!(
                "dims has {} entries, signal_strength has {}",
                self.dims.len(),
                self.signal_strength.len()
            )));
        }
        if self.dims.len() > crate::cases::MAX_MODALITIES {
            return Err(Error::invalid("too many modalities"));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid("every modality needs at least one feature"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        validate_fractions(&self.splits)
    }

    pub fn generate(&self) -> Result<MultimodalDataset> {
        generate(
            &self.dominance(),
            self.n_samples,
            self.n_classes,
            &self.dims,
            self.seed,
            self.splits,
        )
    }
}

fn validate_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be in [0, 1] and sum to 1, got {f:?}"
        )));
    }
    Ok(())
}

/// Row indices of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    /// Consecutive blocks of rows sized by the fractions; the test block takes the remainder.
    pub fn from_fractions(n: usize, f: &[f64; 3]) -> Result<Self> {
        validate_fractions(f)?;
        let n_train = ((n as f64) * f[0]).round() as usize;
        let n_val = (((n as f64) * f[1]).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        Ok(Splits {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        })
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::invalid(format!("{name} split references row {i} of {n}")));
                }
                if !seen.insert(i) {
                    return Err(Error::invalid(format!("row {i} appears in more than one split")));
                }
            }
        }
        Ok(())
    }
}

/// Samples with every modality present, plus split assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    /// One `[n_samples, dim_i]` matrix per modality.
    pub features: Vec<Tensor>,
    pub targets: Targets,
    /// Set for classification data.
    pub n_classes: Option<usize>,
    pub splits: Splits,
    /// Free-form provenance (generator parameters or source path).
    pub meta: BTreeMap<String, String>,
}

impl MultimodalDataset {
    pub fn new(
        features: Vec<Tensor>,
        targets: Targets,
        n_classes: Option<usize>,
        splits: Splits,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let n = targets.len();
        if features.is_empty() {
            return Err(Error::invalid("dataset needs at least one modality"));
        }
        for (i, f) in features.iter().enumerate() {
            let (rows, _) = f.dims2()?;
            if rows != n {
                return Err(Error::shape(format!("modality {i} has {rows} rows, targets have {n}")));
            }
        }
        if let (Targets::Classes(c), Some(k)) = (&targets, n_classes) {
            if let Some(bad) = c.iter().find(|&&l| l >= k) {
                return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
            }
        }
        splits.validate(n)?;
        Ok(MultimodalDataset {
            features,
            targets,
            n_classes,
            splits,
            meta,
        })
    }

    pub fn modalities(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.shape()[1]).collect()
    }

    /// Width of the model output: class count or regression width.
    pub fn output_dim(&self) -> usize {
        match (&self.targets, self.n_classes) {
            (Targets::Classes(_), Some(k)) => k,
            (Targets::Classes(c), None) => c.iter().max().map_or(1, |m| m + 1),
            (Targets::Values(t), _) => t.shape().get(1).copied().unwrap_or(1),
        }
    }

    /// Rows `idx` of every modality and the matching targets.
    pub fn batch(&self, idx: &[usize]) -> Result<(MultimodalBatch, Targets)> {
        let inputs = self
            .features
            .iter()
            .map(|f| f.select_rows(idx).map(Some))
            .collect::<Result<Vec<_>>>()?;
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(t) => Targets::Values(t.select_rows(idx)?),
        };
        Ok((MultimodalBatch::new(inputs), targets))
    }

    pub fn split_batch(&self, split: Split) -> Result<(MultimodalBatch, Targets)> {
        self.batch(self.splits.get(split))
    }

    /// Equality of features, targets and splits, ignoring provenance.
    pub fn same_data(&self, other: &Self) -> bool {
        self.features == other.features
            && self.targets == other.targets
            && self.n_classes == other.n_classes
            && self.splits == other.splits
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws a labelled dataset; identical arguments give identical data.
pub fn generate(
    spec: &DominanceSpec,
    n_samples: usize,
    n_classes: usize,
    dims: &[usize],
    seed: u64,
    splits: [f64; 3],
) -> Result<MultimodalDataset> {
    let cfg = GeneratorConfig {
        n_samples,
        n_classes,
        dims: dims.to_vec(),
        signal_strength: spec.signal_strength.clone(),
        noise_std: spec.noise_std.clone(),
        redundancy: spec.redundancy,
        seed,
        splits,
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = dims.iter().copied().max().unwrap_or(1);
    let shared_weight = spec.redundancy.sqrt();
    let specific_weight = (1.0 - spec.redundancy).sqrt();

    let shared_protos: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..latent).map(|_| normal(&mut rng)).collect())
        .collect();
    // patterns[i][c] is the noiseless mean of modality i for class c.
    let patterns: Vec<Vec<Vec<f64>>> = dims
        .iter()
        .map(|&d| {
            let scale = 1.0 / (latent as f64).sqrt();
            let map: Vec<f64> = (0..d * latent).map(|_| normal(&mut rng) * scale).collect();
            (0..n_classes)
                .map(|c| {
                    (0..d)
                        .map(|r| {
                            let seen: f64 = (0..latent).map(|t| map[r * latent + t] * shared_protos[c][t]).sum();
                            shared_weight * seen + specific_weight * normal(&mut rng)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let labels: Vec<usize> = (0..n_samples).map(|_| rng.random_range(0..n_classes)).collect();
    let mut features: Vec<Vec<f64>> = dims.iter().map(|&d| Vec::with_capacity(n_samples * d)).collect();
    for &y in &labels {
        for (i, pattern) in patterns.iter().enumerate() {
            let s = spec.signal_strength[i];
            let sigma = spec.noise_std[i];
            for &p in &pattern[y] {
                features[i].push(s * p + sigma * normal(&mut rng));
            }
        }
    }
    let features = features
        .into_iter()
        .zip(dims)
        .map(|(data, &d)| Tensor::new(vec![n_samples, d], data))
        .collect::<Result<Vec<_>>>()?;

    let mut meta = BTreeMap::new();
    meta.insert("source".into(), "synthetic".into());
    meta.insert("generator".into(), serde_json::to_string(&cfg)?);
    MultimodalDataset::new(
        features,
        Targets::Classes(labels),
        Some(n_classes),
        Splits::from_fractions(n_samples, &splits)?,
        meta,
    )
}

/// Inclusive column range, written `cols a..b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRange(pub RangeInclusive<usize>);

impl ColumnRange {
    fn parse(s: &str) -> Result<Self> {
        let body = s
            .trim()
            .strip_prefix("cols")
            .ok_or_else(|| Error::invalid(format!("expected `cols a..b`, got {s:?}")))?;
        let (a, b) = body
            .trim()
            .split_once("..")
            .ok_or_else(|| Error::invalid(format!("expected `cols a..b`, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad column number in {s:?}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(Error::invalid(format!("empty column range {s:?}")));
        }
        Ok(ColumnRange(a..=b))
    }

    pub fn width(&self) -> usize {
        self.0.end() - self.0.start() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Where split membership comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSource {
    Fractions([f64; 3]),
    /// Files of 0-based data-row indices, one per line.
    IndexFiles {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
    },
}

/// Column layout of a delimited text file.
///
/// Written as key/value pairs: `modality_<i> = "cols a..b"` (inclusive,
/// 0-based), `target = "col c"`, `delimiter`, `task`, `n_classes` and
/// `splits` (three fractions, or a table of `train`/`val`/`test` index files).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSchema {
    pub modalities: Vec<ColumnRange>,
    pub target: usize,
    pub delimiter: char,
    pub task: TaskKind,
    pub n_classes: Option<usize>,
    pub splits: SplitSource,
}

impl TabularSchema {
    /// Reads the schema from its key/value form. Relative split-file paths
    /// are resolved against `base`.
    pub fn from_map(map: &BTreeMap<String, serde_json::Value>, base: &Path) -> Result<Self> {
        let mut modalities: BTreeMap<usize, ColumnRange> = BTreeMap::new();
        let mut target = None;
        let mut delimiter = ',';
        let mut task = TaskKind::Classification;
        let mut n_classes = None;
        let mut splits = SplitSource::Fractions(default_splits());
        let as_str = |key: &str, v: &serde_json::Value| -> Result<String> {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::invalid(format!("schema key `{key}` must be a string")))
        };
        for (key, value) in map {
            if let Some(i) = key.strip_prefix("modality_") {
                let i: usize = i
                    .parse()
                    .map_err(|_| Error::invalid(format!("schema key `{key}`: bad modality index")))?;
                modalities.insert(i, ColumnRange::parse(&as_str(key, value)?)?);
                continue;
            }
            match key.as_str() {
                "target" => {
                    let s = as_str(key, value)?;
                    let c = s
                        .trim()
                        .strip_prefix("col")
                        .and_then(|c| c.trim().parse().ok())
                        .ok_or_else(|| Error::invalid(format!("schema key `target`: expected `col c`, got {s:?}")))?;
                    target = Some(c);
                }
                "delimiter" => {
                    let s = as_str(key, value)?;
                    let mut chars = s.chars();
                    delimiter = match (chars.next(), chars.next()) {
                        (Some(c), None) => c,
                        _ => return Err(Error::invalid("schema key `delimiter` must be one character")),
                    };
                }
                "task" => {
                    task = match as_str(key, value)?.as_str() {
                        "classification" => TaskKind::Classification,
                        "regression" => TaskKind::Regression,
                        other => return Err(Error::invalid(format!("schema key `task`: unknown task {other:?}"))),
                    }
                }
                "n_classes" => {
                    n_classes = Some(
                        value
                            .as_u64()
                            .ok_or_else(|| Error::invalid("schema key `n_classes` must be an integer"))?
                            as usize,
                    )
                }
                "splits" => splits = parse_split_source(value, base)?,
                other => return Err(Error::invalid(format!("unknown schema key `{other}`"))),
            }
        }
        let target = target.ok_or_else(|| Error::invalid("schema is missing required key `target`"))?;
        if modalities.is_empty() {
            return Err(Error::invalid("schema declares no `modality_<i>` keys"));
        }
        if modalities.keys().copied().ne(0..modalities.len()) {
            return Err(Error::invalid(
                "schema modality keys must be modality_0, modality_1, ... without gaps",
            ));
        }
        let schema = TabularSchema {
            modalities: modalities.into_values().collect(),
            target,
            delimiter,
            task,
            n_classes,
            splits,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Key/value form, the inverse of [`TabularSchema::from_map`].
    pub fn to_map(&self) -> BTreeMap<String, serde_json::Value> {
        use serde_json::json;
        let mut map = BTreeMap::new();
        for (i, r) in self.modalities.iter().enumerate() {
            map.insert(
                format!("modality_{i}"),
                json!(format!("cols {}..{}", r.0.start(), r.0.end())),
            );
        }
        map.insert("target".into(), json!(format!("col {}", self.target)));
        map.insert("delimiter".into(), json!(self.delimiter.to_string()));
        map.insert(
            "task".into(),
            json!(match self.task {
                TaskKind::Classification => "classification",
                TaskKind::Regression => "regression",
            }),
        );
        if let Some(k) = self.n_classes {
            map.insert("n_classes".into(), json!(k));
        }
        map.insert(
            "splits".into(),
            match &self.splits {
                SplitSource::Fractions(f) => json!(f),
                SplitSource::IndexFiles { train, val, test } => json!({
                    "train": train, "val": val, "test": test,
                }),
            },
        );
        map
    }

    fn validate(&self) -> Result<()> {
        let mut used = HashSet::new();
        for (i, r) in self.modalities.iter().enumerate() {
            for c in r.0.clone() {
                if !used.insert(c) {
                    return Err(Error::invalid(format!("column {c} is used twice (modality {i})")));
                }
            }
        }
        if used.contains(&self.target) {
            return Err(Error::invalid(format!(
                "target column {} overlaps a modality",
                self.target
            )));
        }
        if let SplitSource::Fractions(f) = &self.splits {
            validate_fractions(f)?;
        }
        if self.task == TaskKind::Classification && self.n_classes == Some(0) {
            return Err(Error::invalid("n_classes must be positive"));
        }
        Ok(())
    }

    fn columns(&self) -> usize {
        self.modalities
            .iter()
            .map(|r| *r.0.end())
            .chain([self.target])
            .max()
            .unwrap_or(0)
            + 1
    }
}

fn parse_split_source(v: &serde_json::Value, base: &Path) -> Result<SplitSource> {
    if let Some(arr) = v.as_array() {
        let f: Vec<f64> = arr.iter().filter_map(|x| x.as_f64()).collect();
        if f.len() != 3 || arr.len() != 3 {
            return Err(Error::invalid("schema key `splits` needs three numbers"));
        }
        return Ok(SplitSource::Fractions([f[0], f[1], f[2]]));
    }
    if let Some(obj) = v.as_object() {
        let get = |k: &str| -> Result<PathBuf> {
            let p = obj
                .get(k)
                .and_then(|x| x.as_str())
                .ok_or_else(|| Error::invalid(format!("schema key `splits.{k}` must be a path")))?;
            Ok(base.join(p))
        };
        if let Some(extra) = obj.keys().find(|k| !["train", "val", "test"].contains(&k.as_str())) {
            return Err(Error::invalid(format!("unknown schema key `splits.{extra}`")));
        }
        return Ok(SplitSource::IndexFiles {
            train: get("train")?,
            val: get("val")?,
            test: get("test")?,
        });
    }
    Err(Error::invalid(
        "schema key `splits` must be a list of fractions or a table of files",
    ))
}

fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read split file {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                message: format!("not a row index: {l:?}"),
            })
        })
        .collect()
}

/// Parses a delimited text table with a header row.
pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<MultimodalDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    read_tabular(std::io::BufReader::new(file), &path.display().to_string(), schema).map(|mut ds| {
        ds.meta.insert("source".into(), path.display().to_string());
        ds
    })
}

/// [`load_tabular`] over any reader; `source_name` labels error messages.
pub fn read_tabular<R: BufRead>(reader: R, source_name: &str, schema: &TabularSchema) -> Result<MultimodalDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let header_cols = match lines.next() {
        Some((_, l)) => l?.split(schema.delimiter).count(),
        None => return Err(parse_err(1, "file is empty (expected a header row)".into())),
    };
    if header_cols < schema.columns() {
        return Err(parse_err(
            1,
            format!(
                "header has {header_cols} columns, schema references {}",
                schema.columns()
            ),
        ));
    }

    let m = schema.modalities.len();
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut classes = Vec::new();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).map(str::trim).collect();
        if fields.len() != header_cols {
            return Err(parse_err(
                lineno,
                format!("row has {} fields, header has {header_cols}", fields.len()),
            ));
        }
        if let Some(c) = fields.iter().position(|f| f.is_empty()) {
            return Err(parse_err(lineno, format!("missing value in column {c}")));
        }
        let num = |c: usize| -> Result<f64> {
            let v: f64 = fields[c]
                .parse()
                .map_err(|_| parse_err(lineno, format!("column {c}: not a number: {:?}", fields[c])))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("column {c}: non-finite value")));
            }
            Ok(v)
        };
        for (mi, r) in schema.modalities.iter().enumerate() {
            for c in r.0.clone() {
                features[mi].push(num(c)?);
            }
        }
        match schema.task {
            TaskKind::Classification => {
                let raw = fields[schema.target];
                let label: usize = raw
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("target {raw:?} is not a class index")))?;
                if let Some(k) = schema.n_classes {
                    if label >= k {
                        return Err(parse_err(lineno, format!("label {label} out of range for {k} classes")));
                    }
                }
                classes.push(label);
            }
            TaskKind::Regression => values.push(num(schema.target)?),
        }
        n += 1;
    }

    let features = features
        .into_iter()
        .zip(&schema.modalities)
        .map(|(data, r)| Tensor::new(vec![n, r.width()], data))
        .collect::<Result<Vec<_>>>()?;
    let (targets, n_classes) = match schema.task {
        TaskKind::Classification => {
            let k = schema
                .n_classes
                .unwrap_or_else(|| classes.iter().max().map_or(1, |m| m + 1));
            (Targets::Classes(classes), Some(k))
        }
        TaskKind::Regression => (Targets::Values(Tensor::new(vec![n, 1], values)?), None),
    };
    let splits = match &schema.splits {
        SplitSource::Fractions(f) => Splits::from_fractions(n, f)?,
        SplitSource::IndexFiles { train, val, test } => Splits {
            train: read_index_file(train)?,
            val: read_index_file(val)?,
            test: read_index_file(test)?,
        },
    };
    let mut meta = BTreeMap::new();
    meta.insert("source".into(), source_name.to_string());
    MultimodalDataset::new(features, targets, n_classes, splits, meta)
}

/// Writes the dataset as a delimited table (modalities in order, then the
/// target) and returns the schema that loads it back.
///
/// Splits are recorded as fractions, so they round-trip only for datasets
/// whose splits are consecutive blocks (as generated ones are).
pub fn write_tabular<W: Write>(ds: &MultimodalDataset, mut out: W, delimiter: char) -> Result<TabularSchema> {
    let dims = ds.dims();
    let mut header = String::new();
    let mut ranges = Vec::with_capacity(dims.len());
    let mut col = 0;
    for (i, &d) in dims.iter().enumerate() {
        for j in 0..d {
            if col > 0 {
                header.push(delimiter);
            }
            let _ = write!(header, "m{i}_{j}");
            col += 1;
        }
        ranges.push(ColumnRange(col - d..=col - 1));
    }
    let _ = write!(header, "{delimiter}target");
    writeln!(out, "{header}")?;

    let mut line = String::new();
    for r in 0..ds.len() {
        line.clear();
        for (i, f) in ds.features.iter().enumerate() {
            for (j, v) in f.row(r).iter().enumerate() {
                if i > 0 || j > 0 {
                    line.push(delimiter);
                }
                let _ = write!(line, "{v}");
            }
        }
        line.push(delimiter);
        match &ds.targets {
            Targets::Classes(c) => {
                let _ = write!(line, "{}", c[r]);
            }
            Targets::Values(t) => {
                let _ = write!(line, "{}", t.data()[r]);
            }
        }
        writeln!(out, "{line}")?;
    }

    let n = ds.len().max(1) as f64;
    let fractions = [
        ds.splits.train.len() as f64 / n,
        ds.splits.val.len() as f64 / n,
        ds.splits.test.len() as f64 / n,
    ];
    Ok(TabularSchema {
        modalities: ranges,
        target: col,
        delimiter,
        task: match ds.targets {
            Targets::Classes(_) => TaskKind::Classification,
            Targets::Values(_) => TaskKind::Regression,
        },
        n_classes: ds.n_classes,
        splits: SplitSource::Fractions(fractions),
    })
}

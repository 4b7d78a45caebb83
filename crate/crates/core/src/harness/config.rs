use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    ingest_image_folder, make_synthetic_stream, split_protocol, FolderData, FolderSpec, ImageShape, SyntheticSpec,
    TaskStream, UnlabeledPool,
};
use crate::error::{Error, Result};
use crate::nets::BackboneConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Folder(FolderSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSpec {
    pub fn shape(&self) -> ImageShape {
        match self {
            DatasetSpec::Synthetic(s) => s.shape(),
            DatasetSpec::Folder(f) => ImageShape {
                channels: f.channels,
                size: f.image_size,
            },
        }
    }

    fn num_classes_hint(&self) -> Option<usize> {
        match self {
            DatasetSpec::Synthetic(s) => Some(s.classes),
            DatasetSpec::Folder(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    /// Incremental steps after the first half of the classes.
    pub steps: usize,
    pub memory_budget: usize,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            steps: 3,
            memory_budget: 60,
        }
    }
}

/// Backbone layout; input channels and size come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub plug_point: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let b = BackboneConfig::default();
        Self {
            widths: b.widths,
            plug_point: b.plug_point,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Everything one experiment needs. The generator depth and the number of
/// generated counterparts live in `train`, next to the other training knobs;
/// `train.seed` is filled in per run from `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            protocol: ProtocolSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            output_dir: default_output(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates TOML. Errors carry the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.message().to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<document>".into() } else { path }, e.into_inner().message().to_string())
        })?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::config("<document>", e.message().to_string()))?;
        if raw.get("train").and_then(|t| t.get("seed")).is_some() {
            return Err(Error::config("train.seed", "run seeds are set with the top-level `seeds` list"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Synthetic(s) => s.validate()?,
            DatasetSpec::Folder(f) => {
                for (key, dir) in [("train", &f.train), ("test", &f.test), ("unlabeled", &f.unlabeled)] {
                    if !dir.is_dir() {
                        return Err(Error::config(
                            format!("dataset.folder.{key}"),
                            format!("{} is not a directory", dir.display()),
                        ));
                    }
                }
                if f.channels != 1 && f.channels != 3 {
                    return Err(Error::config("dataset.folder.channels", "must be 1 or 3"));
                }
                if f.image_size == 0 {
                    return Err(Error::config("dataset.folder.image_size", "must be positive"));
                }
            }
        }
        if let Some(k) = self.dataset.num_classes_hint() {
            split_protocol(k, self.protocol.steps).map_err(at_steps)?;
        }
        if self.protocol.memory_budget == 0 && self.train.strategy.uses_memory() {
            return Err(Error::config("protocol.memory_budget", "replay strategies need a positive budget"));
        }
        self.backbone().validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        let shape = self.dataset.shape();
        BackboneConfig {
            in_channels: shape.channels,
            image_size: shape.size,
            widths: self.model.widths.clone(),
            plug_point: self.model.plug_point,
        }
    }

    /// SHA-256 over the canonical JSON of every field except the output
    /// directory.
    /// TOML that loads back to an equal config. `train.seed` is left out.
    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::try_from(self).expect("config serialises");
        if let Some(toml::Value::Table(train)) = t.get_mut("train") {
            train.remove("seed");
        }
        toml::to_string(&t).expect("table serialises")
    }

    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The labeled stream and unlabeled pool for one seed. Synthetic data is
    /// drawn from the seed; folder data is the same for every seed.
    pub fn materialize(&self, seed: u64) -> Result<(TaskStream, UnlabeledPool)> {
        match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                let (stream, pool, _) = make_synthetic_stream(s, self.protocol.steps, seed)?;
                Ok((stream, pool))
            }
            DatasetSpec::Folder(f) => load_folders(f, self.protocol.steps),
        }
    }
}

fn load_folders(f: &FolderSpec, steps: usize) -> Result<(TaskStream, UnlabeledPool)> {
    let shape = ImageShape {
        channels: f.channels,
        size: f.image_size,
    };
    let labeled = |dir: &Path, key: &str| match ingest_image_folder(dir, shape)? {
        FolderData::Labeled { samples, class_names } => Ok((samples, class_names)),
        FolderData::Unlabeled(_) => Err(Error::config(
            format!("dataset.folder.{key}"),
            "expected one subdirectory per class",
        )),
    };
    let (train, names) = labeled(&f.train, "train")?;
    let (test, test_names) = labeled(&f.test, "test")?;
    if names != test_names {
        return Err(Error::config("dataset.folder.test", "class folders differ from the training folders"));
    }
    let pool = match ingest_image_folder(&f.unlabeled, shape)? {
        FolderData::Unlabeled(images) if !images.is_empty() => images,
        FolderData::Unlabeled(_) => return Err(Error::config("dataset.folder.unlabeled", "no readable images")),
        FolderData::Labeled { .. } => {
            return Err(Error::config("dataset.folder.unlabeled", "expected a flat folder of images"))
        }
    };
    let counts = split_protocol(names.len(), steps).map_err(at_steps)?;
    let stream = TaskStream::from_datasets(shape, train, test, &counts)?;
    Ok((stream, UnlabeledPool::new(pool)))
}

fn at_steps(e: Error) -> Error {
    match e {
        Error::Config { message, .. } => Error::config("protocol.steps", message),
        e => e,
    }
}

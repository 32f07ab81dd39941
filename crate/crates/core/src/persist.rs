//! On-disk formats: key-value manifests, flat little-endian f64 arrays,
//! poison and checkpoint artifacts, and CSV writers.
//!
//! Every float is written with 17 significant digits so text round-trips
//! are exact. Manifests are ordered `key: value` lines; a writer always
//! produces the same bytes for the same artifact.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{DatasetKind, DatasetSource};
use crate::error::{Error, Result};
use crate::experiment::AttackMode;
use crate::gradmatch::TriggerPatch;
use crate::tensor::Tensor;
use crate::training::{Augmentation, OptimizerVariant, Schedule, TrainConfig};

/// 17 significant digits, enough for exact f64 round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_f64_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

pub fn fmt_usize_list(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ordered key-value manifest.
#[derive(Debug, Default, Clone)]
pub struct KvMap {
    pairs: Vec<(String, String, u64)>,
    index: HashMap<String, usize>,
    path: String,
}

impl KvMap {
    pub fn new() -> Self {
        KvMap::default()
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.index.insert(key.to_string(), self.pairs.len());
        self.pairs.push((key.to_string(), value.into(), 0));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.pairs[i].1.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}` in {}", self.path)))
    }

    fn offset_of(&self, key: &str) -> u64 {
        self.index.get(key).map(|&i| self.pairs[i].2).unwrap_or(0)
    }

    fn malformed(&self, key: &str, detail: String) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            offset: self.offset_of(key),
            detail,
        }
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| self.malformed(key, format!("`{key}` is not a float: {raw}")))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| self.malformed(key, format!("`{key}` is not an integer: {raw}")))
    }

    pub fn require_u64(&self, key: &str) -> Result<u64> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| self.malformed(key, format!("`{key}` is not an integer: {raw}")))
    }

    pub fn require_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.require(key)?;
        if raw.trim().is_empty() {
            return Ok(vec![]);
        }
        raw.split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| {
                    self.malformed(key, format!("`{key}` has a non-integer entry: {t}"))
                })
            })
            .collect()
    }

    pub fn require_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        if raw.trim().is_empty() {
            return Ok(vec![]);
        }
        raw.split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| self.malformed(key, format!("`{key}` has a non-float entry: {t}")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.pairs {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parses `key: value` lines. Blank lines and `#` comments are ignored.
    /// The byte offset of a malformed line is reported.
    pub fn parse(text: &str, path: &str) -> Result<KvMap> {
        let mut map = KvMap {
            path: path.to_string(),
            ..KvMap::default()
        };
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += line.len() as u64;
            let trimmed = line.trim_end_matches('\n').trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let Some(colon) = trimmed.find(':') else {
                return Err(Error::Malformed {
                    path: path.to_string(),
                    offset: line_offset,
                    detail: format!("expected `key: value`, got `{trimmed}`"),
                });
            };
            let key = trimmed[..colon].trim().to_string();
            let value = trimmed[colon + 1..].trim().to_string();
            if key.is_empty() {
                return Err(Error::Malformed {
                    path: path.to_string(),
                    offset: line_offset,
                    detail: "empty key".into(),
                });
            }
            map.index.insert(key.clone(), map.pairs.len());
            map.pairs.push((key, value, line_offset));
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<KvMap> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        KvMap::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Flat little-endian f64 array.
pub fn write_f64_bin(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn read_f64_bin(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            offset: bytes.len().min(expected * 8) as u64,
            detail: format!(
                "expected {} f64 values ({} bytes), file has {} bytes",
                expected,
                expected * 8,
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn manifest_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

fn bin_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".bin");
    PathBuf::from(p)
}

// ---------------------------------------------------------------------------
// dataset descriptor
// ---------------------------------------------------------------------------

pub fn push_dataset(kv: &mut KvMap, prefix: &str, src: &DatasetSource) {
    let key = |s: &str| format!("{prefix}.{s}");
    match &src.kind {
        DatasetKind::Gaussians {
            classes,
            dim,
            separation,
        } => {
            kv.push(&key("kind"), "gaussians");
            kv.push(&key("classes"), classes.to_string());
            kv.push(&key("dim"), dim.to_string());
            kv.push_f64(&key("separation"), *separation);
        }
        DatasetKind::TwoMoons { noise } => {
            kv.push(&key("kind"), "two-moons");
            kv.push_f64(&key("noise"), *noise);
        }
        DatasetKind::Spirals { turns, noise } => {
            kv.push(&key("kind"), "spirals");
            kv.push_f64(&key("turns"), *turns);
            kv.push_f64(&key("noise"), *noise);
        }
        DatasetKind::Csv { path } => {
            kv.push(&key("kind"), "csv");
            kv.push(&key("path"), path.clone());
        }
        DatasetKind::IdxImages { prefix: p } => {
            kv.push(&key("kind"), "idx");
            kv.push(&key("path"), p.clone());
        }
    }
    kv.push(&key("train"), src.train.to_string());
    kv.push(&key("test"), src.test.to_string());
    kv.push(&key("seed"), src.seed.to_string());
}

pub fn read_dataset(kv: &KvMap, prefix: &str) -> Result<DatasetSource> {
    let key = |s: &str| format!("{prefix}.{s}");
    let kind = match kv.require(&key("kind"))? {
        "gaussians" => DatasetKind::Gaussians {
            classes: kv.require_usize(&key("classes"))?,
            dim: kv.require_usize(&key("dim"))?,
            separation: kv.require_f64(&key("separation"))?,
        },
        "two-moons" => DatasetKind::TwoMoons {
            noise: kv.require_f64(&key("noise"))?,
        },
        "spirals" => DatasetKind::Spirals {
            turns: kv.require_f64(&key("turns"))?,
            noise: kv.require_f64(&key("noise"))?,
        },
        "csv" => DatasetKind::Csv {
            path: kv.require(&key("path"))?.to_string(),
        },
        "idx" => DatasetKind::IdxImages {
            prefix: kv.require(&key("path"))?.to_string(),
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown dataset kind `{other}`"
            )));
        }
    };
    Ok(DatasetSource {
        kind,
        train: kv.require_usize(&key("train"))?,
        test: kv.require_usize(&key("test"))?,
        seed: kv.require_u64(&key("seed"))?,
    })
}

// ---------------------------------------------------------------------------
// train config
// ---------------------------------------------------------------------------

pub fn push_train_config(kv: &mut KvMap, prefix: &str, cfg: &TrainConfig) {
    let key = |s: &str| format!("{prefix}.{s}");
    kv.push(&key("epochs"), cfg.epochs.to_string());
    kv.push_f64(&key("base_lr"), cfg.base_lr);
    kv.push_f64(&key("momentum"), cfg.momentum);
    kv.push_f64(&key("weight_decay"), cfg.weight_decay);
    kv.push(&key("batch_size"), cfg.batch_size.to_string());
    match &cfg.schedule {
        Schedule::Step { milestones, factor } => {
            kv.push(&key("schedule"), "step");
            kv.push(&key("milestones"), fmt_usize_list(milestones));
            kv.push_f64(&key("factor"), *factor);
        }
        Schedule::Cyclic {
            period,
            min_lr,
            max_lr,
        } => {
            kv.push(&key("schedule"), "cyclic");
            kv.push(&key("period"), period.to_string());
            kv.push_f64(&key("min_lr"), *min_lr);
            kv.push_f64(&key("max_lr"), *max_lr);
        }
    }
    match &cfg.augmentation {
        Augmentation::None => kv.push(&key("aug"), "none"),
        Augmentation::Mixup { alpha } => {
            kv.push(&key("aug"), "mixup");
            kv.push_f64(&key("mixup_alpha"), *alpha);
        }
        Augmentation::Cutout { size } => {
            kv.push(&key("aug"), "cutout");
            kv.push(&key("cutout_size"), size.to_string());
        }
    }
    match &cfg.optimizer {
        OptimizerVariant::Erm => kv.push(&key("optimizer"), "erm"),
        OptimizerVariant::Sam { rho } => {
            kv.push(&key("optimizer"), "sam");
            kv.push_f64(&key("sam_rho"), *rho);
        }
    }
    kv.push(&key("seed"), cfg.seed.to_string());
}

pub fn read_train_config(kv: &KvMap, prefix: &str) -> Result<TrainConfig> {
    let key = |s: &str| format!("{prefix}.{s}");
    let schedule = match kv.require(&key("schedule"))? {
        "step" => Schedule::Step {
            milestones: kv.require_usize_list(&key("milestones"))?,
            factor: kv.require_f64(&key("factor"))?,
        },
        "cyclic" => Schedule::Cyclic {
            period: kv.require_usize(&key("period"))?,
            min_lr: kv.require_f64(&key("min_lr"))?,
            max_lr: kv.require_f64(&key("max_lr"))?,
        },
        other => return Err(Error::InvalidConfig(format!("unknown schedule `{other}`"))),
    };
    let augmentation = match kv.require(&key("aug"))? {
        "none" => Augmentation::None,
        "mixup" => Augmentation::Mixup {
            alpha: kv.require_f64(&key("mixup_alpha"))?,
        },
        "cutout" => Augmentation::Cutout {
            size: kv.require_usize(&key("cutout_size"))?,
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown augmentation `{other}`"
            )))
        }
    };
    let optimizer = match kv.require(&key("optimizer"))? {
        "erm" => OptimizerVariant::Erm,
        "sam" => OptimizerVariant::Sam {
            rho: kv.require_f64(&key("sam_rho"))?,
        },
        other => return Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
    };
    Ok(TrainConfig {
        epochs: kv.require_usize(&key("epochs"))?,
        base_lr: kv.require_f64(&key("base_lr"))?,
        momentum: kv.require_f64(&key("momentum"))?,
        weight_decay: kv.require_f64(&key("weight_decay"))?,
        batch_size: kv.require_usize(&key("batch_size"))?,
        schedule,
        augmentation,
        optimizer,
        seed: kv.require_u64(&key("seed"))?,
    })
}

// ---------------------------------------------------------------------------
// poison artifact
// ---------------------------------------------------------------------------

/// Victim context stored alongside a poison set so retraining and
/// evaluation are reproducible from files alone.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimInfo {
    pub y_vic: usize,
    pub y_obj: usize,
    /// Targeted: indices into the test split. Backdoor: indices into train.
    pub victim_indices: Vec<usize>,
    pub trigger: Option<TriggerPatch>,
}

/// A crafted poison or perturbation set plus everything needed to rebuild
/// the experiment around it.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonArtifact {
    pub mode: AttackMode,
    pub epsilon: f64,
    /// Poisoning ratio (targeted/backdoor) or perturbed portion (untargeted).
    pub fraction: f64,
    pub seed: u64,
    pub indices: Vec<usize>,
    pub deltas: Vec<Tensor>,
    pub dataset: DatasetSource,
    pub hidden: Vec<usize>,
    pub victim: Option<VictimInfo>,
}

impl PoisonArtifact {
    pub fn save(&self, base: &Path) -> Result<()> {
        let mut kv = KvMap::new();
        kv.push("format", "poison-v1");
        kv.push("mode", self.mode.as_str());
        kv.push_f64("epsilon", self.epsilon);
        kv.push_f64("fraction", self.fraction);
        kv.push("seed", self.seed.to_string());
        let shape = self
            .deltas
            .first()
            .map(|d| d.shape().to_vec())
            .unwrap_or_default();
        kv.push("delta_shape", fmt_usize_list(&shape));
        kv.push("count", self.indices.len().to_string());
        kv.push("indices", fmt_usize_list(&self.indices));
        push_dataset(&mut kv, "dataset", &self.dataset);
        kv.push("model.hidden", fmt_usize_list(&self.hidden));
        if let Some(v) = &self.victim {
            kv.push("victim.y_vic", v.y_vic.to_string());
            kv.push("victim.y_obj", v.y_obj.to_string());
            kv.push("victim.indices", fmt_usize_list(&v.victim_indices));
            if let Some(t) = &v.trigger {
                kv.push("victim.trigger.shape", fmt_usize_list(t.pattern.shape()));
                kv.push("victim.trigger.anchor", fmt_usize_list(&t.anchor));
                kv.push("victim.trigger.pattern", fmt_f64_list(t.pattern.data()));
            }
        }
        kv.save(&manifest_path(base))?;
        let mut flat = Vec::new();
        for d in &self.deltas {
            flat.extend_from_slice(d.data());
        }
        write_f64_bin(&bin_path(base), &flat)
    }

    pub fn load(base: &Path) -> Result<PoisonArtifact> {
        let kv = KvMap::load(&manifest_path(base))?;
        let mode = AttackMode::parse(kv.require("mode")?)?;
        let shape = kv.require_usize_list("delta_shape")?;
        let count = kv.require_usize("count")?;
        let indices = kv.require_usize_list("indices")?;
        if indices.len() != count {
            return Err(Error::Malformed {
                path: manifest_path(base).display().to_string(),
                offset: 0,
                detail: format!("count {} does not match {} indices", count, indices.len()),
            });
        }
        let per: usize = shape.iter().product();
        let flat = read_f64_bin(&bin_path(base), count * per)?;
        let deltas = flat
            .chunks(per.max(1))
            .take(count)
            .map(|c| Tensor::new(shape.clone(), c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let victim = if kv.contains("victim.y_obj") {
            let trigger = if kv.contains("victim.trigger.shape") {
                let tshape = kv.require_usize_list("victim.trigger.shape")?;
                let anchor = kv.require_usize_list("victim.trigger.anchor")?;
                let pattern = kv.require_f64_list("victim.trigger.pattern")?;
                Some(TriggerPatch::new(Tensor::new(tshape, pattern)?, anchor)?)
            } else {
                None
            };
            Some(VictimInfo {
                y_vic: kv.require_usize("victim.y_vic")?,
                y_obj: kv.require_usize("victim.y_obj")?,
                victim_indices: kv.require_usize_list("victim.indices")?,
                trigger,
            })
        } else {
            None
        };
        Ok(PoisonArtifact {
            mode,
            epsilon: kv.require_f64("epsilon")?,
            fraction: kv.require_f64("fraction")?,
            seed: kv.require_u64("seed")?,
            indices,
            deltas,
            dataset: read_dataset(&kv, "dataset")?,
            hidden: kv.require_usize_list("model.hidden")?,
            victim,
        })
    }
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

/// Trained parameters plus the architecture recipe and training config.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub input_shape: Vec<usize>,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub epoch: usize,
    pub train: TrainConfig,
    pub params: Vec<f64>,
    pub spec_fingerprint: u64,
}

impl Checkpoint {
    pub fn save(&self, base: &Path) -> Result<()> {
        let mut kv = KvMap::new();
        kv.push("format", "checkpoint-v1");
        kv.push("spec_fingerprint", self.spec_fingerprint.to_string());
        kv.push("input_shape", fmt_usize_list(&self.input_shape));
        kv.push("hidden", fmt_usize_list(&self.hidden));
        kv.push("classes", self.classes.to_string());
        kv.push("epoch", self.epoch.to_string());
        kv.push("params", self.params.len().to_string());
        push_train_config(&mut kv, "train", &self.train);
        kv.save(&manifest_path(base))?;
        write_f64_bin(&bin_path(base), &self.params)
    }

    pub fn load(base: &Path) -> Result<Checkpoint> {
        let kv = KvMap::load(&manifest_path(base))?;
        let count = kv.require_usize("params")?;
        Ok(Checkpoint {
            input_shape: kv.require_usize_list("input_shape")?,
            hidden: kv.require_usize_list("hidden")?,
            classes: kv.require_usize("classes")?,
            epoch: kv.require_usize("epoch")?,
            train: read_train_config(&kv, "train")?,
            params: read_f64_bin(&bin_path(base), count)?,
            spec_fingerprint: kv.require_u64("spec_fingerprint")?,
        })
    }
}

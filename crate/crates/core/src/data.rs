//! Synthetic dataset generators plus CSV and IDX readers. All generators
//! are seeded and emit features in [0, 1] with disjoint train/test splits.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::nn::LabeledBatch;
use crate::persist::fmt_f64;
use crate::rng;
use crate::tensor::Tensor;

/// Fixed isotropic affine map taking the canonical two-moons bounding box
/// `[-1, 2] x [-0.5, 1]` into the middle of the unit square without
/// distorting the arcs.
pub const TWO_MOONS_X_OFFSET: f64 = 2.5;
pub const TWO_MOONS_X_SCALE: f64 = 6.0;
pub const TWO_MOONS_Y_OFFSET: f64 = 2.75;
pub const TWO_MOONS_Y_SCALE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    Gaussians {
        classes: usize,
        dim: usize,
        separation: f64,
    },
    TwoMoons {
        noise: f64,
    },
    Spirals {
        turns: f64,
        noise: f64,
    },
    Csv {
        path: String,
    },
    /// Prefix of an IDX pair: `<prefix>-images-idx3-ubyte` and
    /// `<prefix>-labels-idx1-ubyte`. Read-only grayscale corpora.
    IdxImages {
        prefix: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSource {
    pub kind: DatasetKind,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl DatasetSource {
    pub fn gaussians(
        classes: usize,
        dim: usize,
        separation: f64,
        train: usize,
        test: usize,
        seed: u64,
    ) -> Self {
        DatasetSource {
            kind: DatasetKind::Gaussians {
                classes,
                dim,
                separation,
            },
            train,
            test,
            seed,
        }
    }

    pub fn two_moons(noise: f64, train: usize, test: usize, seed: u64) -> Self {
        DatasetSource {
            kind: DatasetKind::TwoMoons { noise },
            train,
            test,
            seed,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.kind {
            DatasetKind::Gaussians { classes, .. } => Some(*classes),
            DatasetKind::TwoMoons { .. } | DatasetKind::Spirals { .. } => Some(2),
            _ => None,
        }
    }
}

fn split(
    samples: Vec<Tensor>,
    labels: Vec<usize>,
    train: usize,
    test: usize,
) -> Result<(LabeledBatch, LabeledBatch)> {
    let train_batch =
        LabeledBatch::new(Tensor::stack(&samples[..train])?, labels[..train].to_vec())?;
    let test_batch = LabeledBatch::new(
        Tensor::stack(&samples[train..train + test])?,
        labels[train..train + test].to_vec(),
    )?;
    Ok((train_batch, test_batch))
}

/// Class means sit on a circle of diameter `separation` around the center
/// of the unit cube; within-class noise is fixed at sigma 0.1, so
/// `separation` alone controls class overlap.
fn gen_gaussians(
    classes: usize,
    dim: usize,
    separation: f64,
    total: usize,
    seed: u64,
) -> (Vec<Tensor>, Vec<usize>) {
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut m = vec![0.5; dim];
        if dim == 1 {
            m[0] = 0.5 + separation / 2.0 * if c % 2 == 0 { -1.0 } else { 1.0 };
        } else {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            m[0] = 0.5 + separation / 2.0 * angle.cos();
            m[1] = 0.5 + separation / 2.0 * angle.sin();
        }
        means.push(m);
    }
    let std = 0.1;
    let mut r = rng::rng_from(seed);
    let normal = rand_distr::StandardNormal;
    let mut samples = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let c = i % classes;
        let data: Vec<f64> = means[c]
            .iter()
            .map(|&m| {
                let z: f64 = normal.sample(&mut r);
                (m + std * z).clamp(0.0, 1.0)
            })
            .collect();
        samples.push(Tensor::from_parts(vec![dim], data));
        labels.push(c);
    }
    (samples, labels)
}

fn gen_two_moons(noise: f64, total: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let mut r = rng::rng_from(seed);
    let normal = rand_distr::StandardNormal;
    let mut samples = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let c = i % 2;
        let t: f64 = r.random_range(0.0..std::f64::consts::PI);
        let (mut x, mut y) = if c == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        if noise > 0.0 {
            let zx: f64 = normal.sample(&mut r);
            let zy: f64 = normal.sample(&mut r);
            x += noise * zx;
            y += noise * zy;
        }
        let u = ((x + TWO_MOONS_X_OFFSET) / TWO_MOONS_X_SCALE).clamp(0.0, 1.0);
        let v = ((y + TWO_MOONS_Y_OFFSET) / TWO_MOONS_Y_SCALE).clamp(0.0, 1.0);
        samples.push(Tensor::from_parts(vec![2], vec![u, v]));
        labels.push(c);
    }
    (samples, labels)
}

fn gen_spirals(turns: f64, noise: f64, total: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let mut r = rng::rng_from(seed);
    let normal = rand_distr::StandardNormal;
    let mut samples = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let c = i % 2;
        let t: f64 = r.random_range(0.0..1.0);
        let radius = 0.05 + 0.4 * t;
        let angle = 2.0 * std::f64::consts::PI * (turns * t + c as f64 / 2.0);
        let mut x = 0.5 + radius * angle.cos();
        let mut y = 0.5 + radius * angle.sin();
        if noise > 0.0 {
            let zx: f64 = normal.sample(&mut r);
            let zy: f64 = normal.sample(&mut r);
            x += noise * zx;
            y += noise * zy;
        }
        samples.push(Tensor::from_parts(
            vec![2],
            vec![x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)],
        ));
        labels.push(c);
    }
    (samples, labels)
}

/// Seeded, deterministic (train, test) generation.
pub fn generate(source: &DatasetSource) -> Result<(LabeledBatch, LabeledBatch)> {
    if source.train == 0 || source.test == 0 {
        return Err(Error::InvalidConfig("split sizes must be positive".into()));
    }
    let total = source.train + source.test;
    let (samples, labels) = match &source.kind {
        DatasetKind::Gaussians {
            classes,
            dim,
            separation,
        } => {
            if *classes < 2 || *dim == 0 {
                return Err(Error::InvalidConfig(
                    "gaussians need >= 2 classes, dim >= 1".into(),
                ));
            }
            gen_gaussians(*classes, *dim, *separation, total, source.seed)
        }
        DatasetKind::TwoMoons { noise } => gen_two_moons(*noise, total, source.seed),
        DatasetKind::Spirals { turns, noise } => gen_spirals(*turns, *noise, total, source.seed),
        DatasetKind::Csv { path } => load_csv(Path::new(path), total)?,
        DatasetKind::IdxImages { prefix } => load_idx(prefix, total)?,
    };
    split(samples, labels, source.train, source.test)
}

/// Writes `label,f0,f1,...` rows with a header, floats at 17 significant
/// digits so a save/load round trip is exact.
pub fn save_csv(batch: &LabeledBatch, path: &Path) -> Result<()> {
    let width = batch.inputs.sample_len();
    let mut out = String::from("label");
    for i in 0..width {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for i in 0..batch.len() {
        out.push_str(&batch.labels[i].to_string());
        for v in batch.inputs.sample(i) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    crate::persist::write_bytes(path, out.as_bytes())
}

fn load_csv(path: &Path, total: usize) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0u64;
    let mut width = None;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let line_offset = offset;
        offset += line.len() as u64;
        let trimmed = line.trim_end_matches('\n').trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        if lineno == 0 && trimmed.starts_with("label") {
            continue;
        }
        let mut field_offset = line_offset;
        let mut fields = Vec::new();
        for field in trimmed.split(',') {
            fields.push((field, field_offset));
            field_offset += field.len() as u64 + 1;
        }
        if fields.len() < 2 {
            return Err(Error::Malformed {
                path: path_str,
                offset: line_offset,
                detail: "row needs a label and at least one feature".into(),
            });
        }
        let label: usize = fields[0].0.parse().map_err(|_| Error::Malformed {
            path: path_str.clone(),
            offset: fields[0].1,
            detail: format!("bad label `{}`", fields[0].0),
        })?;
        let mut row = Vec::with_capacity(fields.len() - 1);
        for (field, foff) in &fields[1..] {
            let v: f64 = field.parse().map_err(|_| Error::Malformed {
                path: path_str.clone(),
                offset: *foff,
                detail: format!("bad float `{field}`"),
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Malformed {
                    path: path_str,
                    offset: line_offset,
                    detail: format!("row has {} features, expected {w}", row.len()),
                });
            }
            _ => {}
        }
        let dim = row.len();
        samples.push(Tensor::new(vec![dim], row)?);
        labels.push(label);
    }
    if samples.len() < total {
        return Err(Error::Malformed {
            path: path_str,
            offset,
            detail: format!("file has {} rows, need {total}", samples.len()),
        });
    }
    Ok((samples, labels))
}

fn read_be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    if at + 4 > bytes.len() {
        return Err(Error::Malformed {
            path: path.to_string(),
            offset: bytes.len() as u64,
            detail: "unexpected end of file".into(),
        });
    }
    Ok(u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()))
}

fn load_idx(prefix: &str, total: usize) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let images_path = format!("{prefix}-images-idx3-ubyte");
    let labels_path = format!("{prefix}-labels-idx1-ubyte");

    let mut bytes = Vec::new();
    fs::File::open(&images_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(images_path.clone(), e))?;
    if read_be_u32(&bytes, 0, &images_path)? != 0x0000_0803 {
        return Err(Error::Malformed {
            path: images_path,
            offset: 0,
            detail: "bad magic, expected idx3 image file".into(),
        });
    }
    let count = read_be_u32(&bytes, 4, &images_path)? as usize;
    let h = read_be_u32(&bytes, 8, &images_path)? as usize;
    let w = read_be_u32(&bytes, 12, &images_path)? as usize;
    let need = 16 + count * h * w;
    if bytes.len() < need {
        return Err(Error::Malformed {
            path: images_path,
            offset: bytes.len() as u64,
            detail: format!("truncated image data, expected {need} bytes"),
        });
    }
    if count < total {
        return Err(Error::Malformed {
            path: images_path,
            offset: 4,
            detail: format!("file has {count} images, need {total}"),
        });
    }

    let mut lbytes = Vec::new();
    fs::File::open(&labels_path)
        .and_then(|mut f| f.read_to_end(&mut lbytes))
        .map_err(|e| Error::io(labels_path.clone(), e))?;
    if read_be_u32(&lbytes, 0, &labels_path)? != 0x0000_0801 {
        return Err(Error::Malformed {
            path: labels_path,
            offset: 0,
            detail: "bad magic, expected idx1 label file".into(),
        });
    }
    let lcount = read_be_u32(&lbytes, 4, &labels_path)? as usize;
    if lcount < total || lbytes.len() < 8 + total {
        return Err(Error::Malformed {
            path: labels_path,
            offset: lbytes.len().min(8 + total) as u64,
            detail: format!("label file has {lcount} entries, need {total}"),
        });
    }

    let mut samples = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let start = 16 + i * h * w;
        let data: Vec<f64> = bytes[start..start + h * w]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        samples.push(Tensor::from_parts(vec![1, h, w], data));
        labels.push(lbytes[8 + i] as usize);
    }
    Ok((samples, labels))
}

/// Training set with per-index perturbations added and pixel range enforced.
/// Labels are untouched.
pub fn apply_perturbations(
    train: &LabeledBatch,
    indices: &[usize],
    deltas: &[Tensor],
) -> LabeledBatch {
    assert_eq!(indices.len(), deltas.len(), "one delta per poisoned index");
    let mut out = train.clone();
    for (&i, d) in indices.iter().zip(deltas) {
        let row = out.inputs.sample_mut(i);
        for (x, dv) in row.iter_mut().zip(d.data()) {
            *x = (*x + dv).clamp(0.0, 1.0);
        }
    }
    out
}

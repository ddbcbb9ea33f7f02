//! Dataset loading (IDX, CSV), synthetic Gaussian mixtures, augmentation and
//! seeded per-epoch batching over the active example set.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
/// Class count assumed for IDX (MNIST-style) label files.
pub const IDX_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, need {needed} bytes but file has {len}")]
    Truncated { path: PathBuf, needed: usize, len: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{0}: dataset is empty")]
    Empty(PathBuf),
    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    Ragged { path: PathBuf, line: u64, expected: usize, found: usize },
    #[error("{path}:{line}: cannot parse field {field} ({value:?})")]
    Parse { path: PathBuf, line: u64, field: usize, value: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("horizontal flip needs image-shaped data")]
    FlipWithoutImage,
    #[error("no active examples to batch")]
    EmptyActiveSet,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Labelled examples; example `i` has id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Row-major `height x width x channels` layout when the rows are images.
    pub image_shape: Option<ImageShape>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
        image_shape: Option<ImageShape>,
    ) -> Result<Self, DataError> {
        let ds = Dataset {
            features,
            labels,
            class_count,
            image_shape,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.labels.is_empty() {
            return bad("dataset has no examples".into());
        }
        if self.features.len() != self.labels.len() {
            return bad(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            ));
        }
        let d = self.features[0].len();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != d {
                return bad(format!("example {i} has {} features, expected {d}", row.len()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return bad(format!("example {i} has a non-finite feature"));
            }
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.class_count) {
            return bad(format!("example {i} has label {y} but class_count is {}", self.class_count));
        }
        if let Some(shape) = self.image_shape {
            if shape.len() != d {
                return bad(format!("image shape {shape:?} does not match {d} features"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn with_class_count(mut self, class_count: usize) -> Result<Self, DataError> {
        self.class_count = class_count;
        self.validate()?;
        Ok(self)
    }

    /// New dataset made of the given ids, renumbered from 0 in that order.
    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            features: ids.iter().map(|&i| self.features[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            image_shape: self.image_shape,
        }
    }

    /// Seeded shuffle split into `(train, validation)`. The validation part
    /// holds `round(fraction * n)` examples, at least one example stays in
    /// training. Both parts keep their original relative order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..=0.5).contains(&fraction) {
            return Err(DataError::Invalid(format!(
                "validation fraction must lie in [0, 0.5], got {fraction}"
            )));
        }
        let n = self.len();
        let n_val = ((fraction * n as f64).round() as usize).min(n - 1);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0x5eed_5911, 0)));
        let mut val: Vec<usize> = ids[..n_val].to_vec();
        let mut train: Vec<usize> = ids[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Gathers the (augmented) rows for `ids`.
    pub fn batch(&self, ids: &[usize], policy: &AugmentPolicy, run_seed: u64, epoch: usize) -> Result<Batch, DataError> {
        let mut features = Vec::with_capacity(ids.len());
        for &id in ids {
            features.push(augment(&self.features[id], policy, self.image_shape, run_seed, epoch, id)?);
        }
        Ok(Batch {
            ids: ids.to_vec(),
            features,
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Writes `label,f0,f1,...` rows, the format read by [`load_csv`].
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (row, y) in self.features.iter().zip(&self.labels) {
            write!(out, "{y}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// A mini-batch of examples from the active set.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(io_err(path))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            needed: offset + 4,
            len: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], path: &Path, needed: usize) -> Result<(), DataError> {
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            needed,
            len: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX image file (`count x rows x cols` unsigned bytes).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Vec<Vec<f64>>, ImageShape), DataError> {
    check_magic(bytes, path, IDX_IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if count == 0 {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    let per = rows * cols;
    check_len(bytes, path, 16 + count * per)?;
    let images = bytes[16..16 + count * per]
        .chunks_exact(per.max(1))
        .take(count)
        .map(|px| px.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok((
        images,
        ImageShape {
            height: rows,
            width: cols,
            channels: 1,
        },
    ))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>, DataError> {
    check_magic(bytes, path, IDX_LABEL_MAGIC)?;
    let count = be_u32(bytes, 4, path)? as usize;
    if count == 0 {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    check_len(bytes, path, 8 + count)?;
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]`.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    let (features, shape) = parse_idx_images(&read_file(ip)?, ip)?;
    let labels = parse_idx_labels(&read_file(lp)?, lp)?;
    if features.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: features.len(),
            labels: labels.len(),
        });
    }
    let class_count = IDX_CLASSES.max(labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, class_count, Some(shape))
}

/// Encodes images and labels as an IDX pair. Pixel values are clamped to
/// `[0, 1]` and quantised to bytes.
pub fn encode_idx(ds: &Dataset, shape: ImageShape) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + ds.len() * shape.len());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img.extend_from_slice(&(shape.height as u32).to_be_bytes());
    img.extend_from_slice(&((shape.width * shape.channels) as u32).to_be_bytes());
    for row in &ds.features {
        img.extend(row.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels.iter().map(|&y| y as u8));
    (img, lab)
}

/// Loads `label,f0,f1,...` rows with no header. Class count is max label + 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_csv(file, path)
}

pub fn read_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(DataError::Ragged {
                path: path.to_path_buf(),
                line,
                expected,
                found: rec.len(),
            });
        }
        if expected < 2 {
            return Err(DataError::Csv {
                path: path.to_path_buf(),
                message: format!("line {line}: need a label and at least one feature"),
            });
        }
        let parse_err = |field: usize| DataError::Parse {
            path: path.to_path_buf(),
            line,
            field,
            value: rec[field].to_string(),
        };
        let label: usize = rec[0].parse().map_err(|_| parse_err(0))?;
        let mut row = Vec::with_capacity(expected - 1);
        for f in 1..expected {
            let v: f64 = rec[f].parse().map_err(|_| parse_err(f))?;
            if !v.is_finite() {
                return Err(parse_err(f));
            }
            row.push(v);
        }
        labels.push(label);
        features.push(row);
    }
    if labels.is_empty() {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    let class_count = labels.iter().max().unwrap() + 1;
    Dataset::new(features, labels, class_count, None)
}

/// Per-class standard deviation of a synthetic mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spread {
    Shared(f64),
    PerClass(Vec<f64>),
}

/// Isotropic Gaussian mixture; class `c` draws `counts[c]` points around `means[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub means: Vec<Vec<f64>>,
    pub std: Spread,
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `classes` means drawn as standard normal vectors scaled by
    /// `separation`, all seeded from `seed`.
    pub fn random_means(classes: usize, dim: usize, separation: f64, std: f64, per_class: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x3ea5, 0));
        let means = (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        SyntheticSpec {
            means,
            std: Spread::Shared(std),
            counts: vec![per_class; classes],
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.means.is_empty() {
            return bad("synthetic spec needs at least one class".into());
        }
        if self.counts.len() != self.means.len() {
            return bad(format!("{} means but {} counts", self.means.len(), self.counts.len()));
        }
        if self.counts.contains(&0) {
            return bad("every class count must be at least 1".into());
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return bad("class means must share a positive dimension".into());
        }
        let stds: &[f64] = match &self.std {
            Spread::Shared(s) => std::slice::from_ref(s),
            Spread::PerClass(v) => {
                if v.len() != self.means.len() {
                    return bad(format!("{} per-class stds for {} classes", v.len(), self.means.len()));
                }
                v
            }
        };
        if stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("standard deviations must be finite and non-negative".into());
        }
        Ok(())
    }

    fn std_of(&self, class: usize) -> f64 {
        match &self.std {
            Spread::Shared(s) => *s,
            Spread::PerClass(v) => v[class],
        }
    }
}

/// Samples the mixture. Ids run class by class, then by index within class.
pub fn gen_gaussian(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Vec::with_capacity(spec.total());
    let mut labels = Vec::with_capacity(spec.total());
    for (c, (mean, &count)) in spec.means.iter().zip(&spec.counts).enumerate() {
        let s = spec.std_of(c);
        for _ in 0..count {
            features.push(
                mean.iter()
                    .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            labels.push(c);
        }
    }
    Dataset::new(features, labels, spec.means.len(), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentPolicy {
    #[default]
    None,
    GaussianNoise { sigma: f64 },
    HorizontalFlip { prob: f64 },
}

/// SplitMix64-style mixing of a seed with two stream coordinates.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(29);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Augments one example. Randomness depends only on `(run_seed, epoch,
/// example_id)`, never on batch order.
pub fn augment(
    features: &[f64],
    policy: &AugmentPolicy,
    image_shape: Option<ImageShape>,
    run_seed: u64,
    epoch: usize,
    example_id: usize,
) -> Result<Vec<f64>, DataError> {
    match *policy {
        AugmentPolicy::None => Ok(features.to_vec()),
        AugmentPolicy::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(features.to_vec());
            }
            let mut rng = example_rng(run_seed, epoch, example_id);
            Ok(features
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect())
        }
        AugmentPolicy::HorizontalFlip { prob } => {
            let shape = image_shape.ok_or(DataError::FlipWithoutImage)?;
            let mut rng = example_rng(run_seed, epoch, example_id);
            if prob >= 1.0 || rng.random::<f64>() < prob {
                Ok(flip_horizontal(features, shape))
            } else {
                Ok(features.to_vec())
            }
        }
    }
}

fn example_rng(run_seed: u64, epoch: usize, example_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(run_seed, epoch as u64 + 1, example_id as u64 + 1))
}

/// Mirrors each row of an `h x w x c` image.
pub fn flip_horizontal(features: &[f64], shape: ImageShape) -> Vec<f64> {
    let (w, c) = (shape.width, shape.channels);
    let mut out = features.to_vec();
    for row in 0..shape.height {
        for col in 0..w {
            for ch in 0..c {
                out[(row * w + col) * c + ch] = features[(row * w + (w - 1 - col)) * c + ch];
            }
        }
    }
    out
}

/// Seeded shuffle of `active_ids` cut into consecutive batches of
/// `batch_size` (the last may be short).
pub fn epoch_batches(
    active_ids: &[usize],
    batch_size: usize,
    run_seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, DataError> {
    if active_ids.is_empty() {
        return Err(DataError::EmptyActiveSet);
    }
    if batch_size == 0 {
        return Err(DataError::Invalid("batch_size must be at least 1".into()));
    }
    let mut order = active_ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(run_seed, 0xba7c4, epoch as u64)));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

//! Dataset generation and ingestion: synthetic heterogeneous class clusters,
//! Dirichlet non-iid partitioning, and IDX (MNIST-format) file loading.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::derive_stream;

/// Magic number of an IDX image file (unsigned bytes, 3 dimensions).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic number of an IDX label file (unsigned bytes, 1 dimension).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Targets attached to a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class ids in `[0, num_classes)`.
    Classes(Vec<usize>),
    /// Real-valued regression targets.
    Reals(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A row-major feature matrix with per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    num_features: usize,
    labels: Labels,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, num_features: usize, labels: Labels) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::InvalidInput("datasets need at least one feature".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("datasets need at least one sample".into()));
        }
        if features.len() != n * num_features {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {n} samples of {num_features} features",
                features.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("features contain non-finite values".into()));
        }
        let num_classes = match &labels {
            Labels::Classes(ids) => ids.iter().max().map_or(0, |m| m + 1),
            Labels::Reals(_) => 0,
        };
        Ok(Self {
            features,
            num_features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Number of classes (max id + 1); zero for regression targets.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn class_label(&self, i: usize) -> Option<usize> {
        match &self.labels {
            Labels::Classes(ids) => ids.get(i).copied(),
            Labels::Reals(_) => None,
        }
    }

    pub fn real_label(&self, i: usize) -> Option<f64> {
        match &self.labels {
            Labels::Reals(v) => v.get(i).copied(),
            Labels::Classes(_) => None,
        }
    }

    /// New dataset holding the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("cannot build an empty subset".into()));
        }
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidInput(format!(
                    "row {i} out of range {}",
                    self.len()
                )));
            }
            features.extend_from_slice(self.feature_row(i));
        }
        let labels = match &self.labels {
            Labels::Classes(ids) => Labels::Classes(indices.iter().map(|&i| ids[i]).collect()),
            Labels::Reals(v) => Labels::Reals(indices.iter().map(|&i| v[i]).collect()),
        };
        let mut out = LabeledDataset::new(features, self.num_features, labels)?;
        // Preserve the parent's class count so a partition chunk that misses
        // the last class keeps the same model dimensions.
        out.num_classes = out.num_classes.max(self.num_classes);
        Ok(out)
    }

    /// Export as CSV with header `feature_0..feature_{p-1},label`.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in 0..self.num_features {
            out.push_str(&format!("feature_{j},"));
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for x in self.feature_row(i) {
                out.push_str(&format!("{x},"));
            }
            match &self.labels {
                Labels::Classes(ids) => out.push_str(&format!("{}\n", ids[i])),
                Labels::Reals(v) => out.push_str(&format!("{}\n", v[i])),
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// How to split one dataset across clients with a Dirichlet draw per class.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub dirichlet_beta: f64,
    pub min_per_client: usize,
    pub seed: u64,
}

/// Spread of the shared class-mean draws in the synthetic generator.
const CLASS_MEAN_SPREAD: f64 = 2.0;
/// Within-cluster sample noise in the synthetic generator.
const SAMPLE_NOISE: f64 = 1.0;

/// Synthetic heterogeneous classification data: every client samples from
/// Gaussian clusters around shared class means, each shifted per client by a
/// skew-scaled random offset. `skew = 0` makes clients identically
/// distributed.
pub fn synth_heterogeneous(
    num_clients: usize,
    samples_per_client: usize,
    num_features: usize,
    num_classes: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if num_clients == 0 || samples_per_client == 0 || num_features == 0 || num_classes == 0 {
        return Err(Error::InvalidInput(
            "synthetic data needs positive clients, samples, features, and classes".into(),
        ));
    }
    if !(skew.is_finite() && skew >= 0.0) {
        return Err(Error::InvalidInput(format!("skew must be non-negative, got {skew}")));
    }
    let mut rng = derive_stream(seed, "synth", 0, 0);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut class_means = vec![vec![0.0; num_features]; num_classes];
    for mean in &mut class_means {
        for x in mean.iter_mut() {
            *x = CLASS_MEAN_SPREAD * normal(&mut rng);
        }
    }
    // Offsets are drawn for every (client, class) before any samples so the
    // same seed realizes the same offsets at every skew value.
    let mut offsets = vec![vec![vec![0.0; num_features]; num_classes]; num_clients];
    for client in &mut offsets {
        for class in client.iter_mut() {
            for x in class.iter_mut() {
                *x = normal(&mut rng);
            }
        }
    }
    let mut datasets = Vec::with_capacity(num_clients);
    for k in 0..num_clients {
        let mut features = Vec::with_capacity(samples_per_client * num_features);
        let mut labels = Vec::with_capacity(samples_per_client);
        for i in 0..samples_per_client {
            let c = i % num_classes;
            for j in 0..num_features {
                let center = class_means[c][j] + skew * offsets[k][c][j];
                features.push(center + SAMPLE_NOISE * normal(&mut rng));
            }
            labels.push(c);
        }
        let mut data = LabeledDataset::new(features, num_features, Labels::Classes(labels))?;
        data.num_classes = num_classes;
        datasets.push(data);
    }
    Ok(datasets)
}

/// Non-iid split of a labeled dataset: each class's samples are spread over
/// clients with proportions drawn from a symmetric Dirichlet. Clients that
/// fall below `min_per_client` trigger a bounded redraw.
pub fn dirichlet_partition(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<LabeledDataset>> {
    const MAX_ATTEMPTS: usize = 100;
    if spec.num_clients == 0 {
        return Err(Error::InvalidInput("partition needs at least one client".into()));
    }
    if spec.min_per_client == 0 {
        return Err(Error::InvalidInput(
            "min_per_client must be at least one".into(),
        ));
    }
    if !(spec.dirichlet_beta > 0.0 && spec.dirichlet_beta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "dirichlet beta must be positive, got {}",
            spec.dirichlet_beta
        )));
    }
    let class_ids = match data.labels() {
        Labels::Classes(ids) => ids,
        Labels::Reals(_) => {
            return Err(Error::InvalidInput(
                "dirichlet partition needs class labels".into(),
            ))
        }
    };
    let num_classes = data.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in class_ids.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = derive_stream(spec.seed, "dirichlet", 0, 0);
    let gamma = Gamma::new(spec.dirichlet_beta, 1.0)
        .map_err(|e| Error::InvalidInput(format!("invalid dirichlet beta: {e}")))?;

    for _ in 0..MAX_ATTEMPTS {
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); spec.num_clients];
        for indices in &by_class {
            if indices.is_empty() {
                continue;
            }
            let mut shuffled = indices.clone();
            shuffled.shuffle(&mut rng);
            // Dirichlet draw via normalized Gamma variates.
            let mut raw: Vec<f64> = (0..spec.num_clients).map(|_| rng.sample(gamma)).collect();
            let total: f64 = raw.iter().sum();
            if total <= 0.0 {
                raw = vec![1.0; spec.num_clients];
            }
            let total: f64 = raw.iter().sum();
            let counts = largest_remainder_counts(&raw, total, shuffled.len());
            let mut cursor = 0;
            for (client, &count) in counts.iter().enumerate() {
                assignments[client].extend_from_slice(&shuffled[cursor..cursor + count]);
                cursor += count;
            }
        }
        if assignments.iter().all(|a| a.len() >= spec.min_per_client) {
            let mut out = Vec::with_capacity(spec.num_clients);
            for mut rows in assignments {
                rows.sort_unstable();
                out.push(data.subset(&rows)?);
            }
            return Ok(out);
        }
    }
    Err(Error::PartitionInfeasible {
        attempts: MAX_ATTEMPTS,
        min_per_client: spec.min_per_client,
    })
}

/// Integer allocation of `total` items proportional to `raw`, by largest
/// fractional remainder with ties to the lower index.
fn largest_remainder_counts(raw: &[f64], total_weight: f64, total: usize) -> Vec<usize> {
    let shares: Vec<f64> = raw.iter().map(|w| w / total_weight * total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap()
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("file truncated at byte {offset}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label file pair into a dataset. Pixels are scaled to
/// `[0, 1]` by dividing the raw bytes by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images_name = images_path.display().to_string();
    let labels_name = labels_path.display().to_string();
    let image_bytes =
        std::fs::read(images_path).map_err(|e| Error::io(images_name.clone(), e))?;
    let label_bytes =
        std::fs::read(labels_path).map_err(|e| Error::io(labels_name.clone(), e))?;

    let magic = read_be_u32(&image_bytes, 0, &images_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_name,
            reason: format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(&image_bytes, 4, &images_name)? as usize;
    let rows = read_be_u32(&image_bytes, 8, &images_name)? as usize;
    let cols = read_be_u32(&image_bytes, 12, &images_name)? as usize;
    let pixels = count * rows * cols;
    if image_bytes.len() != 16 + pixels {
        return Err(Error::Format {
            path: images_name,
            reason: format!(
                "expected {} bytes for {count} images of {rows}x{cols}, found {}",
                16 + pixels,
                image_bytes.len()
            ),
        });
    }

    let magic = read_be_u32(&label_bytes, 0, &labels_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: labels_name,
            reason: format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = read_be_u32(&label_bytes, 4, &labels_name)? as usize;
    if label_bytes.len() != 8 + label_count {
        return Err(Error::Format {
            path: labels_name,
            reason: format!(
                "expected {} bytes for {label_count} labels, found {}",
                8 + label_count,
                label_bytes.len()
            ),
        });
    }
    if label_count != count {
        return Err(Error::Format {
            path: labels_name,
            reason: format!("{count} images but {label_count} labels"),
        });
    }

    let features: Vec<f64> = image_bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    LabeledDataset::new(features, rows * cols, Labels::Classes(labels))
}

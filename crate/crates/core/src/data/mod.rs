//! Deterministic multi-domain datasets.
//!
//! Images live in `[-1, 1]` so negation stays in range. The synthetic
//! shapes task is the default; IDX files can be loaded in its place.

pub mod idx;
mod shift;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::DomainId;
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor4;

pub use shift::{
    apply_shift, invert_shift, negated_rot90_filter, rot90_ccw, rot90_cw, shift_image, ShiftKind,
    ShiftSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Square,
    Cross,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Cross, ShapeKind::Ring];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disk" => Ok(ShapeKind::Disk),
            "square" => Ok(ShapeKind::Square),
            "cross" => Ok(ShapeKind::Cross),
            "ring" => Ok(ShapeKind::Ring),
            other => Err(invalid(format!("unknown shape '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
        }
    }

    /// Membership of offset `(dx, dy)` for a shape of radius `r`.
    fn contains(&self, dx: f64, dy: f64, r: f64) -> bool {
        let d = dx.hypot(dy);
        match self {
            ShapeKind::Disk => d <= r,
            ShapeKind::Square => dx.abs().max(dy.abs()) <= 0.9 * r,
            ShapeKind::Cross => {
                let (ax, ay) = (dx.abs(), dy.abs());
                (ax <= 0.25 * r && ay <= r) || (ay <= 0.25 * r && ax <= r)
            }
            ShapeKind::Ring => d <= r && d >= 0.55 * r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(n, c, h, w)`, values in `[-1, 1]`.
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub domain: DomainId,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: String,
    pub domain: String,
    pub samples: usize,
    pub classes: usize,
    pub dims: [usize; 4],
    pub counts: Vec<usize>,
    /// SHA-256 over little-endian image values followed by labels as `u32`.
    pub digest: String,
}

impl Dataset {
    pub fn new(
        images: Tensor4<f32>,
        labels: Vec<usize>,
        classes: usize,
        domain: DomainId,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != images.dims()[0] {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                images.dims()[0]
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
            domain,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            domain: self.domain.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_domain(mut self, domain: DomainId) -> Self {
        self.domain = domain;
        self
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u32).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            provenance: self.provenance.clone(),
            domain: self.domain.name.clone(),
            samples: self.len(),
            classes: self.classes,
            dims: self.images.dims(),
            counts: self.class_counts(),
            digest: self.digest(),
        }
    }
}

/// Renders `n_per_class` jittered, noisy grayscale shapes per class.
///
/// Each image has background `-1` and a shape of intensity in `[0.5, 1]`,
/// with center jitter of a twelfth of the image, radius in `[0.3, 0.4]` of
/// the image, 2x2 supersampling, additive noise `sigma = 0.05`, clamped to
/// `[-1, 1]`. Samples are ordered class by class.
pub fn gen_shapes(classes: &[ShapeKind], n_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if size < 12 || size % 3 != 0 {
        return Err(invalid(format!("image size {size} must be >= 12 and divisible by 3")));
    }
    if classes.is_empty() || n_per_class == 0 {
        return Err(Error::Empty("shape dataset with no classes or samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid normal");
    let s = size as f64;
    let mut data = Vec::with_capacity(classes.len() * n_per_class * size * size);
    let mut labels = Vec::with_capacity(classes.len() * n_per_class);
    for (label, kind) in classes.iter().enumerate() {
        for _ in 0..n_per_class {
            let cx = s / 2.0 + rng.random_range(-s / 12.0..s / 12.0);
            let cy = s / 2.0 + rng.random_range(-s / 12.0..s / 12.0);
            let r = s * rng.random_range(0.3..0.4);
            let fg = rng.random_range(0.5..1.0);
            for i in 0..size {
                for j in 0..size {
                    let mut cover = 0.0;
                    for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                        let y = i as f64 + oy;
                        let x = j as f64 + ox;
                        if kind.contains(x - cx, y - cy, r) {
                            cover += 0.25;
                        }
                    }
                    let v: f64 = -1.0 + (fg + 1.0) * cover + noise.sample(&mut rng);
                    data.push(v.clamp(-1.0, 1.0) as f32);
                }
            }
            labels.push(label);
        }
    }
    let names: Vec<String> = classes
        .iter()
        .map(|c| format!("{c:?}").to_ascii_lowercase())
        .collect();
    Dataset::new(
        Tensor4::new([labels.len(), 1, size, size], data)?,
        labels,
        classes.len(),
        DomainId::source(),
        format!(
            "shapes(classes={},n={n_per_class},size={size},seed={seed})",
            names.join("+")
        ),
    )
}

/// Keeps `round(fraction * n)` samples, chosen by a seeded shuffle.
///
/// Stratified splits keep `floor(fraction * n_c)` per class and hand the
/// remaining slots to classes one at a time in seeded order. Kept and
/// held-out indices preserve the original sample order.
pub fn split_fraction(ds: &Dataset, fraction: f64, seed: u64, stratified: bool) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = ds.len();
    let total = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; n];
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
        for (i, &l) in ds.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let mut quota: Vec<usize> = by_class
            .iter()
            .map(|idx| (fraction * idx.len() as f64).floor() as usize)
            .collect();
        let mut order: Vec<usize> = (0..ds.classes).filter(|&c| !by_class[c].is_empty()).collect();
        order.shuffle(&mut rng);
        let mut remaining = total.saturating_sub(quota.iter().sum());
        for &c in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        for (c, idx) in by_class.iter_mut().enumerate() {
            if idx.is_empty() {
                continue;
            }
            if quota[c] == 0 {
                return Err(invalid(format!(
                    "fraction {fraction} keeps no samples of class {c} ({} available)",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            for &i in &idx[..quota[c]] {
                keep[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..total] {
            keep[i] = true;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let held: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    Ok((ds.subset(&kept), ds.subset(&held)))
}

/// Loads an image/label IDX pair as one dataset.
pub fn load_idx_dataset(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    domain: DomainId,
) -> Result<Dataset> {
    let raw_images = idx::parse_idx(&images)?;
    let raw_labels = idx::parse_idx(&labels)?;
    let t = raw_images.to_images()?;
    let l = raw_labels.to_labels()?;
    let classes = l.iter().copied().max().map_or(0, |m| m + 1);
    let mut provenance = BTreeMap::new();
    provenance.insert("images", images.as_ref().display().to_string());
    provenance.insert("labels", labels.as_ref().display().to_string());
    let mut ds = Dataset::new(t, l, classes, domain, String::new())?;
    ds.provenance = format!(
        "idx(images={},labels={},sha256={})",
        provenance["images"],
        provenance["labels"],
        &ds.digest()[..16]
    );
    Ok(ds)
}

/// Nearest-centroid classifier accuracy: centroids from `train`, scored on `test`.
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let len = train.images.sample_len();
    let mut centroids = vec![vec![0.0f64; len]; train.classes];
    let counts = train.class_counts();
    for (i, &l) in train.labels.iter().enumerate() {
        for (c, &v) in centroids[l].iter_mut().zip(train.images.sample(i)) {
            *c += v as f64;
        }
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k.max(1) as f64);
    }
    let correct = test
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let x = test.images.sample(i);
            let best = centroids
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let d: f64 = c.iter().zip(x).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                    (k, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            best == Some(l)
        })
        .count();
    correct as f64 / test.len().max(1) as f64
}

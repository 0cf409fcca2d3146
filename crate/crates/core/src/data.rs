//! Seeded synthetic datasets, stored in the same container format as models.
//!
//! A dataset container holds an input tensor `x` and, for classification
//! kinds, a label tensor `y` (class indices as f32). Its graph is empty.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::runtime::ModelContainer;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    GaussOutliers,
    TwoMoons,
    Clusters,
}

impl DataKind {
    pub fn name(&self) -> &'static str {
        match self {
            DataKind::GaussOutliers => "gauss_outliers",
            DataKind::TwoMoons => "two_moons",
            DataKind::Clusters => "clusters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub kind: DataKind,
    pub n: usize,
    pub seed: u64,
    pub outlier_frac: f64,
    pub outlier_mag: f32,
}

impl GenConfig {
    pub fn new(kind: DataKind, n: usize, seed: u64) -> Self {
        Self { kind, n, seed, outlier_frac: 0.0, outlier_mag: 50.0 }
    }
}

/// `ceil(fraction * n)`, ignoring floating-point fuzz on exact products.
pub fn outlier_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() <= 1e-9 * (n as f64).max(1.0) { nearest } else { raw.ceil() };
    (k.max(0.0) as usize).min(n)
}

/// `n` standard-normal samples with `ceil(fraction * n)` distinct positions
/// overwritten by `±magnitude` (random signs). Returns the tensor and the
/// number of injected outliers.
pub fn gauss_outliers(n: usize, seed: u64, fraction: f64, magnitude: f32) -> Result<(Tensor, usize)> {
    if n == 0 {
        return Err(Error::Parameter("n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("outlier fraction {fraction} not in [0, 1]")));
    }
    if !magnitude.is_finite() {
        return Err(Error::Parameter(format!("outlier magnitude {magnitude} is not finite")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let k = outlier_count(fraction, n);
    for i in index::sample(&mut rng, n, k) {
        data[i] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }
    Ok((Tensor::from_vec(data)?, k))
}

/// Labeled feature matrix `x[n × features]` with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSet {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl ClassificationSet {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = x.dims2()?;
        if n != labels.len() {
            return Err(Error::Shape(format!("{n} samples but {} labels", labels.len())));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Splits off the last `round(test_fraction * n)` samples as a test set.
    pub fn split(&self, test_fraction: f64) -> Result<(Self, Self)> {
        let n = self.len();
        if n < 2 {
            return Err(Error::DegenerateDataset(format!("cannot split {n} samples")));
        }
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let n_train = n - n_test;
        let train = Self::new(self.x.rows(0, n_train)?, self.labels[..n_train].to_vec())?;
        let test = Self::new(self.x.rows(n_train, n_test)?, self.labels[n_train..].to_vec())?;
        Ok((train, test))
    }

    pub fn to_container(&self, metadata: BTreeMap<String, String>) -> ModelContainer {
        let mut c = ModelContainer::new();
        c.tensors.insert("x".into(), self.x.clone());
        let y = self.labels.iter().map(|&l| l as f32).collect();
        c.tensors.insert("y".into(), Tensor::from_vec(y).expect("non-empty labels"));
        c.metadata = metadata;
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let x = c.tensor("x")?.clone();
        let y = c.tensor("y")?;
        let labels = y
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Parameter(format!("label {v} is not a class index")))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(x, labels)
    }
}

/// Samples are generated in class order and then shuffled with the same RNG.
fn shuffled(mut rows: Vec<([f32; 2], usize)>, rng: &mut ChaCha8Rng) -> Result<ClassificationSet> {
    use rand::seq::SliceRandom;
    rows.shuffle(rng);
    let x = rows.iter().flat_map(|(p, _)| *p).collect();
    let labels = rows.iter().map(|(_, l)| *l).collect();
    ClassificationSet::new(Tensor::new(vec![rows.len(), 2], x)?, labels)
}

/// Two interleaving half circles with Gaussian jitter of std `noise`.
pub fn two_moons(n: usize, seed: u64, noise: f64) -> Result<ClassificationSet> {
    if n < 2 {
        return Err(Error::Parameter("two_moons needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = PI * i as f64 / (n_outer.max(2) - 1) as f64;
        rows.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = PI * i as f64 / (n_inner.max(2) - 1) as f64;
        rows.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let rows = rows
        .into_iter()
        .map(|([a, b], l)| {
            let ja: f64 = StandardNormal.sample(&mut rng);
            let jb: f64 = StandardNormal.sample(&mut rng);
            ([(a + noise * ja) as f32, (b + noise * jb) as f32], l)
        })
        .collect();
    shuffled(rows, &mut rng)
}

/// Two well-separated Gaussian blobs centred at `(-2, -2)` and `(2, 2)`.
pub fn clusters(n: usize, seed: u64) -> Result<ClassificationSet> {
    if n < 2 {
        return Err(Error::Parameter("clusters needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let label = i % 2;
            let c = if label == 0 { -2.0 } else { 2.0 };
            let a: f32 = StandardNormal.sample(&mut rng);
            let b: f32 = StandardNormal.sample(&mut rng);
            ([c + 0.5 * a, c + 0.5 * b], label)
        })
        .collect();
    shuffled(rows, &mut rng)
}

/// Two-moons jitter used by [`generate`].
pub const TWO_MOONS_NOISE: f64 = 0.1;

/// Builds a dataset container for `config`, recording the generation
/// parameters in its metadata.
pub fn generate(config: &GenConfig) -> Result<ModelContainer> {
    let mut meta = BTreeMap::new();
    meta.insert("kind".to_string(), config.kind.name().to_string());
    meta.insert("n".to_string(), config.n.to_string());
    meta.insert("seed".to_string(), config.seed.to_string());
    match config.kind {
        DataKind::GaussOutliers => {
            let (x, k) = gauss_outliers(config.n, config.seed, config.outlier_frac, config.outlier_mag)?;
            meta.insert("outlier_frac".into(), config.outlier_frac.to_string());
            meta.insert("outlier_mag".into(), config.outlier_mag.to_string());
            meta.insert("outliers".into(), k.to_string());
            meta.insert("max_abs".into(), x.max_abs().to_string());
            let mut c = ModelContainer::new();
            c.tensors.insert("x".into(), x);
            c.metadata = meta;
            Ok(c)
        }
        DataKind::TwoMoons => {
            meta.insert("noise".into(), TWO_MOONS_NOISE.to_string());
            Ok(two_moons(config.n, config.seed, TWO_MOONS_NOISE)?.to_container(meta))
        }
        DataKind::Clusters => Ok(clusters(config.n, config.seed)?.to_container(meta)),
    }
}

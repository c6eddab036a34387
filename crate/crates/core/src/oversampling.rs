//! Feature-space oversampling.
//!
//! Both generators translate majority-class features part of the way toward a
//! minority-class centroid, `s = f + λ (ctr[c] - f)`, and keep a candidate only
//! if it passes a retention test:
//!
//! * [`oversample_m2mf`] keeps `s` when its Euclidean distance to every vector
//!   already generated for the class exceeds `d_t`;
//! * [`oversample_m2mu`] keeps `s` when its cosine similarity to the class's
//!   original features (mean by default, or max) exceeds `sim_t`.
//!
//! A class stops as soon as it holds `M_v` synthetic vectors. The majority pool
//! is visited in a seeded shuffled order per class unless shuffling is turned
//! off, in which case dataset order is used.
//!
//! [`balanced_resample`] is the resampling baseline: indices drawn with
//! replacement with weight `1 / count(class)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_store::{self, parse_err, ClassPartition, FeatureDataset};
use crate::scalar::{dot, norm, squared_distance, Scalar};

/// How per-vector cosine similarities against a class are reduced to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("aggregation must be mean or max, got {other:?}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OversampleConfig {
    /// Classes with strictly fewer samples are minorities; also the per-class cap.
    pub minority_value: usize,
    /// Translation strength toward the minority centroid, in `[0, 1]`.
    pub lambda: f64,
    /// Minimum Euclidean spacing between retained vectors (M2m_f).
    pub distance_threshold: f64,
    /// Minimum class cosine similarity for retention (M2m_u), in `[-1, 1]`.
    pub similarity_threshold: f64,
    pub seed: u64,
    pub aggregation: Aggregation,
    /// Visit the majority pool in seeded shuffled order instead of dataset order.
    pub shuffle: bool,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        Self {
            minority_value: 1,
            lambda: 0.1,
            distance_threshold: 0.5,
            similarity_threshold: 0.8,
            seed: 0,
            aggregation: Aggregation::Mean,
            shuffle: true,
        }
    }
}

impl OversampleConfig {
    pub fn new(minority_value: usize) -> Self {
        Self {
            minority_value,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minority_value < 1 {
            return Err(Error::Config("m_v must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.distance_threshold >= 0.0) || !self.distance_threshold.is_finite() {
            return Err(Error::Config(format!(
                "d_t must be a finite non-negative number, got {}",
                self.distance_threshold
            )));
        }
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::Config(format!(
                "sim_t must lie in [-1, 1], got {}",
                self.similarity_threshold
            )));
        }
        Ok(())
    }
}

/// Synthetic vectors generated for one class, with the majority sample each
/// one was translated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSynthetic<T> {
    dim: usize,
    data: Vec<T>,
    sources: Vec<usize>,
}

impl<T: Scalar> ClassSynthetic<T> {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    /// Dataset index of the majority sample each vector came from.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }
}

/// Minority class that ran out of majority candidates before reaching the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shortfall {
    pub class: usize,
    pub achieved: usize,
    pub target: usize,
}

/// Output of an oversampler: synthetic vectors keyed by minority class.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet<T> {
    dim: usize,
    class_names: Vec<String>,
    classes: BTreeMap<usize, ClassSynthetic<T>>,
    shortfalls: Vec<Shortfall>,
}

impl<T: Scalar> SyntheticSet<T> {
    pub fn empty(dim: usize, class_names: Vec<String>) -> Self {
        Self {
            dim,
            class_names,
            classes: BTreeMap::new(),
            shortfalls: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Registers `class` as a target even if nothing is generated for it.
    pub fn insert_class(&mut self, class: usize) {
        let dim = self.dim;
        self.classes.entry(class).or_insert_with(|| ClassSynthetic::new(dim));
    }

    pub fn push(&mut self, class: usize, vector: Vec<T>, source: usize) {
        assert_eq!(vector.len(), self.dim, "synthetic vector has wrong dimension");
        self.insert_class(class);
        let entry = self.classes.get_mut(&class).unwrap();
        entry.data.extend(vector);
        entry.sources.push(source);
    }

    pub fn class(&self, class: usize) -> Option<&ClassSynthetic<T>> {
        self.classes.get(&class)
    }

    /// Number of synthetic vectors for `class` (zero when not a target).
    pub fn count(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, ClassSynthetic::len)
    }

    pub fn target_classes(&self) -> BTreeSet<usize> {
        self.classes.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ClassSynthetic<T>)> {
        self.classes.iter().map(|(&c, s)| (c, s))
    }

    pub fn total(&self) -> usize {
        self.classes.values().map(ClassSynthetic::len).sum()
    }

    pub fn shortfalls(&self) -> &[Shortfall] {
        &self.shortfalls
    }
}

/// Classes with strictly fewer than `minority_value` samples.
pub fn detect_minority(partition: &ClassPartition, minority_value: usize) -> BTreeSet<usize> {
    partition
        .iter()
        .filter(|(_, members)| members.len() < minority_value)
        .map(|(c, _)| c)
        .collect()
}

/// Componentwise arithmetic mean.
pub fn compute_centroid<T: Scalar>(vectors: &[&[T]]) -> Result<Vec<T>> {
    let Some(first) = vectors.first() else {
        return Err(Error::EmptyClass("<centroid>".into()));
    };
    let dim = first.len();
    let mut sum = vec![T::zero(); dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (acc, &x) in sum.iter_mut().zip(v.iter()) {
            *acc += x;
        }
    }
    let n = T::from_usize_lossy(vectors.len());
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// `s_i = f_i + λ (ctr_i - f_i)`.
pub fn translate_feature<T: Scalar>(feature: &[T], centroid: &[T], lambda: T) -> Result<Vec<T>> {
    if feature.len() != centroid.len() {
        return Err(Error::DimensionMismatch {
            expected: centroid.len(),
            got: feature.len(),
        });
    }
    Ok(feature
        .iter()
        .zip(centroid)
        .map(|(&f, &c)| f + lambda * (c - f))
        .collect())
}

/// Euclidean distance from `s` to its nearest neighbour in `set`; `+inf` for
/// an empty set.
pub fn min_dist_to_set<'a, T: Scalar>(s: &[T], set: impl IntoIterator<Item = &'a [T]>) -> T {
    set.into_iter()
        .map(|v| squared_distance(s, v))
        .fold(T::infinity(), T::min)
        .sqrt()
}

/// `dot(a, b) / (|a| |b|)` clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let cos = dot(a, b) / (na * nb);
    Ok(cos.max(-T::one()).min(T::one()))
}

/// Cosine similarity of `s` against a whole class, reduced by `aggregation`.
/// Zero-norm class vectors are skipped.
pub fn class_similarity<'a, T: Scalar>(
    s: &[T],
    class_vectors: impl IntoIterator<Item = &'a [T]>,
    aggregation: Aggregation,
) -> Result<T> {
    if norm(s) == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let mut acc = match aggregation {
        Aggregation::Mean => T::zero(),
        Aggregation::Max => -T::infinity(),
    };
    let mut used = 0usize;
    for v in class_vectors {
        let cos = match cosine_similarity(s, v) {
            Ok(c) => c,
            Err(Error::ZeroNorm) => continue,
            Err(e) => return Err(e),
        };
        used += 1;
        acc = match aggregation {
            Aggregation::Mean => acc + cos,
            Aggregation::Max => acc.max(cos),
        };
    }
    if used == 0 {
        return Err(Error::ZeroNorm);
    }
    Ok(match aggregation {
        Aggregation::Mean => acc / T::from_usize_lossy(used),
        Aggregation::Max => acc,
    })
}

/// Majority pool `D_M`: every sample whose class is not a minority, in
/// dataset order.
pub fn majority_pool(partition: &ClassPartition, minority: &BTreeSet<usize>) -> Vec<usize> {
    let mut pool: Vec<usize> = partition
        .iter()
        .filter(|(c, _)| !minority.contains(c))
        .flat_map(|(_, m)| m.iter().copied())
        .collect();
    pool.sort_unstable();
    pool
}

/// Order in which the majority pool is visited while generating for `class`.
///
/// With shuffling on, this is a Fisher–Yates shuffle driven by a ChaCha8
/// stream seeded with `cfg.seed` on stream id `class`, so every class gets an
/// independent permutation and generation order does not depend on which
/// other classes are processed.
pub fn candidate_order(pool: &[usize], cfg: &OversampleConfig, class: usize) -> Vec<usize> {
    let mut order = pool.to_vec();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(class as u64);
        order.shuffle(&mut rng);
    }
    order
}

enum Retention<'a, T> {
    Spacing { threshold: T },
    Similarity { threshold: T, aggregation: Aggregation, class_vectors: Vec<&'a [T]> },
}

fn class_name<T: Scalar>(dataset: &FeatureDataset<T>, class: usize) -> String {
    dataset.classes()[class].clone()
}

fn generate<T: Scalar>(
    dataset: &FeatureDataset<T>,
    cfg: &OversampleConfig,
    similarity: bool,
) -> Result<SyntheticSet<T>> {
    cfg.validate()?;
    let partition = dataset.partition_by_class();
    let minority = detect_minority(&partition, cfg.minority_value);
    let mut out = SyntheticSet::empty(dataset.dim(), dataset.classes().to_vec());
    if minority.is_empty() {
        return Ok(out);
    }
    let pool = majority_pool(&partition, &minority);
    if pool.is_empty() {
        return Err(Error::NoMajorityClass {
            m_v: cfg.minority_value,
        });
    }
    let lambda = T::lit(cfg.lambda);

    for &class in &minority {
        let members = partition.members(class);
        if members.is_empty() {
            return Err(Error::EmptyClass(class_name(dataset, class)));
        }
        let class_vectors: Vec<&[T]> = members.iter().map(|&i| dataset.row(i)).collect();
        let centroid = compute_centroid(&class_vectors)?;

        let retention = if similarity {
            let zero = class_vectors.iter().filter(|v| norm(v) == T::zero()).count();
            if zero == class_vectors.len() {
                return Err(Error::ZeroNorm.context(format!(
                    "class {:?}: every feature vector has zero norm",
                    class_name(dataset, class)
                )));
            }
            if zero > 0 {
                warn!(
                    "class {:?}: skipping {zero} zero-norm vectors in similarity test",
                    class_name(dataset, class)
                );
            }
            Retention::Similarity {
                threshold: T::lit(cfg.similarity_threshold),
                aggregation: cfg.aggregation,
                class_vectors,
            }
        } else {
            Retention::Spacing {
                threshold: T::lit(cfg.distance_threshold),
            }
        };

        out.insert_class(class);
        for source in candidate_order(&pool, cfg, class) {
            if out.count(class) >= cfg.minority_value {
                break;
            }
            let s = translate_feature(dataset.row(source), &centroid, lambda)?;
            let keep = match &retention {
                Retention::Spacing { threshold } => {
                    let existing = out.class(class).unwrap();
                    min_dist_to_set(&s, existing.vectors()) > *threshold
                }
                Retention::Similarity {
                    threshold,
                    aggregation,
                    class_vectors,
                } => match class_similarity(&s, class_vectors.iter().copied(), *aggregation) {
                    Ok(sim) => sim > *threshold,
                    // A candidate at the origin has no direction to compare.
                    Err(Error::ZeroNorm) => false,
                    Err(e) => return Err(e),
                },
            };
            if keep {
                out.push(class, s, source);
            }
        }

        let achieved = out.count(class);
        if achieved < cfg.minority_value {
            warn!(
                "class {:?}: majority pool exhausted with {achieved} of {} synthetic vectors",
                class_name(dataset, class),
                cfg.minority_value
            );
            out.shortfalls.push(Shortfall {
                class,
                achieved,
                target: cfg.minority_value,
            });
        }
    }
    Ok(out)
}

/// Distance-filtered centroid translation (M2m_f).
pub fn oversample_m2mf<T: Scalar>(dataset: &FeatureDataset<T>, cfg: &OversampleConfig) -> Result<SyntheticSet<T>> {
    generate(dataset, cfg, false)
}

/// Cosine-eligibility centroid translation (M2m_u).
pub fn oversample_m2mu<T: Scalar>(dataset: &FeatureDataset<T>, cfg: &OversampleConfig) -> Result<SyntheticSet<T>> {
    generate(dataset, cfg, true)
}

/// Draws indices with replacement, each weighted by the inverse size of its
/// class, so every class is expected to be drawn equally often.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new<T: Scalar>(dataset: &FeatureDataset<T>) -> Result<Self> {
        let counts = dataset.class_counts();
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(dataset.classes()[c].clone()));
        }
        let weights: Vec<f64> = dataset.labels().iter().map(|&l| 1.0 / counts[l] as f64).collect();
        let dist = WeightedIndex::new(weights).map_err(|e| Error::Config(format!("sampler weights: {e}")))?;
        Ok(Self { dist })
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// `|dataset|` class-balanced draws with replacement.
pub fn balanced_resample<T: Scalar>(dataset: &FeatureDataset<T>, seed: u64) -> Result<Vec<usize>> {
    let sampler = BalancedSampler::new(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.draw(dataset.len(), &mut rng))
}

/// Writes a synthetic set as `label,f0,...,f{d-1},source_index`.
pub fn save_synthetic_csv<T: Scalar>(synth: &SyntheticSet<T>, path: impl AsRef<Path>) -> Result<()> {
    feature_store::write_atomic(path.as_ref(), |w: &mut dyn Write| {
        writeln!(w, "{},source_index", feature_store::feature_header(synth.dim()))?;
        for (class, set) in synth.iter() {
            for (v, src) in set.vectors().zip(set.sources()) {
                feature_store::write_row(w, &synth.class_names()[class], v)?;
                writeln!(w, ",{src}")?;
            }
        }
        Ok(())
    })
}

/// Reads a synthetic CSV, resolving labels against `class_names`.
pub fn load_synthetic_csv<T: Scalar>(path: impl AsRef<Path>, class_names: &[String]) -> Result<SyntheticSet<T>> {
    let path = path.as_ref();
    let table = feature_store::read_table::<T>(path)?;
    if table.width < 3 {
        return Err(parse_err(path, 1, "expected label, features and source_index columns"));
    }
    if let Some(h) = &table.header {
        if h.last().map(String::as_str) != Some("source_index") {
            return Err(parse_err(path, 1, "last column must be source_index"));
        }
    }
    let dim = table.width - 2;
    let mut out = SyntheticSet::empty(dim, class_names.to_vec());
    let first_data_line = if table.header.is_some() { 2 } else { 1 };
    for (row_no, (label, mut values)) in table.rows.into_iter().enumerate() {
        let line = first_data_line + row_no;
        let class = class_names
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| parse_err(path, line, format!("unknown class label {label:?}")))?;
        let src = values.pop().unwrap();
        let src_f = src.to_f64_lossy();
        if src_f < 0.0 || src_f.fract() != 0.0 {
            return Err(parse_err(path, line, "source_index must be a non-negative integer"));
        }
        out.push(class, values, src_f as usize);
    }
    Ok(out)
}

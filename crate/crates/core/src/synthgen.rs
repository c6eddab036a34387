//! Seeded isotropic Gaussian clusters used as a stand-in for extracted
//! backbone features.
//!
//! Generator contract: a ChaCha8 stream seeded with `seed` yields uniform
//! `f64` values `u ∈ [0, 1)` (rand's 53-bit `Standard`). Normal deviates come
//! from the Box–Muller transform on consecutive pairs `(u1, u2)`:
//! `r = sqrt(-2 ln(1 - u1))`, emitting `r cos(2π u2)` then `r sin(2π u2)`.
//! Classes are generated in order, each sample component by component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::oversampling::OversampleConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterClass {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Isotropic standard deviation.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub dim: usize,
    pub seed: u64,
    pub classes: Vec<ClusterClass>,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("scenario dim must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("scenario needs at least one class".into()));
        }
        for (c, class) in self.classes.iter().enumerate() {
            if class.count < 1 {
                return Err(Error::Config(format!("class {c}: count must be at least 1")));
            }
            if !(class.sigma > 0.0 && class.sigma.is_finite()) {
                return Err(Error::Config(format!("class {c}: sigma must be positive, got {}", class.sigma)));
            }
            if class.mean.len() != self.dim {
                return Err(Error::Config(format!(
                    "class {c}: mean has {} components, dim is {}",
                    class.mean.len(),
                    self.dim
                )));
            }
            if class.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config(format!("class {c}: mean must be finite")));
            }
        }
        Ok(())
    }

    /// Class labels `c0..c{K-1}`, zero-padded when `K > 10` so that
    /// lexicographic order matches generation order.
    pub fn labels(&self) -> Vec<String> {
        let width = (self.classes.len().max(1) - 1).to_string().len();
        (0..self.classes.len()).map(|c| format!("c{c:0width$}")).collect()
    }

    /// Reads a scenario from `dim`, `seed`, `counts`, `sigma` (one value or
    /// one per class) and `mean.<c>` keys.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let dim: usize = kv.require("dim")?;
        let seed: u64 = kv.get("seed")?.unwrap_or(0);
        let counts: Vec<usize> = kv.require_list("counts")?;
        let sigmas: Vec<f64> = kv.require_list("sigma")?;
        let sigma_for = |c: usize| -> Result<f64> {
            match sigmas.len() {
                1 => Ok(sigmas[0]),
                n if n == counts.len() => Ok(sigmas[c]),
                n => Err(Error::Config(format!("sigma: expected 1 or {} values, got {n}", counts.len()))),
            }
        };
        let mut classes = Vec::with_capacity(counts.len());
        for (c, &count) in counts.iter().enumerate() {
            let mean: Vec<f64> = kv.require_list(&format!("mean.{c}"))?;
            classes.push(ClusterClass {
                count,
                mean,
                sigma: sigma_for(c)?,
            });
        }
        let spec = ClusterSpec { dim, seed, classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv_string(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        let mut out = format!("dim={}\nseed={}\n", self.dim, self.seed);
        out.push_str(&format!("counts={}\n", join(&mut self.classes.iter().map(|c| c.count.to_string()))));
        out.push_str(&format!("sigma={}\n", join(&mut self.classes.iter().map(|c| c.sigma.to_string()))));
        for (c, class) in self.classes.iter().enumerate() {
            out.push_str(&format!("mean.{c}={}\n", join(&mut class.mean.iter().map(f64::to_string))));
        }
        out
    }
}

/// Standard normal deviates from a seeded uniform stream (Box–Muller).
pub struct NormalStream<R> {
    rng: R,
    spare: Option<f64>,
}

impl NormalStream<ChaCha8Rng> {
    pub fn from_seed(seed: u64) -> Self {
        Self::new(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<R: Rng> NormalStream<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = self.rng.gen();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

pub fn gen_clusters<T: Scalar>(spec: &ClusterSpec) -> Result<FeatureDataset<T>> {
    spec.validate()?;
    let total: usize = spec.classes.iter().map(|c| c.count).sum();
    let mut normals = NormalStream::from_seed(spec.seed);
    let mut labels = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * spec.dim);
    for (c, class) in spec.classes.iter().enumerate() {
        for _ in 0..class.count {
            labels.push(c);
            data.extend(class.mean.iter().map(|&m| T::lit(m + class.sigma * normals.next_standard())));
        }
    }
    FeatureDataset::new(spec.dim, spec.labels(), labels, data)
}

/// Offset shared by every class mean in the default scenario. Backbone
/// features after ReLU and pooling are non-negative, so their clusters sit
/// away from the origin in a common direction.
pub const DEFAULT_SCENARIO_OFFSET: f64 = 3.0;

/// Three classes with counts 1000/100/50 in 32 dimensions, pairwise mean
/// distance 4 and `σ = 1.5`, paired with `M_v = 200`, `λ = 0.1`, `d_t = 0.5`
/// and `sim_t = 0.8`.
pub fn default_imbalanced_scenario(seed: u64) -> (ClusterSpec, OversampleConfig) {
    let dim = 32;
    // Orthogonal displacements of length 4/√2 put every pair of means at distance 4.
    let step = 4.0 / std::f64::consts::SQRT_2;
    let classes = [1000, 100, 50]
        .into_iter()
        .enumerate()
        .map(|(c, count)| {
            let mut mean = vec![DEFAULT_SCENARIO_OFFSET; dim];
            mean[c] += step;
            ClusterClass {
                count,
                mean,
                sigma: 1.5,
            }
        })
        .collect();
    let spec = ClusterSpec { dim, seed, classes };
    let cfg = OversampleConfig {
        minority_value: 200,
        lambda: 0.1,
        distance_threshold: 0.5,
        similarity_threshold: 0.8,
        seed,
        ..OversampleConfig::default()
    };
    (spec, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oversampling::detect_minority;
    use crate::scalar::squared_distance;

    fn one_class(count: usize, sigma: f64, seed: u64) -> ClusterSpec {
        ClusterSpec {
            dim: 3,
            seed,
            classes: vec![ClusterClass {
                count,
                mean: vec![1.0, -2.0, 0.5],
                sigma,
            }],
        }
    }

    #[test]
    fn degenerate_sigma_collapses_to_mean() {
        let ds: FeatureDataset<f64> = gen_clusters(&one_class(50, 1e-12, 1)).unwrap();
        for (_, row) in ds.rows() {
            for (a, b) in row.iter().zip([1.0, -2.0, 0.5]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn counts_match_request() {
        let (mut spec, _) = default_imbalanced_scenario(3);
        spec.dim = 2;
        for c in &mut spec.classes {
            c.mean.truncate(2);
        }
        let ds: FeatureDataset<f64> = gen_clusters(&spec).unwrap();
        assert_eq!(ds.class_counts(), vec![1000, 100, 50]);
        assert_eq!(ds.classes(), ["c0", "c1", "c2"]);
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let sigma = 2.0;
        let n = 10_000;
        let ds: FeatureDataset<f64> = gen_clusters(&one_class(n, sigma, 99)).unwrap();
        for (j, m) in [1.0, -2.0, 0.5].into_iter().enumerate() {
            let mean = ds.rows().map(|(_, r)| r[j]).sum::<f64>() / n as f64;
            assert!((mean - m).abs() < 4.0 * sigma / (n as f64).sqrt(), "component {j}: {mean}");
        }
    }

    #[test]
    fn covariance_trace_near_d_sigma_squared() {
        let sigma = 0.7;
        let n = 6000;
        let ds: FeatureDataset<f64> = gen_clusters(&one_class(n, sigma, 5)).unwrap();
        let rows: Vec<&[f64]> = ds.rows().map(|(_, r)| r).collect();
        let centroid: Vec<f64> = (0..3).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let trace = rows.iter().map(|r| squared_distance(r, &centroid)).sum::<f64>() / (n - 1) as f64;
        let expected = 3.0 * sigma * sigma;
        assert!((trace - expected).abs() < 0.1 * expected, "{trace}");
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let a: FeatureDataset<f64> = gen_clusters(&one_class(20, 1.0, 4)).unwrap();
        let b: FeatureDataset<f64> = gen_clusters(&one_class(20, 1.0, 4)).unwrap();
        let c: FeatureDataset<f64> = gen_clusters(&one_class(20, 1.0, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(gen_clusters::<f64>(&one_class(0, 1.0, 0)).is_err());
        assert!(gen_clusters::<f64>(&one_class(5, 0.0, 0)).is_err());
        let mut s = one_class(5, 1.0, 0);
        s.classes[0].mean.pop();
        assert!(matches!(gen_clusters::<f64>(&s), Err(Error::Config(_))));
    }

    #[test]
    fn default_scenario_shape() {
        let (spec, cfg) = default_imbalanced_scenario(11);
        assert_eq!(spec.dim, 32);
        assert_eq!(spec.classes.iter().map(|c| c.count).collect::<Vec<_>>(), vec![1000, 100, 50]);
        for a in 0..3 {
            for b in a + 1..3 {
                let d = squared_distance(&spec.classes[a].mean, &spec.classes[b].mean).sqrt();
                assert!((d - 4.0).abs() < 1e-12);
            }
        }
        assert_eq!((cfg.minority_value, cfg.lambda, cfg.distance_threshold, cfg.similarity_threshold), (200, 0.1, 0.5, 0.8));
        let ds: FeatureDataset<f64> = gen_clusters(&spec).unwrap();
        assert_eq!(detect_minority(&ds.partition_by_class(), cfg.minority_value), [1, 2].into());
        let (spec2, cfg2) = default_imbalanced_scenario(11);
        assert_eq!((spec, cfg), (spec2, cfg2));
    }

    #[test]
    fn wide_scenarios_keep_generation_order() {
        let spec = ClusterSpec {
            dim: 1,
            seed: 0,
            classes: (0..12)
                .map(|c| ClusterClass {
                    count: 1,
                    mean: vec![c as f64],
                    sigma: 1e-9,
                })
                .collect(),
        };
        let ds: FeatureDataset<f64> = gen_clusters(&spec).unwrap();
        let mut sorted = ds.classes().to_vec();
        sorted.sort();
        assert_eq!(sorted, ds.classes());
        assert_eq!(ds.classes()[2], "c02");
    }

    #[test]
    fn kv_round_trip() {
        let (spec, _) = default_imbalanced_scenario(8);
        let kv = KvConfig::parse(&spec.to_kv_string(), "scenario").unwrap();
        assert_eq!(ClusterSpec::from_kv(&kv).unwrap(), spec);
    }
}

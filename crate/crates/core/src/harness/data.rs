//! Parts-based synthetic data: classes are fixed subsets of shared latent
//! entities, and each local feature is a noisy copy of one of its class's
//! entities.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{unit_columns, FeatureMap};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub entity_count: usize,
    pub class_count: usize,
    pub entities_per_class: usize,
    pub feature_dim: usize,
    pub locations_per_sample: usize,
    pub noise_std: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Error::Config {
            path: name.to_string(),
            message: msg,
        };
        if self.entity_count == 0 {
            return Err(field("entity_count", "must be >= 1".into()));
        }
        if self.entities_per_class == 0 || self.entities_per_class > self.entity_count {
            return Err(field(
                "entities_per_class",
                format!("must lie in 1..={}", self.entity_count),
            ));
        }
        if self.class_count == 0 {
            return Err(field("class_count", "must be >= 1".into()));
        }
        let available = binomial(self.entity_count, self.entities_per_class);
        if (self.class_count as f64) > available {
            return Err(field(
                "class_count",
                format!(
                    "{} classes cannot be distinct {}-subsets of {} entities",
                    self.class_count, self.entities_per_class, self.entity_count
                ),
            ));
        }
        if self.feature_dim == 0 || self.locations_per_sample == 0 || self.samples_per_class == 0 {
            return Err(field(
                "feature_dim",
                "feature_dim, locations_per_sample and samples_per_class must be >= 1".into(),
            ));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(field("noise_std", format!("must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Labeled feature maps together with the latent structure that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Unit entity vectors, one per column.
    pub entities: Mat,
    /// Entity indices of each class.
    pub class_entities: Vec<Vec<usize>>,
    pub samples: Vec<FeatureMap>,
    pub labels: Vec<usize>,
    pub locations_per_sample: usize,
    pub noise_std: f64,
}

/// Draws entities, distinct class subsets and samples, all from `spec.seed`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = Mat::from_fn(spec.feature_dim, spec.entity_count, |_, _| {
        StandardNormal.sample(&mut rng)
    });
    let entities = unit_columns(&raw);
    let class_entities = draw_subsets(
        spec.entity_count,
        spec.entities_per_class,
        spec.class_count,
        &mut rng,
    );
    let (samples, labels) = sample_classes(
        &entities,
        &class_entities,
        spec.samples_per_class,
        spec.locations_per_sample,
        spec.noise_std,
        &mut rng,
    )?;
    Ok(Dataset {
        entities,
        class_entities,
        samples,
        labels,
        locations_per_sample: spec.locations_per_sample,
        noise_std: spec.noise_std,
    })
}

fn draw_subsets(
    entity_count: usize,
    per_class: usize,
    class_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(class_count);
    let pool: Vec<usize> = (0..entity_count).collect();
    while out.len() < class_count {
        let mut subset: Vec<usize> = pool.choose_multiple(rng, per_class).copied().collect();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    out
}

fn sample_classes(
    entities: &Mat,
    class_entities: &[Vec<usize>],
    per_class: usize,
    locations: usize,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<FeatureMap>, Vec<usize>)> {
    let noise = Normal::new(0.0, noise_std.max(0.0))
        .map_err(|e| Error::contract(format!("noise distribution: {e}")))?;
    let d = entities.rows();
    let mut samples = Vec::with_capacity(class_entities.len() * per_class);
    let mut labels = Vec::with_capacity(samples.capacity());
    for (class, subset) in class_entities.iter().enumerate() {
        for _ in 0..per_class {
            let mut x = Mat::zeros(d, locations);
            for j in 0..locations {
                let e = subset[rng.gen_range(0..subset.len())];
                for i in 0..d {
                    let jitter = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    x[(i, j)] = entities[(i, e)] + jitter;
                }
            }
            samples.push(FeatureMap::new(unit_columns(&x))?);
            labels.push(class);
        }
    }
    Ok((samples, labels))
}

impl Dataset {
    /// Fresh samples of the same classes (e.g. a test split).
    pub fn resample(&self, samples_per_class: usize, seed: u64) -> Result<Dataset> {
        self.with_classes(self.class_entities.clone(), samples_per_class, seed)
    }

    /// Samples of new classes built from the same entities.
    pub fn with_classes(
        &self,
        class_entities: Vec<Vec<usize>>,
        samples_per_class: usize,
        seed: u64,
    ) -> Result<Dataset> {
        if class_entities
            .iter()
            .any(|s| s.is_empty() || s.iter().any(|&e| e >= self.entities.cols()))
        {
            return Err(Error::contract("class subsets must be non-empty entity indices"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (samples, labels) = sample_classes(
            &self.entities,
            &class_entities,
            samples_per_class,
            self.locations_per_sample,
            self.noise_std,
            &mut rng,
        )?;
        Ok(Dataset {
            entities: self.entities.clone(),
            class_entities,
            samples,
            labels,
            locations_per_sample: self.locations_per_sample,
            noise_std: self.noise_std,
        })
    }

    /// `count` distinct entity subsets that no existing class uses, drawn from `seed`.
    pub fn unseen_class_subsets(&self, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        let e = self.entities.cols();
        let k = self.class_entities.first().map_or(1, Vec::len);
        if (count + self.class_entities.len()) as f64 > binomial(e, k) {
            return Err(Error::contract(format!(
                "not enough unused {k}-subsets of {e} entities for {count} new classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taken: BTreeSet<Vec<usize>> = self.class_entities.iter().cloned().collect();
        let mut out = Vec::new();
        let mut seen = taken.clone();
        let pool: Vec<usize> = (0..e).collect();
        while out.len() < count {
            let mut s: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
            s.sort_unstable();
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    }

    pub fn class_count(&self) -> usize {
        self.class_entities.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of the samples of each class.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::hard_histogram;
    use crate::prototypes::PrototypeMatrix;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            entity_count: 6,
            class_count: 4,
            entities_per_class: 2,
            feature_dim: 5,
            locations_per_sample: 8,
            noise_std: 0.1,
            samples_per_class: 3,
            seed: 17,
        }
    }

    #[test]
    fn noiseless_single_entity_classes() {
        let s = SyntheticSpec {
            entities_per_class: 1,
            noise_std: 0.0,
            ..spec()
        };
        let ds = generate_dataset(&s).unwrap();
        for (x, &l) in ds.samples.iter().zip(&ds.labels) {
            let e = ds.entities.col(ds.class_entities[l][0]);
            for j in 0..x.len() {
                for (a, b) in x.features().col(j).iter().zip(&e) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_dataset(&spec()).unwrap();
        let b = generate_dataset(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SyntheticSpec { seed: 18, ..spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classes_are_distinct_subsets_and_features_unit() {
        let ds = generate_dataset(&spec()).unwrap();
        let set: BTreeSet<_> = ds.class_entities.iter().collect();
        assert_eq!(set.len(), 4);
        for x in &ds.samples {
            for j in 0..x.len() {
                assert!((crate::tensor::norm(&x.features().col(j)) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(ds.len(), 12);
    }

    #[test]
    fn shared_entity_bin_overlaps() {
        let base = generate_dataset(&SyntheticSpec {
            noise_std: 0.0,
            ..spec()
        })
        .unwrap();
        let ds = base.with_classes(vec![vec![0, 1], vec![1, 2]], 5, 3).unwrap();
        let protos = PrototypeMatrix::new(ds.entities.clone()).unwrap();
        let mut means = vec![vec![0.0; 6]; 2];
        for (x, &l) in ds.samples.iter().zip(&ds.labels) {
            let (h, _) = hard_histogram(x, &protos).unwrap();
            for (m, w) in means[l].iter_mut().zip(h.weights()) {
                *m += w / 5.0;
            }
        }
        let overlap: Vec<usize> = (0..6)
            .filter(|&i| means[0][i] > 0.0 && means[1][i] > 0.0)
            .collect();
        assert_eq!(overlap, vec![1]);
    }

    #[test]
    fn unseen_subsets_avoid_training_classes() {
        let ds = generate_dataset(&spec()).unwrap();
        let fresh = ds.unseen_class_subsets(5, 1).unwrap();
        for s in &fresh {
            assert!(!ds.class_entities.contains(s));
        }
        assert!(ds.unseen_class_subsets(20, 1).is_err());
    }

    #[test]
    fn impossible_specs_rejected() {
        let bad = SyntheticSpec {
            class_count: 16,
            ..spec()
        };
        assert!(matches!(generate_dataset(&bad), Err(Error::Config { .. })));
        let bad = SyntheticSpec {
            entities_per_class: 7,
            ..spec()
        };
        assert!(generate_dataset(&bad).is_err());
    }
}

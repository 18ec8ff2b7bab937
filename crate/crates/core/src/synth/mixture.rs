//! Gaussian mixture PU data with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::pu::{ClassPriors, PuDataset};
use crate::scalar::Scalar;

/// Isotropic Gaussian class conditionals `x | y ~ N(means[y], scale² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    /// `C + 1` means; index 0 is the negative class.
    pub means: Vec<Vec<f64>>,
    pub scale: f64,
    /// Positive priors `π_1..π_C`.
    pub priors: Vec<f64>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    /// Three classes in the plane: negatives at the origin, positives 2.5σ away on each axis.
    fn default() -> Self {
        Self {
            means: vec![vec![0.0, 0.0], vec![2.5, 0.0], vec![0.0, 2.5]],
            scale: 1.0,
            priors: vec![0.3, 0.2],
            seed: 2024,
        }
    }
}

/// How labeled positives relate to the unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LabelingMode {
    /// Labeled positives follow `p(x | y = i)`; the unlabeled pool follows `p(x)`.
    Unbiased,
    /// Only a `coverage` share of each class conditional can be labeled: the
    /// part whose first standardized coordinate lies below the `coverage`
    /// quantile. Labeled positives come from that region only and it is
    /// removed from the unlabeled pool, so the pool drifts toward the
    /// negative class as coverage grows.
    Biased { coverage: f64 },
}

impl MixtureSpec {
    pub fn num_positive(&self) -> usize {
        self.means.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn class_priors(&self) -> Result<ClassPriors<f64>> {
        ClassPriors::new(self.priors.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::validation(
                "mixture needs a negative and at least one positive mean",
            ));
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::validation(
                "mixture means must share one nonzero dimension",
            ));
        }
        for i in 0..self.means.len() {
            for j in i + 1..self.means.len() {
                if self.means[i] == self.means[j] {
                    return Err(Error::validation(format!("means {i} and {j} coincide")));
                }
            }
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::validation("scale must be > 0"));
        }
        if self.priors.len() != self.num_positive() {
            return Err(Error::validation("need one prior per positive mean"));
        }
        self.class_priors()?;
        Ok(())
    }

    /// One draw from class `class`.
    pub fn sample_class<T: Scalar, R: Rng>(&self, class: usize, rng: &mut R) -> Vec<T> {
        self.means[class]
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(m + self.scale * z)
            })
            .collect()
    }

    /// Draw from class `class` restricted to its labelable region.
    fn sample_covered<T: Scalar, R: Rng>(
        &self,
        class: usize,
        coverage: f64,
        rng: &mut R,
    ) -> Vec<T> {
        let std = Normal::standard();
        let mut x: Vec<T> = self.sample_class(class, rng);
        // inverse-CDF draw of the first coordinate below the coverage quantile
        let u: f64 = rng.random_range(0.0..coverage);
        let z = std.inverse_cdf(u.max(f64::MIN_POSITIVE));
        x[0] = T::of(self.means[class][0] + self.scale * z);
        x
    }

    fn is_covered<T: Scalar>(&self, class: usize, x: &[T], coverage: f64) -> bool {
        let z = (x[0].as_f64() - self.means[class][0]) / self.scale;
        Normal::standard().cdf(z) <= coverage
    }

    /// Label drawn from `(π_0, π_1, …, π_C)`.
    pub fn sample_label<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 1.0 - self.priors.iter().sum::<f64>();
        if u < acc {
            return 0;
        }
        for (i, &p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        self.priors.len()
    }
}

/// A PU sample plus the hidden labels of its unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPu<T> {
    pub dataset: PuDataset<T>,
    pub unlabeled_labels: Vec<usize>,
}

/// Draw a PU dataset using the spec's own seed.
pub fn sample_pu_dataset<T: Scalar>(
    spec: &MixtureSpec,
    n_p: &[usize],
    n_u: usize,
    mode: LabelingMode,
) -> Result<SampledPu<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_pu_dataset_with(spec, n_p, n_u, mode, &mut rng)
}

pub fn sample_pu_dataset_with<T: Scalar, R: Rng>(
    spec: &MixtureSpec,
    n_p: &[usize],
    n_u: usize,
    mode: LabelingMode,
    rng: &mut R,
) -> Result<SampledPu<T>> {
    spec.validate()?;
    if n_p.len() != spec.num_positive() {
        return Err(Error::validation(format!(
            "need {} positive counts, got {}",
            spec.num_positive(),
            n_p.len()
        )));
    }
    if n_p.contains(&0) || n_u == 0 {
        return Err(Error::validation("sample counts must be >= 1"));
    }
    if let LabelingMode::Biased { coverage } = mode {
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(Error::validation("coverage must be in (0, 1]"));
        }
    }

    let positives: Vec<Vec<Vec<T>>> = n_p
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            (0..n)
                .map(|_| match mode {
                    LabelingMode::Unbiased => spec.sample_class(i + 1, rng),
                    LabelingMode::Biased { coverage } => spec.sample_covered(i + 1, coverage, rng),
                })
                .collect()
        })
        .collect();

    let mut unlabeled = Vec::with_capacity(n_u);
    let mut labels = Vec::with_capacity(n_u);
    while unlabeled.len() < n_u {
        let y = spec.sample_label(rng);
        let x: Vec<T> = spec.sample_class(y, rng);
        if let LabelingMode::Biased { coverage } = mode {
            if y > 0 && spec.is_covered(y, &x, coverage) {
                continue;
            }
        }
        unlabeled.push(x);
        labels.push(y);
    }
    Ok(SampledPu {
        dataset: PuDataset::new(positives, unlabeled)?,
        unlabeled_labels: labels,
    })
}

/// Fully labeled draw: `n` samples from each class conditional, class 0 first.
pub fn sample_class_conditionals<T: Scalar, R: Rng>(
    spec: &MixtureSpec,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<Vec<T>>> {
    (0..spec.means.len())
        .map(|c| (0..n).map(|_| spec.sample_class(c, rng)).collect())
        .collect()
}

/// Labeled draw from the marginal `p(x, y)`.
pub fn sample_labeled<T: Scalar, R: Rng>(
    spec: &MixtureSpec,
    n: usize,
    rng: &mut R,
) -> (Vec<Vec<T>>, Vec<usize>) {
    (0..n)
        .map(|_| {
            let y = spec.sample_label(rng);
            (spec.sample_class(y, rng), y)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlabeled_label_frequencies_match_priors() {
        let spec = MixtureSpec::default();
        let s = sample_pu_dataset::<f64>(&spec, &[10, 10], 10_000, LabelingMode::Unbiased).unwrap();
        let n = s.unlabeled_labels.len() as f64;
        for (class, p) in [(0usize, 0.5f64), (1, 0.3), (2, 0.2)] {
            let k = s.unlabeled_labels.iter().filter(|&&y| y == class).count() as f64;
            // 3σ binomial band
            let band = 3.0 * (p * (1.0 - p) / n).sqrt();
            assert!((k / n - p).abs() < band, "class {class}: {} vs {p}", k / n);
        }
    }

    #[test]
    fn vanishing_noise_collapses_to_means() {
        let spec = MixtureSpec {
            means: vec![vec![1.0, -1.0], vec![3.0, 0.5], vec![-2.0, 4.0]],
            scale: 1e-20,
            ..MixtureSpec::default()
        };
        let s = sample_pu_dataset::<f64>(&spec, &[3, 3], 20, LabelingMode::Unbiased).unwrap();
        for (i, pool) in s.dataset.positive_pools().iter().enumerate() {
            assert!(pool.iter().all(|x| x == &spec.means[i + 1]));
        }
        for (x, &y) in s.dataset.unlabeled().iter().zip(&s.unlabeled_labels) {
            assert_eq!(x, &spec.means[y]);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = MixtureSpec::default();
        let a = sample_pu_dataset::<f64>(&spec, &[5, 7], 50, LabelingMode::Unbiased).unwrap();
        let b = sample_pu_dataset::<f64>(&spec, &[5, 7], 50, LabelingMode::Unbiased).unwrap();
        assert_eq!(a, b);
        let c = sample_pu_dataset::<f64>(
            &MixtureSpec { seed: 1, ..spec },
            &[5, 7],
            50,
            LabelingMode::Unbiased,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biased_mode_restricts_and_shifts() {
        let spec = MixtureSpec::default();
        let cov = 0.3;
        let s = sample_pu_dataset::<f64>(
            &spec,
            &[200, 200],
            4000,
            LabelingMode::Biased { coverage: cov },
        )
        .unwrap();
        for (i, pool) in s.dataset.positive_pools().iter().enumerate() {
            assert!(pool.iter().all(|x| spec.is_covered(i + 1, x, cov)));
        }
        for (x, &y) in s.dataset.unlabeled().iter().zip(&s.unlabeled_labels) {
            assert!(y == 0 || !spec.is_covered(y, x, cov));
        }
        // full coverage leaves only negatives unlabeled
        let s =
            sample_pu_dataset::<f64>(&spec, &[5, 5], 300, LabelingMode::Biased { coverage: 1.0 })
                .unwrap();
        assert!(s.unlabeled_labels.iter().all(|&y| y == 0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let spec = MixtureSpec {
            scale: 0.0,
            ..MixtureSpec::default()
        };
        assert!(sample_pu_dataset::<f64>(&spec, &[1, 1], 1, LabelingMode::Unbiased).is_err());
        let mut spec = MixtureSpec::default();
        spec.means[2] = spec.means[1].clone();
        assert!(spec.validate().is_err());
        let spec = MixtureSpec::default();
        assert!(sample_pu_dataset::<f64>(&spec, &[0, 1], 1, LabelingMode::Unbiased).is_err());
        assert!(sample_pu_dataset::<f64>(&spec, &[1], 1, LabelingMode::Unbiased).is_err());
    }
}

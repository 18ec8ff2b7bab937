//! Label space, class priors and positive-unlabeled datasets.
//!
//! Labels are `0..=C`, where `0` is the negative class and `1..=C` are the
//! positive classes. A [`PuDataset`] holds one labeled pool per positive
//! class and a single unlabeled pool drawn from the marginal.

use serde::{Deserialize, Serialize};

use crate::corpus::TaggedCorpus;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The label set `{0, 1, …, C}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    num_positive: usize,
}

impl LabelSpace {
    pub fn new(num_positive: usize) -> Result<Self> {
        if num_positive == 0 {
            return Err(Error::validation(
                "label space needs at least one positive class",
            ));
        }
        Ok(Self { num_positive })
    }

    /// `C`, the number of positive classes.
    pub fn num_positive(&self) -> usize {
        self.num_positive
    }

    /// `C + 1`, the number of outputs of a classifier over this space.
    pub fn num_labels(&self) -> usize {
        self.num_positive + 1
    }

    pub fn check(&self, label: usize) -> Result<()> {
        if label > self.num_positive {
            return Err(Error::validation(format!(
                "label {label} outside 0..={}",
                self.num_positive
            )));
        }
        Ok(())
    }
}

/// Positive class priors `(π_1, …, π_C)`; the negative prior is implied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPriors<T> {
    pi: Vec<T>,
}

impl<T: Scalar> ClassPriors<T> {
    /// Validate positive priors: each must be `> 0` and their sum `< 1`.
    pub fn new(pi: Vec<T>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::validation(
                "priors must name at least one positive class",
            ));
        }
        for (i, &p) in pi.iter().enumerate() {
            if !(p > T::zero()) || !p.is_finite() {
                return Err(Error::validation(format!(
                    "prior must be positive: pi_{} = {p}",
                    i + 1
                )));
            }
        }
        let sum: T = pi.iter().copied().sum();
        if sum >= T::one() {
            return Err(Error::validation(format!("priors sum >= 1: sum = {sum}")));
        }
        Ok(Self { pi })
    }

    pub fn num_positive(&self) -> usize {
        self.pi.len()
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace {
            num_positive: self.pi.len(),
        }
    }

    /// `π_i` for positive class `i` in `1..=C`.
    pub fn positive(&self, class: usize) -> T {
        self.pi[class - 1]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.pi
    }

    /// `Σ_{i≥1} π_i`.
    pub fn positive_mass(&self) -> T {
        self.pi.iter().copied().sum()
    }

    /// `π_0 = 1 − Σ π_i`.
    pub fn negative(&self) -> T {
        T::one() - self.positive_mass()
    }

    /// The full distribution `(π_0, π_1, …, π_C)`.
    pub fn full(&self) -> Vec<T> {
        std::iter::once(self.negative())
            .chain(self.pi.iter().copied())
            .collect()
    }
}

/// Shorthand for [`ClassPriors::new`].
pub fn make_priors<T: Scalar>(pi: Vec<T>) -> Result<ClassPriors<T>> {
    ClassPriors::new(pi)
}

/// Labeled positives per class plus an unlabeled pool, all sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PuDataset<T> {
    positives: Vec<Vec<Vec<T>>>,
    unlabeled: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Scalar> PuDataset<T> {
    pub fn new(positives: Vec<Vec<Vec<T>>>, unlabeled: Vec<Vec<T>>) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::validation(
                "dataset needs at least one positive class",
            ));
        }
        for (i, pool) in positives.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::EmptyClass(i + 1));
            }
        }
        if unlabeled.is_empty() {
            return Err(Error::validation("n_U = 0: unlabeled pool is empty"));
        }
        let dim = unlabeled[0].len();
        if dim == 0 {
            return Err(Error::validation("feature dimension must be at least 1"));
        }
        let ragged = positives
            .iter()
            .flatten()
            .chain(unlabeled.iter())
            .find(|x| x.len() != dim);
        if let Some(x) = ragged {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        Ok(Self {
            positives,
            unlabeled,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_positive_classes(&self) -> usize {
        self.positives.len()
    }

    /// Samples of positive class `class` in `1..=C`.
    pub fn positives(&self, class: usize) -> &[Vec<T>] {
        &self.positives[class - 1]
    }

    pub fn positive_pools(&self) -> &[Vec<Vec<T>>] {
        &self.positives
    }

    pub fn unlabeled(&self) -> &[Vec<T>] {
        &self.unlabeled
    }

    pub fn num_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn len(&self) -> usize {
        self.positives.iter().map(Vec::len).sum::<usize>() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A one-hot label over `C + 1` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    class: usize,
    width: usize,
}

impl OneHotLabel {
    pub fn new(class: usize, width: usize) -> Result<Self> {
        if class >= width {
            return Err(Error::validation(format!(
                "one-hot class {class} outside width {width}"
            )));
        }
        Ok(Self { class, width })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Component `j` as `0` or `1`.
    pub fn get<T: Scalar>(&self, j: usize) -> T {
        if j == self.class {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn to_dense<T: Scalar>(&self) -> Vec<T> {
        (0..self.width).map(|j| self.get(j)).collect()
    }
}

/// Result of [`estimate_priors_from_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEstimate {
    pub priors: ClassPriors<f64>,
    /// Set when the raw estimates summed past the cap and were rescaled.
    pub clamped: bool,
}

/// Upper bound on `Σ π̂_i` after scaling.
pub const MAX_ESTIMATED_POSITIVE_MASS: f64 = 0.99;

/// Estimate priors from distant labels: `π̂_i = gamma · count_i / total_tokens`.
///
/// Distant labels under-count positives (dictionaries have high precision but
/// low recall), so `gamma ≥ 1` scales the counts back up. If the scaled sum
/// reaches [`MAX_ESTIMATED_POSITIVE_MASS`] the vector is rescaled onto it and
/// `clamped` is set.
pub fn estimate_priors_from_labels(corpus: &TaggedCorpus, gamma: f64) -> Result<PriorEstimate> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::validation(format!(
            "gamma must be >= 1, got {gamma}"
        )));
    }
    let total = corpus.num_tokens();
    if total == 0 {
        return Err(Error::validation("empty corpus"));
    }
    let c = corpus.num_classes();
    let mut counts = vec![0usize; c];
    for tag in corpus.sentences().iter().flat_map(|s| s.distant.iter()) {
        let k = tag.class();
        if k > 0 {
            counts[k - 1] += 1;
        }
    }
    if counts.iter().all(|&n| n == 0) {
        return Err(Error::validation("no positive tokens in distant labels"));
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::validation(format!(
            "no positive tokens for class {} ({})",
            i + 1,
            corpus.class_names()[i]
        )));
    }
    let mut pi: Vec<f64> = counts
        .iter()
        .map(|&n| gamma * n as f64 / total as f64)
        .collect();
    let sum: f64 = pi.iter().sum();
    let clamped = sum > MAX_ESTIMATED_POSITIVE_MASS;
    if clamped {
        let scale = MAX_ESTIMATED_POSITIVE_MASS / sum;
        pi.iter_mut().for_each(|p| *p *= scale);
    }
    Ok(PriorEstimate {
        priors: ClassPriors::new(pi)?,
        clamped,
    })
}

/// Token-level class frequencies of the gold layer.
pub fn gold_priors(corpus: &TaggedCorpus) -> Result<ClassPriors<f64>> {
    let gold = corpus.with_distant(corpus.gold_layer())?;
    Ok(estimate_priors_from_labels(&gold, 1.0)?.priors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, TaggedCorpus};
    use crate::tagging::Tag;
    use proptest::prelude::*;

    #[test]
    fn complement_prior() {
        let p = make_priors(vec![0.3f64, 0.2]).unwrap();
        assert!((p.negative() - 0.5).abs() < 1e-15);
        assert_eq!(p.full().len(), 3);
    }

    #[test]
    fn rejects_bad_priors() {
        let e = make_priors(vec![0.6, 0.5]).unwrap_err().to_string();
        assert!(e.contains("priors sum >= 1"), "{e}");
        let e = make_priors(vec![0.3, -0.1]).unwrap_err().to_string();
        assert!(e.contains("prior must be positive"), "{e}");
        assert!(make_priors::<f64>(vec![]).is_err());
    }

    #[test]
    fn priors_work_in_f32() {
        let p = make_priors(vec![0.3f32, 0.2]).unwrap();
        assert!((p.negative() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn label_space_bounds() {
        let ls = LabelSpace::new(2).unwrap();
        assert!(ls.check(2).is_ok());
        assert!(ls.check(3).is_err());
        assert!(LabelSpace::new(0).is_err());
    }

    #[test]
    fn dataset_rejects_empty_pools() {
        let err = PuDataset::new(vec![vec![vec![1.0]], vec![]], vec![vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(2)));
        assert!(PuDataset::<f64>::new(vec![vec![vec![1.0]]], vec![]).is_err());
    }

    fn corpus_with_counts(n_tokens: usize, n1: usize, n2: usize) -> TaggedCorpus {
        let mut distant = vec![Tag::O; n_tokens];
        for t in distant.iter_mut().take(n1) {
            *t = Tag::B(1);
        }
        for t in distant.iter_mut().skip(n1).take(n2) {
            *t = Tag::B(2);
        }
        let tokens = (0..n_tokens).map(|i| format!("w{i}")).collect();
        let sent = Sentence {
            tokens,
            gold: distant.clone(),
            distant,
        };
        TaggedCorpus::new(vec!["PER".into(), "LOC".into()], vec![sent], 8, 0).unwrap()
    }

    #[test]
    fn estimate_counts_and_scales() {
        let c = corpus_with_counts(100, 10, 5);
        let est = estimate_priors_from_labels(&c, 1.0).unwrap();
        assert!((est.priors.as_slice()[0] - 0.10).abs() < 1e-12);
        assert!((est.priors.as_slice()[1] - 0.05).abs() < 1e-12);
        assert!(!est.clamped);
        let est = estimate_priors_from_labels(&c, 2.0).unwrap();
        assert!((est.priors.as_slice()[0] - 0.20).abs() < 1e-12);
        assert!((est.priors.as_slice()[1] - 0.10).abs() < 1e-12);
    }

    #[test]
    fn estimate_clamps_and_flags() {
        let c = corpus_with_counts(10, 4, 4);
        let est = estimate_priors_from_labels(&c, 2.0).unwrap();
        assert!(est.clamped);
        assert!((est.priors.positive_mass() - MAX_ESTIMATED_POSITIVE_MASS).abs() < 1e-12);
    }

    #[test]
    fn estimate_rejects_no_positives() {
        let c = corpus_with_counts(10, 0, 0);
        let e = estimate_priors_from_labels(&c, 1.0)
            .unwrap_err()
            .to_string();
        assert!(e.contains("no positive tokens"), "{e}");
        assert!(estimate_priors_from_labels(&corpus_with_counts(10, 1, 1), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn priors_sum_to_one(raw in prop::collection::vec(0.001f64..1.0, 1..6)) {
            let s: f64 = raw.iter().sum();
            let pi: Vec<f64> = raw.iter().map(|r| r / (s * 1.01)).collect();
            let p = make_priors(pi).unwrap();
            prop_assert!((p.negative() + p.positive_mass() - 1.0).abs() <= f64::EPSILON);
        }

        #[test]
        fn ragged_dimensions_rejected(
            dim in 1usize..6,
            extra in 1usize..4,
            n in 1usize..5,
            which in 0usize..3,
        ) {
            let good = vec![0.5f64; dim];
            let bad = vec![0.5f64; dim + extra];
            let mut pos = vec![vec![good.clone(); n], vec![good.clone(); n]];
            let mut unl = vec![good.clone(); n];
            match which {
                0 => pos[0].push(bad),
                1 => pos[1].insert(0, bad),
                _ => unl.push(bad),
            }
            prop_assert!(PuDataset::new(pos, unl).is_err());
        }
    }
}

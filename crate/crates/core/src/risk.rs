//! Empirical risk estimators for multi-class positive-unlabeled learning.
//!
//! All estimators share three ingredients computed on a batch:
//!
//! * `R̂⁺_Pi`: mean loss of class-`i` positives against their own label,
//! * `R̂⁻_Pi`: mean loss of class-`i` positives against the negative label,
//! * `R̂⁻_U`: mean loss of unlabeled samples against the negative label.
//!
//! With `A = Σ π_i R̂⁺_Pi` and `B = R̂⁻_U − Σ π_i R̂⁻_Pi`:
//!
//! | estimator   | total                 |
//! |-------------|-----------------------|
//! | MPN         | `A + π_0 R̂⁻_N`        |
//! | naive MPU   | `A + B`               |
//! | non-neg MPU | `A + max(0, B)`       |
//! | CMPU        | `A + max(λ A, B)`     |
//!
//! For MPN the unlabeled pool is read as labeled negatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_grad_wrt_logits, mae_loss, GradientBuffer, SoftmaxModel};
use crate::pu::{ClassPriors, OneHotLabel, PuDataset};
use crate::scalar::Scalar;

/// Default constraint factor.
pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "mpn")]
    Mpn,
    #[serde(rename = "mpu")]
    MpuNaive,
    #[serde(rename = "mpu-nn")]
    MpuNn,
    #[serde(rename = "cmpu")]
    Cmpu,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Mpn,
        EstimatorKind::MpuNaive,
        EstimatorKind::MpuNn,
        EstimatorKind::Cmpu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Mpn => "mpn",
            EstimatorKind::MpuNaive => "mpu",
            EstimatorKind::MpuNn => "mpu-nn",
            EstimatorKind::Cmpu => "cmpu",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::validation(format!("unknown estimator {s:?} (mpn|mpu|mpu-nn|cmpu)"))
            })
    }
}

/// Which argument of the max won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// The unlabeled term `B`.
    Upper,
    /// The floor: `0` for non-negative MPU, `λ A` for CMPU.
    Lower,
    NotApplicable,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Upper => "upper",
            Branch::Lower => "lower",
            Branch::NotApplicable => "na",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmpuConfig<T> {
    pub lambda: T,
}

impl<T: Scalar> CmpuConfig<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::validation(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}

impl<T: Scalar> Default for CmpuConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::of(DEFAULT_LAMBDA),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskComponents<T> {
    pub rp_plus: Vec<T>,
    pub rp_minus: Vec<T>,
    pub ru_minus: T,
}

impl<T: Scalar> RiskComponents<T> {
    /// `A = Σ π_i R̂⁺_Pi`.
    pub fn weighted_positive(&self, priors: &ClassPriors<T>) -> T {
        weighted(priors, &self.rp_plus)
    }

    /// `Σ π_i R̂⁻_Pi`.
    pub fn weighted_positive_as_negative(&self, priors: &ClassPriors<T>) -> T {
        weighted(priors, &self.rp_minus)
    }

    /// `B = R̂⁻_U − Σ π_i R̂⁻_Pi`, the estimate of `π_0 R⁻_N`.
    pub fn unlabeled_term(&self, priors: &ClassPriors<T>) -> T {
        self.ru_minus - self.weighted_positive_as_negative(priors)
    }
}

fn weighted<T: Scalar>(priors: &ClassPriors<T>, values: &[T]) -> T {
    priors
        .as_slice()
        .iter()
        .zip(values)
        .map(|(&p, &v)| p * v)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport<T> {
    pub kind: EstimatorKind,
    pub components: RiskComponents<T>,
    pub branch: Branch,
    pub tau: Option<T>,
    pub lambda: Option<T>,
    pub total: T,
}

impl<T: Scalar> RiskReport<T> {
    /// Recompute the total from components, kind and λ.
    pub fn recompute_total(&self, priors: &ClassPriors<T>) -> T {
        let a = self.components.weighted_positive(priors);
        let b = self.components.unlabeled_term(priors);
        match self.kind {
            EstimatorKind::Mpn => a + priors.negative() * self.components.ru_minus,
            EstimatorKind::MpuNaive => a + b,
            EstimatorKind::MpuNn => a + b.max(T::zero()),
            EstimatorKind::Cmpu => {
                let lambda = self.lambda.expect("CMPU report carries lambda");
                a + (lambda * a).max(b)
            }
        }
    }
}

/// A borrowed minibatch: per-class positives and unlabeled samples.
#[derive(Debug, Clone)]
pub struct BatchView<'a, T> {
    pub positives: Vec<Vec<&'a [T]>>,
    pub unlabeled: Vec<&'a [T]>,
}

impl<'a, T: Scalar> From<&'a PuDataset<T>> for BatchView<'a, T> {
    fn from(ds: &'a PuDataset<T>) -> Self {
        Self {
            positives: ds
                .positive_pools()
                .iter()
                .map(|pool| pool.iter().map(Vec::as_slice).collect())
                .collect(),
            unlabeled: ds.unlabeled().iter().map(Vec::as_slice).collect(),
        }
    }
}

impl<T> BatchView<'_, T> {
    fn validate(&self, num_positive: usize) -> Result<()> {
        if self.positives.len() != num_positive {
            return Err(Error::validation(format!(
                "batch has {} positive classes, model/priors have {num_positive}",
                self.positives.len()
            )));
        }
        if let Some(i) = self.positives.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass(i + 1));
        }
        if self.unlabeled.is_empty() {
            return Err(Error::validation("n_U = 0: batch has no unlabeled samples"));
        }
        Ok(())
    }
}

/// The three families of batch means.
pub fn risk_components<T: Scalar>(
    model: &SoftmaxModel<T>,
    batch: &PuDataset<T>,
) -> Result<RiskComponents<T>> {
    risk_components_view(model, &BatchView::from(batch))
}

pub fn risk_components_view<T: Scalar>(
    model: &SoftmaxModel<T>,
    batch: &BatchView<'_, T>,
) -> Result<RiskComponents<T>> {
    batch.validate(model.num_positive())?;
    let k = model.num_outputs();
    let negative = OneHotLabel::new(0, k)?;
    let mut rp_plus = Vec::with_capacity(batch.positives.len());
    let mut rp_minus = Vec::with_capacity(batch.positives.len());
    for (i, pool) in batch.positives.iter().enumerate() {
        let own = OneHotLabel::new(i + 1, k)?;
        let mut plus = T::zero();
        let mut minus = T::zero();
        for x in pool {
            let p = model.forward(x)?;
            plus += mae_loss(&p, &own)?;
            minus += mae_loss(&p, &negative)?;
        }
        let n = T::of(pool.len() as f64);
        rp_plus.push(plus / n);
        rp_minus.push(minus / n);
    }
    let mut ru = T::zero();
    for x in &batch.unlabeled {
        ru += mae_loss(&model.forward(x)?, &negative)?;
    }
    Ok(RiskComponents {
        rp_plus,
        rp_minus,
        ru_minus: ru / T::of(batch.unlabeled.len() as f64),
    })
}

fn check_priors<T: Scalar>(components: &RiskComponents<T>, priors: &ClassPriors<T>) -> Result<()> {
    if components.rp_plus.len() != priors.num_positive()
        || components.rp_minus.len() != priors.num_positive()
    {
        return Err(Error::DimensionMismatch {
            expected: priors.num_positive(),
            got: components.rp_plus.len(),
        });
    }
    Ok(())
}

/// Supervised risk `A + π_0 · R̂⁻_N` given a loss on labeled negatives.
pub fn mpn_risk<T: Scalar>(
    components: &RiskComponents<T>,
    priors: &ClassPriors<T>,
    negatives_risk: T,
) -> Result<T> {
    check_priors(components, priors)?;
    Ok(components.weighted_positive(priors) + priors.negative() * negatives_risk)
}

/// MPN report with the unlabeled pool read as labeled negatives.
pub fn mpn_report<T: Scalar>(
    components: &RiskComponents<T>,
    priors: &ClassPriors<T>,
) -> Result<RiskReport<T>> {
    let total = mpn_risk(components, priors, components.ru_minus)?;
    Ok(RiskReport {
        kind: EstimatorKind::Mpn,
        components: components.clone(),
        branch: Branch::NotApplicable,
        tau: None,
        lambda: None,
        total,
    })
}

pub fn mpu_naive_risk<T: Scalar>(
    components: &RiskComponents<T>,
    priors: &ClassPriors<T>,
) -> Result<RiskReport<T>> {
    check_priors(components, priors)?;
    let a = components.weighted_positive(priors);
    let b = components.unlabeled_term(priors);
    Ok(RiskReport {
        kind: EstimatorKind::MpuNaive,
        components: components.clone(),
        branch: Branch::NotApplicable,
        tau: None,
        lambda: None,
        total: a + b,
    })
}

/// Non-negative estimator; a tie at zero counts as the upper branch.
pub fn mpu_nn_risk<T: Scalar>(
    components: &RiskComponents<T>,
    priors: &ClassPriors<T>,
) -> Result<RiskReport<T>> {
    check_priors(components, priors)?;
    let a = components.weighted_positive(priors);
    let b = components.unlabeled_term(priors);
    let (branch, second) = if b >= T::zero() {
        (Branch::Upper, b)
    } else {
        (Branch::Lower, T::zero())
    };
    Ok(RiskReport {
        kind: EstimatorKind::MpuNn,
        components: components.clone(),
        branch,
        tau: None,
        lambda: None,
        total: a + second,
    })
}

/// Constrained estimator `A + max(λA, B)`.
///
/// `tau = B / A` when `A > 0`. The lower branch is taken iff `tau < λ`, i.e.
/// `B < λA`; with `A = 0` both arguments compare against 0 and the upper
/// branch wins ties.
pub fn cmpu_risk<T: Scalar>(
    components: &RiskComponents<T>,
    priors: &ClassPriors<T>,
    cfg: &CmpuConfig<T>,
) -> Result<RiskReport<T>> {
    check_priors(components, priors)?;
    let a = components.weighted_positive(priors);
    let b = components.unlabeled_term(priors);
    let floor = cfg.lambda * a;
    let tau = (a > T::zero()).then(|| b / a);
    let lower = match tau {
        Some(t) => t < cfg.lambda,
        None => false,
    };
    let (branch, second) = if lower {
        (Branch::Lower, floor)
    } else {
        (Branch::Upper, b.max(floor))
    };
    Ok(RiskReport {
        kind: EstimatorKind::Cmpu,
        components: components.clone(),
        branch,
        tau,
        lambda: Some(cfg.lambda),
        total: a + second,
    })
}

/// Dispatch to the estimator named by `kind`.
pub fn risk_report<T: Scalar>(
    components: &RiskComponents<T>,
    priors: &ClassPriors<T>,
    kind: EstimatorKind,
    cfg: &CmpuConfig<T>,
) -> Result<RiskReport<T>> {
    match kind {
        EstimatorKind::Mpn => mpn_report(components, priors),
        EstimatorKind::MpuNaive => mpu_naive_risk(components, priors),
        EstimatorKind::MpuNn => mpu_nn_risk(components, priors),
        EstimatorKind::Cmpu => cmpu_risk(components, priors, cfg),
    }
}

/// How the gradient is formed when the lower branch of the max wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Gradient of the winning branch.
    #[default]
    Subgradient,
    /// Ascend on the violated term instead: `−∇B` for non-negative MPU and
    /// `−∇(B − λA)` for CMPU.
    FlipLower,
}

/// Per-sample loss weights `(w⁺, w⁻)` on class-`i` positives and `w_U` on unlabeled samples.
struct LossWeights<T> {
    own: T,
    negative: T,
    unlabeled: T,
}

fn loss_weights<T: Scalar>(
    report: &RiskReport<T>,
    priors: &ClassPriors<T>,
    mode: GradientMode,
) -> LossWeights<T> {
    let one = T::one();
    let zero = T::zero();
    // coefficients on ∇A and ∇B
    let (ca, cb) = match (report.kind, report.branch, mode) {
        (EstimatorKind::Mpn, _, _) => {
            return LossWeights {
                own: one,
                negative: zero,
                unlabeled: priors.negative(),
            }
        }
        (_, Branch::Lower, GradientMode::Subgradient) => match report.kind {
            EstimatorKind::Cmpu => (one + report.lambda.unwrap_or(zero), zero),
            _ => (one, zero),
        },
        (_, Branch::Lower, GradientMode::FlipLower) => match report.kind {
            EstimatorKind::Cmpu => (report.lambda.unwrap_or(zero), -one),
            _ => (zero, -one),
        },
        _ => (one, one),
    };
    LossWeights {
        own: ca,
        negative: -cb,
        unlabeled: cb,
    }
}

/// Gradient of the selected estimator on `batch`, together with the report it was taken at.
pub fn risk_gradient<T: Scalar>(
    model: &SoftmaxModel<T>,
    batch: &PuDataset<T>,
    priors: &ClassPriors<T>,
    kind: EstimatorKind,
    cfg: &CmpuConfig<T>,
) -> Result<(GradientBuffer<T>, RiskReport<T>)> {
    risk_gradient_view(
        model,
        &BatchView::from(batch),
        priors,
        kind,
        cfg,
        GradientMode::Subgradient,
    )
}

pub fn risk_gradient_view<T: Scalar>(
    model: &SoftmaxModel<T>,
    batch: &BatchView<'_, T>,
    priors: &ClassPriors<T>,
    kind: EstimatorKind,
    cfg: &CmpuConfig<T>,
    mode: GradientMode,
) -> Result<(GradientBuffer<T>, RiskReport<T>)> {
    if priors.num_positive() != model.num_positive() {
        return Err(Error::DimensionMismatch {
            expected: model.num_positive(),
            got: priors.num_positive(),
        });
    }
    let components = risk_components_view(model, batch)?;
    let report = risk_report(&components, priors, kind, cfg)?;
    let w = loss_weights(&report, priors, mode);

    let k = model.num_outputs();
    let negative = OneHotLabel::new(0, k)?;
    let mut grads = GradientBuffer::zeros_like(model);
    for (i, pool) in batch.positives.iter().enumerate() {
        let own = OneHotLabel::new(i + 1, k)?;
        let scale = priors.positive(i + 1) / T::of(pool.len() as f64);
        for x in pool {
            let acts = model.forward_cached(x)?;
            let g_own = loss_grad_wrt_logits(&acts.probs, &own)?;
            let g_neg = loss_grad_wrt_logits(&acts.probs, &negative)?;
            let dlogits: Vec<T> = g_own
                .iter()
                .zip(&g_neg)
                .map(|(&a, &b)| w.own * a + w.negative * b)
                .collect();
            model.backward(x, &acts, &dlogits, scale, &mut grads);
        }
    }
    if w.unlabeled != T::zero() {
        let scale = w.unlabeled / T::of(batch.unlabeled.len() as f64);
        for x in &batch.unlabeled {
            let acts = model.forward_cached(x)?;
            let g = loss_grad_wrt_logits(&acts.probs, &negative)?;
            model.backward(x, &acts, &g, scale, &mut grads);
        }
    }
    Ok((grads, report))
}

//! Monte Carlo checks of the estimators' statistical behavior.
//!
//! Every check is deterministic given its seed: trial `k` draws from a
//! generator derived from `(seed, k)` and results are reduced in trial order,
//! so the worker count never changes a report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{Architecture, SgdConfig, SoftmaxModel};
use crate::pu::{ClassPriors, OneHotLabel, PuDataset};
use crate::risk::{risk_components, risk_report, CmpuConfig, EstimatorKind, GradientMode};
use crate::seeds::derive_seed;
use crate::synth::{
    build_dictionary, corpus_to_pu, distant_label, generate_corpus, sample_pu_dataset_with,
    CorpusSpec, LabelingMode, MixtureSpec,
};
use crate::train::{train, TraceRow, TrainOptions};

/// Samples per oracle batch handed to one worker.
const ORACLE_CHUNK: usize = 50_000;

/// Settings for the three checks. Defaults are the desk-scale protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub mixture: MixtureSpec,
    /// The fixed model is a seeded linear model with parameters scaled by this factor.
    pub model_scale: f64,
    pub unbiasedness_trials: usize,
    /// Oracle draws per class conditional.
    pub oracle_samples: usize,
    pub n_p: usize,
    pub n_u: usize,
    pub rate_sizes: Vec<usize>,
    pub rate_trials: usize,
    pub lambda: f64,
    pub lambda_large: f64,
    /// Sample size at which the two λ values are compared.
    pub lambda_compare_n: usize,
    pub slope_range: (f64, f64),
    pub z_threshold: f64,
    /// Priors handed to the estimator in the unbiasedness check; the mixture's own when absent.
    pub estimator_priors: Option<Vec<f64>>,
    pub probe: ProbeConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureSpec::default(),
            model_scale: 10.0,
            unbiasedness_trials: 10_000,
            oracle_samples: 1_000_000,
            n_p: 10,
            n_u: 50,
            rate_sizes: vec![100, 400, 1600, 6400],
            rate_trials: 200,
            lambda: 0.2,
            lambda_large: 2.0,
            lambda_compare_n: 100,
            slope_range: (-0.65, -0.35),
            z_threshold: 3.0,
            estimator_priors: None,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub corpus: CorpusSpec,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            hidden: 64,
            learning_rate: 5.0,
            batch_size: 256,
            epochs: 10,
            lambda: 0.2,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        if self.unbiasedness_trials < 1000 {
            return Err(Error::validation(format!(
                "unbiasedness check needs K >= 1000 resamples, got {}",
                self.unbiasedness_trials
            )));
        }
        if self.oracle_samples < 1_000_000 {
            return Err(Error::validation(
                "oracle needs at least 10^6 samples per class",
            ));
        }
        if self.n_p == 0 || self.n_u == 0 || self.lambda_compare_n == 0 {
            return Err(Error::validation("sample counts must be >= 1"));
        }
        if self.rate_sizes.len() < 4
            || self.rate_sizes.windows(2).any(|w| w[0] >= w[1])
            || self.rate_sizes[0] == 0
        {
            return Err(Error::validation(
                "rate check needs >= 4 strictly increasing sizes",
            ));
        }
        if self.rate_trials < 200 {
            return Err(Error::validation("rate check needs >= 200 trials per size"));
        }
        for l in [self.lambda, self.lambda_large, self.probe.lambda] {
            CmpuConfig::new(l)?;
        }
        if !(self.model_scale.is_finite()
            && self.z_threshold > 0.0
            && self.slope_range.0 < self.slope_range.1)
        {
            return Err(Error::validation(
                "invalid model scale, z threshold or slope range",
            ));
        }
        if let Some(pi) = &self.estimator_priors {
            if pi.len() != self.mixture.num_positive() {
                return Err(Error::validation(format!(
                    "estimator_priors has {} entries, mixture has {} positive classes",
                    pi.len(),
                    self.mixture.num_positive()
                )));
            }
            ClassPriors::new(pi.clone())?;
        }
        self.probe.corpus.validate()?;
        if self.probe.hidden == 0 || self.probe.batch_size == 0 {
            return Err(Error::validation(
                "probe needs hidden >= 1 and batch_size >= 1",
            ));
        }
        Ok(())
    }

    /// The model every statistical check evaluates.
    /// The priors override as [`ClassPriors`], if one is set.
    pub fn estimator_class_priors(&self) -> Result<Option<ClassPriors<f64>>> {
        self.estimator_priors
            .clone()
            .map(ClassPriors::new)
            .transpose()
    }

    pub fn fixed_model(&self, seed: u64) -> Result<SoftmaxModel<f64>> {
        let mut m = SoftmaxModel::init(
            Architecture::Linear,
            self.mixture.dim(),
            self.mixture.num_positive(),
            derive_seed(seed, 0),
        )?;
        for p in m.params_mut() {
            *p *= self.model_scale;
        }
        Ok(m)
    }
}

/// Large-sample plug-in of the supervised risk `Σ π_i R⁺_Pi + π_0 R⁻_N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRisk {
    pub risk: f64,
    pub stderr: f64,
    pub samples_per_class: usize,
}

/// Mean and variance of the loss of `class` draws against label `class`.
fn class_loss_moments(
    spec: &MixtureSpec,
    model: &SoftmaxModel<f64>,
    class: usize,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let label = OneHotLabel::new(class, model.num_outputs())?;
    let chunks = n.div_ceil(ORACLE_CHUNK);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
            let m = ORACLE_CHUNK.min(n - c * ORACLE_CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..m {
                let x: Vec<f64> = spec.sample_class(class, &mut rng);
                let l = crate::model::mae_loss(&model.forward(&x)?, &label)?;
                s += l;
                s2 += l * l;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let mean = s / n as f64;
    Ok((mean, (s2 / n as f64 - mean * mean).max(0.0)))
}

pub fn oracle_risk(
    spec: &MixtureSpec,
    model: &SoftmaxModel<f64>,
    n: usize,
    seed: u64,
) -> Result<OracleRisk> {
    let priors = spec.class_priors()?;
    let full = priors.full();
    let mut risk = 0.0;
    let mut var = 0.0;
    for (class, &w) in full.iter().enumerate() {
        let (m, v) = class_loss_moments(
            spec,
            model,
            class,
            n,
            derive_seed(seed, 1000 + class as u64),
        )?;
        risk += w * m;
        var += w * w * v / n as f64;
    }
    Ok(OracleRisk {
        risk,
        stderr: var.sqrt(),
        samples_per_class: n,
    })
}

/// Estimator value on each of `trials` fresh PU samples.
#[allow(clippy::too_many_arguments)]
fn estimator_draws(
    spec: &MixtureSpec,
    model: &SoftmaxModel<f64>,
    priors: &ClassPriors<f64>,
    kind: EstimatorKind,
    lambda: f64,
    n_p: &[usize],
    n_u: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let cfg = CmpuConfig::new(lambda)?;
    (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let s =
                sample_pu_dataset_with::<f64, _>(spec, n_p, n_u, LabelingMode::Unbiased, &mut rng)?;
            let c = risk_components(model, &s.dataset)?;
            Ok(risk_report(&c, priors, kind, &cfg)?.total)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessReport {
    pub seed: u64,
    pub trials: usize,
    pub n_p: Vec<usize>,
    pub n_u: usize,
    pub estimator_priors: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub oracle: OracleRisk,
    pub z: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Compare the Monte Carlo mean of the naive MPU estimate with the oracle risk.
///
/// `estimator_priors` replaces the true priors inside the estimator only,
/// which is how a prior misspecification is injected.
pub fn check_unbiasedness(
    cfg: &VerifyConfig,
    model: &SoftmaxModel<f64>,
    estimator_priors: Option<&ClassPriors<f64>>,
    seed: u64,
) -> Result<UnbiasednessReport> {
    if cfg.unbiasedness_trials < 2 {
        return Err(Error::validation(
            "K >= 2 resamples needed for a standard error",
        ));
    }
    let spec = &cfg.mixture;
    let true_priors = spec.class_priors()?;
    let priors = estimator_priors.unwrap_or(&true_priors);
    let n_p = vec![cfg.n_p; spec.num_positive()];
    let draws = estimator_draws(
        spec,
        model,
        priors,
        EstimatorKind::MpuNaive,
        cfg.lambda,
        &n_p,
        cfg.n_u,
        cfg.unbiasedness_trials,
        derive_seed(seed, 1),
    )?;
    let k = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / k;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let stderr = (var / k).sqrt();
    let oracle = oracle_risk(spec, model, cfg.oracle_samples, derive_seed(seed, 2))?;
    let z = if stderr > 0.0 {
        (mean - oracle.risk) / stderr
    } else if mean == oracle.risk {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(UnbiasednessReport {
        seed,
        trials: cfg.unbiasedness_trials,
        n_p,
        n_u: cfg.n_u,
        estimator_priors: priors.as_slice().to_vec(),
        mean,
        stderr,
        oracle,
        z,
        threshold: cfg.z_threshold,
        passed: z.abs() < cfg.z_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheckResult {
    pub sample_sizes: Vec<usize>,
    pub rms_errors: Vec<f64>,
    pub loglog_slope: f64,
    pub slope_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaComparison {
    pub n: usize,
    pub lambda_small: f64,
    pub rms_small: f64,
    pub lambda_large: f64,
    pub rms_large: f64,
    pub larger_lambda_deviates_more: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub seed: u64,
    pub trials: usize,
    pub lambda: f64,
    pub oracle: OracleRisk,
    pub result: RateCheckResult,
    pub slope_range: (f64, f64),
    pub lambda_comparison: LambdaComparison,
    pub passed: bool,
}

/// Ordinary least squares slope of `y` on `x` with a 95% t interval.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<(f64, (f64, f64))> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::validation("slope fit needs >= 3 aligned points"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("slope fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let df = (n - 2) as f64;
    let se = (sse / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::validation(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((slope, (slope - t * se, slope + t * se)))
}

fn rms_at(
    spec: &MixtureSpec,
    model: &SoftmaxModel<f64>,
    oracle: f64,
    lambda: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let priors = spec.class_priors()?;
    let n_p: Vec<usize> = priors
        .as_slice()
        .iter()
        .map(|p| ((p * n as f64).ceil() as usize).max(1))
        .collect();
    let draws = estimator_draws(
        spec,
        model,
        &priors,
        EstimatorKind::Cmpu,
        lambda,
        &n_p,
        n,
        trials,
        seed,
    )?;
    Ok((draws.iter().map(|d| (d - oracle).powi(2)).sum::<f64>() / trials as f64).sqrt())
}

/// RMS error of the CMPU estimate over growing samples, `n_Pi = ⌈π_i n⌉` and `n_U = n`.
pub fn check_consistency_rate(
    cfg: &VerifyConfig,
    model: &SoftmaxModel<f64>,
    seed: u64,
) -> Result<RateReport> {
    let spec = &cfg.mixture;
    let oracle = oracle_risk(spec, model, cfg.oracle_samples, derive_seed(seed, 2))?;
    let rms_errors = cfg
        .rate_sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            rms_at(
                spec,
                model,
                oracle.risk,
                cfg.lambda,
                n,
                cfg.rate_trials,
                derive_seed(seed, 10 + i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = cfg.rate_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = rms_errors.iter().map(|r| r.ln()).collect();
    let (slope, ci) = ols_slope(&lx, &ly)?;

    // paired: both λ values see the same samples
    let cmp_seed = derive_seed(seed, 3);
    let n = cfg.lambda_compare_n;
    let rms_small = rms_at(
        spec,
        model,
        oracle.risk,
        cfg.lambda,
        n,
        cfg.rate_trials,
        cmp_seed,
    )?;
    let rms_large = rms_at(
        spec,
        model,
        oracle.risk,
        cfg.lambda_large,
        n,
        cfg.rate_trials,
        cmp_seed,
    )?;
    let lambda_comparison = LambdaComparison {
        n,
        lambda_small: cfg.lambda,
        rms_small,
        lambda_large: cfg.lambda_large,
        rms_large,
        larger_lambda_deviates_more: rms_large >= rms_small,
    };
    let passed = slope >= cfg.slope_range.0
        && slope <= cfg.slope_range.1
        && lambda_comparison.larger_lambda_deviates_more;
    Ok(RateReport {
        seed,
        trials: cfg.rate_trials,
        lambda: cfg.lambda,
        oracle,
        result: RateCheckResult {
            sample_sizes: cfg.rate_sizes.clone(),
            rms_errors,
            loglog_slope: slope,
            slope_ci: ci,
        },
        slope_range: cfg.slope_range,
        lambda_comparison,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub naive_min_unlabeled_term: f64,
    pub naive_goes_negative: bool,
    /// Batches where the naive estimator's unlabeled term is below zero.
    pub naive_negative_batches: usize,
    pub nn_lower_branch_batches: usize,
    pub cmpu_lower_branch_batches: usize,
    pub cmpu_bound_violations: usize,
    pub mpn_branch_events: usize,
    pub batches: usize,
    pub passed: bool,
    #[serde(skip)]
    pub traces: Vec<(EstimatorKind, Vec<TraceRow>)>,
}

/// `total ≥ A + λA` and `total ≥ A + B`, evaluated in the estimator's own arithmetic.
pub fn cmpu_row_holds(row: &TraceRow) -> bool {
    let a = row.sum_pi_rp_plus;
    let lambda = row.lambda.unwrap_or(0.0);
    row.total >= a + lambda * a && row.total >= a + row.unlabeled_term()
}

/// Train the MLP with each estimator from one initialization on `dataset` and
/// inspect the per-batch traces.
pub fn overfit_probe(
    dataset: &PuDataset<f64>,
    priors: &ClassPriors<f64>,
    hidden: usize,
    sgd: &SgdConfig<f64>,
    lambda: f64,
    seed: u64,
) -> Result<ProbeReport> {
    let init = SoftmaxModel::init(
        Architecture::Mlp { hidden },
        dataset.dim(),
        dataset.num_positive_classes(),
        derive_seed(seed, 4),
    )?;
    let kinds = [
        EstimatorKind::Mpn,
        EstimatorKind::MpuNaive,
        EstimatorKind::MpuNn,
        EstimatorKind::Cmpu,
    ];
    let traces = kinds
        .par_iter()
        .map(|&kind| {
            let opts = TrainOptions {
                kind,
                cmpu: CmpuConfig::new(lambda)?,
                sgd: *sgd,
                mode: GradientMode::Subgradient,
            };
            Ok((kind, train(init.clone(), dataset, priors, &opts)?.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = |k: EstimatorKind| {
        &traces
            .iter()
            .find(|(kind, _)| *kind == k)
            .expect("all kinds trained")
            .1
    };
    let naive = trace(EstimatorKind::MpuNaive);
    let naive_min = naive
        .iter()
        .map(TraceRow::unlabeled_term)
        .fold(f64::INFINITY, f64::min);
    let naive_negative_batches = naive.iter().filter(|r| r.unlabeled_term() < 0.0).count();
    let lower = |k| {
        trace(k)
            .iter()
            .filter(|r| r.branch == crate::risk::Branch::Lower)
            .count()
    };
    let cmpu_bound_violations = trace(EstimatorKind::Cmpu)
        .iter()
        .filter(|r| !cmpu_row_holds(r))
        .count();
    let mpn_branch_events = trace(EstimatorKind::Mpn)
        .iter()
        .filter(|r| r.branch != crate::risk::Branch::NotApplicable)
        .count();
    let naive_goes_negative = naive_min < 0.0;
    Ok(ProbeReport {
        seed,
        naive_min_unlabeled_term: naive_min,
        naive_goes_negative,
        naive_negative_batches,
        nn_lower_branch_batches: lower(EstimatorKind::MpuNn),
        cmpu_lower_branch_batches: lower(EstimatorKind::Cmpu),
        cmpu_bound_violations,
        mpn_branch_events,
        batches: naive.len(),
        passed: naive_goes_negative && cmpu_bound_violations == 0 && mpn_branch_events == 0,
        traces,
    })
}

/// The probe on the distantly labeled template corpus, with gold token priors.
pub fn overfit_probe_default(cfg: &ProbeConfig, seed: u64) -> Result<ProbeReport> {
    let corpus = generate_corpus(&CorpusSpec {
        seed,
        ..cfg.corpus.clone()
    })?;
    let labeled = distant_label(&corpus, &build_dictionary(&cfg.corpus))?;
    let dataset = corpus_to_pu::<f64>(&labeled)?;
    let priors = crate::pu::gold_priors(&labeled)?;
    let sgd = SgdConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        l2: 0.0,
        seed: derive_seed(seed, 5),
    };
    overfit_probe(&dataset, &priors, cfg.hidden, &sgd, cfg.lambda, seed)
}

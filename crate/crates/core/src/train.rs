//! Stratified minibatch SGD on a risk estimator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sgd_step, SgdConfig, SoftmaxModel};
use crate::pu::{ClassPriors, PuDataset};
use crate::risk::{
    risk_gradient_view, BatchView, Branch, CmpuConfig, EstimatorKind, GradientMode, RiskReport,
};
use crate::scalar::Scalar;

pub const TRACE_CSV_HEADER: &str =
    "epoch,batch,kind,total,ru_minus,sum_pi_rp_plus,sum_pi_rp_minus,branch,tau";

/// Risk statistics of one minibatch, taken before its update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub batch: usize,
    pub kind: EstimatorKind,
    pub total: f64,
    pub ru_minus: f64,
    pub sum_pi_rp_plus: f64,
    pub sum_pi_rp_minus: f64,
    pub branch: Branch,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
}

impl TraceRow {
    fn from_report<T: Scalar>(
        epoch: usize,
        batch: usize,
        r: &RiskReport<T>,
        priors: &ClassPriors<T>,
    ) -> Self {
        Self {
            epoch,
            batch,
            kind: r.kind,
            total: r.total.as_f64(),
            ru_minus: r.components.ru_minus.as_f64(),
            sum_pi_rp_plus: r.components.weighted_positive(priors).as_f64(),
            sum_pi_rp_minus: r.components.weighted_positive_as_negative(priors).as_f64(),
            branch: r.branch,
            tau: r.tau.map(Scalar::as_f64),
            lambda: r.lambda.map(Scalar::as_f64),
        }
    }

    /// `R̂⁻_U − Σ π_i R̂⁻_Pi`.
    pub fn unlabeled_term(&self) -> f64 {
        self.ru_minus - self.sum_pi_rp_minus
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.batch,
            self.kind,
            self.total,
            self.ru_minus,
            self.sum_pi_rp_plus,
            self.sum_pi_rp_minus,
            self.branch.as_str(),
            self.tau.map(|t| t.to_string()).unwrap_or_default()
        )
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct Training<T> {
    pub model: SoftmaxModel<T>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions<T> {
    pub kind: EstimatorKind,
    pub cmpu: CmpuConfig<T>,
    pub sgd: SgdConfig<T>,
    pub mode: GradientMode,
}

/// Index chunks for one epoch: `num_batches` slices of a shuffled pool.
///
/// Pools at least as large as the batch count are split evenly; smaller pools
/// contribute one (recycled) sample to every batch.
fn stratify(n: usize, num_batches: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    (0..num_batches)
        .map(|b| {
            if n >= num_batches {
                perm[b * n / num_batches..(b + 1) * n / num_batches].to_vec()
            } else {
                vec![perm[b % n]]
            }
        })
        .collect()
}

/// Minibatch SGD; every batch holds at least one sample of each positive class
/// and of the unlabeled pool. `sink` sees each trace row as it is produced.
pub fn train_with_sink<T: Scalar>(
    mut model: SoftmaxModel<T>,
    dataset: &PuDataset<T>,
    priors: &ClassPriors<T>,
    opts: &TrainOptions<T>,
    mut sink: impl FnMut(&TraceRow),
) -> Result<Training<T>> {
    opts.sgd.validate()?;
    if dataset.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: dataset.dim(),
        });
    }
    if dataset.num_positive_classes() != priors.num_positive()
        || model.num_positive() != priors.num_positive()
    {
        return Err(Error::validation("dataset, model and priors disagree on C"));
    }
    let num_batches = dataset.len().div_ceil(opts.sgd.batch_size).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.sgd.seed);
    let mut trace = Vec::with_capacity(opts.sgd.epochs * num_batches);

    for epoch in 0..opts.sgd.epochs {
        let pos_chunks: Vec<Vec<Vec<usize>>> = dataset
            .positive_pools()
            .iter()
            .map(|pool| stratify(pool.len(), num_batches, &mut rng))
            .collect();
        let u_chunks = stratify(dataset.num_unlabeled(), num_batches, &mut rng);
        for b in 0..num_batches {
            let view = BatchView {
                positives: pos_chunks
                    .iter()
                    .zip(dataset.positive_pools())
                    .map(|(chunks, pool)| chunks[b].iter().map(|&j| pool[j].as_slice()).collect())
                    .collect(),
                unlabeled: u_chunks[b]
                    .iter()
                    .map(|&j| dataset.unlabeled()[j].as_slice())
                    .collect(),
            };
            let (grads, report) =
                risk_gradient_view(&model, &view, priors, opts.kind, &opts.cmpu, opts.mode)?;
            if !report.total.is_finite() {
                return Err(Error::NumericalDivergence(format!(
                    "non-finite {} risk at epoch {epoch} batch {b}",
                    opts.kind
                )));
            }
            let row = TraceRow::from_report(epoch, b, &report, priors);
            sink(&row);
            trace.push(row);
            sgd_step(&mut model, &grads, &opts.sgd)?;
        }
    }
    Ok(Training { model, trace })
}

pub fn train<T: Scalar>(
    model: SoftmaxModel<T>,
    dataset: &PuDataset<T>,
    priors: &ClassPriors<T>,
    opts: &TrainOptions<T>,
) -> Result<Training<T>> {
    train_with_sink(model, dataset, priors, opts, |_| {})
}

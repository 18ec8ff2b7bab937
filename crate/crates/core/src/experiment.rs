//! End-to-end runs: the distantly supervised tagging pipeline, λ sweeps,
//! dictionary-coverage ablations and the verification suite.
//!
//! Sweep cells run on a pool of at most `CMPU_WORKERS` threads and are
//! aggregated in cell-key order, so outputs never depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TaggedCorpus;
use crate::error::{Error, Result};
use crate::eval::{predict_token_classes, score_predictions, EvalResult, EVAL_CSV_HEADER};
use crate::model::{Architecture, SgdConfig, SoftmaxModel};
use crate::pu::{estimate_priors_from_labels, gold_priors, ClassPriors, PuDataset};
use crate::risk::{CmpuConfig, EstimatorKind, GradientMode, DEFAULT_LAMBDA};
use crate::seeds::derive_seed;
use crate::synth::{build_dictionary_at, corpus_to_pu, distant_label, generate_corpus, CorpusSpec};
use crate::train::{trace_csv, train, TrainOptions, Training};
use crate::verify::{
    check_consistency_rate, check_unbiasedness, overfit_probe_default, ProbeReport, RateReport,
    UnbiasednessReport, VerifyConfig,
};

pub const WORKERS_ENV: &str = "CMPU_WORKERS";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the PU estimators get their class priors. The MPN estimator reads
/// the unlabeled pool as negatives and always uses the distant-label
/// frequencies, which makes it the naive supervised baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorsConfig {
    /// Token frequencies of the gold layer on the training split.
    Gold,
    Explicit {
        values: Vec<f64>,
    },
    /// Distant-label frequencies scaled by `gamma`.
    Estimated {
        gamma: f64,
    },
}

/// Which training tokens form the unlabeled pool of the PU estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlabeledPool {
    /// Every training token, labeled or not, so the pool follows the token marginal.
    #[default]
    AllTokens,
    /// Only tokens the dictionary left as `O`. As coverage grows this pool
    /// drifts toward the negative class.
    DistantO,
}

/// Append the labeled positives to the unlabeled pool.
pub fn with_all_tokens_unlabeled(dataset: PuDataset<f64>) -> Result<PuDataset<f64>> {
    let mut u = dataset.unlabeled().to_vec();
    for pool in dataset.positive_pools() {
        u.extend(pool.iter().cloned());
    }
    PuDataset::new(dataset.positive_pools().to_vec(), u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for SgdSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            batch_size: 256,
            epochs: 30,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub priors: PriorsConfig,
    pub estimator: EstimatorKind,
    pub lambda: f64,
    pub architecture: Architecture,
    pub gradient_mode: GradientMode,
    pub unlabeled_pool: UnlabeledPool,
    pub sgd: SgdSettings,
    /// Run seeds. A single run uses the first one.
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub lambdas: Vec<f64>,
    pub coverages: Vec<f64>,
    /// Estimators compared by the coverage ablation.
    pub estimators: Vec<EstimatorKind>,
    pub verify: VerifyConfig,
    /// Output directory; never serialized so manifests stay location-free.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            priors: PriorsConfig::Gold,
            estimator: EstimatorKind::Cmpu,
            lambda: DEFAULT_LAMBDA,
            architecture: Architecture::Linear,
            gradient_mode: GradientMode::Subgradient,
            unlabeled_pool: UnlabeledPool::AllTokens,
            sgd: SgdSettings::default(),
            seeds: vec![1, 2, 3, 4, 5],
            test_fraction: 0.2,
            lambdas: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            coverages: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            estimators: EstimatorKind::ALL.to_vec(),
            verify: VerifyConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))
    }

    /// Read a config file, or the config recorded in a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        if value.get("config_hash").is_some() {
            let manifest: Manifest = serde_json::from_value(value)
                .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
            let hash = config_hash(&manifest.config)?;
            if hash != manifest.config_hash {
                return Err(Error::validation(format!(
                    "manifest hash {} does not match its config ({hash})",
                    manifest.config_hash
                )));
            }
            return Ok(manifest.config);
        }
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        let c = self.corpus.classes.len();
        match &self.priors {
            PriorsConfig::Gold => {}
            PriorsConfig::Explicit { values } => {
                if values.len() != c {
                    return Err(Error::validation(format!(
                        "{} explicit priors for {c} classes",
                        values.len()
                    )));
                }
                ClassPriors::new(values.clone())?;
            }
            PriorsConfig::Estimated { gamma } => {
                if !(gamma.is_finite() && *gamma >= 1.0) {
                    return Err(Error::validation(format!(
                        "gamma must be >= 1, got {gamma}"
                    )));
                }
            }
        }
        CmpuConfig::new(self.lambda)?;
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::validation("MLP needs hidden >= 1"));
        }
        self.sgd_config(0).validate()?;
        if !(self.sgd.learning_rate > 0.0) || self.sgd.batch_size == 0 || !(self.sgd.l2 >= 0.0) {
            return Err(Error::validation(
                "sgd needs learning_rate > 0, batch_size >= 1 and l2 >= 0",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seed list is empty"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::validation("test_fraction must be in (0, 1)"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::validation("lambda list is empty"));
        }
        for &l in &self.lambdas {
            CmpuConfig::new(l)?;
        }
        check_nested(&self.coverages)?;
        if self.estimators.is_empty() {
            return Err(Error::validation("estimator list is empty"));
        }
        self.verify.validate()
    }

    fn sgd_config(&self, seed: u64) -> SgdConfig<f64> {
        SgdConfig {
            learning_rate: self.sgd.learning_rate,
            batch_size: self.sgd.batch_size,
            epochs: self.sgd.epochs,
            l2: self.sgd.l2,
            seed,
        }
    }
}

/// Coverage lists must describe nested dictionaries: increasing values in (0, 1].
fn check_nested(coverages: &[f64]) -> Result<()> {
    if coverages.is_empty() {
        return Err(Error::validation("coverage list is empty"));
    }
    if coverages.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::validation("coverages must lie in (0, 1]"));
    }
    if coverages.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            "coverages must be strictly increasing so dictionaries nest",
        ));
    }
    Ok(())
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one command invocation; feeding it back via `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            config_hash: config_hash(config)?,
            seeds: config.seeds.clone(),
            config: config.clone(),
        })
    }
}

/// Writes files into an output directory and deletes them again unless committed.
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn write_manifest(&mut self, command: &str, config: &ExperimentConfig) -> Result<PathBuf> {
        self.write_json("manifest.json", &Manifest::new(command, config)?)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Worker count from `CMPU_WORKERS`, defaulting to the available cores.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::validation(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Run `f` on a pool bounded by [`worker_count`].
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Shuffled sentence split; returns `(train, test)` indices, each sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_fraction).round() as usize)
        .clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// One pipeline cell: what varies across sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub kind: EstimatorKind,
    pub lambda: f64,
    pub coverage: f64,
}

impl ExperimentConfig {
    pub fn cell(&self, seed: u64) -> Cell {
        Cell {
            seed,
            kind: self.estimator,
            lambda: self.lambda,
            coverage: self.corpus.dictionary_coverage,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DsnerRun {
    pub cell: Cell,
    pub eval: EvalResult,
    /// Distant labels against gold on the training split.
    pub annotation: EvalResult,
    pub priors: Vec<f64>,
    pub training: Training<f64>,
    /// Full labeled corpus and its split.
    pub corpus: TaggedCorpus,
    pub test: Vec<usize>,
}

/// Corpus for run seed `seed`: generation, split and distant labels.
pub fn prepare_corpus(
    config: &ExperimentConfig,
    seed: u64,
    coverage: f64,
) -> Result<(TaggedCorpus, Vec<usize>, Vec<usize>)> {
    let spec = CorpusSpec {
        seed,
        dictionary_coverage: coverage,
        ..config.corpus.clone()
    };
    let corpus = generate_corpus(&spec).map_err(|e| e.at("generate"))?;
    let labeled =
        distant_label(&corpus, &build_dictionary_at(&spec, coverage)).map_err(|e| e.at("label"))?;
    let (train, test) = split_indices(
        labeled.sentences().len(),
        config.test_fraction,
        derive_seed(seed, 1),
    );
    Ok((labeled, train, test))
}

fn priors_for(
    config: &ExperimentConfig,
    kind: EstimatorKind,
    train: &TaggedCorpus,
) -> Result<ClassPriors<f64>> {
    if kind == EstimatorKind::Mpn {
        return Ok(estimate_priors_from_labels(train, 1.0)?.priors);
    }
    match &config.priors {
        PriorsConfig::Gold => gold_priors(train),
        PriorsConfig::Explicit { values } => ClassPriors::new(values.clone()),
        PriorsConfig::Estimated { gamma } => Ok(estimate_priors_from_labels(train, *gamma)?.priors),
    }
}

/// Generate, label, train on the distant layer and score on the held-out gold split.
pub fn run_cell(config: &ExperimentConfig, cell: Cell) -> Result<DsnerRun> {
    let (labeled, train_idx, test_idx) = prepare_corpus(config, cell.seed, cell.coverage)?;
    let train_corpus = labeled.select(&train_idx);
    let annotation = crate::synth::annotation_quality(&train_corpus).map_err(|e| e.at("label"))?;
    let mut dataset = corpus_to_pu::<f64>(&train_corpus).map_err(|e| e.at("label"))?;
    if cell.kind != EstimatorKind::Mpn && config.unlabeled_pool == UnlabeledPool::AllTokens {
        dataset = with_all_tokens_unlabeled(dataset).map_err(|e| e.at("label"))?;
    }
    let priors = priors_for(config, cell.kind, &train_corpus).map_err(|e| e.at("priors"))?;
    let model = SoftmaxModel::init(
        config.architecture,
        dataset.dim(),
        dataset.num_positive_classes(),
        derive_seed(cell.seed, 2),
    )
    .map_err(|e| e.at("train"))?;
    let opts = TrainOptions {
        kind: cell.kind,
        cmpu: CmpuConfig::new(cell.lambda)?,
        sgd: config.sgd_config(derive_seed(cell.seed, 3)),
        mode: config.gradient_mode,
    };
    let training = train(model, &dataset, &priors, &opts).map_err(|e| e.at("train"))?;
    let pred =
        predict_token_classes(&training.model, &labeled, &test_idx).map_err(|e| e.at("predict"))?;
    let gold: Vec<_> = test_idx
        .iter()
        .map(|&i| labeled.sentences()[i].gold.clone())
        .collect();
    let eval = score_predictions(&gold, &pred, labeled.class_names()).map_err(|e| e.at("score"))?;
    Ok(DsnerRun {
        cell,
        eval,
        annotation,
        priors: priors.as_slice().to_vec(),
        training,
        corpus: labeled,
        test: test_idx,
    })
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    estimator: EstimatorKind,
    lambda: f64,
    coverage: f64,
    seed: u64,
    priors: &'a [f64],
    test_sentences: usize,
    eval: &'a EvalResult,
    annotation: &'a EvalResult,
}

/// Full pipeline for the first configured seed. Writes `eval.json`,
/// `eval.csv`, `trace.csv`, `model.bin` and `manifest.json` into `out`.
pub fn run_dsner(config: &ExperimentConfig, out: Option<&Path>) -> Result<DsnerRun> {
    config.validate()?;
    let run = run_cell(config, config.cell(config.seeds[0]))?;
    if let Some(dir) = out {
        write_run(config, &run, dir).map_err(|e| e.at("write"))?;
    }
    Ok(run)
}

fn write_run(config: &ExperimentConfig, run: &DsnerRun, dir: &Path) -> Result<()> {
    let mut out = OutputSet::new(dir)?;
    out.write_json(
        "eval.json",
        &RunSummary {
            estimator: run.cell.kind,
            lambda: run.cell.lambda,
            coverage: run.cell.coverage,
            seed: run.cell.seed,
            priors: &run.priors,
            test_sentences: run.test.len(),
            eval: &run.eval,
            annotation: &run.annotation,
        },
    )?;
    out.write(
        "eval.csv",
        format!("{EVAL_CSV_HEADER}\n{}\n", run.eval.csv_row()),
    )?;
    out.write("trace.csv", trace_csv(&run.training.trace))?;
    let mut model = Vec::new();
    run.training.model.write_to(&mut model)?;
    out.write("model.bin", model)?;
    out.write_manifest("train", config)?;
    out.commit();
    Ok(())
}

/// Template corpus for the first configured seed, distant layer all `O`.
pub fn gen_corpus(config: &ExperimentConfig) -> Result<TaggedCorpus> {
    config.validate()?;
    generate_corpus(&CorpusSpec {
        seed: config.seeds[0],
        ..config.corpus.clone()
    })
}

/// Distant labels at the configured coverage, plus their quality against gold.
pub fn label_corpus(
    config: &ExperimentConfig,
    corpus: &TaggedCorpus,
) -> Result<(TaggedCorpus, EvalResult)> {
    config.validate()?;
    if corpus.class_names() != config.corpus.class_names().as_slice() {
        return Err(Error::validation(
            "corpus entity types differ from the configured lexicon",
        ));
    }
    let labeled = distant_label(
        corpus,
        &build_dictionary_at(&config.corpus, config.corpus.dictionary_coverage),
    )?;
    let quality = crate::synth::annotation_quality(&labeled)?;
    Ok((labeled, quality))
}

/// Score a trained model on every sentence of `corpus`, or on the held-out
/// split the pipeline would use for the first seed.
pub fn evaluate_model(
    config: &ExperimentConfig,
    model: &SoftmaxModel<f64>,
    corpus: Option<&TaggedCorpus>,
) -> Result<EvalResult> {
    config.validate()?;
    let (corpus, idx) = match corpus {
        Some(c) => (c.clone(), (0..c.sentences().len()).collect::<Vec<_>>()),
        None => {
            let (labeled, _, test) =
                prepare_corpus(config, config.seeds[0], config.corpus.dictionary_coverage)?;
            (labeled, test)
        }
    };
    if model.input_dim() != corpus.featurizer().dim || model.num_positive() != corpus.num_classes()
    {
        return Err(Error::validation(format!(
            "model expects {} features and {} classes, corpus has {} and {}",
            model.input_dim(),
            model.num_positive(),
            corpus.featurizer().dim,
            corpus.num_classes()
        )));
    }
    let pred = predict_token_classes(model, &corpus, &idx).map_err(|e| e.at("predict"))?;
    let gold: Vec<_> = idx
        .iter()
        .map(|&i| corpus.sentences()[i].gold.clone())
        .collect();
    score_predictions(&gold, &pred, corpus.class_names()).map_err(|e| e.at("score"))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every cell on the bounded pool; results keep the input order.
pub fn run_cells(config: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<DsnerRun>> {
    with_workers(|| {
        cells
            .par_iter()
            .map(|&c| run_cell(config, c))
            .collect::<Result<Vec<_>>>()
    })?
}

pub const SWEEP_CSV_HEADER: &str =
    "lambda,seeds,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seeds: usize,
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
}

impl SweepRow {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.lambda,
            self.seeds,
            self.precision.0,
            self.precision.1,
            self.recall.0,
            self.recall.1,
            self.f1.0,
            self.f1.1
        )
    }
}

fn aggregate(runs: &[&DsnerRun]) -> ((f64, f64), (f64, f64), (f64, f64)) {
    let p: Vec<f64> = runs.iter().map(|r| r.eval.precision).collect();
    let r: Vec<f64> = runs.iter().map(|r| r.eval.recall).collect();
    let f: Vec<f64> = runs.iter().map(|r| r.eval.f1).collect();
    (mean_std(&p), mean_std(&r), mean_std(&f))
}

/// CMPU F1 against λ, one run per (λ, seed). Rows follow the configured λ order.
pub fn run_lambda_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let cells: Vec<Cell> = config
        .lambdas
        .iter()
        .flat_map(|&lambda| {
            config.seeds.iter().map(move |&seed| Cell {
                seed,
                kind: EstimatorKind::Cmpu,
                lambda,
                coverage: config.corpus.dictionary_coverage,
            })
        })
        .collect();
    let runs = run_cells(config, &cells)?;
    Ok(config
        .lambdas
        .iter()
        .map(|&lambda| {
            let group: Vec<&DsnerRun> = runs.iter().filter(|r| r.cell.lambda == lambda).collect();
            let (precision, recall, f1) = aggregate(&group);
            SweepRow {
                lambda,
                seeds: group.len(),
                precision,
                recall,
                f1,
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub const ABLATION_CSV_HEADER: &str = "estimator,coverage,seeds,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,distant_precision,distant_recall,distant_f1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub estimator: EstimatorKind,
    pub coverage: f64,
    pub seeds: usize,
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
    /// Mean quality of the distant labels themselves.
    pub distant: (f64, f64, f64),
}

impl AblationRow {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.estimator,
            self.coverage,
            self.seeds,
            self.precision.0,
            self.precision.1,
            self.recall.0,
            self.recall.1,
            self.f1.0,
            self.f1.1,
            self.distant.0,
            self.distant.1,
            self.distant.2
        )
    }
}

/// P/R/F1 per (estimator, coverage), estimators in configured order.
pub fn run_coverage_ablation(config: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &kind in &config.estimators {
        for &coverage in &config.coverages {
            for &seed in &config.seeds {
                cells.push(Cell {
                    seed,
                    kind,
                    lambda: config.lambda,
                    coverage,
                });
            }
        }
    }
    let runs = run_cells(config, &cells)?;
    let mut rows = Vec::new();
    for &kind in &config.estimators {
        for &coverage in &config.coverages {
            let group: Vec<&DsnerRun> = runs
                .iter()
                .filter(|r| r.cell.kind == kind && r.cell.coverage == coverage)
                .collect();
            let (precision, recall, f1) = aggregate(&group);
            let n = group.len() as f64;
            let distant = group.iter().fold((0.0, 0.0, 0.0), |acc, r| {
                (
                    acc.0 + r.annotation.precision / n,
                    acc.1 + r.annotation.recall / n,
                    acc.2 + r.annotation.f1 / n,
                )
            });
            rows.push(AblationRow {
                estimator: kind,
                coverage,
                seeds: group.len(),
                precision,
                recall,
                f1,
                distant,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedVerification {
    pub seed: u64,
    pub unbiasedness: UnbiasednessReport,
    pub rate: RateReport,
    pub probe: ProbeReport,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub seeds: Vec<SeedVerification>,
    pub passed: bool,
}

/// The three verification checks for each seed.
pub fn run_verify_suite(cfg: &VerifyConfig, seeds: &[u64]) -> Result<VerifySummary> {
    if seeds.is_empty() {
        return Err(Error::validation("verify suite needs at least one seed"));
    }
    cfg.validate()?;
    let priors = cfg.estimator_class_priors()?;
    let results = with_workers(|| {
        seeds
            .iter()
            .map(|&seed| {
                let model = cfg.fixed_model(seed)?;
                let unbiasedness = check_unbiasedness(cfg, &model, priors.as_ref(), seed)
                    .map_err(|e| e.at("unbiasedness"))?;
                let rate = check_consistency_rate(cfg, &model, seed).map_err(|e| e.at("rate"))?;
                let probe = overfit_probe_default(&cfg.probe, seed).map_err(|e| e.at("probe"))?;
                let passed = unbiasedness.passed && rate.passed && probe.passed;
                Ok(SeedVerification {
                    seed,
                    unbiasedness,
                    rate,
                    probe,
                    passed,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let passed = results.iter().all(|r| r.passed);
    Ok(VerifySummary {
        seeds: results,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            corpus: CorpusSpec {
                num_sentences: 200,
                dictionary_coverage: 0.5,
                ..CorpusSpec::default()
            },
            sgd: SgdSettings {
                epochs: 2,
                ..SgdSettings::default()
            },
            seeds: vec![7],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_validates_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), c);
        assert!(ExperimentConfig::from_json(r#"{"lamda": 0.3}"#).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            ExperimentConfig {
                lambda: 0.0,
                ..tiny()
            },
            ExperimentConfig {
                seeds: vec![],
                ..tiny()
            },
            ExperimentConfig {
                coverages: vec![0.4, 0.2],
                ..tiny()
            },
            ExperimentConfig {
                coverages: vec![0.2, 1.5],
                ..tiny()
            },
            ExperimentConfig {
                priors: PriorsConfig::Explicit {
                    values: vec![0.6, 0.5],
                },
                ..tiny()
            },
            ExperimentConfig {
                priors: PriorsConfig::Estimated { gamma: 0.5 },
                ..tiny()
            },
            ExperimentConfig {
                test_fraction: 1.0,
                ..tiny()
            },
        ];
        for c in bad {
            assert!(c.validate().unwrap_err().is_validation());
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (tr, te) = split_indices(100, 0.2, 4);
        assert_eq!(te.len(), 20);
        let mut all = [tr.clone(), te.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.2, 4), (tr, te));
        assert_ne!(split_indices(100, 0.2, 5).1, split_indices(100, 0.2, 4).1);
    }

    #[test]
    fn baseline_priors_follow_distant_labels() {
        let c = tiny();
        let (labeled, train, _) = prepare_corpus(&c, 7, 0.5).unwrap();
        let t = labeled.select(&train);
        let mpn = priors_for(&c, EstimatorKind::Mpn, &t).unwrap();
        let cmpu = priors_for(&c, EstimatorKind::Cmpu, &t).unwrap();
        assert!(mpn.positive_mass() < cmpu.positive_mass());
        assert_eq!(cmpu, gold_priors(&t).unwrap());
    }

    #[test]
    fn stage_errors_are_tagged() {
        let mut c = tiny();
        c.corpus.dictionary_coverage = 0.01;
        c.corpus.classes[0].forms.truncate(1);
        c.corpus.num_sentences = 1;
        c.corpus.templates = vec!["{LOC} rose".into()];
        let err = run_dsner(&c, None).unwrap_err().to_string();
        assert!(err.contains("label"), "{err}");
    }

    #[test]
    fn run_writes_outputs_and_repeats() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        run_dsner(&c, Some(dir.path())).unwrap();
        let names = [
            "eval.json",
            "eval.csv",
            "trace.csv",
            "model.bin",
            "manifest.json",
        ];
        let first: Vec<Vec<u8>> = names
            .iter()
            .map(|n| fs::read(dir.path().join(n)).unwrap())
            .collect();
        let again = ExperimentConfig::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(again, c);
        run_dsner(&again, Some(dir.path())).unwrap();
        for (n, bytes) in names.iter().zip(first) {
            assert_eq!(fs::read(dir.path().join(n)).unwrap(), bytes, "{n}");
        }
    }

    #[test]
    fn tampered_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = Manifest::new("train", &tiny()).unwrap();
        m.config.lambda = 0.7;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(ExperimentConfig::load(&path).unwrap_err().is_validation());
    }

    #[test]
    fn output_set_cleans_up_unless_committed() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut o = OutputSet::new(dir.path()).unwrap();
            o.write("a.txt", "x").unwrap();
        }
        assert!(!dir.path().join("a.txt").exists());
        let mut o = OutputSet::new(dir.path()).unwrap();
        o.write("a.txt", "x").unwrap();
        o.commit();
        assert!(dir.path().join("a.txt").exists());
    }

    #[test]
    fn single_lambda_sweep_is_valid_csv() {
        let c = ExperimentConfig {
            lambdas: vec![0.2],
            seeds: vec![1, 2],
            ..tiny()
        };
        let rows = run_lambda_sweep(&c).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].seeds, 2);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(
            csv.lines().nth(1).unwrap().split(',').count(),
            SWEEP_CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert!(run_verify_suite(&VerifyConfig::default(), &[])
            .unwrap_err()
            .is_validation());
    }
}

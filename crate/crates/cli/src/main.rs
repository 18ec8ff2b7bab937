//! `cmpu`: experiment runner for multi-class PU learning on distantly labeled text.
//!
//! Exit status: 0 success, 1 invalid input or configuration, 2 runtime
//! failure, 3 a verification check failed.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmpu::eval::EVAL_CSV_HEADER;
use cmpu::experiment::{
    ablation_csv, evaluate_model, gen_corpus, label_corpus, run_coverage_ablation, run_dsner,
    run_lambda_sweep, run_verify_suite, sweep_csv, ExperimentConfig, OutputSet,
};
use cmpu::{Error, EstimatorKind, Model, TaggedCorpus};

#[derive(Parser)]
#[command(
    name = "cmpu",
    version,
    about = "Constrained multi-class PU learning for distantly supervised NER"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON config, or a manifest written by an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "mpn|mpu|mpu-nn|cmpu")]
    estimator: Option<EstimatorKind>,
    #[arg(long, global = true, value_name = "X")]
    lambda: Option<f64>,
    /// Dictionary coverage in (0, 1].
    #[arg(long, global = true, value_name = "X")]
    coverage: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the template corpus (distant column all O).
    Gen,
    /// Distant-label a corpus with the coverage-limited dictionary.
    Label {
        /// CoNLL corpus to label; generated from the config when absent.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Generate, label, train and score on the held-out split.
    Train,
    /// Score a saved model.
    Eval {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// CoNLL corpus scored in full; the held-out split when absent.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// CMPU F1 across the configured λ values and seeds.
    SweepLambda,
    /// P/R/F1 per estimator across nested dictionary coverages.
    AblateCoverage,
    /// Unbiasedness, convergence-rate and overfitting checks.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Label { .. } => "label",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::SweepLambda => "sweep-lambda",
            Command::AblateCoverage => "ablate-coverage",
            Command::Verify => "verify",
        }
    }
}

enum Failure {
    Error(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(dir) = &common.out {
        config.out_dir = Some(dir.clone());
    }
    if let Some(k) = common.estimator {
        config.estimator = k;
    }
    if let Some(l) = common.lambda {
        config.lambda = l;
    }
    if let Some(c) = common.coverage {
        config.corpus.dictionary_coverage = c;
    }
    config.validate()?;
    Ok(config)
}

fn read_corpus(path: &Path, config: &ExperimentConfig) -> Result<TaggedCorpus, Error> {
    let names = config.corpus.class_names();
    TaggedCorpus::read_conll(
        BufReader::new(File::open(path)?),
        Some(&names),
        config.corpus.feature_dim,
        config.seeds[0],
    )
}

fn run(cli: Cli) -> Result<String, Failure> {
    let config = load_config(&cli.common)?;
    let dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    let name = cli.command.name();
    let mut out = OutputSet::new(&dir)?;
    let summary = match &cli.command {
        Command::Gen => {
            let corpus = gen_corpus(&config).map_err(|e| e.at("generate"))?;
            out.write("corpus.conll", corpus.to_conll_string())?;
            format!("{} sentences", corpus.sentences().len())
        }
        Command::Label { input } => {
            let corpus = match input {
                Some(p) => read_corpus(p, &config).map_err(|e| e.at("read"))?,
                None => gen_corpus(&config).map_err(|e| e.at("generate"))?,
            };
            let (labeled, quality) = label_corpus(&config, &corpus).map_err(|e| e.at("label"))?;
            out.write("labeled.conll", labeled.to_conll_string())?;
            out.write("annotation.json", quality.to_json() + "\n")?;
            out.write(
                "annotation.csv",
                format!("{EVAL_CSV_HEADER}\n{}\n", quality.csv_row()),
            )?;
            format!(
                "distant P {:.4} R {:.4} F1 {:.4}",
                quality.precision, quality.recall, quality.f1
            )
        }
        Command::Train => {
            // run_dsner writes its own files and cleans up after itself
            drop(out);
            let run = run_dsner(&config, Some(&dir))?;
            return Ok(format!(
                "{} F1 {:.4} (P {:.4} R {:.4}) -> {}",
                run.cell.kind,
                run.eval.f1,
                run.eval.precision,
                run.eval.recall,
                dir.display()
            ));
        }
        Command::Eval { model, input } => {
            let m = Model::read_from(BufReader::new(File::open(model).map_err(Error::from)?))
                .map_err(|e| e.at("load model"))?;
            let corpus = match input {
                Some(p) => Some(read_corpus(p, &config).map_err(|e| e.at("read"))?),
                None => None,
            };
            let result = evaluate_model(&config, &m, corpus.as_ref())?;
            out.write("eval.json", result.to_json() + "\n")?;
            out.write(
                "eval.csv",
                format!("{EVAL_CSV_HEADER}\n{}\n", result.csv_row()),
            )?;
            format!(
                "F1 {:.4} (P {:.4} R {:.4})",
                result.f1, result.precision, result.recall
            )
        }
        Command::SweepLambda => {
            let rows = run_lambda_sweep(&config)?;
            out.write("lambda_sweep.csv", sweep_csv(&rows))?;
            format!(
                "{} lambda values x {} seeds",
                rows.len(),
                config.seeds.len()
            )
        }
        Command::AblateCoverage => {
            let rows = run_coverage_ablation(&config)?;
            out.write("coverage_ablation.csv", ablation_csv(&rows))?;
            format!("{} (estimator, coverage) cells", rows.len())
        }
        Command::Verify => {
            let summary = run_verify_suite(&config.verify, &config.seeds)?;
            out.write_json("verify.json", &summary)?;
            out.write_manifest(name, &config)?;
            out.commit();
            if !summary.passed {
                return Err(Failure::Verification);
            }
            return Ok(format!(
                "all checks passed for {} seed(s)",
                summary.seeds.len()
            ));
        }
    };
    out.write_manifest(name, &config)?;
    out.commit();
    Ok(format!("{summary} -> {}", dir.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed; see verify.json");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

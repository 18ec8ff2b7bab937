use cmpu::experiment::{run_cells, run_verify_suite, Cell, ExperimentConfig};
use cmpu::verify::VerifyConfig;
use cmpu::EstimatorKind;

fn mean_f1(num_sentences: usize, coverage: f64, seeds: &[u64]) -> f64 {
    let mut config = ExperimentConfig::default();
    config.corpus.num_sentences = num_sentences;
    config.corpus.dictionary_coverage = coverage;
    let cells: Vec<Cell> = seeds
        .iter()
        .map(|&seed| Cell {
            seed,
            kind: EstimatorKind::Cmpu,
            lambda: config.lambda,
            coverage: config.corpus.dictionary_coverage,
        })
        .collect();
    let runs = run_cells(&config, &cells).unwrap();
    runs.iter().map(|r| r.eval.f1).sum::<f64>() / runs.len() as f64
}

// With the full dictionary the labeled positives are a sample of each class
// conditional. At low coverage they are not, and more data does not help.
#[test]
fn test_f1_grows_with_corpus_size() {
    let seeds = [1, 2];
    let f1: Vec<f64> = [500, 2000, 8000]
        .iter()
        .map(|&n| mean_f1(n, 1.0, &seeds))
        .collect();
    println!("CMPU test F1 at 500/2000/8000 sentences: {f1:?}");
    // noise band of two F1 points between neighbouring sizes
    assert!(f1[1] >= f1[0] - 0.02, "{f1:?}");
    assert!(f1[2] >= f1[1] - 0.02, "{f1:?}");
    assert!(f1[2] > f1[0], "{f1:?}");
}

#[test]
fn verify_suite_is_bit_exact_across_runs() {
    let mut cfg = VerifyConfig::default();
    cfg.probe.corpus.num_sentences = 300;
    cfg.probe.epochs = 2;
    let a = run_verify_suite(&cfg, &[7]).unwrap();
    let b = run_verify_suite(&cfg, &[7]).unwrap();
    let (sa, sb) = (&a.seeds[0], &b.seeds[0]);
    assert_eq!(sa.unbiasedness.z.to_bits(), sb.unbiasedness.z.to_bits());
    assert_eq!(
        sa.rate.result.loglog_slope.to_bits(),
        sb.rate.result.loglog_slope.to_bits()
    );
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert!(sa.unbiasedness.passed && sa.rate.passed);
}

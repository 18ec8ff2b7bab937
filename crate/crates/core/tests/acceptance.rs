//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cmpu::eval::score_tag_layers;
use cmpu::experiment::{
    run_coverage_ablation, run_dsner, run_lambda_sweep, sweep_csv, ExperimentConfig,
};
use cmpu::model::mae_loss;
use cmpu::risk::{
    cmpu_risk, mpu_naive_risk, mpu_nn_risk, risk_components, risk_gradient, risk_report,
    RiskComponents,
};
use cmpu::synth::{annotation_quality, build_dictionary, distant_label, CorpusSpec, LexiconClass};
use cmpu::verify::{
    check_consistency_rate, check_unbiasedness, overfit_probe_default, VerifyConfig,
};
use cmpu::{
    Architecture, Branch, ClassPriors, CmpuConfig, EstimatorKind, OneHotLabel, PuDataset, Sentence,
    SoftmaxModel, Tag, TaggedCorpus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

const SEED: u64 = 20240917;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut violations = 0;
    let mut max_seen = 0.0f64;
    for _ in 0..100_000 {
        let k = rng.random_range(2..=6usize);
        // normalized exponentials, raised to a random power so corners get visited
        let sharp = rng.random_range(1.0..20.0);
        let e: Vec<f64> = (0..k)
            .map(|_| Distribution::<f64>::sample(&Exp1, &mut rng).powf(sharp))
            .collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / z).collect();
        let y = OneHotLabel::new(rng.random_range(0..k), k).unwrap();
        let l = mae_loss(&p, &y).unwrap();
        let bound = 2.0 / k as f64;
        if !(0.0..=bound).contains(&l) {
            violations += 1;
        }
        max_seen = max_seen.max(l / bound);
    }
    // all mass on a wrong class
    let mut attained = true;
    for k in 2..=6 {
        let mut p = vec![0.0; k];
        p[k - 1] = 1.0;
        let y = OneHotLabel::new(0, k).unwrap();
        attained &= mae_loss(&p, &y).unwrap() == 2.0 / k as f64;
    }
    outcome(
        violations == 0 && attained,
        format!("{violations} out-of-range losses in 1e5 pairs, adversarial bound attained: {attained}, max l/bound {max_seen:.4}"),
    )
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Vec<f64> {
    (0..d)
        .map(|_| Distribution::<f64>::sample(&StandardNormal, rng) + shift)
        .collect::<Vec<f64>>()
}

struct FdInstance {
    model: SoftmaxModel<f64>,
    data: PuDataset<f64>,
    priors: ClassPriors<f64>,
    lambda: f64,
}

fn fd_instance(rng: &mut ChaCha8Rng, arch: Architecture) -> FdInstance {
    let d = rng.random_range(2..=6);
    let c = rng.random_range(1..=3);
    let mut model = SoftmaxModel::init(arch, d, c, rng.random()).unwrap();
    for p in model.params_mut() {
        *p *= 15.0;
    }
    let positives = (0..c)
        .map(|i| {
            let n = rng.random_range(2..=6);
            (0..n).map(|_| gaussian(rng, d, i as f64 + 1.0)).collect()
        })
        .collect();
    let unlabeled = (0..rng.random_range(3..=10))
        .map(|_| gaussian(rng, d, 0.0))
        .collect();
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum::<f64>() / rng.random_range(0.3..0.95);
    FdInstance {
        model,
        data: PuDataset::new(positives, unlabeled).unwrap(),
        priors: ClassPriors::new(raw.iter().map(|r| r / total).collect()).unwrap(),
        lambda: rng.random_range(0.05..2.0),
    }
}

fn total_at(inst: &FdInstance, params: &[f64], kind: EstimatorKind) -> (f64, Branch) {
    let m = SoftmaxModel::from_params(
        inst.model.architecture(),
        inst.model.input_dim(),
        inst.model.num_positive(),
        params.to_vec(),
    )
    .unwrap();
    let comps = risk_components(&m, &inst.data).unwrap();
    let r = risk_report(
        &comps,
        &inst.priors,
        kind,
        &CmpuConfig::new(inst.lambda).unwrap(),
    )
    .unwrap();
    (r.total, r.branch)
}

/// Distance of the current point from the estimator's branch boundary.
fn kink_margin(comps: &RiskComponents<f64>, inst: &FdInstance, kind: EstimatorKind) -> f64 {
    let a = comps.weighted_positive(&inst.priors);
    let b = comps.unlabeled_term(&inst.priors);
    match kind {
        EstimatorKind::MpuNn => b.abs(),
        EstimatorKind::Cmpu => (b - inst.lambda * a).abs(),
        _ => f64::INFINITY,
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    let mut ok = true;
    for arch in [Architecture::Linear, Architecture::Mlp { hidden: 5 }] {
        for kind in EstimatorKind::ALL {
            let (mut done, mut skipped, mut lower) = (0, 0, 0);
            let mut arch_worst = 0.0f64;
            while done < 100 {
                let inst = fd_instance(&mut rng, arch);
                let comps = risk_components(&inst.model, &inst.data).unwrap();
                if kink_margin(&comps, &inst, kind) < 1e-3 {
                    skipped += 1;
                    continue;
                }
                let cfg = CmpuConfig::new(inst.lambda).unwrap();
                let (grad, report) =
                    risk_gradient(&inst.model, &inst.data, &inst.priors, kind, &cfg).unwrap();
                let base = inst.model.params().to_vec();
                let mut fd = vec![0.0; base.len()];
                let mut crossed = false;
                for j in 0..base.len() {
                    let mut p = base.clone();
                    p[j] = base[j] + h;
                    let (up, bu) = total_at(&inst, &p, kind);
                    p[j] = base[j] - h;
                    let (down, bd) = total_at(&inst, &p, kind);
                    crossed |= bu != report.branch || bd != report.branch;
                    fd[j] = (up - down) / (2.0 * h);
                }
                if crossed {
                    skipped += 1;
                    continue;
                }
                let diff: f64 = grad
                    .values()
                    .iter()
                    .zip(&fd)
                    .map(|(g, f)| (g - f).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let norm: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
                let rel = diff / norm.max(1e-12);
                arch_worst = arch_worst.max(rel);
                if report.branch == Branch::Lower {
                    lower += 1;
                }
                done += 1;
            }
            worst = worst.max(arch_worst);
            ok &= arch_worst < 1e-5;
            let a = match arch {
                Architecture::Linear => "linear",
                Architecture::Mlp { .. } => "mlp",
            };
            lines.push(format!(
                "{a}/{kind} max {arch_worst:.1e} ({lower} lower, {skipped} near kinks skipped)"
            ));
        }
    }
    outcome(
        ok,
        format!(
            "worst normwise relative error {worst:.2e}; {}",
            lines.join("; ")
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut failures = 0;
    let mut lower = 0;
    for _ in 0..10_000 {
        let c = rng.random_range(1..=5);
        let bound = 2.0 / (c + 1) as f64;
        let comps = RiskComponents {
            rp_plus: (0..c).map(|_| rng.random_range(0.0..bound)).collect(),
            rp_minus: (0..c).map(|_| rng.random_range(0.0..bound)).collect(),
            ru_minus: rng.random_range(0.0..bound),
        };
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum::<f64>() / rng.random_range(0.1..0.99);
        let priors = ClassPriors::new(raw.iter().map(|r| r / total).collect()).unwrap();
        let lambda = rng.random_range(0.01..3.0);
        let cfg = CmpuConfig::new(lambda).unwrap();
        let a = comps.weighted_positive(&priors);
        let b = comps.unlabeled_term(&priors);
        let cm = cmpu_risk(&comps, &priors, &cfg).unwrap();
        let nn = mpu_nn_risk(&comps, &priors).unwrap();
        let naive = mpu_naive_risk(&comps, &priors).unwrap();
        let tau = b / a;
        let holds = cm.total >= a + lambda * a
            && cm.total >= nn.total
            && nn.total >= naive.total
            && (cm.branch == Branch::Lower) == (tau < lambda)
            && cm.tau == Some(tau);
        if !holds {
            failures += 1;
        }
        if cm.branch == Branch::Lower {
            lower += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{failures} failures in 1e4 component sets ({lower} on the lower branch)"),
    )
}

fn criterion_4() -> Outcome {
    let cfg = VerifyConfig::default();
    let model = cfg.fixed_model(SEED).unwrap();
    let r = check_unbiasedness(&cfg, &model, None, SEED).unwrap();
    outcome(
        r.z.abs() < 3.0 && r.trials == 10_000 && r.oracle.samples_per_class >= 1_000_000,
        format!(
            "z = {:.3} (mean {:.5}, oracle {:.5}, K = {})",
            r.z, r.mean, r.oracle.risk, r.trials
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = VerifyConfig::default();
    let model = cfg.fixed_model(SEED).unwrap();
    let r = check_consistency_rate(&cfg, &model, SEED).unwrap();
    let s = r.result.loglog_slope;
    outcome(
        (-0.65..=-0.35).contains(&s)
            && r.result.sample_sizes == [100, 400, 1600, 6400]
            && r.trials == 200,
        format!(
            "slope {s:.3}, 95% CI ({:.3}, {:.3}), rms {:?}",
            r.result.slope_ci.0, r.result.slope_ci.1, r.result.rms_errors
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = VerifyConfig::default();
    let r = overfit_probe_default(&cfg.probe, SEED).unwrap();
    outcome(
        r.naive_goes_negative && r.cmpu_bound_violations == 0 && r.batches > 0,
        format!(
            "naive min B {:.4} ({} of {} batches negative), CMPU bound violations {}, CMPU lower-branch batches {}",
            r.naive_min_unlabeled_term,
            r.naive_negative_batches,
            r.batches,
            r.cmpu_bound_violations,
            r.cmpu_lower_branch_batches
        ),
    )
}

fn criterion_7() -> Outcome {
    let config = ExperimentConfig {
        estimators: vec![EstimatorKind::Mpn, EstimatorKind::Cmpu],
        coverages: vec![0.2, 1.0],
        seeds: vec![1, 2, 3, 4, 5],
        ..ExperimentConfig::default()
    };
    assert_eq!(config.corpus.num_sentences, 3000);
    assert_eq!(config.corpus.classes.len(), 2);
    let rows = run_coverage_ablation(&config).unwrap();
    let get = |kind, cov: f64| {
        rows.iter()
            .find(|r| r.estimator == kind && r.coverage == cov)
            .unwrap()
    };
    let (b02, c02) = (get(EstimatorKind::Mpn, 0.2), get(EstimatorKind::Cmpu, 0.2));
    let (b10, c10) = (get(EstimatorKind::Mpn, 1.0), get(EstimatorKind::Cmpu, 1.0));
    let f1_gap = 100.0 * (c02.f1.0 - b02.f1.0);
    let recall_gap = 100.0 * (c02.recall.0 - b02.recall.0);
    let full_gap = 100.0 * (c10.f1.0 - b10.f1.0);
    outcome(
        f1_gap >= 10.0 && recall_gap >= 10.0 && full_gap.abs() < 3.0,
        format!(
            "rho 0.2: F1 {:.1} vs {:.1} (gap {f1_gap:.1}), recall {:.1} vs {:.1} (gap {recall_gap:.1}); rho 1.0: F1 {:.1} vs {:.1} (gap {full_gap:.1})",
            100.0 * c02.f1.0,
            100.0 * b02.f1.0,
            100.0 * c02.recall.0,
            100.0 * b02.recall.0,
            100.0 * c10.f1.0,
            100.0 * b10.f1.0
        ),
    )
}

fn criterion_8() -> Outcome {
    let config = ExperimentConfig {
        lambdas: vec![0.1, 0.2, 2.0],
        seeds: vec![1, 2, 3, 4, 5],
        ..ExperimentConfig::default()
    };
    let rows = run_lambda_sweep(&config).unwrap();
    let f1 = |l: f64| rows.iter().find(|r| r.lambda == l).unwrap().f1.0;
    let best = f1(0.1).max(f1(0.2));
    outcome(
        f1(2.0) <= best,
        format!(
            "mean F1 at lambda 0.1 {:.2}, 0.2 {:.2}, 2.0 {:.2}",
            100.0 * f1(0.1),
            100.0 * f1(0.2),
            100.0 * f1(2.0)
        ),
    )
}

fn criterion_9() -> Outcome {
    let names = vec!["PER".to_string(), "LOC".to_string()];
    let tags = |s: &str| -> Vec<Tag> {
        s.split(' ')
            .map(|t| Tag::parse(t, &names).unwrap())
            .collect()
    };
    let tokens: Vec<String> =
        "John Harris arrived at Texas Medical Center in Houston this afternoon"
            .split(' ')
            .map(String::from)
            .collect();
    let gold = tags("B-PER I-PER O O B-LOC I-LOC I-LOC O B-LOC O O");
    let corpus = TaggedCorpus::new(
        names.clone(),
        vec![Sentence {
            distant: vec![Tag::O; tokens.len()],
            tokens,
            gold: gold.clone(),
        }],
        8,
        0,
    )
    .unwrap();
    // the dictionary knows the person and one of the two locations
    let spec = CorpusSpec {
        classes: vec![
            LexiconClass {
                name: "PER".into(),
                forms: vec!["John Harris".into()],
            },
            LexiconClass {
                name: "LOC".into(),
                forms: vec!["Houston".into(), "Texas Medical Center".into()],
            },
        ],
        dictionary_coverage: 0.5,
        ..CorpusSpec::default()
    };
    let labeled = distant_label(&corpus, &build_dictionary(&spec)).unwrap();
    let q = annotation_quality(&labeled).unwrap();
    let direct = score_tag_layers(
        &[gold],
        &[tags("B-PER I-PER O O O O O O B-LOC O O")],
        &names,
    )
    .unwrap();
    let exact = |r: &cmpu::EvalResult| {
        r.precision == 1.0 && r.recall == 2.0 / 3.0 && r.f1 == 0.8 && r.token_accuracy == 8.0 / 11.0
    };
    outcome(
        exact(&q) && exact(&direct) && q == direct,
        format!(
            "P {} R {} F1 {} token accuracy {}",
            q.precision, q.recall, q.f1, q.token_accuracy
        ),
    )
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let config = ExperimentConfig {
        seeds: vec![3],
        lambdas: vec![0.2, 1.0],
        ..ExperimentConfig::default()
    };
    run_dsner(&config, Some(&a)).unwrap();
    let replay = ExperimentConfig::load(&a.join("manifest.json")).unwrap();
    run_dsner(&replay, Some(&b)).unwrap();
    let files = [
        "eval.json",
        "eval.csv",
        "trace.csv",
        "model.bin",
        "manifest.json",
    ];
    let same_files = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
        .count();
    let sweep_same = sweep_csv(&run_lambda_sweep(&config).unwrap())
        == sweep_csv(&run_lambda_sweep(&replay).unwrap());
    outcome(
        same_files == files.len() && sweep_same,
        format!(
            "{same_files}/{} run files identical, sweep CSV identical: {sweep_same}",
            files.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("MAE loss bound", Duration::from_secs(5), criterion_1),
        (
            "gradients vs finite differences",
            Duration::from_secs(30),
            criterion_2,
        ),
        ("estimator algebra", Duration::from_secs(5), criterion_3),
        (
            "unbiasedness z-score",
            Duration::from_secs(120),
            criterion_4,
        ),
        (
            "estimation error rate",
            Duration::from_secs(300),
            criterion_5,
        ),
        ("overfit probe", Duration::from_secs(120), criterion_6),
        (
            "DS-NER coverage trend",
            Duration::from_secs(600),
            criterion_7,
        ),
        ("lambda sweep shape", Duration::from_secs(600), criterion_8),
        (
            "evaluation golden values",
            Duration::from_secs(5),
            criterion_9,
        ),
        (
            "manifest reproducibility",
            Duration::from_secs(120),
            criterion_10,
        ),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = o.passed && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} [{:.1}s of {}s]{}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " over time budget" }
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

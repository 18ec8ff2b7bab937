//! Strict entity-level evaluation.
//!
//! A predicted entity counts only if sentence, boundaries and type all match a
//! gold entity. Overall scores are micro-averaged from pooled counts.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::TaggedCorpus;
use crate::error::{Error, Result};
use crate::model::SoftmaxModel;
use crate::scalar::Scalar;
use crate::tagging::{decode_spans_from_bio, decode_spans_from_classes, Span, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
    /// No spans of this class were predicted; precision is reported as 0.
    pub zero_prediction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token_accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub repairs: usize,
    #[serde(flatten)]
    pub counts: Counts,
    pub zero_prediction: bool,
    pub num_tokens: usize,
}

pub const EVAL_CSV_HEADER: &str =
    "precision,recall,f1,token_accuracy,tp,fp,fn,repairs,zero_prediction";

impl EvalResult {
    /// One CSV row matching [`EVAL_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.precision,
            self.recall,
            self.f1,
            self.token_accuracy,
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.repairs,
            self.zero_prediction
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("EvalResult serializes")
    }
}

fn prf(c: Counts) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    // equals 2PR/(P+R) but stays exact for rational counts
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    (p, r, f1)
}

/// Score predicted spans against gold spans plus collapsed token classes.
///
/// `names[k]` names class `k + 1`. Token class slices must be aligned.
pub fn score(
    pred_spans: &[Span],
    gold_spans: &[Span],
    pred_token_classes: &[usize],
    gold_token_classes: &[usize],
    names: &[String],
) -> Result<EvalResult> {
    if pred_token_classes.len() != gold_token_classes.len() {
        return Err(Error::DimensionMismatch {
            expected: gold_token_classes.len(),
            got: pred_token_classes.len(),
        });
    }
    let c = names.len();
    let mut per = vec![Counts::default(); c];
    let gold: HashSet<&Span> = gold_spans.iter().collect();
    let pred: HashSet<&Span> = pred_spans.iter().collect();
    for s in &pred {
        check_class(s.class, c)?;
        if gold.contains(s) {
            per[s.class - 1].tp += 1;
        } else {
            per[s.class - 1].fp += 1;
        }
    }
    for s in &gold {
        check_class(s.class, c)?;
        if !pred.contains(s) {
            per[s.class - 1].fn_ += 1;
        }
    }

    let mut total = Counts::default();
    let per_class = per
        .iter()
        .zip(names)
        .map(|(&counts, name)| {
            total.add(counts);
            let (precision, recall, f1) = prf(counts);
            ClassScores {
                class: name.clone(),
                precision,
                recall,
                f1,
                counts,
                zero_prediction: counts.tp + counts.fp == 0,
            }
        })
        .collect();
    let (precision, recall, f1) = prf(total);

    let num_tokens = gold_token_classes.len();
    let correct = pred_token_classes
        .iter()
        .zip(gold_token_classes)
        .filter(|(p, g)| p == g)
        .count();
    let token_accuracy = if num_tokens == 0 {
        0.0
    } else {
        correct as f64 / num_tokens as f64
    };

    Ok(EvalResult {
        precision,
        recall,
        f1,
        token_accuracy,
        per_class,
        repairs: 0,
        counts: total,
        zero_prediction: total.tp + total.fp == 0,
        num_tokens,
    })
}

fn check_class(class: usize, c: usize) -> Result<()> {
    if class == 0 || class > c {
        return Err(Error::validation(format!(
            "span class {class} outside 1..={c}"
        )));
    }
    Ok(())
}

/// Score one BIO layer against another (e.g. distant labels against gold).
/// Repairs are those made while decoding the predicted layer.
pub fn score_tag_layers(
    gold: &[Vec<Tag>],
    pred: &[Vec<Tag>],
    names: &[String],
) -> Result<EvalResult> {
    if gold.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    let mut gold_spans = Vec::new();
    let mut pred_spans = Vec::new();
    let mut repairs = 0;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                got: p.len(),
            });
        }
        gold_spans.extend(decode_spans_from_bio(i, g).spans);
        let d = decode_spans_from_bio(i, p);
        repairs += d.repairs;
        pred_spans.extend(d.spans);
    }
    let gc: Vec<usize> = gold.iter().flatten().map(|t| t.class()).collect();
    let pc: Vec<usize> = pred.iter().flatten().map(|t| t.class()).collect();
    let mut result = score(&pred_spans, &gold_spans, &pc, &gc, names)?;
    result.repairs = repairs;
    Ok(result)
}

/// Score per-token class predictions against gold BIO tags. Predicted entities
/// are maximal runs of one class.
pub fn score_predictions(
    gold: &[Vec<Tag>],
    pred_classes: &[Vec<usize>],
    names: &[String],
) -> Result<EvalResult> {
    if gold.len() != pred_classes.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: pred_classes.len(),
        });
    }
    let mut gold_spans = Vec::new();
    let mut pred_spans = Vec::new();
    for (i, (g, p)) in gold.iter().zip(pred_classes).enumerate() {
        if g.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                got: p.len(),
            });
        }
        gold_spans.extend(decode_spans_from_bio(i, g).spans);
        pred_spans.extend(decode_spans_from_classes(i, p));
    }
    let gc: Vec<usize> = gold.iter().flatten().map(|t| t.class()).collect();
    let pc: Vec<usize> = pred_classes.iter().flatten().copied().collect();
    score(&pred_spans, &gold_spans, &pc, &gc, names)
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Argmax class for every token of the selected sentences.
pub fn predict_token_classes<T: Scalar>(
    model: &SoftmaxModel<T>,
    corpus: &TaggedCorpus,
    sentences: &[usize],
) -> Result<Vec<Vec<usize>>> {
    let featurizer = corpus.featurizer();
    sentences
        .iter()
        .map(|&i| {
            featurizer
                .sentence_features::<T>(&corpus.sentences()[i].tokens)
                .iter()
                .map(|x| model.forward(x).map(|p| argmax(&p)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names() -> Vec<String> {
        vec!["PER".into(), "LOC".into()]
    }

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace()
            .map(|t| Tag::parse(t, &names()).unwrap())
            .collect()
    }

    #[test]
    fn partial_dictionary_scores() {
        let gold = vec![tags("B-PER I-PER O O B-LOC I-LOC I-LOC O B-LOC O O")];
        let distant = vec![tags("B-PER I-PER O O O O O O B-LOC O O")];
        let r = score_tag_layers(&gold, &distant, &names()).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 2.0 / 3.0);
        assert_eq!(r.f1, 0.8);
        assert_eq!(r.token_accuracy, 8.0 / 11.0);
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (2, 0, 1));
        assert_eq!(r.per_class[0].recall, 1.0);
        assert_eq!(r.per_class[1].recall, 0.5);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![tags("B-PER I-PER O B-LOC")];
        let r = score_tag_layers(&gold, &gold, &names()).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.f1, r.token_accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );

        let r = score_predictions(&gold, &[vec![0, 0, 0, 0]], &names()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!(r.zero_prediction);
        assert!(r.per_class.iter().all(|c| c.zero_prediction));
        assert_eq!(r.token_accuracy, 0.25);
    }

    #[test]
    fn class_runs_merge_adjacent_gold_entities() {
        // two adjacent gold LOC entities are one predicted run: 0 tp
        let gold = vec![tags("B-LOC B-LOC O")];
        let r = score_predictions(&gold, &[vec![2, 2, 0]], &names()).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (0, 1, 2));
        assert_eq!(r.token_accuracy, 1.0);
    }

    #[test]
    fn json_keys_are_fixed() {
        let gold = vec![tags("B-PER O")];
        let r = score_tag_layers(&gold, &gold, &names()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "precision",
            "recall",
            "f1",
            "token_accuracy",
            "per_class",
            "repairs",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(
            r.csv_row().split(',').count(),
            EVAL_CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    fn span_sets() -> impl Strategy<Value = (Vec<Span>, Vec<Span>)> {
        let span = (0usize..4, 0usize..20, 0usize..3, 1usize..3).prop_map(|(s, a, l, c)| Span {
            sentence: s,
            start: a,
            end: a + l,
            class: c,
        });
        (
            prop::collection::hash_set(span.clone(), 0..12),
            prop::collection::hash_set(span, 0..12),
        )
            .prop_map(|(a, b)| (a.into_iter().collect(), b.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn self_score_is_perfect((x, _) in span_sets()) {
            prop_assume!(!x.is_empty());
            let r = score(&x, &x, &[], &[], &names()).unwrap();
            prop_assert_eq!(r.precision, 1.0);
            prop_assert_eq!(r.recall, 1.0);
        }

        #[test]
        fn micro_f1_from_pooled_counts((pred, gold) in span_sets()) {
            let r = score(&pred, &gold, &[], &[], &names()).unwrap();
            let expect = if r.precision + r.recall > 0.0 {
                2.0 * r.precision * r.recall / (r.precision + r.recall)
            } else {
                0.0
            };
            prop_assert!((r.f1 - expect).abs() < 1e-12);
            let tp: usize = r.per_class.iter().map(|c| c.counts.tp).sum();
            prop_assert_eq!(tp, r.counts.tp);
        }
    }
}

//! Synthetic data: Gaussian mixtures with known ground truth, and a template
//! corpus with dictionary-based distant labels.

pub mod mixture;
pub mod text;

pub use mixture::{
    sample_class_conditionals, sample_labeled, sample_pu_dataset, sample_pu_dataset_with,
    LabelingMode, MixtureSpec, SampledPu,
};
pub use text::{
    annotation_quality, build_dictionary, build_dictionary_at, corpus_to_pu, default_lexicon,
    distant_label, generate_corpus, match_sentence, CorpusSpec, Dictionary, LexiconClass,
};

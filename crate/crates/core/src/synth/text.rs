//! Template corpus generator and dictionary-based distant labeling.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureCache, Sentence, TaggedCorpus};
use crate::error::{Error, Result};
use crate::eval::{score_tag_layers, EvalResult};
use crate::pu::PuDataset;
use crate::scalar::Scalar;
use crate::tagging::Tag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconClass {
    pub name: String,
    /// Surface forms, whitespace-separated tokens, in dictionary order.
    pub forms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub classes: Vec<LexiconClass>,
    /// Whitespace-tokenized skeletons; `{NAME}` is a slot for an entity of class `NAME`.
    pub templates: Vec<String>,
    pub num_sentences: usize,
    pub dictionary_coverage: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Slot(usize),
}

pub const DEFAULT_NUM_SENTENCES: usize = 3000;
pub const DEFAULT_LEXICON_SIZE: usize = 60;
pub const DEFAULT_FEATURE_DIM: usize = 256;
pub const DEFAULT_COVERAGE: f64 = 0.2;
const LEXICON_SEED: u64 = 0x5eed_1e71;

const DEFAULT_TEMPLATES: &[&str] = &[
    "{PER} arrived at {LOC} this afternoon",
    "yesterday {PER} said that the plan had failed",
    "mr {PER} met {PER} in {LOC}",
    "the report was written by dr {PER}",
    "{PER} and {PER} visited {LOC} last week",
    "according to {PER} , prices rose in {LOC}",
    "officials in {LOC} confirmed the decision",
    "the museum of {LOC} reopened today",
    "she moved from {LOC} to {LOC} in may",
    "president {PER} spoke to reporters",
    "the weather was cold and wet",
    "we stayed at home all day",
    "{PER} told the court he was innocent",
    "flights to {LOC} were cancelled",
    "the company opened an office near {LOC}",
    "{PER} , a teacher from {LOC} , won the prize",
    "sales fell sharply last quarter",
    "the minister thanked {PER} for the help",
    "heavy rain hit {LOC} on monday",
    "{PER} was born in {LOC}",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "ta", "vo", "sel", "dar", "ni", "po", "gra", "bel", "tor", "quin",
    "sa", "mu", "fen", "ri", "zo", "lan", "cor", "hel", "vi", "ot", "bru", "nes", "pa", "dre",
    "ul", "mak",
];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(2..=3);
    let w: String = (0..n)
        .map(|_| *SYLLABLES.choose(rng).expect("syllables"))
        .collect();
    capitalize(&w)
}

/// Lexicons of pseudo-word entity names. No token is shared between forms.
pub fn default_lexicon(size: usize) -> Vec<LexiconClass> {
    let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
    let mut used = std::collections::HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if used.insert(w.clone()) {
            return w;
        }
    };
    // people: mostly two tokens; places: one or two
    let per = (0..size)
        .map(|_| {
            let len = if rng.random_bool(0.8) { 2 } else { 1 };
            (0..len)
                .map(|_| fresh(&mut rng))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let loc = (0..size)
        .map(|_| {
            let len = if rng.random_bool(0.35) { 2 } else { 1 };
            (0..len)
                .map(|_| fresh(&mut rng))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    vec![
        LexiconClass {
            name: "PER".into(),
            forms: per,
        },
        LexiconClass {
            name: "LOC".into(),
            forms: loc,
        },
    ]
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: default_lexicon(DEFAULT_LEXICON_SIZE),
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            num_sentences: DEFAULT_NUM_SENTENCES,
            dictionary_coverage: DEFAULT_COVERAGE,
            feature_dim: DEFAULT_FEATURE_DIM,
            seed: 1,
        }
    }
}

fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl CorpusSpec {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    fn parse_templates(&self) -> Result<Vec<Vec<Piece>>> {
        let names = self.class_names();
        self.templates
            .iter()
            .map(|t| {
                let pieces: Vec<Piece> = t
                    .split_whitespace()
                    .map(
                        |w| match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                            Some(name) => names
                                .iter()
                                .position(|n| n == name)
                                .map(|i| Piece::Slot(i + 1))
                                .ok_or_else(|| {
                                    Error::validation(format!(
                                        "template {t:?} names unknown class {name:?}"
                                    ))
                                }),
                            None => Ok(Piece::Word(w.to_string())),
                        },
                    )
                    .collect::<Result<_>>()?;
                if pieces.is_empty() {
                    return Err(Error::validation("empty template"));
                }
                Ok(pieces)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::validation(
                "corpus spec needs at least one entity class",
            ));
        }
        if self.templates.is_empty() {
            return Err(Error::validation("corpus spec needs at least one template"));
        }
        if !(self.dictionary_coverage > 0.0 && self.dictionary_coverage <= 1.0) {
            return Err(Error::validation(format!(
                "dictionary coverage must be in (0, 1], got {}",
                self.dictionary_coverage
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim must be >= 1"));
        }
        let templates = self.parse_templates()?;
        for piece in templates.iter().flatten() {
            if let Piece::Slot(c) = piece {
                let class = &self.classes[c - 1];
                if class
                    .forms
                    .iter()
                    .all(|f| f.split_whitespace().next().is_none())
                {
                    return Err(Error::validation(format!(
                        "template references class {} with an empty lexicon",
                        class.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Instantiate templates with lexicon entries; gold tags follow slot positions
/// and the distant layer starts all `O`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<TaggedCorpus> {
    spec.validate()?;
    let templates = spec.parse_templates()?;
    let lexicon: Vec<Vec<Vec<String>>> = spec
        .classes
        .iter()
        .map(|c| {
            c.forms
                .iter()
                .map(|f| tokenize(f))
                .filter(|f| !f.is_empty())
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sentences = Vec::with_capacity(spec.num_sentences);
    for _ in 0..spec.num_sentences {
        let template = templates.choose(&mut rng).expect("validated nonempty");
        let mut s = Sentence {
            tokens: Vec::new(),
            gold: Vec::new(),
            distant: Vec::new(),
        };
        for piece in template {
            match piece {
                Piece::Word(w) => {
                    s.tokens.push(w.clone());
                    s.gold.push(Tag::O);
                }
                Piece::Slot(c) => {
                    let form = lexicon[c - 1].choose(&mut rng).expect("validated nonempty");
                    for (k, tok) in form.iter().enumerate() {
                        s.tokens.push(tok.clone());
                        s.gold.push(if k == 0 { Tag::B(*c) } else { Tag::I(*c) });
                    }
                }
            }
        }
        s.distant = vec![Tag::O; s.tokens.len()];
        sentences.push(s);
    }
    TaggedCorpus::new(spec.class_names(), sentences, spec.feature_dim, spec.seed)
}

/// Per-class dictionaries of token sequences; `forms[k]` belongs to class `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dictionary {
    pub forms: Vec<Vec<Vec<String>>>,
}

impl Dictionary {
    pub fn empty(num_classes: usize) -> Self {
        Self {
            forms: vec![Vec::new(); num_classes],
        }
    }

    pub fn len(&self) -> usize {
        self.forms.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of leading entries kept at coverage `rho`: `⌈rho · n⌉`.
pub fn prefix_len(rho: f64, n: usize) -> usize {
    // tolerance absorbs products such as 0.7 * 10 = 7.000000000000001
    let raw = rho * n as f64 - 1e-9;
    (raw.ceil().max(0.0) as usize).min(n)
}

/// First `⌈ρ · |lexicon_c|⌉` entries of each class, at the spec's coverage.
pub fn build_dictionary(spec: &CorpusSpec) -> Dictionary {
    build_dictionary_at(spec, spec.dictionary_coverage)
}

pub fn build_dictionary_at(spec: &CorpusSpec, rho: f64) -> Dictionary {
    Dictionary {
        forms: spec
            .classes
            .iter()
            .map(|c| {
                let k = prefix_len(rho, c.forms.len());
                c.forms[..k]
                    .iter()
                    .map(|f| tokenize(f))
                    .filter(|f| !f.is_empty())
                    .collect()
            })
            .collect(),
    }
}

/// Label one sentence by exact token-sequence matching.
///
/// All candidate matches are collected, then accepted greedily longest first,
/// ties broken by leftmost start, skipping any that overlap an accepted
/// match. A form listed under several classes goes to the lowest class.
pub fn match_sentence(tokens: &[String], dict: &Dictionary) -> Vec<Tag> {
    let mut lookup: HashMap<&[String], usize> = HashMap::new();
    let mut max_len = 0;
    for (k, forms) in dict.forms.iter().enumerate() {
        for f in forms {
            lookup.entry(f.as_slice()).or_insert(k + 1);
            max_len = max_len.max(f.len());
        }
    }
    let mut candidates = Vec::new();
    for start in 0..tokens.len() {
        for len in 1..=max_len.min(tokens.len() - start) {
            if let Some(&c) = lookup.get(&tokens[start..start + len]) {
                candidates.push((len, start, c));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut taken = vec![false; tokens.len()];
    let mut tags = vec![Tag::O; tokens.len()];
    for (len, start, c) in candidates {
        if taken[start..start + len].iter().any(|&t| t) {
            continue;
        }
        for (k, slot) in (start..start + len).enumerate() {
            taken[slot] = true;
            tags[slot] = if k == 0 { Tag::B(c) } else { Tag::I(c) };
        }
    }
    tags
}

pub fn distant_label(corpus: &TaggedCorpus, dict: &Dictionary) -> Result<TaggedCorpus> {
    let distant = corpus
        .sentences()
        .iter()
        .map(|s| match_sentence(&s.tokens, dict))
        .collect();
    corpus.with_distant(distant)
}

/// Distantly labeled tokens become class positives; `O` tokens form the unlabeled pool.
pub fn corpus_to_pu<T: Scalar>(corpus: &TaggedCorpus) -> Result<PuDataset<T>> {
    let c = corpus.num_classes();
    let mut positives: Vec<Vec<Vec<T>>> = vec![Vec::new(); c];
    let mut unlabeled = Vec::new();
    let mut cache = FeatureCache::new(corpus.featurizer());
    for s in corpus.sentences() {
        for (x, tag) in cache
            .sentence_features::<T>(&s.tokens)
            .into_iter()
            .zip(&s.distant)
        {
            match tag.class() {
                0 => unlabeled.push(x),
                k => positives[k - 1].push(x),
            }
        }
    }
    let missing: Vec<&str> = positives
        .iter()
        .zip(corpus.class_names())
        .filter(|(p, _)| p.is_empty())
        .map(|(_, n)| n.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "no distantly labeled tokens for class(es): {}",
            missing.join(", ")
        )));
    }
    PuDataset::new(positives, unlabeled)
}

/// Entity-level quality of the distant layer, scored against gold.
pub fn annotation_quality(corpus: &TaggedCorpus) -> Result<EvalResult> {
    score_tag_layers(
        &corpus.gold_layer(),
        &corpus.distant_layer(),
        corpus.class_names(),
    )
}

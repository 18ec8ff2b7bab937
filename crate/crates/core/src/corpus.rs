//! Tagged corpora, token featurization and the CoNLL-style file format.
//!
//! File layout: one token per line as `token<TAB>gold<TAB>distant`, a blank
//! line after every sentence, UTF-8 with LF line endings.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagging::{is_valid_bio, Tag};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub gold: Vec<Tag>,
    pub distant: Vec<Tag>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

const SENTENCE_START: &str = "<s>";
const SENTENCE_END: &str = "</s>";

/// Fixed random projection of a token and its ±1 neighbours into `dim` dimensions.
///
/// Every `(role, token)` pair maps to a standard normal vector drawn from a
/// generator seeded by a hash of the pair and `seed`. Unit-variance entries
/// keep per-token directions large next to the output bias, which MAE
/// training needs to escape the all-`O` plateau. A token's feature is its own vector plus the context vectors of
/// its left and right neighbours (sentence boundaries use marker tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Role {
    Token,
    Context,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, init: u64) -> u64 {
    let mut h = init ^ 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Featurizer {
    fn vector(&self, role: Role, token: &str) -> Vec<f64> {
        let tag = match role {
            Role::Token => 0u8,
            Role::Context => 1u8,
        };
        let h = fnv1a(std::iter::once(tag).chain(token.bytes()), self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..self.dim)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>()
    }

    pub fn sentence_features<T: Scalar>(&self, tokens: &[String]) -> Vec<Vec<T>> {
        let mut cache = FeatureCache::new(*self);
        cache.sentence_features(tokens)
    }
}

/// Memoizes per-token projection vectors across sentences.
pub struct FeatureCache {
    featurizer: Featurizer,
    vectors: HashMap<(Role, String), Vec<f64>>,
}

impl FeatureCache {
    pub fn new(featurizer: Featurizer) -> Self {
        Self {
            featurizer,
            vectors: HashMap::new(),
        }
    }

    fn get(&mut self, role: Role, token: &str) -> &[f64] {
        let f = self.featurizer;
        self.vectors
            .entry((role, token.to_string()))
            .or_insert_with(|| f.vector(role, token))
    }

    pub fn sentence_features<T: Scalar>(&mut self, tokens: &[String]) -> Vec<Vec<T>> {
        let n = tokens.len();
        (0..n)
            .map(|i| {
                let left = if i == 0 {
                    SENTENCE_START
                } else {
                    &tokens[i - 1]
                };
                let right = if i + 1 == n {
                    SENTENCE_END
                } else {
                    &tokens[i + 1]
                };
                let mut x = self.get(Role::Token, &tokens[i]).to_vec();
                for (a, b) in x.iter_mut().zip(self.get(Role::Context, left)) {
                    *a += b;
                }
                for (a, b) in x.iter_mut().zip(self.get(Role::Context, right)) {
                    *a += b;
                }
                x.into_iter().map(T::of).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedCorpus {
    class_names: Vec<String>,
    sentences: Vec<Sentence>,
    featurizer: Featurizer,
}

impl TaggedCorpus {
    pub fn new(
        class_names: Vec<String>,
        sentences: Vec<Sentence>,
        feature_dim: usize,
        feature_seed: u64,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::validation("corpus needs at least one entity type"));
        }
        if feature_dim == 0 {
            return Err(Error::validation("feature dimension must be >= 1"));
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.gold.len() != s.len() || s.distant.len() != s.len() {
                return Err(Error::validation(format!(
                    "sentence {i}: label layers do not match token count"
                )));
            }
            for tag in s.gold.iter().chain(&s.distant) {
                if tag.class() > class_names.len() {
                    return Err(Error::validation(format!(
                        "sentence {i}: tag class out of range"
                    )));
                }
            }
            if !is_valid_bio(&s.gold) || !is_valid_bio(&s.distant) {
                return Err(Error::validation(format!(
                    "sentence {i}: invalid BIO sequence"
                )));
            }
        }
        Ok(Self {
            class_names,
            sentences,
            featurizer: Featurizer {
                dim: feature_dim,
                seed: feature_seed,
            },
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn featurizer(&self) -> Featurizer {
        self.featurizer
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Same corpus with the distant layer replaced.
    pub fn with_distant(&self, distant: Vec<Vec<Tag>>) -> Result<Self> {
        if distant.len() != self.sentences.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sentences.len(),
                got: distant.len(),
            });
        }
        let sentences = self
            .sentences
            .iter()
            .zip(distant)
            .map(|(s, d)| Sentence {
                tokens: s.tokens.clone(),
                gold: s.gold.clone(),
                distant: d,
            })
            .collect();
        Self::new(
            self.class_names.clone(),
            sentences,
            self.featurizer.dim,
            self.featurizer.seed,
        )
    }

    /// Subcorpus holding the given sentences in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            class_names: self.class_names.clone(),
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            featurizer: self.featurizer,
        }
    }

    pub fn gold_layer(&self) -> Vec<Vec<Tag>> {
        self.sentences.iter().map(|s| s.gold.clone()).collect()
    }

    pub fn distant_layer(&self) -> Vec<Vec<Tag>> {
        self.sentences.iter().map(|s| s.distant.clone()).collect()
    }

    pub fn write_conll<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.sentences {
            for ((tok, g), d) in s.tokens.iter().zip(&s.gold).zip(&s.distant) {
                if tok.is_empty() || tok.contains(['\t', '\n', '\r']) {
                    return Err(Error::validation(format!(
                        "token {tok:?} cannot be written"
                    )));
                }
                writeln!(
                    w,
                    "{tok}\t{}\t{}",
                    g.render(&self.class_names),
                    d.render(&self.class_names)
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_conll_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_conll(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("tokens are UTF-8")
    }

    /// Read the CoNLL-style format. Entity types are taken from `class_names`
    /// when given, otherwise collected in order of first appearance.
    pub fn read_conll<R: BufRead>(
        r: R,
        class_names: Option<&[String]>,
        feature_dim: usize,
        feature_seed: u64,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(String, String, String)>> = Vec::new();
        let mut current = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                if !current.is_empty() {
                    rows.push(std::mem::take(&mut current));
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected 3 tab-separated columns, got {}", cols.len()),
                });
            }
            current.push((
                cols[0].to_string(),
                cols[1].to_string(),
                cols[2].to_string(),
            ));
        }
        if !current.is_empty() {
            rows.push(current);
        }

        let names: Vec<String> = match class_names {
            Some(n) => n.to_vec(),
            None => {
                let mut names: Vec<String> = Vec::new();
                for (_, g, d) in rows.iter().flatten() {
                    for t in [g, d] {
                        if let Some((_, name)) = t.split_once('-') {
                            if !names.iter().any(|n| n == name) {
                                names.push(name.to_string());
                            }
                        }
                    }
                }
                names
            }
        };
        let mut line = 0;
        let mut sentences = Vec::with_capacity(rows.len());
        for sent in rows {
            let mut s = Sentence {
                tokens: Vec::with_capacity(sent.len()),
                gold: Vec::with_capacity(sent.len()),
                distant: Vec::with_capacity(sent.len()),
            };
            for (tok, g, d) in sent {
                line += 1;
                let parse = |t: &str| {
                    Tag::parse(t, &names).map_err(|e| Error::Parse {
                        line,
                        msg: e.to_string(),
                    })
                };
                s.gold.push(parse(&g)?);
                s.distant.push(parse(&d)?);
                s.tokens.push(tok);
            }
            line += 1;
            sentences.push(s);
        }
        Self::new(names, sentences, feature_dim, feature_seed)
    }
}

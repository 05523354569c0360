//! Embedding dumps, depth annotations and the four measurement modes.

mod annotations;
mod tpeb;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraint::DepthSequence;
use crate::error::{Error, Result};

pub use annotations::{
    depths_from_heads, parse_conllu_depths, parse_jsonl_depths, read_annotations,
    read_conllu_depths, read_jsonl_depths, write_jsonl_depths, DepthAnnotation,
};
pub use tpeb::{
    read_embeddings, write_embeddings, TpebReader, TpebWriter, TPEB_MAGIC, TPEB_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    WordPiece,
    Special,
}

impl TokenKind {
    pub(crate) fn flag(self) -> u8 {
        match self {
            TokenKind::WordPiece => 0,
            TokenKind::Special => 1,
        }
    }

    pub(crate) fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(TokenKind::WordPiece),
            1 => Some(TokenKind::Special),
            _ => None,
        }
    }
}

/// Vectors of one sentence with per-token alignment metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub id: String,
    dim: usize,
    /// Row-major, `len() * dim` values.
    vectors: Vec<f32>,
    pub token_kinds: Vec<TokenKind>,
    /// Complete-word index of every word-piece token, -1 for specials.
    pub word_index: Vec<i32>,
}

impl SentenceEmbedding {
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        vectors: Vec<f32>,
        token_kinds: Vec<TokenKind>,
        word_index: Vec<i32>,
    ) -> Result<Self> {
        let id = id.into();
        let len = token_kinds.len();
        if dim == 0 {
            return Err(Error::InvalidInput(
                "embedding dimension must be positive".into(),
            ));
        }
        if len == 0 {
            return Err(Error::InvalidInput(format!(
                "sentence {id:?} has no tokens"
            )));
        }
        if word_index.len() != len || vectors.len() != len * dim {
            return Err(Error::Shape(format!(
                "sentence {id:?}: {len} token kinds, {} word indices, {} floats for dimension {dim}",
                word_index.len(),
                vectors.len()
            )));
        }
        let mut last = i32::MIN;
        for (kind, &w) in token_kinds.iter().zip(&word_index) {
            match kind {
                TokenKind::Special if w != -1 => {
                    return Err(Error::InvalidInput(format!(
                        "sentence {id:?}: special token with word index {w}"
                    )))
                }
                TokenKind::WordPiece if w >= 0 => {
                    if w < last {
                        return Err(Error::InvalidInput(format!(
                            "sentence {id:?}: word indices decrease ({last} then {w})"
                        )));
                    }
                    last = w;
                }
                TokenKind::WordPiece if w < -1 => {
                    return Err(Error::InvalidInput(format!(
                        "sentence {id:?}: word index {w}"
                    )))
                }
                _ => {}
            }
        }
        Ok(SentenceEmbedding {
            id,
            dim,
            vectors,
            token_kinds,
            word_index,
        })
    }

    /// One word-piece token per word, no specials.
    pub fn from_word_vectors(id: impl Into<String>, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        let len = if dim == 0 { 0 } else { vectors.len() / dim };
        SentenceEmbedding::new(
            id,
            dim,
            vectors,
            vec![TokenKind::WordPiece; len],
            (0..len as i32).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.token_kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_kinds.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn special_count(&self) -> usize {
        self.token_kinds
            .iter()
            .filter(|k| **k == TokenKind::Special)
            .count()
    }

    /// True when every word-piece token carries a word index.
    pub fn has_alignment(&self) -> bool {
        self.token_kinds
            .iter()
            .zip(&self.word_index)
            .all(|(k, &w)| *k == TokenKind::Special || w >= 0)
    }

    /// Positions of the first token of each complete word, in word order.
    /// Without alignment every word-piece token counts as a word.
    pub fn word_positions(&self) -> Vec<usize> {
        let aligned = self.has_alignment();
        let mut out = Vec::new();
        let mut last = None;
        for (i, (kind, &w)) in self.token_kinds.iter().zip(&self.word_index).enumerate() {
            if *kind != TokenKind::WordPiece {
                continue;
            }
            if !aligned || last != Some(w) {
                out.push(i);
                last = Some(w);
            }
        }
        out
    }
}

/// A set of sentences sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dim: usize,
    pub sentences: Vec<SentenceEmbedding>,
}

impl Corpus {
    pub fn new(dim: usize) -> Self {
        Corpus {
            dim,
            sentences: Vec::new(),
        }
    }

    pub fn push(&mut self, sentence: SentenceEmbedding) -> Result<()> {
        if sentence.dim() != self.dim {
            return Err(Error::Shape(format!(
                "sentence {:?} has dimension {}, corpus has {}",
                sentence.id,
                sentence.dim(),
                self.dim
            )));
        }
        self.sentences.push(sentence);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Which tokens form the measured vector set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Word-piece and special tokens.
    E1,
    /// Word-piece tokens only.
    E2,
    /// Per-word mean vectors plus special tokens.
    E3,
    /// Per-word mean vectors only.
    E4,
}

impl FromStr for MeasurementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(MeasurementMode::E1),
            "e2" => Ok(MeasurementMode::E2),
            "e3" => Ok(MeasurementMode::E3),
            "e4" => Ok(MeasurementMode::E4),
            other => Err(Error::InvalidInput(format!(
                "unknown measurement mode {other:?} (expected e1..e4)"
            ))),
        }
    }
}

impl fmt::Display for MeasurementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MeasurementMode::E1 => "e1",
            MeasurementMode::E2 => "e2",
            MeasurementMode::E3 => "e3",
            MeasurementMode::E4 => "e4",
        };
        f.write_str(s)
    }
}

/// Builds the vector set measured under `mode`.
pub fn select_mode(
    sentence: &SentenceEmbedding,
    mode: MeasurementMode,
) -> Result<SentenceEmbedding> {
    let keep_specials = matches!(mode, MeasurementMode::E1 | MeasurementMode::E3);
    match mode {
        MeasurementMode::E1 => Ok(sentence.clone()),
        MeasurementMode::E2 => {
            let keep: Vec<usize> = (0..sentence.len())
                .filter(|&i| sentence.token_kinds[i] == TokenKind::WordPiece)
                .collect();
            subset(sentence, &keep)
        }
        MeasurementMode::E3 | MeasurementMode::E4 => {
            if !sentence.has_alignment() {
                return Err(Error::MissingAlignment {
                    sentence: sentence.id.clone(),
                });
            }
            pool_words(sentence, keep_specials)
        }
    }
}

fn subset(sentence: &SentenceEmbedding, keep: &[usize]) -> Result<SentenceEmbedding> {
    let mut vectors = Vec::with_capacity(keep.len() * sentence.dim);
    for &i in keep {
        vectors.extend_from_slice(sentence.row(i));
    }
    SentenceEmbedding::new(
        sentence.id.clone(),
        sentence.dim,
        vectors,
        keep.iter().map(|&i| sentence.token_kinds[i]).collect(),
        keep.iter().map(|&i| sentence.word_index[i]).collect(),
    )
}

/// Replaces the sub-tokens of each word by their arithmetic mean, placed at
/// the position of the word's first sub-token.
fn pool_words(sentence: &SentenceEmbedding, keep_specials: bool) -> Result<SentenceEmbedding> {
    let dim = sentence.dim;
    let mut vectors: Vec<f32> = Vec::new();
    let mut kinds = Vec::new();
    let mut words = Vec::new();
    let mut acc: Vec<f64> = vec![0.0; dim];
    let mut pending: Option<(i32, usize)> = None;

    let flush = |pending: &mut Option<(i32, usize)>,
                 acc: &mut Vec<f64>,
                 vectors: &mut Vec<f32>,
                 kinds: &mut Vec<TokenKind>,
                 words: &mut Vec<i32>| {
        if let Some((w, count)) = pending.take() {
            vectors.extend(acc.iter().map(|s| (s / count as f64) as f32));
            kinds.push(TokenKind::WordPiece);
            words.push(w);
            acc.iter_mut().for_each(|s| *s = 0.0);
        }
    };

    for i in 0..sentence.len() {
        match sentence.token_kinds[i] {
            TokenKind::Special => {
                flush(&mut pending, &mut acc, &mut vectors, &mut kinds, &mut words);
                if keep_specials {
                    vectors.extend_from_slice(sentence.row(i));
                    kinds.push(TokenKind::Special);
                    words.push(-1);
                }
            }
            TokenKind::WordPiece => {
                let w = sentence.word_index[i];
                if pending.map(|(pw, _)| pw) != Some(w) {
                    flush(&mut pending, &mut acc, &mut vectors, &mut kinds, &mut words);
                    pending = Some((w, 0));
                }
                if let Some((_, count)) = pending.as_mut() {
                    *count += 1;
                }
                for (s, &v) in acc.iter_mut().zip(sentence.row(i)) {
                    *s += f64::from(v);
                }
            }
        }
    }
    flush(&mut pending, &mut acc, &mut vectors, &mut kinds, &mut words);
    SentenceEmbedding::new(sentence.id.clone(), dim, vectors, kinds, words)
}

/// Gold depths attached to the word positions of a measured sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldDepths {
    /// Token positions carrying a gold depth, one per complete word.
    pub positions: Vec<usize>,
    pub depths: DepthSequence,
}

/// A measured sentence ready for probing.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    pub sentence: SentenceEmbedding,
    pub gold: Option<GoldDepths>,
}

impl ProbeExample {
    pub fn unlabeled(sentence: SentenceEmbedding) -> Self {
        ProbeExample {
            sentence,
            gold: None,
        }
    }

    /// Every token is a word and `depths` covers all of them.
    pub fn labeled(sentence: SentenceEmbedding, depths: DepthSequence) -> Result<Self> {
        if depths.len() != sentence.len() {
            return Err(Error::Shape(format!(
                "sentence {:?} has {} tokens but {} depths",
                sentence.id,
                sentence.len(),
                depths.len()
            )));
        }
        Ok(ProbeExample {
            gold: Some(GoldDepths {
                positions: (0..sentence.len()).collect(),
                depths,
            }),
            sentence,
        })
    }
}

/// Applies `mode` to every sentence and attaches annotations by sentence id.
///
/// Gold depths are attached to the first token of each complete word; special
/// tokens never carry a gold depth. Sentences without an annotation are kept
/// unlabeled.
pub fn build_examples(
    corpus: &Corpus,
    annotations: Option<&[DepthAnnotation]>,
    mode: MeasurementMode,
) -> Result<Vec<ProbeExample>> {
    let by_id: HashMap<&str, &DepthAnnotation> = annotations
        .unwrap_or_default()
        .iter()
        .map(|a| (a.sentence_id.as_str(), a))
        .collect();
    corpus
        .sentences
        .iter()
        .map(|s| {
            let sentence = select_mode(s, mode)?;
            let gold = match by_id.get(s.id.as_str()) {
                None => None,
                Some(ann) => {
                    let positions = sentence.word_positions();
                    if positions.len() != ann.word_depths.len() {
                        return Err(Error::Annotation {
                            sentence: s.id.clone(),
                            message: format!(
                                "{} annotated words but {} words in the embedding",
                                ann.word_depths.len(),
                                positions.len()
                            ),
                        });
                    }
                    Some(GoldDepths {
                        positions,
                        depths: ann.word_depths.clone(),
                    })
                }
            };
            Ok(ProbeExample { sentence, gold })
        })
        .collect()
}

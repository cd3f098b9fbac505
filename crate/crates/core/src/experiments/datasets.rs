//! Labeled datasets for the word and dicyclic case studies.
//!
//! Dicyclic splits enumerate ordered pairs `(m, n)`; `[m,n]` and `[n,m]` are
//! isomorphic graphs but their marked pairs come in opposite order.

use serde::{Deserialize, Serialize};

use crate::encodings::{Encoding, Letter, Word, ALPHABET};
use crate::error::{Error, Result};
use crate::graph::{make_dicyclic, make_word_graph, DicyclicSpec, Graph};
use crate::optim::LabeledBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Example {
    pub name: String,
    pub graph: Graph,
    pub label: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn to_batch(examples: &[Example]) -> Result<LabeledBatch> {
    LabeledBatch::new(
        examples.iter().map(|e| e.graph.clone()).collect(),
        examples.iter().map(|e| e.label).collect(),
    )
}

/// The held-out words, in reporting order.
pub const WORD_TEST: [&str; 6] = ["YY", "ZZ", "YZ", "ZT", "EY", "SZ"];

/// Letters allowed in training words: everything except Y and Z.
pub fn training_letters() -> impl Iterator<Item = Letter> {
    Letter::all().filter(|l| *l != Letter::Y && *l != Letter::Z)
}

pub fn word_example(word: Word, enc: &Encoding) -> Result<Example> {
    Ok(Example {
        name: word.to_string(),
        graph: make_word_graph(word.0, word.1, enc)?,
        label: if word.is_identical() { 1.0 } else { 0.0 },
    })
}

/// All 576 ordered words over the 24 training letters, and the six test words.
pub fn build_word_datasets(enc: &Encoding) -> Result<Dataset> {
    if enc.codes().len() != ALPHABET {
        return Err(Error::Config(format!("encoding has {} codes", enc.codes().len())));
    }
    let mut train = Vec::with_capacity(576);
    for a in training_letters() {
        for b in training_letters() {
            train.push(word_example(Word(a, b), enc)?);
        }
    }
    let test = WORD_TEST
        .iter()
        .map(|w| word_example(Word::parse(w)?, enc))
        .collect::<Result<_>>()?;
    Ok(Dataset { train, test })
}

pub fn dicyclic_example(m: usize, n: usize) -> Result<Example> {
    let spec = DicyclicSpec::new(m, n)?;
    Ok(Example {
        name: spec.to_string(),
        graph: make_dicyclic(spec)?,
        label: spec.label(),
    })
}

fn split_pairs(hi: usize, is_test: impl Fn(usize, usize) -> bool) -> Result<Dataset> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for m in 3..=hi {
        for n in 3..=hi {
            let e = dicyclic_example(m, n)?;
            if is_test(m, n) {
                test.push(e);
            } else {
                train.push(e);
            }
        }
    }
    Ok(Dataset { train, test })
}

/// Train on pairs avoiding cycle length `k`, test on every pair using it.
pub fn build_extraction(n_max: usize, k: usize) -> Result<Dataset> {
    if !(3..=n_max).contains(&k) {
        return Err(Error::Config(format!("extraction needs 3 <= k <= n_max, got k={k}, n_max={n_max}")));
    }
    split_pairs(n_max, |m, n| m == k || n == k)
}

/// Train on `3..=n_max`, test on the pairs reaching into `n_max+1..=n_max+g`.
pub fn build_extrapolation(n_max: usize, g: usize) -> Result<Dataset> {
    if g == 0 || n_max < 3 {
        return Err(Error::Config(format!("extrapolation needs g >= 1 and n_max >= 3, got g={g}, n_max={n_max}")));
    }
    split_pairs(n_max + g, |m, n| m > n_max || n > n_max)
}

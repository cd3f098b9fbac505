//! Executable forms of the invariance argument on two-letter words.
//!
//! Weights are stored `d_in x d_out`, so the update matrix `G` acting on codes is `W_upd^T` and
//! right-multiplying `G` by `T2` means left-multiplying `W_upd` by `T2^T`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::datasets::{build_word_datasets, to_batch, word_example, Example};
use super::stats::{ks_test, mean, KsReport};
use super::trials::{run_trial, ExperimentConfig};
use crate::encodings::{tau2_of, tau2_pair_swap, Encoding, Letter, Tau2Matrix, Word};
use crate::error::{EncodingError, Error, Result};
use crate::gnn::{init_params, loss_and_grad, predict, Batch, DiffMode, GnnParams, InitScheme, ModelKind, ModelSpec, ReadoutKind};
use crate::optim::{train, OptimizerKind, TrainConfig};
use crate::rng::trial_seed;
use crate::tape::PoolKind;
use crate::tensor::Tensor;

pub const GRADIENT_TOL: f64 = 1e-10;
pub const RATING_GAP_TOL: f64 = 1e-9;
pub const KS_ALPHA: f64 = 0.05;

/// `T2` of an encoding; falls back to the pair swap when the 26 codes cannot
/// be independent (dimension below 26).
pub fn tau2_matrix(enc: &Encoding) -> Result<Tau2Matrix> {
    match tau2_of(enc) {
        Err(EncodingError::LinearlyDependent) => Ok(tau2_pair_swap(enc)?),
        other => Ok(other?),
    }
}

fn left_t(t2: &Tensor, w: &Tensor) -> Tensor {
    t2.transpose().matmul(w).expect("T2 is d x d and w is d x h")
}

/// Relative Frobenius deviation `|T2^T w - w| / |w|` (0 for a zero `w`).
pub fn relative_deviation(t2: &Tensor, w: &Tensor) -> f64 {
    let norm = w.frobenius_norm();
    if norm == 0.0 {
        return 0.0;
    }
    left_t(t2, w).sub(w).expect("same shape").frobenius_norm() / norm
}

/// Projects `w` onto the matrices fixed by `T2`: `(w + T2^T w) / 2`.
pub fn tie_to_t2(t2: &Tensor, w: &Tensor) -> Tensor {
    w.add(&left_t(t2, w)).expect("same shape").scale(0.5)
}

/// One-layer word model with hidden width 64.
pub fn word_spec(kind: ModelKind, input_dim: usize) -> ModelSpec {
    ModelSpec {
        kind,
        input_dim,
        hidden: 64,
        layers: 1,
        readout: ReadoutKind::Linear,
        pool: PoolKind::Sum,
        diff: DiffMode::Absolute,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub encoding: String,
    pub model: ModelKind,
    pub draws: usize,
    pub max_deviation_upd: f64,
    pub max_deviation_agg: f64,
    /// Same measurement with a Y-word added to the training set.
    pub control_deviation: f64,
    pub tolerance: f64,
    pub t2_orthogonal: bool,
    pub t2_symmetric: bool,
    pub passed: bool,
}

fn first_layer_deviation(params: &GnnParams, examples: &[Example], t2: &Tensor) -> Result<(f64, f64)> {
    let data = to_batch(examples)?;
    let (_, grads) = loss_and_grad(params, &data.batch, &data.labels)?;
    Ok((relative_deviation(t2, &grads[0]), relative_deviation(t2, &grads[1])))
}

/// Full-batch first-layer gradients at `n_draws` random parameter points must
/// be fixed by `T2`; the control adds the word `AY` to the training set.
pub fn gradient_invariance_check(enc: &Encoding, n_draws: usize, seed: u64, model: ModelKind) -> Result<GradientReport> {
    let tau = tau2_matrix(enc)?;
    let mut examples = build_word_datasets(enc)?.train;
    let spec = word_spec(model, enc.dim);
    let draws: Vec<(f64, f64)> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let p = init_params(spec, trial_seed(seed, i), InitScheme::Gaussian { sigma: 0.5 })?;
            first_layer_deviation(&p, &examples, &tau.t2)
        })
        .collect::<Result<_>>()?;
    let max_upd = draws.iter().fold(0.0f64, |m, d| m.max(d.0));
    let max_agg = draws.iter().fold(0.0f64, |m, d| m.max(d.1));
    examples.push(word_example(Word::parse("AY")?, enc)?);
    let p = init_params(spec, seed, InitScheme::Gaussian { sigma: 0.5 })?;
    let (cu, ca) = first_layer_deviation(&p, &examples, &tau.t2)?;
    Ok(GradientReport {
        encoding: enc.kind.name(),
        model,
        draws: n_draws,
        max_deviation_upd: max_upd,
        max_deviation_agg: max_agg,
        control_deviation: cu.max(ca),
        tolerance: GRADIENT_TOL,
        t2_orthogonal: tau.orthogonal,
        t2_symmetric: tau.symmetric,
        passed: max_upd < GRADIENT_TOL && max_agg < GRADIENT_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicReport {
    pub encoding: String,
    pub model: ModelKind,
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    /// `max_x |L(D,xY) - L(D,xZ)|` over all 26 letters `x`.
    pub max_gap: f64,
    pub worst_letter: char,
    /// Gap after perturbing the Z direction of the initial `W_upd` by 1e-3.
    pub control_gap: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Ratings gap between `xY` and `xZ`, maximized over `x`.
pub fn max_rating_gap(params: &GnnParams, enc: &Encoding) -> Result<(f64, char)> {
    let mut graphs = Vec::new();
    for x in Letter::all() {
        for y in [Letter::Y, Letter::Z] {
            graphs.push(word_example(Word(x, y), enc)?.graph);
        }
    }
    let r = predict(params, &Batch::new(&graphs)?)?;
    let mut best = (-1.0, 'A');
    for (x, pair) in Letter::all().zip(r.chunks(2)) {
        let gap = (pair[0] - pair[1]).abs();
        if gap > best.0 {
            best = (gap, x.as_char());
        }
    }
    Ok(best)
}

/// SGD from a Gaussian init whose first layer is tied by `T2` (so the Y and Z
/// directions start equal); the tie must survive training and make every
/// `xY`/`xZ` pair rate identically.
pub fn invariance_deterministic_check(
    enc: &Encoding,
    seed: u64,
    model: ModelKind,
    steps: usize,
    learning_rate: f64,
    with_control: bool,
) -> Result<DeterministicReport> {
    if !enc.kind.is_orthogonal() {
        return Err(Error::Config(format!("{} is not an orthogonal encoding", enc.kind.name())));
    }
    let tau = tau2_matrix(enc)?;
    let data = to_batch(&build_word_datasets(enc)?.train)?;
    let mut p0 = init_params(word_spec(model, enc.dim), seed, InitScheme::Xavier)?;
    let l0 = &mut p0.layers[0];
    for w in [&mut l0.w_upd, &mut l0.w_agg] {
        *w = tie_to_t2(&tau.t2, w);
    }
    let cfg = TrainConfig::new(steps, learning_rate, OptimizerKind::Sgd);
    let run = |p: GnnParams| -> Result<(f64, char)> {
        let (trained, _) = train(p, &data, None, &cfg)?;
        max_rating_gap(&trained, enc)
    };
    let control_gap = if with_control {
        let mut p = p0.clone();
        let cz = enc.code(Letter::Z);
        let w = &mut p.layers[0].w_upd;
        for (r, c) in cz.iter().enumerate() {
            w.row_mut(r).iter_mut().for_each(|x| *x += 1e-3 * c);
        }
        Some(run(p)?.0)
    } else {
        None
    };
    let (max_gap, worst_letter) = run(p0)?;
    Ok(DeterministicReport {
        encoding: enc.kind.name(),
        model,
        seed,
        steps,
        learning_rate,
        max_gap,
        worst_letter,
        control_gap,
        tolerance: RATING_GAP_TOL,
        passed: max_gap < RATING_GAP_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub ks: KsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticalReport {
    pub encoding: String,
    pub model: ModelKind,
    pub seeds: usize,
    pub failed_trials: usize,
    /// Ratings per probe word, one entry per completed trial.
    pub ratings: Vec<(String, Vec<f64>)>,
    /// The first pair is (YY, YZ); the rest are pairs related by swapping Y
    /// and Z in both letters or in the second letter only.
    pub pairs: Vec<PairReport>,
    /// KS on (YY, YZ) does not reject at `alpha`.
    pub passed: bool,
}

impl StatisticalReport {
    pub fn mean_of(&self, word: &str) -> Option<f64> {
        self.ratings.iter().find(|(w, _)| w == word).map(|(_, r)| mean(r))
    }
}

pub const PROBE_WORDS: [&str; 10] = ["YY", "YZ", "ZZ", "ZY", "EY", "EZ", "SY", "SZ", "ZT", "YT"];
pub const PAIRS: [(&str, &str); 5] = [("YY", "YZ"), ("YY", "ZZ"), ("YZ", "ZY"), ("EY", "EZ"), ("SY", "SZ")];

/// Trains `cfg.trials` word models with unconstrained Gaussian init and
/// compares the rating distributions of Y/Z word pairs.
pub fn invariance_statistical_check(cfg: &ExperimentConfig) -> Result<StatisticalReport> {
    cfg.validate()?;
    let kind = cfg.encoding.ok_or_else(|| Error::Config("statistical check needs an encoding".into()))?;
    let per_trial: Vec<Option<Vec<f64>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<f64>>> {
            let (_, _, trained) = run_trial(cfg, i)?;
            let Some(params) = trained else { return Ok(None) };
            let enc = kind.build(trial_seed(cfg.encoding_seed, i))?;
            let graphs = PROBE_WORDS
                .iter()
                .map(|w| Ok(word_example(Word::parse(w)?, &enc)?.graph))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(predict(&params, &Batch::new(&graphs)?)?))
        })
        .collect::<Result<_>>()?;
    let done: Vec<&Vec<f64>> = per_trial.iter().flatten().collect();
    let ratings: Vec<(String, Vec<f64>)> = PROBE_WORDS
        .iter()
        .enumerate()
        .map(|(j, w)| (w.to_string(), done.iter().map(|r| r[j]).collect()))
        .collect();
    let get = |w: &str| &ratings.iter().find(|(n, _)| n == w).expect("probe word").1;
    let pairs: Vec<PairReport> = PAIRS
        .iter()
        .map(|(a, b)| PairReport {
            a: a.to_string(),
            b: b.to_string(),
            mean_a: mean(get(a)),
            mean_b: mean(get(b)),
            ks: ks_test(get(a), get(b), KS_ALPHA),
        })
        .collect();
    Ok(StatisticalReport {
        encoding: kind.name(),
        model: cfg.model,
        seeds: cfg.trials,
        failed_trials: per_trial.len() - done.len(),
        passed: !done.is_empty() && !pairs[0].ks.rejects,
        ratings,
        pairs,
    })
}

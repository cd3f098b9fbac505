//! Multi-trial experiment runner.

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::datasets::{build_extraction, build_extrapolation, build_word_datasets, to_batch, word_example, Dataset, Example, Split};
use super::stats::{mean, std_dev};
use crate::encodings::{EncodingKind, Word};
use crate::error::{Error, Result};
use crate::gnn::{init_params, predict, Batch, DiffMode, GnnParams, InitScheme, ModelKind, ModelSpec, ReadoutKind};
use crate::optim::{train, LossTrace, OptimizerKind, TrainConfig};
use crate::rng::{stream_rng, trial_seed, Stream};
use crate::tape::PoolKind;

/// Rating threshold for accuracies.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Words,
    Extraction,
    Extrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub case: Case,
    pub model: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    /// Words only; stochastic encodings are redrawn per trial.
    #[serde(default)]
    pub encoding: Option<EncodingKind>,
    #[serde(default)]
    pub encoding_seed: u64,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub g: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub train: TrainConfig,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub pool: PoolKind,
    #[serde(default)]
    pub diff: DiffMode,
}

impl ExperimentConfig {
    /// Desk-scale word experiment: h = 64, 10 trials, 1000 Adam epochs at 0.0025.
    pub fn words(encoding: EncodingKind, model: ModelKind, layers: usize) -> Self {
        Self {
            case: Case::Words,
            model,
            layers,
            hidden: 64,
            encoding: Some(encoding),
            encoding_seed: 0,
            n_max: None,
            k: None,
            g: None,
            trials: 10,
            seed: 0,
            train: TrainConfig::new(1000, 0.0025, OptimizerKind::Adam),
            init: InitScheme::Xavier,
            pool: PoolKind::Sum,
            diff: DiffMode::Absolute,
        }
    }

    /// Desk-scale extraction: h = 100, `n_max` layers, 5 trials, 1500 AMSGrad epochs.
    pub fn extraction(n_max: usize, k: usize, model: ModelKind) -> Self {
        Self {
            case: Case::Extraction,
            layers: n_max,
            hidden: 100,
            encoding: None,
            n_max: Some(n_max),
            k: Some(k),
            trials: 5,
            train: TrainConfig::new(1500, 0.001, OptimizerKind::Amsgrad),
            ..Self::words(EncodingKind::OneHot, model, 1)
        }
    }

    /// Desk-scale extrapolation with `n_max + g` layers.
    pub fn extrapolation(n_max: usize, g: usize, model: ModelKind) -> Self {
        Self {
            case: Case::Extrapolation,
            layers: n_max + g,
            k: None,
            g: Some(g),
            ..Self::extraction(n_max, 3, model)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| Error::Config(format!("{name} is required for this case")));
        match self.case {
            Case::Words => {
                need(self.encoding.map(|_| 0), "encoding")?;
            }
            Case::Extraction => {
                let n_max = need(self.n_max, "n_max")?;
                need(self.k, "k")?;
                if self.layers != n_max {
                    return Err(Error::Config(format!("extraction uses layers = n_max = {n_max}, got {}", self.layers)));
                }
            }
            Case::Extrapolation => {
                let n_max = need(self.n_max, "n_max")?;
                let g = need(self.g, "g")?;
                if self.layers != n_max + g {
                    return Err(Error::Config(format!(
                        "extrapolation uses layers = n_max + g = {}, got {}",
                        n_max + g,
                        self.layers
                    )));
                }
            }
        }
        self.model_spec(1).validate()
    }

    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        let readout = match (self.model, self.case) {
            (ModelKind::GconvGlob, Case::Extraction | Case::Extrapolation) => ReadoutKind::Mlp,
            _ => ReadoutKind::Linear,
        };
        ModelSpec {
            kind: self.model,
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            readout,
            pool: self.pool,
            diff: self.diff,
        }
    }

    /// Short identifier such as `words-one_hot-gconv_diff-T1`.
    pub fn tag(&self) -> String {
        match self.case {
            Case::Words => format!(
                "words-{}-{}-T{}",
                self.encoding.map_or("none".into(), |e| e.name()),
                self.model.name(),
                self.layers
            ),
            Case::Extraction => format!("extraction-n{}-k{}-{}", self.n_max.unwrap_or(0), self.k.unwrap_or(0), self.model.name()),
            Case::Extrapolation => format!("extrapolation-n{}-g{}-{}", self.n_max.unwrap_or(0), self.g.unwrap_or(0), self.model.name()),
        }
    }
}

/// Outcome of one trial. A diverged trial keeps its partial record and a
/// failure message; its ratings are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub seed: u64,
    /// The random non-identical training word probed in word experiments.
    pub probe: Option<String>,
    pub ratings: Option<Vec<f64>>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub trace: LossTrace,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub name: String,
    pub split: Split,
    pub label: f64,
    /// Cycle lengths for dicyclic inputs.
    pub cell: Option<(usize, usize)>,
    pub mean: f64,
    pub std: f64,
    pub ratings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: ExperimentConfig,
    pub threshold: f64,
    pub inputs: Vec<InputSummary>,
    pub train_accuracy: Summary,
    pub test_accuracy: Summary,
    pub failed_trials: usize,
    pub trials: Vec<TrialOutcome>,
}

impl TrialResult {
    pub fn input(&self, name: &str) -> Option<&InputSummary> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// Inputs of `split` whose mean rating lands on the wrong side of the threshold.
    pub fn misclassified(&self, split: Split) -> Vec<&InputSummary> {
        self.inputs
            .iter()
            .filter(|i| i.split == split && (i.mean >= self.threshold) != (i.label >= 0.5))
            .collect()
    }
}

struct Prepared {
    data: Dataset,
    /// Reported inputs: (example, split).
    inputs: Vec<(Example, Split)>,
    probe: Option<String>,
}

fn parse_cell(name: &str) -> Option<(usize, usize)> {
    let inner = name.strip_prefix('[')?.strip_suffix(']')?;
    let (m, n) = inner.split_once(',')?;
    Some((m.parse().ok()?, n.parse().ok()?))
}

fn prepare(cfg: &ExperimentConfig, index: usize, seed: u64) -> Result<Prepared> {
    match cfg.case {
        Case::Words => {
            let kind = cfg.encoding.expect("validated");
            let enc = kind.build(trial_seed(cfg.encoding_seed, index))?;
            let data = build_word_datasets(&enc)?;
            let aa = word_example(Word::parse("AA")?, &enc)?;
            let mut rng = stream_rng(seed, Stream::Probe);
            let candidates: Vec<&Example> = data.train.iter().filter(|e| e.label == 0.0).collect();
            let mut probe = (*candidates.choose(&mut rng).expect("576 words include non-identical ones")).clone();
            let probe_name = probe.name.clone();
            probe.name = "xy".into();
            let mut inputs = vec![(aa, Split::Train), (probe, Split::Train)];
            inputs.extend(data.test.iter().cloned().map(|e| (e, Split::Test)));
            Ok(Prepared {
                data,
                inputs,
                probe: Some(probe_name),
            })
        }
        Case::Extraction | Case::Extrapolation => {
            let n_max = cfg.n_max.expect("validated");
            let data = if cfg.case == Case::Extraction {
                build_extraction(n_max, cfg.k.expect("validated"))?
            } else {
                build_extrapolation(n_max, cfg.g.expect("validated"))?
            };
            let mut inputs: Vec<(Example, Split)> = data.train.iter().cloned().map(|e| (e, Split::Train)).collect();
            inputs.extend(data.test.iter().cloned().map(|e| (e, Split::Test)));
            Ok(Prepared { data, inputs, probe: None })
        }
    }
}

fn accuracy(ratings: &[f64], labels: &[f64]) -> f64 {
    let hits = ratings
        .iter()
        .zip(labels)
        .filter(|(r, y)| ((**r > THRESHOLD) as u8 as f64) == **y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Ratings of one trial's reported inputs: (name, split, rating).
pub type TrialRatings = Vec<(String, Split, f64)>;

/// Trains one model from scratch and rates every reported input.
pub fn run_trial(cfg: &ExperimentConfig, index: usize) -> Result<(TrialOutcome, TrialRatings, Option<GnnParams>)> {
    let seed = trial_seed(cfg.seed, index);
    let prep = prepare(cfg, index, seed)?;
    let train_set = to_batch(&prep.data.train)?;
    let test_set = to_batch(&prep.data.test)?;
    let input_dim = prep.data.train[0].graph.feature_dim();
    let params = init_params(cfg.model_spec(input_dim), seed, cfg.init)?;
    let meta: Vec<(String, Split, f64)> = prep.inputs.iter().map(|(e, s)| (e.name.clone(), *s, e.label)).collect();
    let mut outcome = TrialOutcome {
        index,
        seed,
        probe: prep.probe,
        ratings: None,
        train_accuracy: None,
        test_accuracy: None,
        trace: LossTrace::default(),
        failure: None,
    };
    match train(params, &train_set, Some(&test_set), &cfg.train) {
        Ok((trained, trace)) => {
            let batch = Batch::new(prep.inputs.iter().map(|(e, _)| &e.graph))?;
            outcome.ratings = Some(predict(&trained, &batch)?);
            outcome.train_accuracy = Some(accuracy(&predict(&trained, &train_set.batch)?, &train_set.labels));
            outcome.test_accuracy = Some(accuracy(&predict(&trained, &test_set.batch)?, &test_set.labels));
            outcome.trace = trace;
            Ok((outcome, meta, Some(trained)))
        }
        Err(e @ Error::Diverged { .. }) => {
            outcome.failure = Some(e.to_string());
            Ok((outcome, meta, None))
        }
        Err(e) => Err(e),
    }
}

/// Runs every trial (in parallel) and folds the outcomes in trial order.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let runs: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i).map(|(o, meta, _)| (o, meta)))
        .collect::<Result<_>>()?;
    let meta = runs[0].1.clone();
    let trials: Vec<TrialOutcome> = runs.into_iter().map(|(o, _)| o).collect();
    let done: Vec<&TrialOutcome> = trials.iter().filter(|t| t.ratings.is_some()).collect();
    let inputs = meta
        .iter()
        .enumerate()
        .map(|(j, (name, split, label))| {
            let ratings: Vec<f64> = done.iter().map(|t| t.ratings.as_ref().unwrap()[j]).collect();
            InputSummary {
                name: name.clone(),
                split: *split,
                label: *label,
                cell: parse_cell(name),
                mean: mean(&ratings),
                std: std_dev(&ratings),
                ratings,
            }
        })
        .collect();
    let train_acc: Vec<f64> = done.iter().filter_map(|t| t.train_accuracy).collect();
    let test_acc: Vec<f64> = done.iter().filter_map(|t| t.test_accuracy).collect();
    Ok(TrialResult {
        config: cfg.clone(),
        threshold: THRESHOLD,
        inputs,
        train_accuracy: Summary::of(&train_acc),
        test_accuracy: Summary::of(&test_acc),
        failed_trials: trials.len() - done.len(),
        trials,
    })
}

//! SGD, Adam and AMSGrad, and the training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TensorError};
use crate::gnn::{loss, loss_and_grad, Batch, GnnParams};
use crate::graph::Graph;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Amsgrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    Full,
    Minibatch { size: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub batch: BatchMode,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, optimizer: OptimizerKind) -> Self {
        Self {
            epochs,
            learning_rate,
            optimizer,
            betas: default_betas(),
            eps: default_eps(),
            batch: BatchMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if let BatchMode::Minibatch { size: 0, .. } = self.batch {
            return Err(Error::Config("minibatch size must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_shapes(params: &[&mut Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
    if params.len() != grads.len() {
        return Err(TensorError::ShapeMismatch {
            op: "optimizer",
            left: (params.len(), 1),
            right: (grads.len(), 1),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "optimizer",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    Ok(())
}

/// `theta <- theta - eta * grad`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], eta: f64) -> Result<(), TensorError> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= eta * d;
        }
    }
    Ok(())
}

/// First/second moment estimates; `v_max` holds the AMSGrad running maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub v_max: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect::<Vec<_>>();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
            v_max: zeros(),
        }
    }
}

/// Bias-corrected Adam; with `amsgrad` the denominator uses the running max
/// of the raw second moment.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    amsgrad: bool,
) -> Result<(), TensorError> {
    check_shapes(params, grads)?;
    if state.m.len() != grads.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_state",
            left: (state.m.len(), 1),
            right: (grads.len(), 1),
        });
    }
    let (b1, b2) = betas;
    state.step += 1;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2_sqrt = (1.0 - b2.powi(state.step as i32)).sqrt();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if state.m[i].shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_state",
                left: state.m[i].shape(),
                right: g.shape(),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let vm = state.v_max[i].data_mut();
        for (k, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * d;
            v[k] = b2 * v[k] + (1.0 - b2) * d * d;
            let second = if amsgrad {
                vm[k] = vm[k].max(v[k]);
                vm[k]
            } else {
                v[k]
            };
            *x -= lr * (m[k] / bc1) / (second.sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState {
    Sgd,
    Adam(AdamState),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &GnnParams) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam | OptimizerKind::Amsgrad => {
                let shapes: Vec<_> = params.tensors().iter().map(|t| t.shape()).collect();
                OptimizerState::Adam(AdamState::new(&shapes))
            }
        }
    }
}

fn apply_step(params: &mut GnnParams, grads: &[Tensor], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    let mut tensors = params.tensors_mut();
    match (cfg.optimizer, state) {
        (OptimizerKind::Sgd, OptimizerState::Sgd) => sgd_step(&mut tensors, grads, cfg.learning_rate)?,
        (kind @ (OptimizerKind::Adam | OptimizerKind::Amsgrad), OptimizerState::Adam(s)) => adam_step(
            &mut tensors,
            grads,
            s,
            cfg.learning_rate,
            cfg.betas,
            cfg.eps,
            kind == OptimizerKind::Amsgrad,
        )?,
        _ => return Err(Error::Config("optimizer state does not match optimizer kind".into())),
    }
    Ok(())
}

/// Per-epoch mean BCE on the training set (before that epoch's update) and on
/// the test set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

/// Graphs with binary labels, pre-packed into one batch.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub graphs: Vec<Graph>,
    pub labels: Vec<f64>,
    pub batch: Batch,
}

impl LabeledBatch {
    pub fn new(graphs: Vec<Graph>, labels: Vec<f64>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if graphs.len() != labels.len() {
            return Err(Error::Config(format!("{} graphs but {} labels", graphs.len(), labels.len())));
        }
        let batch = Batch::new(&graphs)?;
        Ok(Self { graphs, labels, batch })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: GnnParams,
    pub optimizer: OptimizerState,
    pub epoch: usize,
    pub trace: LossTrace,
}

impl Checkpoint {
    pub fn start(params: GnnParams, cfg: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(cfg.optimizer, &params);
        Self {
            params,
            optimizer,
            epoch: 0,
            trace: LossTrace::default(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.params.validate()?;
        Ok(c)
    }
}

fn diverged(epoch: usize, loss: f64) -> Error {
    Error::Diverged { epoch, loss }
}

fn guard(epoch: usize, r: Result<(f64, Vec<Tensor>)>) -> Result<(f64, Vec<Tensor>)> {
    match r {
        Err(Error::Tensor(TensorError::NonFinite { .. })) => Err(diverged(epoch, f64::NAN)),
        Ok((l, _)) if !l.is_finite() || l > DIVERGENCE_LOSS => Err(diverged(epoch, l)),
        other => other,
    }
}

/// Continues `ck` until `cfg.epochs` epochs are done.
pub fn train_from(mut ck: Checkpoint, data: &LabeledBatch, test: Option<&LabeledBatch>, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    ck.params.validate()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    while ck.epoch < cfg.epochs {
        let epoch = ck.epoch;
        if let Some(t) = test {
            let l = loss(&ck.params, &t.batch, &t.labels).map_err(|_| diverged(epoch, f64::NAN))?;
            ck.trace.test.push(l);
        }
        match cfg.batch {
            BatchMode::Full => {
                let (l, grads) = guard(epoch, loss_and_grad(&ck.params, &data.batch, &data.labels))?;
                ck.trace.train.push(l);
                apply_step(&mut ck.params, &grads, &mut ck.optimizer, cfg)?;
            }
            BatchMode::Minibatch { size, seed } => {
                // one fresh shuffle per epoch, derived from (seed, epoch)
                let mut rng = stream_rng(seed.wrapping_add(epoch as u64), Stream::Shuffle);
                order.sort_unstable();
                order.shuffle(&mut rng);
                let mut weighted = 0.0;
                for chunk in order.chunks(size) {
                    let graphs: Vec<&Graph> = chunk.iter().map(|&i| &data.graphs[i]).collect();
                    let labels: Vec<f64> = chunk.iter().map(|&i| data.labels[i]).collect();
                    let batch = Batch::new(graphs)?;
                    let (l, grads) = guard(epoch, loss_and_grad(&ck.params, &batch, &labels))?;
                    weighted += l * chunk.len() as f64;
                    apply_step(&mut ck.params, &grads, &mut ck.optimizer, cfg)?;
                }
                ck.trace.train.push(weighted / data.len() as f64);
            }
        }
        if ck.params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(diverged(epoch, f64::NAN));
        }
        ck.epoch += 1;
    }
    Ok(ck)
}

/// Trains from `params` for `cfg.epochs` epochs, minimizing mean BCE.
pub fn train(params: GnnParams, data: &LabeledBatch, test: Option<&LabeledBatch>, cfg: &TrainConfig) -> Result<(GnnParams, LossTrace)> {
    let ck = train_from(Checkpoint::start(params, cfg), data, test, cfg)?;
    Ok((ck.params, ck.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::{make_one_hot, Letter};
    use crate::gnn::{init_params, predict, DiffMode, InitScheme, ModelKind, ModelSpec, ReadoutKind};
    use crate::graph::make_word_graph;
    use crate::tape::PoolKind;

    fn scalar(x: f64) -> Tensor {
        Tensor::scalar(x)
    }

    #[test]
    fn sgd_examples() {
        let mut p = scalar(1.0);
        sgd_step(&mut [&mut p], &[scalar(2.0)], 0.1).unwrap();
        assert!((p.item() - 0.8).abs() < 1e-15);
        sgd_step(&mut [&mut p], &[scalar(0.0)], 0.1).unwrap();
        assert!((p.item() - 0.8).abs() < 1e-15);
        assert!(sgd_step(&mut [&mut p], &[Tensor::zeros(2, 1)], 0.1).is_err());
    }

    #[test]
    fn sgd_contracts_a_quadratic() {
        let mut p = scalar(1.0);
        for _ in 0..50 {
            let g = scalar(2.0 * p.item());
            sgd_step(&mut [&mut p], &[g], 0.4).unwrap();
        }
        assert!(p.item().abs() < 1e-3);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut p = Tensor::from_vec(1, 3, vec![0.0, 1.0, -2.0]).unwrap();
        let g = Tensor::from_vec(1, 3, vec![0.3, -5.0, 1e-3]).unwrap();
        let mut st = AdamState::new(&[(1, 3)]);
        let before = p.clone();
        adam_step(&mut [&mut p], &[g], &mut st, 0.01, (0.9, 0.999), 1e-8, false).unwrap();
        for (a, b) in p.data().iter().zip(before.data()) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradients_leave_params() {
        let mut p = Tensor::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
        let mut st = AdamState::new(&[(1, 2)]);
        for _ in 0..100 {
            adam_step(&mut [&mut p], &[Tensor::zeros(1, 2)], &mut st, 0.1, (0.9, 0.999), 1e-8, true).unwrap();
        }
        assert_eq!(p.data(), &[0.5, -0.5]);
    }

    #[test]
    fn amsgrad_second_moment_never_decreases() {
        let mut p = Tensor::zeros(1, 2);
        let mut st = AdamState::new(&[(1, 2)]);
        let mut prev = vec![0.0; 2];
        for i in 0..200 {
            let g = Tensor::from_vec(1, 2, vec![(i as f64 * 0.7).sin() * 3.0, if i < 20 { 5.0 } else { 0.01 }]).unwrap();
            adam_step(&mut [&mut p], &[g], &mut st, 0.01, (0.9, 0.999), 1e-8, true).unwrap();
            for (a, b) in st.v_max[0].data().iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = st.v_max[0].data().to_vec();
        }
    }

    fn word_batch(words: &[(char, char)]) -> LabeledBatch {
        let enc = make_one_hot();
        let graphs = words
            .iter()
            .map(|&(a, b)| make_word_graph(Letter::from_char(a).unwrap(), Letter::from_char(b).unwrap(), &enc).unwrap())
            .collect();
        let labels = words.iter().map(|(a, b)| if a == b { 1.0 } else { 0.0 }).collect();
        LabeledBatch::new(graphs, labels).unwrap()
    }

    fn diff_spec() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::GconvDiff,
            input_dim: 26,
            hidden: 16,
            layers: 1,
            readout: ReadoutKind::Linear,
            pool: PoolKind::Sum,
            diff: DiffMode::Absolute,
        }
    }

    #[test]
    fn singleton_is_fit_and_runs_repeat() {
        let data = word_batch(&[('A', 'A')]);
        let p = init_params(ModelSpec { kind: ModelKind::GconvGlob, ..diff_spec() }, 3, InitScheme::Xavier).unwrap();
        let cfg = TrainConfig::new(200, 0.05, OptimizerKind::Adam);
        let (_, trace) = train(p.clone(), &data, Some(&data), &cfg).unwrap();
        assert!(*trace.train.last().unwrap() < 0.01);
        assert_eq!(trace.train.len(), 200);
        assert_eq!(trace.test.len(), 200);
        let (_, again) = train(p, &data, Some(&data), &cfg).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn resuming_from_a_checkpoint_matches_one_run() {
        let data = word_batch(&[('A', 'A'), ('A', 'B'), ('B', 'B'), ('C', 'A')]);
        let p = init_params(diff_spec(), 5, InitScheme::Xavier).unwrap();
        let cfg = TrainConfig::new(40, 0.01, OptimizerKind::Amsgrad);
        let full = train_from(Checkpoint::start(p.clone(), &cfg), &data, None, &cfg).unwrap();
        let half_cfg = TrainConfig { epochs: 20, ..cfg };
        let half = train_from(Checkpoint::start(p, &cfg), &data, None, &half_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        half.save(&path).unwrap();
        let resumed = train_from(Checkpoint::load(&path).unwrap(), &data, None, &cfg).unwrap();
        assert_eq!(resumed.trace, full.trace);
        assert_eq!(resumed.params, full.params);
    }

    #[test]
    fn minibatches_train_and_are_reproducible() {
        let data = word_batch(&[('A', 'A'), ('A', 'B'), ('B', 'B'), ('C', 'A'), ('C', 'C'), ('B', 'C')]);
        let p = init_params(diff_spec(), 5, InitScheme::Xavier).unwrap();
        let cfg = TrainConfig {
            batch: BatchMode::Minibatch { size: 2, seed: 9 },
            ..TrainConfig::new(300, 0.01, OptimizerKind::Adam)
        };
        let (trained, t1) = train(p.clone(), &data, None, &cfg).unwrap();
        let (_, t2) = train(p, &data, None, &cfg).unwrap();
        assert_eq!(t1, t2);
        let r = predict(&trained, &data.batch).unwrap();
        for (x, y) in r.iter().zip(&data.labels) {
            assert_eq!((*x > 0.5) as u8 as f64, *y);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = word_batch(&[('A', 'A'), ('A', 'B')]);
        let p = init_params(diff_spec(), 1, InitScheme::Gaussian { sigma: 1.0 }).unwrap();
        let cfg = TrainConfig::new(50, 1e200, OptimizerKind::Sgd);
        assert!(matches!(train(p, &data, None, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig::new(0, 0.1, OptimizerKind::Sgd).validate().is_err());
        assert!(TrainConfig::new(1, -0.1, OptimizerKind::Sgd).validate().is_err());
        assert!(LabeledBatch::new(vec![], vec![]).is_err());
    }
}

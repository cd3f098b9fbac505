//! Morris message-passing layers and the Gconv-glob / Gconv-diff rating models.
//!
//! Hidden states are row-major (`nodes x dim`), so a layer computes
//! `relu(H W_upd + POOL(H) W_agg + b)` with weights stored `d_in x d_out`.
//! Every dataset is evaluated as one block-diagonal batch graph.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TensorError};
use crate::graph::Graph;
use crate::rng::{stream_rng, Stream};
use crate::tape::{Adjacency, GradTape, PoolKind, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GconvGlob,
    GconvDiff,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GconvGlob => "gconv_glob",
            ModelKind::GconvDiff => "gconv_diff",
        }
    }
}

/// How Gconv-diff combines the two marked hidden states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// `|h_a - h_b|`: invariant to the order of the marked pair.
    #[default]
    Absolute,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Linear,
    /// `h -> h` dense + ReLU, then `h -> 1`.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub readout: ReadoutKind,
    #[serde(default)]
    pub pool: PoolKind,
    #[serde(default)]
    pub diff: DiffMode,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Model(format!(
                "input_dim, hidden and layers must be >= 1 (got {}, {}, {})",
                self.input_dim, self.hidden, self.layers
            )));
        }
        if self.kind == ModelKind::GconvDiff && self.readout != ReadoutKind::Linear {
            return Err(Error::Model("gconv_diff uses a linear readout".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w_upd: Tensor,
    pub w_agg: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Readout {
    Linear { w: Tensor, b: Tensor },
    Mlp { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor },
}

/// The full parameter pack: message-passing layers plus readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub readout: Readout,
}

impl GnnParams {
    /// All parameter tensors in a fixed order (layers, then readout).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([&l.w_upd, &l.w_agg, &l.b]);
        }
        match &self.readout {
            Readout::Linear { w, b } => out.extend([w, b]),
            Readout::Mlp { w1, b1, w2, b2 } => out.extend([w1, b1, w2, b2]),
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w_upd);
            out.push(&mut l.w_agg);
            out.push(&mut l.b);
        }
        match &mut self.readout {
            Readout::Linear { w, b } => {
                out.push(w);
                out.push(b);
            }
            Readout::Mlp { w1, b1, w2, b2 } => {
                out.push(w1);
                out.push(b1);
                out.push(w2);
                out.push(b2);
            }
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Model(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Checks every tensor shape against the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let s = &self.spec;
        if self.layers.len() != s.layers {
            return Err(Error::Model(format!("{} layers, spec says {}", self.layers.len(), s.layers)));
        }
        let mut expected = Vec::new();
        for t in 0..s.layers {
            let d_in = if t == 0 { s.input_dim } else { s.hidden };
            expected.extend([(d_in, s.hidden), (d_in, s.hidden), (1, s.hidden)]);
        }
        match (&self.readout, s.readout) {
            (Readout::Linear { .. }, ReadoutKind::Linear) => expected.extend([(s.hidden, 1), (1, 1)]),
            (Readout::Mlp { .. }, ReadoutKind::Mlp) => {
                expected.extend([(s.hidden, s.hidden), (1, s.hidden), (s.hidden, 1), (1, 1)])
            }
            _ => return Err(Error::Model("readout does not match spec".into())),
        }
        for (t, want) in self.tensors().iter().zip(expected) {
            if t.shape() != want {
                return Err(Error::Model(format!("parameter shape {:?}, expected {:?}", t.shape(), want)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: GnnParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    Gaussian { sigma: f64 },
    /// Centered Gaussian with `sigma = sqrt(2 / (fan_in + fan_out))`.
    #[default]
    Xavier,
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scheme: InitScheme) -> Tensor {
    let sigma = match scheme {
        InitScheme::Gaussian { sigma } => sigma,
        InitScheme::Xavier => (2.0 / (rows + cols) as f64).sqrt(),
    };
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

/// I.i.d. centered Gaussian weights, zero biases.
pub fn init_params(spec: ModelSpec, seed: u64, scheme: InitScheme) -> Result<GnnParams> {
    spec.validate()?;
    if let InitScheme::Gaussian { sigma } = scheme {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Model(format!("invalid init sigma {sigma}")));
        }
    }
    let mut rng = stream_rng(seed, Stream::Init);
    let h = spec.hidden;
    let layers = (0..spec.layers)
        .map(|t| {
            let d_in = if t == 0 { spec.input_dim } else { h };
            Layer {
                w_upd: gaussian_matrix(&mut rng, d_in, h, scheme),
                w_agg: gaussian_matrix(&mut rng, d_in, h, scheme),
                b: Tensor::zeros(1, h),
            }
        })
        .collect();
    let readout = match spec.readout {
        ReadoutKind::Linear => Readout::Linear {
            w: gaussian_matrix(&mut rng, h, 1, scheme),
            b: Tensor::zeros(1, 1),
        },
        ReadoutKind::Mlp => Readout::Mlp {
            w1: gaussian_matrix(&mut rng, h, h, scheme),
            b1: Tensor::zeros(1, h),
            w2: gaussian_matrix(&mut rng, h, 1, scheme),
            b2: Tensor::zeros(1, 1),
        },
    };
    Ok(GnnParams { spec, layers, readout })
}

/// Several graphs packed into one block-diagonal graph.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Tensor,
    adj: Arc<Adjacency>,
    offsets: Arc<[usize]>,
    pairs: Option<Vec<(usize, usize)>>,
}

impl Batch {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> Result<Self> {
        let graphs: Vec<&Graph> = graphs.into_iter().collect();
        let first = graphs.first().ok_or(Error::EmptyDataset)?;
        let d = first.feature_dim();
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut data = Vec::with_capacity(total * d);
        let mut lists = Vec::with_capacity(total);
        let mut offsets = vec![0];
        let mut pairs = Some(Vec::with_capacity(graphs.len()));
        for g in &graphs {
            if g.feature_dim() != d {
                return Err(Error::Model(format!(
                    "batch mixes feature dims {d} and {}",
                    g.feature_dim()
                )));
            }
            let base = *offsets.last().unwrap();
            data.extend_from_slice(g.features());
            lists.extend(g.adjacency().iter().map(|l| l.iter().map(|u| u + base).collect::<Vec<_>>()));
            pairs = match (pairs, g.marked_nodes()) {
                (Some(mut p), Some((a, b))) => {
                    p.push((a + base, b + base));
                    Some(p)
                }
                _ => None,
            };
            offsets.push(base + g.num_nodes());
        }
        Ok(Self {
            features: Tensor::from_vec(total, d, data)?,
            adj: Arc::new(Adjacency::from_lists(&lists)),
            offsets: offsets.into(),
            pairs,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Parameter handles of one pack recorded on a tape, in [`GnnParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct TapedParams {
    pub vars: Vec<Var>,
}

pub fn record_params(tape: &mut GradTape, params: &GnnParams, requires_grad: bool) -> TapedParams {
    TapedParams {
        vars: params.tensors().into_iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect(),
    }
}

/// Handles of the intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Per-layer pre-activations `H W_upd + POOL(H) W_agg + b`.
    pub preact: Vec<Var>,
    /// Per-layer hidden states after ReLU.
    pub hidden: Vec<Var>,
    /// Readout input: pooled graph states or marked-pair differences.
    pub readout_input: Var,
    /// Readout outputs before the sigmoid, `graphs x 1`.
    pub logits: Var,
    /// Ratings, `graphs x 1`.
    pub probs: Var,
}

/// One Morris layer on the tape.
pub fn morris_layer(
    tape: &mut GradTape,
    h: Var,
    adj: &Arc<Adjacency>,
    w_upd: Var,
    w_agg: Var,
    b: Var,
    pool: PoolKind,
) -> Result<(Var, Var), TensorError> {
    let pooled = tape.neighbor_pool(h, adj.clone(), pool)?;
    let own = tape.matmul(h, w_upd)?;
    let msg = tape.matmul(pooled, w_agg)?;
    let z = tape.add(own, msg)?;
    let z = tape.add_broadcast_row(z, b)?;
    let out = tape.relu(z)?;
    Ok((z, out))
}

pub fn forward(tape: &mut GradTape, spec: &ModelSpec, p: &TapedParams, batch: &Batch) -> Result<Forward> {
    if batch.features.cols() != spec.input_dim {
        return Err(Error::Model(format!(
            "graph features have dim {}, model expects {}",
            batch.features.cols(),
            spec.input_dim
        )));
    }
    let mut h = tape.constant(batch.features.clone());
    let mut preact = Vec::with_capacity(spec.layers);
    let mut hidden = Vec::with_capacity(spec.layers);
    for t in 0..spec.layers {
        let v = &p.vars[3 * t..3 * t + 3];
        let (z, out) = morris_layer(tape, h, &batch.adj, v[0], v[1], v[2], spec.pool)?;
        preact.push(z);
        hidden.push(out);
        h = out;
    }
    let readout_input = match spec.kind {
        ModelKind::GconvGlob => tape.segment_sum(h, batch.offsets.clone())?,
        ModelKind::GconvDiff => {
            let pairs = batch
                .pairs
                .as_ref()
                .ok_or_else(|| Error::Model("gconv_diff needs a marked node pair on every graph".into()))?;
            let d = tape.row_pair_diff(h, pairs)?;
            match spec.diff {
                DiffMode::Absolute => tape.abs(d)?,
                DiffMode::Signed => d,
            }
        }
    };
    let r = &p.vars[3 * spec.layers..];
    let logits = match spec.readout {
        ReadoutKind::Linear => {
            let z = tape.matmul(readout_input, r[0])?;
            tape.add_broadcast_row(z, r[1])?
        }
        ReadoutKind::Mlp => {
            let z = tape.matmul(readout_input, r[0])?;
            let z = tape.add_broadcast_row(z, r[1])?;
            let z = tape.relu(z)?;
            let z = tape.matmul(z, r[2])?;
            tape.add_broadcast_row(z, r[3])?
        }
    };
    let probs = tape.sigmoid(logits)?;
    Ok(Forward {
        preact,
        hidden,
        readout_input,
        logits,
        probs,
    })
}

/// Ratings of every graph in the batch.
pub fn predict(params: &GnnParams, batch: &Batch) -> Result<Vec<f64>> {
    let mut tape = GradTape::new();
    let p = record_params(&mut tape, params, false);
    let f = forward(&mut tape, &params.spec, &p, batch)?;
    Ok(tape.value(f.probs).data().to_vec())
}

/// Mean BCE loss over the batch and its gradient per parameter tensor.
pub fn loss_and_grad(params: &GnnParams, batch: &Batch, labels: &[f64]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = GradTape::new();
    let p = record_params(&mut tape, params, true);
    let f = forward(&mut tape, &params.spec, &p, batch)?;
    let loss = tape.bce_with_logits(f.logits, labels)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, p.vars.iter().map(|&v| grads.wrt(v)).collect()))
}

pub fn loss(params: &GnnParams, batch: &Batch, labels: &[f64]) -> Result<f64> {
    let mut tape = GradTape::new();
    let p = record_params(&mut tape, params, false);
    let f = forward(&mut tape, &params.spec, &p, batch)?;
    let l = tape.bce_with_logits(f.logits, labels)?;
    Ok(tape.value(l).item())
}

/// Loss and the ReLU/abs sign pattern of the evaluation; finite differences
/// are only meaningful between points with equal patterns.
pub fn loss_with_kinks(params: &GnnParams, batch: &Batch, labels: &[f64]) -> Result<(f64, Vec<bool>)> {
    let mut tape = GradTape::new();
    // untracked ops are stored as leaves and would hide their kinks
    let p = record_params(&mut tape, params, true);
    let f = forward(&mut tape, &params.spec, &p, batch)?;
    let l = tape.bce_with_logits(f.logits, labels)?;
    Ok((tape.value(l).item(), tape.kink_signature()))
}

fn single(g: &Graph, params: &GnnParams, kind: ModelKind) -> Result<f64> {
    if params.spec.kind != kind {
        return Err(Error::Model(format!(
            "parameters belong to {}, not {}",
            params.spec.kind.name(),
            kind.name()
        )));
    }
    Ok(predict(params, &Batch::new([g])?)?[0])
}

pub fn gconv_glob_forward(g: &Graph, params: &GnnParams) -> Result<f64> {
    single(g, params, ModelKind::GconvGlob)
}

pub fn gconv_diff_forward(g: &Graph, params: &GnnParams) -> Result<f64> {
    single(g, params, ModelKind::GconvDiff)
}

/// Hidden states of one graph after every layer.
pub fn hidden_states(g: &Graph, params: &GnnParams) -> Result<Vec<Tensor>> {
    let mut tape = GradTape::new();
    let p = record_params(&mut tape, params, false);
    let f = forward(&mut tape, &params.spec, &p, &Batch::new([g])?)?;
    Ok(f.hidden.iter().map(|&v| tape.value(v).clone()).collect())
}

/// Pre-activations of the first layer for one graph.
pub fn first_layer_preactivations(g: &Graph, params: &GnnParams) -> Result<Tensor> {
    let mut tape = GradTape::new();
    let p = record_params(&mut tape, params, false);
    let f = forward(&mut tape, &params.spec, &p, &Batch::new([g])?)?;
    Ok(tape.value(f.preact[0]).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::{make_one_hot, Letter};
    use crate::graph::{make_dicyclic, make_word_graph, DicyclicSpec};

    fn spec(kind: ModelKind, k: usize, h: usize, t: usize, readout: ReadoutKind) -> ModelSpec {
        ModelSpec {
            kind,
            input_dim: k,
            hidden: h,
            layers: t,
            readout,
            pool: PoolKind::Sum,
            diff: DiffMode::Absolute,
        }
    }

    fn word(a: char, b: char) -> Graph {
        let enc = make_one_hot();
        make_word_graph(Letter::from_char(a).unwrap(), Letter::from_char(b).unwrap(), &enc).unwrap()
    }

    #[test]
    fn word_graph_pool_is_the_other_node() {
        let g = word('E', 'Y');
        let mut tape = GradTape::new();
        let batch = Batch::new([&g]).unwrap();
        let h = tape.constant(batch.features.clone());
        let pooled = tape.neighbor_pool(h, batch.adj.clone(), PoolKind::Sum).unwrap();
        assert_eq!(tape.value(pooled).row(0), g.feature(1));
        assert_eq!(tape.value(pooled).row(1), g.feature(0));
    }

    #[test]
    fn zero_parameters_give_zero_layers_and_half_rating() {
        let mut p = init_params(spec(ModelKind::GconvGlob, 26, 8, 2, ReadoutKind::Linear), 1, InitScheme::Xavier).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let g = word('A', 'B');
        assert!(hidden_states(&g, &p).unwrap().iter().all(|h| h.max_abs() == 0.0));
        assert_eq!(gconv_glob_forward(&g, &p).unwrap(), 0.5);
    }

    #[test]
    fn bridge_rows_split_after_one_layer() {
        let g = make_dicyclic(DicyclicSpec::new(3, 3).unwrap()).unwrap();
        let mut p = init_params(spec(ModelKind::GconvGlob, 1, 6, 1, ReadoutKind::Mlp), 4, InitScheme::Xavier).unwrap();
        p.layers[0].w_agg.data_mut().iter_mut().for_each(|x| *x = x.abs());
        let z = first_layer_preactivations(&g, &p).unwrap();
        assert_eq!(z.row(1), z.row(2));
        assert_ne!(z.row(0), z.row(1));
        assert_eq!(z.row(0), z.row(3));
    }

    #[test]
    fn glob_is_order_invariant_on_words() {
        let p = init_params(spec(ModelKind::GconvGlob, 26, 16, 2, ReadoutKind::Linear), 9, InitScheme::Xavier).unwrap();
        let a = gconv_glob_forward(&word('E', 'Y'), &p).unwrap();
        let b = gconv_glob_forward(&word('Y', 'E'), &p).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn glob_symmetric_init_rates_aa_like_bb() {
        // identical rows for A and B make the construction symmetric under A <-> B
        let mut p = init_params(spec(ModelKind::GconvGlob, 26, 16, 2, ReadoutKind::Linear), 3, InitScheme::Xavier).unwrap();
        let l0 = &mut p.layers[0];
        for w in [&mut l0.w_upd, &mut l0.w_agg] {
            let row_a = w.row(0).to_vec();
            w.row_mut(1).copy_from_slice(&row_a);
        }
        let aa = gconv_glob_forward(&word('A', 'A'), &p).unwrap();
        let bb = gconv_glob_forward(&word('B', 'B'), &p).unwrap();
        assert_eq!(aa, bb);
    }

    #[test]
    fn diff_on_identical_word_is_sigmoid_of_bias() {
        let mut p = init_params(spec(ModelKind::GconvDiff, 26, 8, 1, ReadoutKind::Linear), 5, InitScheme::Xavier).unwrap();
        if let Readout::Linear { b, .. } = &mut p.readout {
            b.set(0, 0, 0.7);
        }
        let r = gconv_diff_forward(&word('Q', 'Q'), &p).unwrap();
        assert_eq!(r, crate::tape::sigmoid(0.7));
    }

    #[test]
    fn symmetric_dicyclic_marked_states_coincide() {
        for m in 3..=10 {
            let g = make_dicyclic(DicyclicSpec::new(m, m).unwrap()).unwrap();
            let (a, b) = g.marked_nodes().unwrap();
            for draw in 0..20 {
                let p = init_params(spec(ModelKind::GconvDiff, 1, 8, 4, ReadoutKind::Linear), draw, InitScheme::Gaussian { sigma: 1.0 }).unwrap();
                for h in hidden_states(&g, &p).unwrap() {
                    let gap = h.row(a).iter().zip(h.row(b)).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
                    assert!(gap <= 1e-12, "m={m} draw={draw} gap={gap}");
                }
            }
        }
    }

    #[test]
    fn asymmetric_dicyclic_has_nonzero_difference() {
        let g = make_dicyclic(DicyclicSpec::new(4, 6).unwrap()).unwrap();
        let (a, b) = g.marked_nodes().unwrap();
        let mut best = 0.0f64;
        for draw in 0..10 {
            let p = init_params(spec(ModelKind::GconvDiff, 1, 8, 3, ReadoutKind::Linear), draw, InitScheme::Xavier).unwrap();
            let h = hidden_states(&g, &p).unwrap().pop().unwrap();
            for (x, y) in h.row(a).iter().zip(h.row(b)) {
                best = best.max((x - y).abs());
            }
        }
        assert!(best > 0.0);
    }

    #[test]
    fn first_layer_matches_learner_form() {
        let g = word('E', 'Y');
        let p = init_params(spec(ModelKind::GconvGlob, 26, 8, 1, ReadoutKind::Linear), 2, InitScheme::Xavier).unwrap();
        let z = first_layer_preactivations(&g, &p).unwrap();
        let u = Tensor::from_vec(1, 26, g.feature(0).to_vec()).unwrap();
        let v = Tensor::from_vec(1, 26, g.feature(1).to_vec()).unwrap();
        let (gm, hm) = (&p.layers[0].w_upd, &p.layers[0].w_agg);
        let z0 = u.matmul(gm).unwrap().add(&v.matmul(hm).unwrap()).unwrap();
        let z1 = u.matmul(hm).unwrap().add(&v.matmul(gm).unwrap()).unwrap();
        assert_eq!(z.row(0), z0.row(0));
        assert_eq!(z.row(1), z1.row(0));
    }

    #[test]
    fn relabeling_leaves_ratings_unchanged() {
        let g = make_dicyclic(DicyclicSpec::new(4, 6).unwrap()).unwrap();
        let perm: Vec<usize> = (0..10).map(|v| (v * 3 + 1) % 10).collect();
        let h = g.relabel(&perm).unwrap();
        for kind in [ModelKind::GconvGlob, ModelKind::GconvDiff] {
            let readout = if kind == ModelKind::GconvGlob { ReadoutKind::Mlp } else { ReadoutKind::Linear };
            let p = init_params(spec(kind, 1, 8, 3, readout), 11, InitScheme::Xavier).unwrap();
            let a = predict(&p, &Batch::new([&g]).unwrap()).unwrap()[0];
            let b = predict(&p, &Batch::new([&h]).unwrap()).unwrap()[0];
            assert!((a - b).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn batch_matches_single_evaluation() {
        let graphs: Vec<Graph> = [(3, 5), (4, 4), (6, 3)]
            .iter()
            .map(|&(m, n)| make_dicyclic(DicyclicSpec::new(m, n).unwrap()).unwrap())
            .collect();
        let p = init_params(spec(ModelKind::GconvGlob, 1, 8, 3, ReadoutKind::Mlp), 6, InitScheme::Xavier).unwrap();
        let batched = predict(&p, &Batch::new(&graphs).unwrap()).unwrap();
        for (g, r) in graphs.iter().zip(batched) {
            assert!((gconv_glob_forward(g, &p).unwrap() - r).abs() < 1e-14);
            assert!(r > 0.0 && r < 1.0);
        }
    }

    #[test]
    fn init_is_deterministic_and_centered() {
        let s = spec(ModelKind::GconvDiff, 26, 64, 2, ReadoutKind::Linear);
        assert_eq!(init_params(s, 42, InitScheme::Xavier).unwrap(), init_params(s, 42, InitScheme::Xavier).unwrap());
        let p = init_params(spec(ModelKind::GconvDiff, 100, 100, 1, ReadoutKind::Linear), 1, InitScheme::Gaussian { sigma: 1.0 }).unwrap();
        let w = p.layers[0].w_upd.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn json_round_trip_and_shape_checks() {
        let p = init_params(spec(ModelKind::GconvGlob, 1, 4, 2, ReadoutKind::Mlp), 8, InitScheme::Xavier).unwrap();
        assert_eq!(GnnParams::from_json(&p.to_json().unwrap()).unwrap(), p);
        let mut bad = p.clone();
        bad.layers[1].w_agg = Tensor::zeros(3, 4);
        assert!(bad.validate().is_err());
        assert!(ModelSpec { readout: ReadoutKind::Mlp, ..spec(ModelKind::GconvDiff, 1, 4, 1, ReadoutKind::Linear) }
            .validate()
            .is_err());
    }

    #[test]
    fn diff_without_marked_pair_is_an_error() {
        let g = crate::graph::make_cycle(5).unwrap();
        let p = init_params(spec(ModelKind::GconvDiff, 1, 4, 1, ReadoutKind::Linear), 1, InitScheme::Xavier).unwrap();
        assert!(gconv_diff_forward(&g, &p).is_err());
        let glob = init_params(spec(ModelKind::GconvGlob, 1, 4, 1, ReadoutKind::Mlp), 1, InitScheme::Xavier).unwrap();
        assert!(gconv_diff_forward(&g, &glob).is_err());
    }
}

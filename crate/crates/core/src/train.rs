//! Projected ADAM and the two training loops for the unrolled network.
//!
//! Supervised training fits the network output to known coefficient columns.
//! Unsupervised training rebuilds W by NNLS from the current outputs each epoch
//! and descends the regularized reconstruction cost, with W held constant
//! during the backward pass.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{matrix_cost_raw, mse_columns_raw, NonNegMatrix};
use crate::net::{backward_batch, forward_batch, infer, ModelFile, ParamGrads, UnrolledModel};
use crate::nnls::{estimate_w, NnlsConfig};

/// ADAM hyperparameters plus first/second moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.001)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// A named slice of parameters and its gradient.
pub struct ParamGroup<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
}

/// One bias-corrected ADAM update over every group, then clamps each
/// parameter to at least `floor`. Fails without touching anything if any
/// gradient is non-finite.
pub fn adam_step(groups: &mut [ParamGroup<'_>], state: &mut AdamState, floor: f64) -> Result<()> {
    for g in groups.iter() {
        if g.values.len() != g.grads.len() {
            return Err(Error::dim("adam_step", g.values.len(), g.grads.len()));
        }
        if g.grads.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { group: g.name.clone() });
        }
    }
    if state.first.is_empty() {
        state.first = groups.iter().map(|g| vec![0.0; g.values.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != groups.len() || state.first.iter().zip(groups.iter()).any(|(m, g)| m.len() != g.values.len()) {
        return Err(Error::State("optimizer moments do not match the parameter groups".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for ((g, m), v) in groups.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        for (((p, &grad), m), v) in g.values.iter_mut().zip(g.grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = state.beta1 * *m + (1.0 - state.beta1) * grad;
            *v = state.beta2 * *v + (1.0 - state.beta2) * grad * grad;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            *p = p.max(floor);
        }
    }
    Ok(())
}

/// Applies one optimizer step to every trainable parameter of `model`.
pub fn apply_grads(model: &mut UnrolledModel, grads: &ParamGrads, state: &mut AdamState, floor: f64) -> Result<()> {
    let learn_reg = model.learn_reg;
    let (l1_grad, l2_grad) = ([grads.lambda1], [grads.lambda2]);
    let mut reg = model.reg;
    let mut groups = Vec::with_capacity(2 * model.depth() + 2);
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        let (a, b) = layer.parts_mut();
        groups.push(ParamGroup {
            name: format!("A[{l}]"),
            values: a.as_slice_mut().expect("standard layout"),
            grads: grads.a[l].as_slice().expect("standard layout"),
        });
        groups.push(ParamGroup {
            name: format!("B[{l}]"),
            values: b.as_slice_mut().expect("standard layout"),
            grads: grads.b[l].as_slice().expect("standard layout"),
        });
    }
    if learn_reg {
        groups.push(ParamGroup {
            name: "lambda1".into(),
            values: std::slice::from_mut(&mut reg.lambda1),
            grads: &l1_grad,
        });
        groups.push(ParamGroup {
            name: "lambda2".into(),
            values: std::slice::from_mut(&mut reg.lambda2),
            grads: &l2_grad,
        });
    }
    adam_step(&mut groups, state, floor)?;
    drop(groups);
    model.reg = reg;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub projection_floor: f64,
    /// Stop after this many epochs without a new best training loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: None,
            seed: 0,
            projection_floor: 0.0,
            patience: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.projection_floor.is_finite() && self.projection_floor >= 0.0) {
            return Err(Error::Config(format!("projection floor must be >= 0, got {}", self.projection_floor)));
        }
        Ok(())
    }

    fn batches(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        match self.batch_size {
            None => vec![(0..n).collect()],
            Some(size) => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                idx.chunks(size).map(<[usize]>::to_vec).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub loss: Vec<f64>,
    pub metric: Vec<Option<f64>>,
    pub seconds: Vec<f64>,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.loss.len()
    }

    fn push(&mut self, loss: f64, metric: Option<f64>, seconds: f64) {
        self.loss.push(loss);
        self.metric.push(metric);
        self.seconds.push(seconds);
    }

    /// `epoch,loss,metric,seconds` with an empty metric cell when absent.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "metric", "seconds"])?;
        for (i, ((loss, metric), secs)) in self.loss.iter().zip(&self.metric).zip(&self.seconds).enumerate() {
            let metric = metric.map(|m| m.to_string()).unwrap_or_default();
            w.write_record([i.to_string(), loss.to_string(), metric, secs.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Optional extras for the training loops.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Held-out `(V, H)` pair scored with column MSE after each epoch
    /// (supervised) or `(V, _)` scored by reconstruction MSE (unsupervised).
    pub validation: Option<(&'a NonNegMatrix, &'a NonNegMatrix)>,
    /// Called after every optimizer step with the epoch index and the model.
    pub on_step: Option<&'a mut dyn FnMut(usize, &UnrolledModel)>,
}

struct Patience {
    best: f64,
    stale: usize,
    limit: Option<usize>,
}

impl Patience {
    fn new(limit: Option<usize>) -> Self {
        Patience {
            best: f64::INFINITY,
            stale: 0,
            limit,
        }
    }

    fn exhausted(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.limit.is_some_and(|limit| self.stale >= limit)
    }
}

fn check_training_shapes(model: &UnrolledModel, v: &NonNegMatrix) -> Result<()> {
    if v.rows() != model.f() {
        return Err(Error::dim("training data rows", model.f(), v.rows()));
    }
    Ok(())
}

fn select<'a>(m: &'a NonNegMatrix, idx: &[usize], n: usize) -> Result<std::borrow::Cow<'a, NonNegMatrix>> {
    if idx.len() == n {
        Ok(std::borrow::Cow::Borrowed(m))
    } else {
        Ok(std::borrow::Cow::Owned(m.select_columns(idx)?))
    }
}

/// Supervised loss (per-entry squared error averaged over columns) and its
/// gradient with respect to the network output.
pub fn supervised_loss(output: &NonNegMatrix, targets: &NonNegMatrix) -> (f64, Array2<f64>) {
    let (k, n) = output.shape();
    let loss = mse_columns_raw(output.view(), targets.view());
    let scale = 2.0 / (k * n) as f64;
    let grad = Zip::from(output.as_array())
        .and(targets.as_array())
        .map_collect(|&o, &t| scale * (o - t));
    (loss, grad)
}

pub fn train_supervised(
    v: &NonNegMatrix,
    targets: &NonNegMatrix,
    model: UnrolledModel,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<(UnrolledModel, TrainTrace)> {
    train_supervised_with(v, targets, model, cfg, adam, TrainHooks::default())
}

pub fn train_supervised_with(
    v: &NonNegMatrix,
    targets: &NonNegMatrix,
    mut model: UnrolledModel,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    mut hooks: TrainHooks<'_>,
) -> Result<(UnrolledModel, TrainTrace)> {
    cfg.validate()?;
    check_training_shapes(&model, v)?;
    if targets.shape() != (model.k(), v.cols()) {
        return Err(Error::dim(
            "supervised targets",
            format!("{}x{}", model.k(), v.cols()),
            format!("{:?}", targets.shape()),
        ));
    }
    let n = v.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainTrace::default();
    let mut patience = Patience::new(cfg.patience);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut epoch_loss = 0.0;
        for batch in cfg.batches(n, &mut rng) {
            let vb = select(v, &batch, n)?;
            let tb = select(targets, &batch, n)?;
            let (out, tape) = forward_batch(&model, &vb)?;
            let (loss, grad) = supervised_loss(&out, &tb);
            epoch_loss += loss * batch.len() as f64 / n as f64;
            let grads = backward_batch(&model, &tape, &vb, grad.view())?;
            apply_grads(&mut model, &grads, adam, cfg.projection_floor)?;
            if let Some(cb) = hooks.on_step.as_mut() {
                cb(epoch, &model);
            }
        }
        let metric = match hooks.validation {
            Some((vv, vh)) => Some(mse_columns_raw(infer(&model, vv)?.view(), vh.view())),
            None => None,
        };
        trace.push(epoch_loss, metric, start.elapsed().as_secs_f64());
        if patience.exhausted(epoch_loss) {
            break;
        }
    }
    Ok((model, trace))
}

/// Result of unsupervised training.
#[derive(Debug, Clone)]
pub struct UnsupervisedFit {
    pub model: UnrolledModel,
    pub trace: TrainTrace,
    /// NNLS dictionary for the final model's outputs on the training data.
    pub w: NonNegMatrix,
}

/// Gradient of `matrix_cost(V, W, H, reg) / n` with respect to H.
fn reconstruction_grad(v: &NonNegMatrix, w: &NonNegMatrix, h: &NonNegMatrix, model: &UnrolledModel, n: usize) -> Array2<f64> {
    let wv = w.view();
    let residual = wv.dot(&h.view()) - v.view();
    let mut grad = wv.t().dot(&residual);
    let (l1, l2) = (model.reg.lambda1, model.reg.lambda2);
    let inv_n = 1.0 / n as f64;
    Zip::from(&mut grad)
        .and(h.as_array())
        .for_each(|g, &hv| *g = (*g + l1 + l2 * hv) * inv_n);
    grad
}

pub fn train_unsupervised(
    v: &NonNegMatrix,
    model: UnrolledModel,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    nnls_cfg: &NnlsConfig,
) -> Result<UnsupervisedFit> {
    train_unsupervised_with(v, model, cfg, adam, nnls_cfg, TrainHooks::default())
}

pub fn train_unsupervised_with(
    v: &NonNegMatrix,
    mut model: UnrolledModel,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    nnls_cfg: &NnlsConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<UnsupervisedFit> {
    cfg.validate()?;
    check_training_shapes(&model, v)?;
    // the penalties shape the objective itself, so they are never trained here
    model.learn_reg = false;
    let n = v.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainTrace::default();
    let mut patience = Patience::new(cfg.patience);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (h, tape) = forward_batch(&model, v)?;
        let w = estimate_w(v, &h, nnls_cfg)?;
        let loss = matrix_cost_raw(v.view(), w.view(), h.view(), model.reg) / n as f64;
        for batch in cfg.batches(n, &mut rng) {
            let mut grads = if batch.len() == n {
                let grad = reconstruction_grad(v, &w, &h, &model, n);
                backward_batch(&model, &tape, v, grad.view())?
            } else {
                let vb = v.select_columns(&batch)?;
                let (hb, tb) = forward_batch(&model, &vb)?;
                let grad = reconstruction_grad(&vb, &w, &hb, &model, batch.len());
                backward_batch(&model, &tb, &vb, grad.view())?
            };
            grads.lambda1 = 0.0;
            grads.lambda2 = 0.0;
            apply_grads(&mut model, &grads, adam, cfg.projection_floor)?;
            if let Some(cb) = hooks.on_step.as_mut() {
                cb(epoch, &model);
            }
        }
        let metric = match hooks.validation {
            Some((vv, _)) => {
                let hv = infer(&model, vv)?;
                let w_now = estimate_w(v, &infer(&model, v)?, nnls_cfg)?;
                Some(mse_columns_raw(vv.view(), w_now.view().dot(&hv.view()).view()))
            }
            None => None,
        };
        trace.push(loss, metric, start.elapsed().as_secs_f64());
        if patience.exhausted(loss) {
            break;
        }
    }
    let w = estimate_w(v, &infer(&model, v)?, nnls_cfg)?;
    Ok(UnsupervisedFit { model, trace, w })
}

const CHECKPOINT_FORMAT: &str = "dnmf-checkpoint";

/// Model plus optimizer state, stored as one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: ModelFile,
    adam: AdamState,
}

pub fn save_checkpoint(path: &Path, model: &UnrolledModel, adam: &AdamState) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        model: model.into(),
        adam: adam.clone(),
    };
    let mut out = fs::File::create(path)?;
    out.write_all(serde_json::to_string(&file)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(UnrolledModel, AdamState)> {
    let file: CheckpointFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.format != CHECKPOINT_FORMAT || file.version != 1 {
        return Err(Error::State(format!("unsupported checkpoint `{}` v{}", file.format, file.version)));
    }
    Ok((file.model.try_into()?, file.adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RegParams;
    use rand::Rng;

    fn group<'a>(values: &'a mut [f64], grads: &'a [f64]) -> ParamGroup<'a> {
        ParamGroup {
            name: "p".into(),
            values,
            grads,
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [0.7, 1.3];
        let mut state = AdamState::default();
        adam_step(&mut [group(&mut p, &[0.0, 0.0])], &mut state, 0.0).unwrap();
        assert_eq!(p, [0.7, 1.3]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 1e4] {
            let mut p = [1.0];
            let mut state = AdamState::default();
            adam_step(&mut [group(&mut p, &[g])], &mut state, 0.0).unwrap();
            let expected = 1.0 - 0.001 * g.signum();
            assert!((p[0] - expected).abs() < 1e-8, "g={g}: {}", p[0]);
        }
    }

    #[test]
    fn projection_clamps_to_floor() {
        let mut p = [0.0005];
        let mut state = AdamState::default();
        adam_step(&mut [group(&mut p, &[1.0])], &mut state, 0.0).unwrap();
        assert_eq!(p[0], 0.0);
        let mut p = [0.0005];
        let mut state = AdamState::default();
        adam_step(&mut [group(&mut p, &[1.0])], &mut state, 1e-8).unwrap();
        assert_eq!(p[0], 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = [1.0];
        let mut q = [1.0];
        let mut state = AdamState::default();
        let mut groups = [
            group(&mut p, &[0.1]),
            ParamGroup {
                name: "B[3]".into(),
                values: &mut q,
                grads: &[f64::NAN],
            },
        ];
        match adam_step(&mut groups, &mut state, 0.0) {
            Err(Error::Numeric { group }) => assert_eq!(group, "B[3]"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p, [1.0]);
        assert_eq!(state.step, 0);
    }

    fn toy_problem(seed: u64, f: usize, k: usize, n: usize) -> (NonNegMatrix, NonNegMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_simple_fn((f, k), || rng.random::<f64>());
        let h = Array2::from_shape_simple_fn((k, n), || 0.1 + rng.random::<f64>());
        (NonNegMatrix::new(w.dot(&h)).unwrap(), NonNegMatrix::new(h).unwrap())
    }

    #[test]
    fn self_consistent_targets_have_zero_loss_and_gradient() {
        let (v, _) = toy_problem(1, 6, 3, 10);
        let model = UnrolledModel::supervised_init(6, 3, 4).unwrap();
        let targets = infer(&model, &v).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let (trained, trace) = train_supervised(&v, &targets, model.clone(), &cfg, &mut AdamState::default()).unwrap();
        assert_eq!(trace.loss, vec![0.0; 3]);
        assert_eq!(trained, model);
    }

    #[test]
    fn supervised_training_reduces_loss_and_stays_nonnegative() {
        let (v, h) = toy_problem(2, 8, 3, 40);
        let model = UnrolledModel::supervised_init(8, 3, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let mut violations = 0;
        let mut observer = |_: usize, m: &UnrolledModel| {
            if m.min_param() < 0.0 {
                violations += 1;
            }
        };
        let hooks = TrainHooks {
            validation: Some((&v, &h)),
            on_step: Some(&mut observer),
        };
        let mut adam = AdamState::new(0.01);
        let (_, trace) = train_supervised_with(&v, &h, model, &cfg, &mut adam, hooks).unwrap();
        assert_eq!(violations, 0);
        assert_eq!(trace.epochs(), 200);
        assert!(trace.loss.iter().all(|l| l.is_finite()));
        assert!(trace.loss[199] < trace.loss[0]);
        assert!(trace.metric.iter().all(Option::is_some));
    }

    #[test]
    fn training_is_deterministic_with_minibatches() {
        let (v, h) = toy_problem(3, 5, 2, 30);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: Some(7),
            seed: 42,
            ..Default::default()
        };
        let run = || {
            let model = UnrolledModel::supervised_init(5, 2, 3).unwrap();
            train_supervised(&v, &h, model, &cfg, &mut AdamState::default()).unwrap()
        };
        let (m1, t1) = run();
        let (m2, t2) = run();
        assert_eq!(m1, m2);
        assert_eq!(t1.loss, t2.loss);
    }

    #[test]
    fn patience_stops_early() {
        let (v, _) = toy_problem(4, 4, 2, 6);
        let model = UnrolledModel::supervised_init(4, 2, 2).unwrap();
        let targets = infer(&model, &v).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            patience: Some(3),
            ..Default::default()
        };
        let (_, trace) = train_supervised(&v, &targets, model, &cfg, &mut AdamState::default()).unwrap();
        assert_eq!(trace.epochs(), 4);
    }

    #[test]
    fn unsupervised_zero_epochs_returns_initial_model() {
        let (v, _) = toy_problem(5, 6, 2, 12);
        let model = UnrolledModel::unsupervised_init(6, 2, 3, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let fit = train_unsupervised(&v, model.clone(), &cfg, &mut AdamState::default(), &NnlsConfig::default()).unwrap();
        assert_eq!(fit.model, model);
        assert_eq!(fit.trace.epochs(), 0);
        let expected = estimate_w(&v, &infer(&model, &v).unwrap(), &NnlsConfig::default()).unwrap();
        assert_eq!(fit.w, expected);
    }

    #[test]
    fn unsupervised_single_column() {
        let (v, _) = toy_problem(6, 5, 2, 1);
        let model = UnrolledModel::unsupervised_init(5, 2, 3, 0.0).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let fit = train_unsupervised(&v, model, &cfg, &mut AdamState::default(), &NnlsConfig::default()).unwrap();
        assert_eq!(fit.trace.epochs(), 5);
        assert_eq!(fit.w.shape(), (5, 2));
    }

    #[test]
    fn unsupervised_keeps_penalties_frozen() {
        let (v, _) = toy_problem(7, 6, 2, 15);
        let model = UnrolledModel::unsupervised_init(6, 2, 2, 2.0).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let fit = train_unsupervised(&v, model, &cfg, &mut AdamState::new(0.01), &NnlsConfig::default()).unwrap();
        assert_eq!(fit.model.reg, RegParams::uniform(2.0).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (v, h) = toy_problem(8, 4, 2, 10);
        let model = UnrolledModel::supervised_init(4, 2, 2).unwrap();
        let mut adam = AdamState::default();
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let (model, _) = train_supervised(&v, &h, model, &cfg, &mut adam).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &model, &adam).unwrap();
        let (m2, a2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2, model);
        assert_eq!(a2, adam);
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TrainTrace {
            loss: vec![2.0, 1.5],
            metric: vec![None, Some(0.25)],
            seconds: vec![0.5, 0.5],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,loss,metric,seconds\n0,2,,0.5\n1,1.5,0.25,0.5\n");
    }
}

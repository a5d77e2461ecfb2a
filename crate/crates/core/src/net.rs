//! The unrolled network. Each layer maps `(h, v)` to
//! `h ⊙ A v / (B h + λ₁ + λ₂ h)` with its own non-negative `A` (k×f) and `B`
//! (k×k); the penalty weights are shared by all layers.
//!
//! Gradients are hand-written vector-Jacobian products. Denominators that were
//! clamped to [`EPS_DIV`] in the forward pass are treated as constants.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{NonNegMatrix, NonNegVector, RegParams, EPS_DIV};

/// Matrices of one layer: `A` stands in for `Wᵀ`, `B` for `WᵀW`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    a: Array2<f64>,
    b: Array2<f64>,
}

impl LayerParams {
    pub fn new(a: NonNegMatrix, b: NonNegMatrix) -> Result<Self> {
        let (k, _) = a.shape();
        if b.shape() != (k, k) {
            return Err(Error::dim("LayerParams (B)", format!("{k}x{k}"), format!("{:?}", b.shape())));
        }
        Ok(LayerParams {
            a: a.into_inner(),
            b: b.into_inner(),
        })
    }

    pub fn constant(f: usize, k: usize, value: f64) -> Self {
        LayerParams {
            a: Array2::from_elem((k, f), value),
            b: Array2::from_elem((k, k), value),
        }
    }

    /// `A = Wᵀ`, `B = WᵀW`: the layer then performs one regularized MU step.
    pub fn from_dictionary(w: &NonNegMatrix) -> Self {
        let wt = w.view().t().to_owned();
        let b = wt.dot(&w.view());
        LayerParams { a: wt, b }
    }

    pub fn a(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    pub fn b(&self) -> ArrayView2<'_, f64> {
        self.b.view()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.a, &mut self.b)
    }

    fn k(&self) -> usize {
        self.a.nrows()
    }

    fn f(&self) -> usize {
        self.a.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledModel {
    layers: Vec<LayerParams>,
    pub reg: RegParams,
    /// Whether the optimizer updates `reg`.
    pub learn_reg: bool,
    h0_value: f64,
    f: usize,
    k: usize,
}

impl UnrolledModel {
    pub fn new(layers: Vec<LayerParams>, reg: RegParams, learn_reg: bool, h0_value: f64) -> Result<Self> {
        reg.validate()?;
        let first = layers.first().ok_or_else(|| Error::Config("model needs at least one layer".into()))?;
        let (f, k) = (first.f(), first.k());
        if f == 0 || k == 0 {
            return Err(Error::dim("UnrolledModel", "f, k >= 1", format!("f={f}, k={k}")));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.a.dim() != (k, f) || layer.b.dim() != (k, k) {
                return Err(Error::dim(
                    "UnrolledModel layer",
                    format!("A {k}x{f}, B {k}x{k}"),
                    format!("layer {i}: A {:?}, B {:?}", layer.a.dim(), layer.b.dim()),
                ));
            }
            if layer.a.iter().chain(layer.b.iter()).any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("layer {i} has a negative or non-finite weight")));
            }
        }
        if !(h0_value.is_finite() && h0_value > 0.0) {
            return Err(Error::Config(format!("h0 value must be > 0, got {h0_value}")));
        }
        Ok(UnrolledModel {
            layers,
            reg,
            learn_reg,
            h0_value,
            f,
            k,
        })
    }

    /// Every weight, and `h₀`, set to `value`.
    pub fn constant(f: usize, k: usize, depth: usize, value: f64, reg: RegParams, learn_reg: bool) -> Result<Self> {
        Self::new(vec![LayerParams::constant(f, k, value); depth], reg, learn_reg, value)
    }

    /// Initialization for supervised training: all weights, both penalties and
    /// `h₀` equal to 1, penalties trainable.
    pub fn supervised_init(f: usize, k: usize, depth: usize) -> Result<Self> {
        Self::constant(f, k, depth, 1.0, RegParams::new(1.0, 1.0)?, true)
    }

    /// Initialization for unsupervised training: unit weights, both penalties
    /// frozen at `lambda`.
    pub fn unsupervised_init(f: usize, k: usize, depth: usize, lambda: f64) -> Result<Self> {
        Self::constant(f, k, depth, 1.0, RegParams::uniform(lambda)?, false)
    }

    /// All layers equal to [`LayerParams::from_dictionary`].
    pub fn from_dictionary(w: &NonNegMatrix, depth: usize, reg: RegParams, h0_value: f64) -> Result<Self> {
        Self::new(vec![LayerParams::from_dictionary(w); depth], reg, false, h0_value)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h0_value(&self) -> f64 {
        self.h0_value
    }

    /// Smallest entry over every weight and, when trainable, the penalties.
    pub fn min_param(&self) -> f64 {
        let weights = self.layers.iter().flat_map(|l| l.a.iter().chain(l.b.iter())).copied();
        let min = weights.fold(f64::INFINITY, f64::min);
        if self.learn_reg {
            min.min(self.reg.lambda1).min(self.reg.lambda2)
        } else {
            min
        }
    }

    fn check_input_rows(&self, rows: usize) -> Result<()> {
        if rows != self.f {
            return Err(Error::dim("network input", self.f, rows));
        }
        Ok(())
    }
}

/// Intermediates of one layer for one column.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeEntry {
    pub h_in: Array1<f64>,
    /// `A v`
    pub u: Array1<f64>,
    /// `B h + λ₁ + λ₂ h`, before clamping.
    pub d: Array1<f64>,
    pub h_out: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    pub entries: Vec<TapeEntry>,
}

fn layer_eval(h: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, p: &LayerParams, reg: RegParams) -> TapeEntry {
    let u = p.a.dot(&v);
    let mut d = p.b.dot(&h);
    Zip::from(&mut d).and(&h).for_each(|d, &hi| *d += reg.lambda1 + reg.lambda2 * hi);
    let h_out = Zip::from(&h).and(&u).and(&d).map_collect(|&hi, &ui, &di| hi * ui / di.max(EPS_DIV));
    TapeEntry {
        h_in: h.to_owned(),
        u,
        d,
        h_out,
    }
}

/// One layer applied to a single column.
pub fn layer_forward(h: &NonNegVector, v: &NonNegVector, p: &LayerParams, reg: RegParams) -> Result<NonNegVector> {
    reg.validate()?;
    if v.len() != p.f() {
        return Err(Error::dim("layer_forward (v)", p.f(), v.len()));
    }
    if h.len() != p.k() {
        return Err(Error::dim("layer_forward (h)", p.k(), h.len()));
    }
    Ok(NonNegVector::from_trusted(layer_eval(h.view(), v.view(), p, reg).h_out))
}

/// Propagates one column through every layer, starting from `h₀ = h0_value·1`.
pub fn forward(model: &UnrolledModel, v: &NonNegVector) -> Result<(NonNegVector, ForwardTape)> {
    model.check_input_rows(v.len())?;
    let mut h = Array1::from_elem(model.k, model.h0_value);
    let mut entries = Vec::with_capacity(model.depth());
    for layer in &model.layers {
        let entry = layer_eval(h.view(), v.view(), layer, model.reg);
        h = entry.h_out.clone();
        entries.push(entry);
    }
    Ok((NonNegVector::from_trusted(h), ForwardTape { entries }))
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Vector-Jacobian products of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub h: Array1<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Upstream gradient pushed through `u` and `d`; clamped denominators pass nothing.
fn local_grads(g: ArrayView1<'_, f64>, e: &TapeEntry) -> (Array1<f64>, Array1<f64>) {
    let gu = Zip::from(&g).and(&e.h_in).and(&e.d).map_collect(|&gi, &hi, &di| gi * hi / di.max(EPS_DIV));
    let gd = Zip::from(&g)
        .and(&e.h_in)
        .and(&e.u)
        .and(&e.d)
        .map_collect(|&gi, &hi, &ui, &di| if di < EPS_DIV { 0.0 } else { -gi * hi * ui / (di * di) });
    (gu, gd)
}

pub fn layer_backward(
    entry: &TapeEntry,
    grad_out: ArrayView1<'_, f64>,
    v: &NonNegVector,
    p: &LayerParams,
    reg: RegParams,
) -> Result<LayerGrads> {
    let k = p.k();
    if grad_out.len() != k || entry.h_in.len() != k || entry.u.len() != k || entry.d.len() != k {
        return Err(Error::dim("layer_backward", k, grad_out.len()));
    }
    if v.len() != p.f() {
        return Err(Error::dim("layer_backward (v)", p.f(), v.len()));
    }
    let (gu, gd) = local_grads(grad_out, entry);
    let mut gh = p.b.t().dot(&gd);
    Zip::from(&mut gh)
        .and(&grad_out)
        .and(&entry.u)
        .and(&entry.d)
        .and(&gd)
        .for_each(|out, &gi, &ui, &di, &gdi| *out += gi * ui / di.max(EPS_DIV) + reg.lambda2 * gdi);
    let outer = |x: &Array1<f64>, y: ArrayView1<'_, f64>| {
        x.view().insert_axis(Axis(1)).dot(&y.insert_axis(Axis(0)))
    };
    Ok(LayerGrads {
        a: standard(outer(&gu, v.view())),
        b: standard(outer(&gd, entry.h_in.view())),
        lambda1: gd.sum(),
        lambda2: gd.dot(&entry.h_in),
        h: gh,
    })
}

/// Gradients for every parameter of a model. Penalty gradients are summed
/// over layers since the weights are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub a: Vec<Array2<f64>>,
    pub b: Vec<Array2<f64>>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ParamGrads {
    pub fn zeros_like(model: &UnrolledModel) -> Self {
        ParamGrads {
            a: vec![Array2::zeros((model.k, model.f)); model.depth()],
            b: vec![Array2::zeros((model.k, model.k)); model.depth()],
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.a.iter_mut().chain(self.b.iter_mut()).for_each(|m| *m *= factor);
        self.lambda1 *= factor;
        self.lambda2 *= factor;
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += y;
        }
        for (x, y) in self.b.iter_mut().zip(&other.b) {
            *x += y;
        }
        self.lambda1 += other.lambda1;
        self.lambda2 += other.lambda2;
    }
}

/// Reverse sweep through a tape recorded by [`forward`] on the same `v`.
pub fn backward(model: &UnrolledModel, tape: &ForwardTape, v: &NonNegVector, grad_h_out: ArrayView1<'_, f64>) -> Result<ParamGrads> {
    if tape.entries.len() != model.depth() {
        return Err(Error::State(format!(
            "tape has {} layers, model has {}",
            tape.entries.len(),
            model.depth()
        )));
    }
    model.check_input_rows(v.len())?;
    if grad_h_out.len() != model.k {
        return Err(Error::dim("backward (grad)", model.k, grad_h_out.len()));
    }
    let mut grads = ParamGrads::zeros_like(model);
    let mut g = grad_h_out.to_owned();
    for (l, (layer, entry)) in model.layers.iter().zip(&tape.entries).enumerate().rev() {
        if entry.h_in.len() != model.k {
            return Err(Error::State(format!("tape entry {l} does not match the model")));
        }
        let lg = layer_backward(entry, g.view(), v, layer, model.reg)?;
        grads.a[l] = lg.a;
        grads.b[l] = lg.b;
        grads.lambda1 += lg.lambda1;
        grads.lambda2 += lg.lambda2;
        g = lg.h;
    }
    Ok(grads)
}

/// Batched intermediates: column `j` of each matrix is the per-column tape entry.
#[derive(Debug, Clone)]
pub struct BatchTape {
    h_in: Vec<Array2<f64>>,
    u: Vec<Array2<f64>>,
    d: Vec<Array2<f64>>,
}

fn layer_eval_batch(h: &Array2<f64>, v: ArrayView2<'_, f64>, p: &LayerParams, reg: RegParams) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let u = p.a.dot(&v);
    let mut d = p.b.dot(h);
    Zip::from(&mut d).and(h).for_each(|d, &hi| *d += reg.lambda1 + reg.lambda2 * hi);
    let out = Zip::from(h).and(&u).and(&d).map_collect(|&hi, &ui, &di| hi * ui / di.max(EPS_DIV));
    (u, d, out)
}

/// Columnwise forward for a whole matrix at once, keeping the tape.
pub fn forward_batch(model: &UnrolledModel, v: &NonNegMatrix) -> Result<(NonNegMatrix, BatchTape)> {
    model.check_input_rows(v.rows())?;
    let mut h = Array2::from_elem((model.k, v.cols()), model.h0_value);
    let mut tape = BatchTape {
        h_in: Vec::with_capacity(model.depth()),
        u: Vec::with_capacity(model.depth()),
        d: Vec::with_capacity(model.depth()),
    };
    for layer in &model.layers {
        let (u, d, out) = layer_eval_batch(&h, v.view(), layer, model.reg);
        tape.h_in.push(std::mem::replace(&mut h, out));
        tape.u.push(u);
        tape.d.push(d);
    }
    Ok((NonNegMatrix::from_trusted(h), tape))
}

/// Gradients summed over columns for a batch forward pass.
pub fn backward_batch(model: &UnrolledModel, tape: &BatchTape, v: &NonNegMatrix, grad_h_out: ArrayView2<'_, f64>) -> Result<ParamGrads> {
    if tape.h_in.len() != model.depth() {
        return Err(Error::State(format!(
            "tape has {} layers, model has {}",
            tape.h_in.len(),
            model.depth()
        )));
    }
    if grad_h_out.dim() != (model.k, v.cols()) || tape.h_in.first().map(|h| h.ncols()) != Some(v.cols()) {
        return Err(Error::dim(
            "backward_batch",
            format!("{}x{}", model.k, v.cols()),
            format!("{:?}", grad_h_out.dim()),
        ));
    }
    let reg = model.reg;
    let mut grads = ParamGrads::zeros_like(model);
    let mut g = grad_h_out.to_owned();
    for l in (0..model.depth()).rev() {
        let (h, u, d) = (&tape.h_in[l], &tape.u[l], &tape.d[l]);
        let gu = Zip::from(&g).and(h).and(d).map_collect(|&gi, &hi, &di| gi * hi / di.max(EPS_DIV));
        let gd = Zip::from(&g)
            .and(h)
            .and(u)
            .and(d)
            .map_collect(|&gi, &hi, &ui, &di| if di < EPS_DIV { 0.0 } else { -gi * hi * ui / (di * di) });
        grads.a[l] = standard(gu.dot(&v.view().t()));
        grads.b[l] = standard(gd.dot(&h.t()));
        grads.lambda1 += gd.sum();
        grads.lambda2 += (&gd * h).sum();
        let mut gh = model.layers[l].b.t().dot(&gd);
        Zip::from(&mut gh)
            .and(&g)
            .and(u)
            .and(d)
            .and(&gd)
            .for_each(|out, &gi, &ui, &di, &gdi| *out += gi * ui / di.max(EPS_DIV) + reg.lambda2 * gdi);
        g = gh;
    }
    Ok(grads)
}

/// Runs every column of `v` through the network and gathers the outputs into H.
pub fn infer(model: &UnrolledModel, v: &NonNegMatrix) -> Result<NonNegMatrix> {
    model.check_input_rows(v.rows())?;
    let mut h = Array2::from_elem((model.k, v.cols()), model.h0_value);
    for layer in &model.layers {
        h = layer_eval_batch(&h, v.view(), layer, model.reg).2;
    }
    Ok(NonNegMatrix::from_trusted(h))
}

const MODEL_FORMAT: &str = "dnmf-model";
const MODEL_VERSION: u32 = 1;

/// On-disk form of [`UnrolledModel`]: a versioned JSON document with
/// row-major layer matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelFile {
    format: String,
    version: u32,
    f: usize,
    k: usize,
    depth: usize,
    lambda1: f64,
    lambda2: f64,
    learn_reg: bool,
    h0_value: f64,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl From<&UnrolledModel> for ModelFile {
    fn from(m: &UnrolledModel) -> Self {
        let flat = |x: &Array2<f64>| x.iter().copied().collect::<Vec<_>>();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            f: m.f,
            k: m.k,
            depth: m.depth(),
            lambda1: m.reg.lambda1,
            lambda2: m.reg.lambda2,
            learn_reg: m.learn_reg,
            h0_value: m.h0_value,
            a: m.layers.iter().map(|l| flat(&l.a)).collect(),
            b: m.layers.iter().map(|l| flat(&l.b)).collect(),
        }
    }
}

impl TryFrom<ModelFile> for UnrolledModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::State(format!("not a model file (format `{}`)", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::State(format!("unsupported model version {}", file.version)));
        }
        if file.a.len() != file.depth || file.b.len() != file.depth {
            return Err(Error::dim("model file layers", file.depth, file.a.len().min(file.b.len())));
        }
        let layers = file
            .a
            .into_iter()
            .zip(file.b)
            .map(|(a, b)| {
                LayerParams::new(
                    NonNegMatrix::from_shape_vec(file.k, file.f, a)?,
                    NonNegMatrix::from_shape_vec(file.k, file.k, b)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        UnrolledModel::new(layers, RegParams::new(file.lambda1, file.lambda2)?, file.learn_reg, file.h0_value)
    }
}

impl UnrolledModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

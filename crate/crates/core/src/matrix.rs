//! Dense non-negative matrices and vectors, the elementwise kernels used by the
//! update rules, and the regularized cost functions.
//!
//! All arithmetic is `f64`. Every denominator that appears in an update rule
//! goes through [`safe_divide`], which clamps it to [`EPS_DIV`] first.

use ndarray::{Array1, Array2, ArrayBase, ArrayView1, ArrayView2, Axis, Data, Dimension, Ix1, Ix2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest denominator allowed in an elementwise division.
pub const EPS_DIV: f64 = 1e-12;

/// Pair of L1/L2 penalty weights applied to the coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegParams {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl RegParams {
    pub const NONE: RegParams = RegParams {
        lambda1: 0.0,
        lambda2: 0.0,
    };

    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let reg = RegParams { lambda1, lambda2 };
        reg.validate()?;
        Ok(reg)
    }

    /// Both weights set to the same value.
    pub fn uniform(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_entries<'a>(values: impl Iterator<Item = ((usize, usize), &'a f64)>) -> Result<()> {
    for ((row, col), &value) in values {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::NegativeEntry { row, col, value });
        }
    }
    Ok(())
}

/// Dense matrix whose entries are all finite and `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct NonNegMatrix(Array2<f64>);

impl NonNegMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::dim("NonNegMatrix", "at least 1x1", format!("{:?}", data.dim())));
        }
        check_entries(data.indexed_iter())?;
        Ok(NonNegMatrix(data))
    }

    pub fn from_shape_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|_| Error::dim("NonNegMatrix", rows * cols, len))?;
        Self::new(arr)
    }

    /// Matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((rows, cols), value))
    }

    pub fn identity(n: usize) -> Self {
        NonNegMatrix(Array2::eye(n))
    }

    /// Wraps an array the caller has already established to be non-negative.
    pub(crate) fn from_trusted(data: Array2<f64>) -> Self {
        debug_assert!(data.iter().all(|&v| v >= 0.0 && v.is_finite()));
        NonNegMatrix(data)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn column(&self, j: usize) -> NonNegVector {
        NonNegVector(self.0.column(j).to_owned())
    }

    /// Sub-matrix made of the listed columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&j| j >= self.cols()) {
            return Err(Error::dim("select_columns", format!("index < {}", self.cols()), bad));
        }
        Self::new(self.0.select(Axis(1), idx))
    }

    pub fn transpose(&self) -> Self {
        NonNegMatrix(self.0.t().to_owned())
    }

    /// Product of two non-negative matrices; stays non-negative.
    pub fn matmul(&self, other: &NonNegMatrix) -> Result<Self> {
        Ok(NonNegMatrix(matmul(&self.0, &other.0)?))
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }
}

impl TryFrom<Array2<f64>> for NonNegMatrix {
    type Error = Error;

    fn try_from(value: Array2<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<NonNegMatrix> for Array2<f64> {
    fn from(value: NonNegMatrix) -> Self {
        value.0
    }
}

/// Dense vector whose entries are all finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegVector(Array1<f64>);

impl NonNegVector {
    pub fn new(data: Array1<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::dim("NonNegVector", "length >= 1", 0));
        }
        check_entries(data.iter().enumerate().map(|(i, v)| ((i, 0), v)))?;
        Ok(NonNegVector(data))
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(data))
    }

    pub fn filled(len: usize, value: f64) -> Result<Self> {
        Self::new(Array1::from_elem(len, value))
    }

    pub(crate) fn from_trusted(data: Array1<f64>) -> Self {
        debug_assert!(data.iter().all(|&v| v >= 0.0 && v.is_finite()));
        NonNegVector(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

fn same_shape<S1, S2, D>(context: &'static str, a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<()>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::dim(context, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// Elementwise product.
pub fn hadamard<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<ndarray::Array<f64, D>>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    same_shape("hadamard", a, b)?;
    Ok(a * b)
}

/// Elementwise `num / max(den, EPS_DIV)`.
pub fn safe_divide<S1, S2, D>(num: &ArrayBase<S1, D>, den: &ArrayBase<S2, D>) -> Result<ndarray::Array<f64, D>>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    same_shape("safe_divide", num, den)?;
    Ok(Zip::from(num).and(den).map_collect(|&n, &d| n / d.max(EPS_DIV)))
}

pub fn matvec<S1, S2>(m: &ArrayBase<S1, Ix2>, x: &ArrayBase<S2, Ix1>) -> Result<Array1<f64>>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
{
    if m.ncols() != x.len() {
        return Err(Error::dim("matvec", m.ncols(), x.len()));
    }
    Ok(m.dot(x))
}

pub fn matmul<S1, S2>(a: &ArrayBase<S1, Ix2>, b: &ArrayBase<S2, Ix2>) -> Result<Array2<f64>>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
{
    if a.ncols() != b.nrows() {
        return Err(Error::dim(
            "matmul",
            format!("inner dimension {}", a.ncols()),
            format!("{}", b.nrows()),
        ));
    }
    Ok(a.dot(b))
}

pub fn transpose<S: Data<Elem = f64>>(a: &ArrayBase<S, Ix2>) -> Array2<f64> {
    a.t().to_owned()
}

/// `½‖v − Wh‖² + λ₁‖h‖₁ + ½λ₂‖h‖²` without shape checks.
pub(crate) fn column_cost_raw(
    v: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView1<'_, f64>,
    reg: RegParams,
) -> f64 {
    let wh = w.dot(&h);
    let residual: f64 = v.iter().zip(wh.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let l1: f64 = h.sum();
    let l2: f64 = h.iter().map(|x| x * x).sum();
    0.5 * residual + reg.lambda1 * l1 + 0.5 * reg.lambda2 * l2
}

/// Regularized least-squares cost of a single column `h` explaining `v` through `W`.
pub fn column_cost(v: &NonNegVector, w: &NonNegMatrix, h: &NonNegVector, reg: RegParams) -> Result<f64> {
    reg.validate()?;
    if w.rows() != v.len() {
        return Err(Error::dim("column_cost (rows of W vs v)", w.rows(), v.len()));
    }
    if w.cols() != h.len() {
        return Err(Error::dim("column_cost (cols of W vs h)", w.cols(), h.len()));
    }
    Ok(column_cost_raw(v.view(), w.view(), h.view(), reg))
}

pub(crate) fn check_factor_shapes(context: &'static str, v: (usize, usize), w: (usize, usize), h: (usize, usize)) -> Result<()> {
    if w.0 != v.0 {
        return Err(Error::dim(context, format!("W with {} rows", v.0), format!("{} rows", w.0)));
    }
    if h.1 != v.1 {
        return Err(Error::dim(context, format!("H with {} cols", v.1), format!("{} cols", h.1)));
    }
    if w.1 != h.0 {
        return Err(Error::dim(context, format!("H with {} rows", w.1), format!("{} rows", h.0)));
    }
    Ok(())
}

pub(crate) fn matrix_cost_raw(v: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, reg: RegParams) -> f64 {
    v.columns()
        .into_iter()
        .zip(h.columns())
        .map(|(vc, hc)| column_cost_raw(vc, w, hc, reg))
        .sum()
}

/// `½‖V − WH‖²_F + λ₁‖H‖₁ + ½λ₂‖H‖²_F`, accumulated column by column.
pub fn matrix_cost(v: &NonNegMatrix, w: &NonNegMatrix, h: &NonNegMatrix, reg: RegParams) -> Result<f64> {
    reg.validate()?;
    check_factor_shapes("matrix_cost", v.shape(), w.shape(), h.shape())?;
    Ok(matrix_cost_raw(v.view(), w.view(), h.view(), reg))
}

pub(crate) fn mse_columns_raw(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let rows = x.nrows() as f64;
    let per_col: f64 = x
        .columns()
        .into_iter()
        .zip(y.columns())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / rows)
        .sum();
    per_col / x.ncols() as f64
}

/// Mean squared error per entry of each column, averaged over columns.
pub fn mse_columns(x: &NonNegMatrix, y: &NonNegMatrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::dim("mse_columns", format!("{:?}", x.shape()), format!("{:?}", y.shape())));
    }
    Ok(mse_columns_raw(x.view(), y.view()))
}

//! Lawson–Hanson active-set NNLS, used to rebuild the dictionary W from V and
//! the network's coefficient matrix H.
//!
//! The solver works on the normal equations `G = MᵀM`, `c = Mᵀb`. That lets
//! [`estimate_w`] share one Gram matrix `HHᵀ` across every row of W. The
//! passive-set subproblems are solved by a small dense Cholesky factorization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{NonNegMatrix, NonNegVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnlsConfig {
    /// Cap on variables entering the passive set; `None` means `3 * p`.
    pub max_iters: Option<usize>,
    /// KKT tolerance on the gradient, scaled by `max(1, ‖Mᵀb‖∞)`.
    pub tol: f64,
}

impl Default for NnlsConfig {
    fn default() -> Self {
        NnlsConfig {
            max_iters: None,
            tol: 1e-10,
        }
    }
}

impl NnlsConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Config(format!("NNLS tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == Some(0) {
            return Err(Error::Config("NNLS max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Relative size below which a Cholesky pivot counts as a dependent column.
const PIVOT_RTOL: f64 = 1e-10;

/// Solves `G[P,P] s = c[P]` for the passive index set `p`. Returns `None` when
/// the passive columns are numerically dependent.
fn solve_passive(g: ArrayView2<'_, f64>, c: ArrayView1<'_, f64>, p: &[usize]) -> Option<Vec<f64>> {
    let n = p.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[[p[i], p[j]]];
            for t in 0..j {
                sum -= l[i * n + t] * l[j * n + t];
            }
            if i == j {
                let diag = g[[p[i], p[i]]];
                if !(sum > PIVOT_RTOL * diag) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = c[p[i]];
        for t in 0..i {
            sum -= l[i * n + t] * y[t];
        }
        y[i] = sum / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut sum = y[i];
        for t in i + 1..n {
            sum -= l[t * n + i] * y[t];
        }
        y[i] = sum / l[i * n + i];
    }
    Some(y)
}

/// Lawson–Hanson on the normal equations: minimizes `½xᵀGx − cᵀx` over `x ≥ 0`.
pub fn nnls_gram(g: ArrayView2<'_, f64>, c: ArrayView1<'_, f64>, cfg: &NnlsConfig) -> Result<Array1<f64>> {
    cfg.validate()?;
    let p = c.len();
    if g.dim() != (p, p) {
        return Err(Error::dim("nnls_gram", format!("{p}x{p} Gram matrix"), format!("{:?}", g.dim())));
    }
    if p == 0 {
        return Err(Error::dim("nnls_gram", "p >= 1", 0));
    }
    let max_iters = cfg.max_iters.unwrap_or(3 * p);
    let scale = c.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = cfg.tol * scale;

    let mut x = Array1::<f64>::zeros(p);
    let mut passive = vec![false; p];
    // variables found to be dependent on the current passive set
    let mut excluded = vec![false; p];
    let mut iters = 0;

    loop {
        let grad = &c - &g.dot(&x); // negative gradient of the objective
        let candidate = (0..p)
            .filter(|&j| !passive[j] && !excluded[j] && grad[j] > tol)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if grad[b] >= grad[j] => Some(b),
                _ => Some(j),
            });
        let Some(enter) = candidate else {
            return Ok(x);
        };
        if iters == max_iters {
            return Err(Error::IterationLimit {
                iters,
                best: x.to_vec(),
            });
        }
        iters += 1;
        passive[enter] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let solution = solve_passive(g, c, &idx);
            let rejected = match &solution {
                None => true,
                Some(s) => first && idx.iter().zip(s).any(|(&j, &sj)| j == enter && sj <= 0.0),
            };
            if rejected {
                if first {
                    // the entering column adds nothing; leave it out until the set changes
                    passive[enter] = false;
                    excluded[enter] = true;
                    break;
                }
                return Err(Error::IterationLimit {
                    iters,
                    best: x.to_vec(),
                });
            }
            let s = solution.expect("checked above");
            first = false;

            if s.iter().all(|&v| v > 0.0) {
                for (&j, &sj) in idx.iter().zip(&s) {
                    x[j] = sj;
                }
                excluded.iter_mut().for_each(|e| *e = false);
                break;
            }

            // step towards s until the first passive variable hits zero
            let mut alpha = f64::INFINITY;
            let mut blocking = enter;
            for (&j, &sj) in idx.iter().zip(&s) {
                if sj <= 0.0 {
                    let a = x[j] / (x[j] - sj);
                    if a < alpha {
                        alpha = a;
                        blocking = j;
                    }
                }
            }
            for (&j, &sj) in idx.iter().zip(&s) {
                x[j] += alpha * (sj - x[j]);
            }
            x[blocking] = 0.0;
            for &j in &idx {
                if x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive[enter] {
                // entering variable was immediately squeezed out
                excluded[enter] = true;
            }
        }
    }
}

/// `argmin_{x ≥ 0} ‖Mx − b‖₂` for a general real `M` and `b`.
pub fn nnls_vector(m: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, cfg: &NnlsConfig) -> Result<NonNegVector> {
    if m.nrows() != b.len() {
        return Err(Error::dim("nnls_vector", m.nrows(), b.len()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::dim("nnls_vector", "non-empty M", format!("{:?}", m.dim())));
    }
    let g = m.t().dot(&m);
    let c = m.t().dot(&b);
    Ok(NonNegVector::from_trusted(nnls_gram(g.view(), c.view(), cfg)?))
}

/// Row-wise NNLS for `min_{W ≥ 0} ‖V − WH‖_F`.
pub fn estimate_w(v: &NonNegMatrix, h: &NonNegMatrix, cfg: &NnlsConfig) -> Result<NonNegMatrix> {
    if v.cols() != h.cols() {
        return Err(Error::dim("estimate_w", format!("H with {} cols", v.cols()), h.cols()));
    }
    if let Some(row) = h.as_array().rows().into_iter().position(|r| r.iter().all(|&x| x == 0.0)) {
        return Err(Error::DegenerateDictionary { row });
    }
    let hv = h.view();
    let gram = hv.dot(&hv.t());
    let rhs = v.view().dot(&hv.t());
    let mut w = Array2::<f64>::zeros((v.rows(), h.rows()));
    for (i, mut row) in w.rows_mut().into_iter().enumerate() {
        row.assign(&nnls_gram(gram.view(), rhs.row(i), cfg)?);
    }
    Ok(NonNegMatrix::from_trusted(w))
}

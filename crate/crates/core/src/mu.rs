//! Multiplicative-update NMF with optional L1/L2 penalties on the coefficients.
//!
//! The H rule is `H ⊙ WᵀV / (WᵀWH + λ₁ + λ₂H)`, the W rule is the plain
//! Lee–Seung `W ⊙ VHᵀ / WHHᵀ`. Both keep the regularized Frobenius cost
//! non-increasing, which the tests check on random instances.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{check_factor_shapes, matrix_cost_raw, NonNegMatrix, RegParams, EPS_DIV};

/// How W₀ and H₀ are filled before the first update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Every entry equal to the given positive value.
    Constant(f64),
    /// Entries drawn uniformly from (0, 1] with the config seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuConfig {
    pub max_iters: usize,
    /// Stop once the relative cost decrease of one iteration falls below this.
    pub tol: f64,
    pub reg: RegParams,
    pub init: Init,
    /// Independent runs; the lowest final cost wins. Restart `r > 0` always
    /// uses random init seeded with `seed + r`.
    pub restarts: usize,
    pub seed: u64,
}

impl MuConfig {
    /// Defaults for a full factorization: 200 iterations.
    pub fn training() -> Self {
        MuConfig {
            max_iters: 200,
            tol: 1e-8,
            reg: RegParams::NONE,
            init: Init::Constant(1.0),
            restarts: 1,
            seed: 0,
        }
    }

    /// Defaults for estimating H against a fixed dictionary: 100 iterations.
    pub fn inference() -> Self {
        MuConfig {
            max_iters: 100,
            ..Self::training()
        }
    }

    pub fn with_reg(mut self, reg: RegParams) -> Self {
        self.reg = reg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if let Init::Constant(v) = self.init {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("init value must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FactorizationResult {
    pub w: NonNegMatrix,
    pub h: NonNegMatrix,
    /// Cost after each iteration.
    pub cost_trace: Vec<f64>,
    pub iters_run: usize,
    /// Which restart produced this result.
    pub restart: usize,
}

impl FactorizationResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("at least one iteration is always run")
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub h: NonNegMatrix,
    pub cost_trace: Vec<f64>,
    pub iters_run: usize,
}

pub(crate) fn update_h_raw(h: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, reg: RegParams) -> Array2<f64> {
    let wt = w.t();
    let num = wt.dot(&v);
    let gram = wt.dot(&w);
    let mut out = gram.dot(&h);
    Zip::from(&mut out).and(&h).and(&num).for_each(|o, &hv, &nv| {
        let den = (*o + reg.lambda1 + reg.lambda2 * hv).max(EPS_DIV);
        *o = hv * nv / den;
    });
    out
}

pub(crate) fn update_w_raw(w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Array2<f64> {
    let num = v.dot(&h.t());
    let hht = h.dot(&h.t());
    let mut out = w.dot(&hht);
    Zip::from(&mut out).and(&w).and(&num).for_each(|o, &wv, &nv| {
        *o = wv * nv / o.max(EPS_DIV);
    });
    out
}

/// One regularized multiplicative update of H with W held fixed.
pub fn update_h(h: &NonNegMatrix, w: &NonNegMatrix, v: &NonNegMatrix, reg: RegParams) -> Result<NonNegMatrix> {
    reg.validate()?;
    check_factor_shapes("update_h", v.shape(), w.shape(), h.shape())?;
    Ok(NonNegMatrix::from_trusted(update_h_raw(h.view(), w.view(), v.view(), reg)))
}

/// One multiplicative update of W with H held fixed.
pub fn update_w(w: &NonNegMatrix, h: &NonNegMatrix, v: &NonNegMatrix) -> Result<NonNegMatrix> {
    check_factor_shapes("update_w", v.shape(), w.shape(), h.shape())?;
    Ok(NonNegMatrix::from_trusted(update_w_raw(w.view(), h.view(), v.view())))
}

fn init_matrix(rows: usize, cols: usize, init: Init, rng: &mut ChaCha8Rng) -> Array2<f64> {
    match init {
        Init::Constant(value) => Array2::from_elem((rows, cols), value),
        // (0, 1]
        Init::Random => Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>()),
    }
}

fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    cur == 0.0 || (prev - cur) <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

fn factorize_once(v: ArrayView2<'_, f64>, k: usize, cfg: &MuConfig, restart: usize) -> FactorizationResult {
    let (f, n) = v.dim();
    let (init, seed) = if restart == 0 {
        (cfg.init, cfg.seed)
    } else {
        (Init::Random, cfg.seed.wrapping_add(restart as u64))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = init_matrix(f, k, init, &mut rng);
    let mut h = init_matrix(k, n, init, &mut rng);
    let mut prev = matrix_cost_raw(v, w.view(), h.view(), cfg.reg);
    let mut cost_trace = Vec::with_capacity(cfg.max_iters);
    for _ in 0..cfg.max_iters {
        h = update_h_raw(h.view(), w.view(), v, cfg.reg);
        w = update_w_raw(w.view(), h.view(), v);
        let cost = matrix_cost_raw(v, w.view(), h.view(), cfg.reg);
        cost_trace.push(cost);
        if converged(prev, cost, cfg.tol) {
            break;
        }
        prev = cost;
    }
    FactorizationResult {
        w: NonNegMatrix::from_trusted(w),
        h: NonNegMatrix::from_trusted(h),
        iters_run: cost_trace.len(),
        cost_trace,
        restart,
    }
}

/// Alternating H/W multiplicative updates from `cfg.init`, keeping the best of
/// `cfg.restarts` runs.
pub fn factorize(v: &NonNegMatrix, k: usize, cfg: &MuConfig) -> Result<FactorizationResult> {
    cfg.validate()?;
    let (f, n) = v.shape();
    if k == 0 || k > f.min(n) {
        return Err(Error::Config(format!("k = {k} must lie in 1..={}", f.min(n))));
    }
    let runs: Vec<FactorizationResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| factorize_once(v.view(), k, cfg, r))
        .collect();
    // min_by keeps the first of equal elements
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.final_cost().total_cmp(&b.final_cost()))
        .expect("restarts >= 1"))
}

/// Exactly `iters` H updates from `h0`, without cost tracking or early stopping.
pub fn iterate_h(v: &NonNegMatrix, w: &NonNegMatrix, h0: &NonNegMatrix, reg: RegParams, iters: usize) -> Result<NonNegMatrix> {
    reg.validate()?;
    check_factor_shapes("iterate_h", v.shape(), w.shape(), h0.shape())?;
    let mut h = h0.as_array().clone();
    for _ in 0..iters {
        h = update_h_raw(h.view(), w.view(), v.view(), reg);
    }
    Ok(NonNegMatrix::from_trusted(h))
}

/// Estimates H for fixed W by repeated [`update_h`].
pub fn infer_h(v: &NonNegMatrix, w: &NonNegMatrix, cfg: &MuConfig) -> Result<Inference> {
    cfg.validate()?;
    if w.rows() != v.rows() {
        return Err(Error::dim("infer_h", format!("W with {} rows", v.rows()), w.rows()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut h = init_matrix(w.cols(), v.cols(), cfg.init, &mut rng);
    let mut prev = matrix_cost_raw(v.view(), w.view(), h.view(), cfg.reg);
    let mut cost_trace = Vec::with_capacity(cfg.max_iters);
    for _ in 0..cfg.max_iters {
        h = update_h_raw(h.view(), w.view(), v.view(), cfg.reg);
        let cost = matrix_cost_raw(v.view(), w.view(), h.view(), cfg.reg);
        cost_trace.push(cost);
        if converged(prev, cost, cfg.tol) {
            break;
        }
        prev = cost;
    }
    Ok(Inference {
        h: NonNegMatrix::from_trusted(h),
        iters_run: cost_trace.len(),
        cost_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{column_cost, matrix_cost};
    use ndarray::array;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy};

    fn m(a: Array2<f64>) -> NonNegMatrix {
        NonNegMatrix::new(a).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> NonNegMatrix {
        m(Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>()))
    }

    #[test]
    fn update_h_examples() {
        let id = NonNegMatrix::identity(2);
        let v = m(array![[2.0], [3.0]]);
        assert_eq!(update_h(&v, &id, &v, RegParams::NONE).unwrap(), v);

        let w = m(array![[1.0], [1.0]]);
        let v = m(array![[1.0], [3.0]]);
        let h = m(array![[1.0]]);
        assert_eq!(update_h(&h, &w, &v, RegParams::NONE).unwrap(), m(array![[2.0]]));
        let reg = RegParams::new(1.0, 0.0).unwrap();
        let h1 = update_h(&h, &w, &v, reg).unwrap();
        assert!((h1.as_array()[[0, 0]] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn update_h_converges_to_regularized_minimizer() {
        let w = m(array![[1.0], [1.0]]);
        let v = m(array![[1.0], [3.0]]);
        let reg = RegParams::new(1.0, 0.0).unwrap();
        let mut h = m(array![[1.0]]);
        for _ in 0..200 {
            h = update_h(&h, &w, &v, reg).unwrap();
        }
        assert!((h.as_array()[[0, 0]] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn update_w_examples() {
        let w = m(array![[1.0, 2.0], [3.0, 4.0]]);
        let id = NonNegMatrix::identity(2);
        assert_eq!(update_w(&w, &id, &w).unwrap(), w);
        assert_eq!(
            update_w(&m(array![[1.0]]), &m(array![[1.0]]), &m(array![[2.0]])).unwrap(),
            m(array![[2.0]])
        );
        let w = m(array![[0.0, 0.0], [1.0, 2.0]]);
        let h = m(array![[1.0, 0.5], [0.2, 1.0]]);
        let v = m(array![[3.0, 1.0], [2.0, 2.0]]);
        let w1 = update_w(&w, &h, &v).unwrap();
        assert_eq!(w1.as_array().row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let w = NonNegMatrix::identity(2);
        let h = m(array![[1.0], [1.0], [1.0]]);
        let v = m(array![[1.0], [1.0]]);
        assert!(matches!(update_h(&h, &w, &v, RegParams::NONE), Err(Error::Dimension { .. })));
        assert!(update_w(&w, &h, &v).is_err());
        assert!(matches!(
            factorize(&v, 2, &MuConfig::training()),
            Err(Error::Config(_))
        ));
        assert!(factorize(&v, 0, &MuConfig::training()).is_err());
    }

    #[test]
    fn factorize_rank_one_exact() {
        let w = array![[1.0], [2.0], [0.5], [3.0]];
        let h = array![[2.0, 1.0, 4.0, 0.5, 1.5]];
        let v = m(w.dot(&h));
        let res = factorize(&v, 1, &MuConfig::training()).unwrap();
        assert!(res.iters_run <= 200);
        assert!(res.final_cost() < 1e-6, "cost {}", res.final_cost());
    }

    #[test]
    fn factorize_trace_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_matrix(&mut rng, 6, 4);
        let cfg = MuConfig {
            init: Init::Random,
            ..MuConfig::training()
        };
        let res = factorize(&v, 4, &cfg).unwrap();
        assert!(res.final_cost() <= res.cost_trace[0]);
        for pair in res.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10 * (1.0 + pair[0]));
        }
    }

    #[test]
    fn strong_l1_shrinks_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_matrix(&mut rng, 8, 10);
        let base = MuConfig {
            init: Init::Random,
            seed: 5,
            ..MuConfig::training()
        };
        let plain = factorize(&v, 3, &base).unwrap();
        let sparse = factorize(&v, 3, &base.clone().with_reg(RegParams::new(1e6, 0.0).unwrap())).unwrap();
        assert!(sparse.h.sum() < plain.h.sum());
    }

    #[test]
    fn restarts_pick_lowest_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_matrix(&mut rng, 6, 6);
        let cfg = MuConfig {
            restarts: 4,
            max_iters: 30,
            seed: 9,
            ..MuConfig::training()
        };
        let best = factorize(&v, 3, &cfg).unwrap();
        for r in 0..4 {
            let single = factorize_once(v.view(), 3, &cfg, r);
            assert!(best.final_cost() <= single.final_cost());
        }
        let again = factorize(&v, 3, &cfg).unwrap();
        assert_eq!(again.restart, best.restart);
        assert_eq!(again.cost_trace, best.cost_trace);
    }

    #[test]
    fn infer_h_recovers_coefficients_in_column_space() {
        let w = m(array![[1.0, 0.0], [0.5, 1.0], [0.0, 2.0], [1.0, 1.0]]);
        let h_true = m(array![[1.0, 0.3], [2.0, 0.0]]);
        let v = w.matmul(&h_true).unwrap();
        let cfg = MuConfig {
            max_iters: 5000,
            tol: 0.0,
            ..MuConfig::inference()
        };
        let inf = infer_h(&v, &w, &cfg).unwrap();
        let residual = matrix_cost(&v, &w, &inf.h, RegParams::NONE).unwrap();
        assert!(residual < 1e-6, "residual {residual}");
    }

    #[test]
    fn infer_h_identity_dictionary() {
        let v = m(array![[1.0, 5.0], [2.0, 0.5], [0.25, 3.0]]);
        let mut cfg = MuConfig::inference();
        cfg.tol = 0.0;
        let short = infer_h(&v, &NonNegMatrix::identity(3), &cfg).unwrap();
        cfg.max_iters = 400;
        let long = infer_h(&v, &NonNegMatrix::identity(3), &cfg).unwrap();
        let err = |h: &NonNegMatrix| (h.as_array() - v.as_array()).mapv(f64::abs).sum();
        assert!(err(&long.h) <= err(&short.h));
        assert!(err(&long.h) < 1e-8);
    }

    #[test]
    fn infer_h_trace_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = random_matrix(&mut rng, 5, 7);
        let w = random_matrix(&mut rng, 5, 3);
        let cfg = MuConfig::inference().with_reg(RegParams::new(1.0, 2.0).unwrap());
        let inf = infer_h(&v, &w, &cfg).unwrap();
        assert!(inf.cost_trace.len() <= 100 && inf.cost_trace.len() == inf.iters_run);
        for pair in inf.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10 * (1.0 + pair[0]));
        }
    }

    #[test]
    fn infer_h_column_costs_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_matrix(&mut rng, 6, 5);
        let w = random_matrix(&mut rng, 6, 3);
        let reg = RegParams::new(0.5, 1.0).unwrap();
        let mut h = NonNegMatrix::filled(3, 5, 1.0).unwrap();
        for _ in 0..50 {
            let next = update_h(&h, &w, &v, reg).unwrap();
            for j in 0..5 {
                let before = column_cost(&v.column(j), &w, &h.column(j), reg).unwrap();
                let after = column_cost(&v.column(j), &w, &next.column(j), reg).unwrap();
                assert!(after <= before + 1e-10 * (1.0 + before));
            }
            h = next;
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let v = m(array![[1.0]]);
        for cfg in [
            MuConfig { max_iters: 0, ..MuConfig::training() },
            MuConfig { tol: -1.0, ..MuConfig::training() },
            MuConfig { restarts: 0, ..MuConfig::training() },
            MuConfig { init: Init::Constant(0.0), ..MuConfig::training() },
        ] {
            assert!(matches!(factorize(&v, 1, &cfg), Err(Error::Config(_))));
        }
    }

    fn instance() -> impl Strategy<Value = (u64, usize, usize, usize, f64, f64)> {
        (any::<u64>(), 1usize..=8, 1usize..=8, 1usize..=8, 0u8..3, 0u8..3)
            .prop_map(|(s, f, k, n, a, b)| (s, f, k, n, a as f64, b as f64))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn updates_never_increase_cost((seed, f, k, n, l1, l2) in instance()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_matrix(&mut rng, f, n);
            let w = random_matrix(&mut rng, f, k);
            let h = random_matrix(&mut rng, k, n);
            let reg = RegParams::new(l1, l2).unwrap();
            let before = matrix_cost(&v, &w, &h, reg).unwrap();
            let h1 = update_h(&h, &w, &v, reg).unwrap();
            let mid = matrix_cost(&v, &w, &h1, reg).unwrap();
            prop_assert!(mid <= before + 1e-10 * (1.0 + before));
            let w1 = update_w(&w, &h1, &v).unwrap();
            let after = matrix_cost(&v, &w1, &h1, reg).unwrap();
            prop_assert!(after <= mid + 1e-10 * (1.0 + mid));
        }

        #[test]
        fn zero_entries_stay_zero((seed, f, k, n, l1, l2) in instance()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_matrix(&mut rng, f, n);
            let w = random_matrix(&mut rng, f, k);
            let mut h = random_matrix(&mut rng, k, n).into_inner();
            h[[0, 0]] = 0.0;
            let h = m(h);
            let reg = RegParams::new(l1, l2).unwrap();
            let h1 = update_h(&h, &w, &v, reg).unwrap();
            prop_assert_eq!(h1.as_array()[[0, 0]], 0.0);
            prop_assert!(h1.as_array().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn fixed_point_is_preserved((seed, f, k, n, l1, l2) in instance()) {
            // choose V so that WᵀV = WᵀWH + λ₁ + λ₂H holds exactly: with W = I, V = H(1+λ₂) + λ₁
            let _ = f;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_matrix(&mut rng, k, n);
            let v = m(h.as_array().mapv(|x| x * (1.0 + l2) + l1));
            let reg = RegParams::new(l1, l2).unwrap();
            let h1 = update_h(&h, &NonNegMatrix::identity(k), &v, reg).unwrap();
            for (a, b) in h1.as_array().iter().zip(h.as_array().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
        }
    }
}

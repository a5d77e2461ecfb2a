//! Cross-validated comparison of the unrolled network against multiplicative
//! updates.
//!
//! Supervised: learn on the training columns, estimate H on the test columns,
//! score against the true H. Unsupervised: learn W on the training columns,
//! estimate H on the test columns, score the reconstruction `WH` against V.
//! Scores are [`mse_columns`](crate::matrix::mse_columns).

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::catalog::MutationCatalog;
use super::split::{Fold, SplitPlan};
use crate::error::{Error, Result};
use crate::matrix::{mse_columns, NonNegMatrix, RegParams};
use crate::mu::{factorize, infer_h, MuConfig};
use crate::net::{infer, UnrolledModel};
use crate::nnls::NnlsConfig;
use crate::train::{train_supervised, train_unsupervised, AdamState, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dnmf,
    Mu,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dnmf => "dnmf",
            Method::Mu => "mu",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnmf" => Ok(Method::Dnmf),
            "mu" => Ok(Method::Mu),
            other => Err(Error::Config(format!("unknown method `{other}` (expected dnmf or mu)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Supervised,
    Unsupervised,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Supervised => "supervised",
            Mode::Unsupervised => "unsupervised",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "unsupervised" => Ok(Mode::Unsupervised),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Network depth.
    pub layers: usize,
    pub train: TrainConfig,
    pub lr: f64,
    /// Penalty weight used for both λ₁ and λ₂. Supervised DNMF learns its own
    /// penalties and ignores this.
    pub lambda: f64,
    pub mu_train: MuConfig,
    pub mu_infer: MuConfig,
    pub nnls: NnlsConfig,
    /// Factorization rank; defaults to the rank of the ground truth.
    pub k: Option<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            layers: 10,
            train: TrainConfig::default(),
            lr: 0.001,
            lambda: 0.0,
            mu_train: MuConfig::training(),
            mu_infer: MuConfig::inference(),
            nnls: NnlsConfig::default(),
            k: None,
        }
    }
}

impl EvalSettings {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    fn reg(&self) -> Result<RegParams> {
        RegParams::uniform(self.lambda)
    }

    fn rank(&self, catalog: &MutationCatalog) -> Result<usize> {
        self.k
            .or(catalog.truth_h.as_ref().map(NonNegMatrix::rows))
            .or(catalog.truth_w.as_ref().map(NonNegMatrix::cols))
            .ok_or_else(|| Error::Config("factorization rank unknown: set k or provide ground truth".into()))
    }
}

/// Scores of one (method, mode, λ) setting across all folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub mode: Mode,
    /// `None` when the penalties are learned.
    pub lambda: Option<f64>,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub train_seconds: Vec<f64>,
    pub infer_seconds: Vec<f64>,
}

struct FoldScore {
    mse: f64,
    train_seconds: f64,
    infer_seconds: f64,
}

impl EvalReport {
    fn assemble(method: Method, mode: Mode, lambda: Option<f64>, scores: Vec<FoldScore>) -> Self {
        let fold_mse: Vec<f64> = scores.iter().map(|s| s.mse).collect();
        let n = fold_mse.len() as f64;
        let mean_mse = fold_mse.iter().sum::<f64>() / n;
        // sample standard deviation; zero for a single fold
        let std_mse = if fold_mse.len() > 1 {
            (fold_mse.iter().map(|x| (x - mean_mse).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        EvalReport {
            method,
            mode,
            lambda,
            mean_mse,
            std_mse,
            train_seconds: scores.iter().map(|s| s.train_seconds).collect(),
            infer_seconds: scores.iter().map(|s| s.infer_seconds).collect(),
            fold_mse,
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

/// CSV with one row per fold plus one `all` row per report carrying the mean
/// and standard deviation.
pub fn write_reports_csv<W: io::Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "mode", "lambda", "fold", "mse", "std", "train_seconds", "infer_seconds"])?;
    for r in reports {
        let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_else(|| "learned".into());
        for (i, ((mse, tr), inf)) in r.fold_mse.iter().zip(&r.train_seconds).zip(&r.infer_seconds).enumerate() {
            w.write_record([
                r.method.to_string(),
                r.mode.to_string(),
                lambda.clone(),
                i.to_string(),
                mse.to_string(),
                String::new(),
                tr.to_string(),
                inf.to_string(),
            ])?;
        }
        w.write_record([
            r.method.to_string(),
            r.mode.to_string(),
            lambda.clone(),
            "all".into(),
            r.mean_mse.to_string(),
            r.std_mse.to_string(),
            r.train_seconds.iter().sum::<f64>().to_string(),
            r.infer_seconds.iter().sum::<f64>().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Receives the exact column sets used for training and testing each fold.
pub type FoldProbe<'a> = &'a (dyn Fn(usize, &[usize], &[usize]) + Sync);

fn run_folds<F>(plan: &SplitPlan, probe: Option<FoldProbe<'_>>, body: F) -> Result<Vec<FoldScore>>
where
    F: Fn(&Fold) -> Result<FoldScore> + Sync,
{
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            if let Some(p) = probe {
                p(i, &fold.train, &fold.test);
            }
            body(fold)
        })
        .collect()
}

fn check_plan(catalog: &MutationCatalog, plan: &SplitPlan) -> Result<()> {
    let n = catalog.samples();
    if plan.folds.iter().flat_map(|f| f.train.iter().chain(&f.test)).any(|&j| j >= n) {
        return Err(Error::Config(format!("split plan refers to columns beyond {n}")));
    }
    Ok(())
}

pub fn evaluate_supervised(catalog: &MutationCatalog, method: Method, settings: &EvalSettings, plan: &SplitPlan) -> Result<EvalReport> {
    evaluate_supervised_with_probe(catalog, method, settings, plan, None)
}

pub fn evaluate_supervised_with_probe(
    catalog: &MutationCatalog,
    method: Method,
    settings: &EvalSettings,
    plan: &SplitPlan,
    probe: Option<FoldProbe<'_>>,
) -> Result<EvalReport> {
    let truth = catalog
        .truth_h
        .as_ref()
        .ok_or_else(|| Error::Config("supervised evaluation needs the ground-truth H".into()))?;
    check_plan(catalog, plan)?;
    let k = truth.rows();
    let reg = settings.reg()?;
    let scores = run_folds(plan, probe, |fold| {
        let v_train = catalog.counts.select_columns(&fold.train)?;
        let v_test = catalog.counts.select_columns(&fold.test)?;
        let h_test = truth.select_columns(&fold.test)?;
        let start = Instant::now();
        let (estimate, train_seconds, infer_start) = match method {
            Method::Dnmf => {
                let h_train = truth.select_columns(&fold.train)?;
                let model = UnrolledModel::supervised_init(catalog.categories(), k, settings.layers)?;
                let mut adam = AdamState::new(settings.lr);
                let (model, _) = train_supervised(&v_train, &h_train, model, &settings.train, &mut adam)?;
                let trained = start.elapsed().as_secs_f64();
                let t = Instant::now();
                (infer(&model, &v_test)?, trained, t)
            }
            Method::Mu => {
                let fit = factorize(&v_train, k, &settings.mu_train.clone().with_reg(reg))?;
                let trained = start.elapsed().as_secs_f64();
                let t = Instant::now();
                (infer_h(&v_test, &fit.w, &settings.mu_infer.clone().with_reg(reg))?.h, trained, t)
            }
        };
        Ok(FoldScore {
            mse: mse_columns(&estimate, &h_test)?,
            train_seconds,
            infer_seconds: infer_start.elapsed().as_secs_f64(),
        })
    })?;
    let lambda = match method {
        Method::Dnmf => None,
        Method::Mu => Some(settings.lambda),
    };
    Ok(EvalReport::assemble(method, Mode::Supervised, lambda, scores))
}

pub fn evaluate_unsupervised(catalog: &MutationCatalog, method: Method, settings: &EvalSettings, plan: &SplitPlan) -> Result<EvalReport> {
    evaluate_unsupervised_with_probe(catalog, method, settings, plan, None)
}

pub fn evaluate_unsupervised_with_probe(
    catalog: &MutationCatalog,
    method: Method,
    settings: &EvalSettings,
    plan: &SplitPlan,
    probe: Option<FoldProbe<'_>>,
) -> Result<EvalReport> {
    check_plan(catalog, plan)?;
    let k = settings.rank(catalog)?;
    let reg = settings.reg()?;
    let scores = run_folds(plan, probe, |fold| {
        let v_train = catalog.counts.select_columns(&fold.train)?;
        let v_test = catalog.counts.select_columns(&fold.test)?;
        let start = Instant::now();
        let (w, h, train_seconds, infer_start) = match method {
            Method::Dnmf => {
                let model = UnrolledModel::unsupervised_init(catalog.categories(), k, settings.layers, settings.lambda)?;
                let mut adam = AdamState::new(settings.lr);
                let fit = train_unsupervised(&v_train, model, &settings.train, &mut adam, &settings.nnls)?;
                let trained = start.elapsed().as_secs_f64();
                let t = Instant::now();
                let h = infer(&fit.model, &v_test)?;
                (fit.w, h, trained, t)
            }
            Method::Mu => {
                let fit = factorize(&v_train, k, &settings.mu_train.clone().with_reg(reg))?;
                let trained = start.elapsed().as_secs_f64();
                let t = Instant::now();
                let h = infer_h(&v_test, &fit.w, &settings.mu_infer.clone().with_reg(reg))?.h;
                (fit.w, h, trained, t)
            }
        };
        let infer_seconds = infer_start.elapsed().as_secs_f64();
        Ok(FoldScore {
            mse: mse_columns(&v_test, &w.matmul(&h)?)?,
            train_seconds,
            infer_seconds,
        })
    })?;
    Ok(EvalReport::assemble(method, Mode::Unsupervised, Some(settings.lambda), scores))
}

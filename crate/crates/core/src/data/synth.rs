//! Synthetic mutation catalogs with known signatures and exposures.
//!
//! Signatures are symmetric-Dirichlet draws (Gamma samples normalized to sum
//! to one), exposures are exponential, and counts are either the exact
//! product or an entrywise Poisson resample of it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::catalog::{sbs96_labels, MutationCatalog, SBS96};
use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    None,
    Poisson,
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Noise::None => "none",
            Noise::Poisson => "poisson",
        })
    }
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Noise::None),
            "poisson" => Ok(Noise::Poisson),
            other => Err(Error::Config(format!("unknown noise model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub f: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub noise: Noise,
    /// Dirichlet concentration of each signature.
    pub alpha: f64,
    /// Expected total count per sample; each exposure has mean `total / k`.
    pub mutations_per_sample: f64,
}

impl SynthConfig {
    pub fn new(k: usize, n: usize, seed: u64) -> Self {
        SynthConfig {
            f: SBS96,
            k,
            n,
            seed,
            noise: Noise::None,
            alpha: 0.5,
            mutations_per_sample: 100.0,
        }
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        [
            ("generator", "dirichlet-exponential".to_string()),
            ("f", self.f.to_string()),
            ("k", self.k.to_string()),
            ("n", self.n.to_string()),
            ("seed", self.seed.to_string()),
            ("noise", self.noise.to_string()),
            ("alpha", self.alpha.to_string()),
            ("mutations_per_sample", self.mutations_per_sample.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<MutationCatalog> {
    let SynthConfig { f, k, n, .. } = *cfg;
    if f == 0 || n == 0 || k == 0 || k > f.min(n) {
        return Err(Error::Config(format!("invalid synthetic dims f={f}, k={k}, n={n} (need 1 <= k <= min(f, n))")));
    }
    if !(cfg.alpha > 0.0 && cfg.mutations_per_sample > 0.0) {
        return Err(Error::Config("alpha and mutations_per_sample must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = Gamma::new(cfg.alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut w = Array2::<f64>::zeros((f, k));
    for mut col in w.columns_mut() {
        // redraw in the (astronomically unlikely) event that every sample underflows
        loop {
            col.iter_mut().for_each(|x| *x = gamma.sample(&mut rng));
            let total: f64 = col.sum();
            if total > 0.0 {
                col.mapv_inplace(|x| x / total);
                break;
            }
        }
    }
    let exp = Exp::new(k as f64 / cfg.mutations_per_sample).map_err(|e| Error::Config(e.to_string()))?;
    let h = Array2::from_shape_simple_fn((k, n), || exp.sample(&mut rng));
    let mut v = w.dot(&h);
    if cfg.noise == Noise::Poisson {
        v.mapv_inplace(|mean| {
            if mean > 0.0 {
                Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(mean.round())
            } else {
                0.0
            }
        });
    }

    let labels = if f == SBS96 {
        sbs96_labels()
    } else {
        (0..f).map(|i| format!("c{}", i + 1)).collect()
    };
    let catalog = MutationCatalog {
        labels,
        counts: NonNegMatrix::new(v)?,
        sample_ids: (0..n).map(|j| format!("sample{}", j + 1)).collect(),
        truth_w: None,
        truth_h: None,
        signature_ids: (0..k).map(|i| format!("sig{}", i + 1)).collect(),
        metadata: cfg.metadata(),
    };
    catalog.with_truth(Some(NonNegMatrix::new(w)?), Some(NonNegMatrix::new(h)?))
}

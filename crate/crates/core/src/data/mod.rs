//! Catalog IO, synthetic data, cross-validation splits and the evaluation
//! protocols that compare the unrolled network against multiplicative updates.

pub mod catalog;
pub mod eval;
pub mod split;
pub mod synth;

pub use catalog::{load_catalog, sbs96_labels, CatalogFormat, MutationCatalog, SBS96};
pub use eval::{evaluate_supervised, evaluate_unsupervised, EvalReport, EvalSettings, Method, Mode};
pub use split::{Fold, SplitPlan};
pub use synth::{generate_synthetic, Noise, SynthConfig};

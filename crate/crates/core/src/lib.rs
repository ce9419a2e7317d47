//! Uncertainty-aware reward modelling toolkit.
//!
//! Preference pairs carry Monte-Carlo reward draws from a proxy reward model.
//! The reward gap between the chosen and rejected response is modelled as a
//! Gaussian, so the preference probability `P = sigmoid(R_c - R_r)` follows a
//! logit-normal law. From that law the crate derives an uncertainty profile
//! (epistemic, aleatoric, balanced entropy and its exponentiated form `U`)
//! and uses it to build curricula, filters and per-record loss weights for
//! DPO-style and class-conditioned training objectives.
//!
//! Module map:
//!
//! - [`model`]: record types and JSONL ingestion / persistence
//! - [`logitnormal`]: density, CDF and quadrature kernel
//! - [`uncertainty`]: gap posterior fitting and the uncertainty profile
//! - [`proxy`]: a small MC-dropout reward model and a synthetic data generator
//! - [`curation`]: curricula, filters, weights, pair scores and reports
//! - [`objectives`]: DPO / UDPO / C-RLFT / UCPO losses and a tabular policy trainer
//! - [`cli`]: the `urm` command-line front end

pub mod cli;
pub mod curation;
pub mod logitnormal;
pub mod model;
pub mod objectives;
pub mod proxy;
pub mod seeding;
pub mod uncertainty;

pub use curation::{CurriculumPlan, UcpoConfig, WeightRecord};
pub use logitnormal::{Quadrature, QuadratureConfig};
pub use model::{AnnotatedRecord, GapPosterior, PreferencePair, SourceClass};
pub use uncertainty::UncertaintyRecord;

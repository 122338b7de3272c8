//! Supervised multi-specialist topic model.
//!
//! Patients are bags of `(diagnosis code, specialist)` tokens with an optional
//! binary label. Every token carries a latent topic; a topic owns a
//! distribution over specialists and, per specialist, a distribution over
//! codes. The label is tied to the average topic assignment through a Probit
//! regression on a latent Gaussian liability.
//!
//! Fitting uses zero-order collapsed variational Bayes (CVB0) with a
//! full-batch and a stochastic (SCVB0) driver. See [`inference::train`].

pub mod corpus;
pub mod error;
pub mod eval;
pub mod inference;
pub mod matrix;
pub mod model;
pub mod probit;
pub mod simulator;

pub use corpus::{Corpus, PatientRecord, Token, ValidationReport, Vocabulary};
pub use error::{Error, Result};
pub use inference::{ElboTerms, ElboTrace, TrainConfig, TrainMode};
pub use model::{FittedModel, Hyperparameters, ModelState, PriorConstants, TopicEstimates};
pub use simulator::{GroundTruth, SimConfig};

//! Joint collapsed variational Bayes (CVB0) for the supervised model, with a
//! full-batch driver ([`train`]) and a stochastic one ([`train_stochastic`]).

mod cvb0;
mod elbo;
mod hyper;
mod regression;
mod train;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InitOptions;

pub use cvb0::{exclusive_counts, update_token_gamma, ExclusiveCounts};
pub use elbo::{compute_elbo, ElboTerms};
pub use hyper::{update_hyperparameters, HYPER_FLOOR};
pub use regression::{expected_zbar_outer, update_liability, update_regression};
pub use train::{
    estimate_mixtures, step_size, stochastic_step, train, train_from, train_stochastic,
    TrainOutput,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    Unsupervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BatchMode {
    Full,
    /// SCVB0 with step size `rho_s = (s + delay)^(-kappa)`.
    Stochastic {
        batch_size: usize,
        kappa: f64,
        delay: f64,
    },
}

impl BatchMode {
    pub fn stochastic_default() -> Self {
        BatchMode::Stochastic {
            batch_size: 256,
            kappa: 0.9,
            delay: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub max_sweeps: usize,
    /// Stop once `|delta ELBO / ELBO|` falls below this.
    pub elbo_rel_tol: f64,
    pub mode: TrainMode,
    pub batch: BatchMode,
    pub seed: u64,
    pub hyper_update_every: usize,
    pub hyper_fixed_point_iters: usize,
    /// Hyperparameters stay fixed for this many initial sweeps.
    pub hyper_burn_in: usize,
    /// Full recount of the statistics every this many sweeps.
    pub drift_reset_every: usize,
    /// Worker threads for the sweep-synchronous E-step; 1 keeps the sequential
    /// reference semantics.
    pub threads: usize,
    pub init: InitOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            max_sweeps: 500,
            elbo_rel_tol: 1e-6,
            mode: TrainMode::Supervised,
            batch: BatchMode::Full,
            seed: 0,
            hyper_update_every: 1,
            hyper_fixed_point_iters: 5,
            hyper_burn_in: 5,
            drift_reset_every: 50,
            threads: 1,
            init: InitOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        if self.k < 1 {
            return bad("number of topics must be >= 1");
        }
        if !(self.elbo_rel_tol > 0.0) {
            return bad("ELBO tolerance must be > 0");
        }
        if self.hyper_update_every < 1 || self.drift_reset_every < 1 {
            return bad("update periods must be >= 1");
        }
        if self.threads < 1 {
            return bad("thread count must be >= 1");
        }
        if let BatchMode::Stochastic {
            batch_size,
            kappa,
            delay,
        } = self.batch
        {
            if batch_size < 1 {
                return bad("batch size must be >= 1");
            }
            if !(kappa > 0.5 && kappa <= 1.0) {
                return bad("kappa must lie in (0.5, 1]");
            }
            if !(delay >= 0.0) {
                return bad("delay must be >= 0");
            }
        }
        Ok(())
    }

    pub fn supervised(&self) -> bool {
        self.mode == TrainMode::Supervised
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElboRecord {
    pub sweep: usize,
    pub elbo: f64,
    pub terms: ElboTerms,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ElboTrace {
    pub records: Vec<ElboRecord>,
}

impl ElboTrace {
    pub fn push(&mut self, sweep: usize, terms: ElboTerms) {
        self.records.push(ElboRecord {
            sweep,
            elbo: terms.total(),
            terms,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn initial(&self) -> Option<f64> {
        self.records.first().map(|r| r.elbo)
    }

    pub fn last(&self) -> Option<f64> {
        self.records.last().map(|r| r.elbo)
    }

    /// Sweeps at which the ELBO went down.
    pub fn decreases(&self) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].elbo < w[0].elbo)
            .map(|w| w[1].sweep)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,elbo");
        for name in ElboTerms::NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{}", r.sweep, r.elbo).unwrap();
            for v in r.terms.values() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

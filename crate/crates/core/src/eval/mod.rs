//! Held-out perplexity, ranking metrics and topic-recovery scoring.

mod hungarian;
mod ranking;
mod recovery;

pub use hungarian::hungarian;
pub use ranking::{auprc, auroc, pr_curve, roc_curve, ScoredLabels};
pub use recovery::{pearson_matrix, topic_recovery, RecoveryReport};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::FittedModel;
use crate::probit::fold_in;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Perplexity {
    pub value: f64,
    pub log_likelihood: f64,
    pub scored_tokens: usize,
    pub dropped_tokens: usize,
}

/// `exp(-sum log l / N)` with `l = sum_k theta*_k beta_hat[k, b] eta_hat[k, b, x]`,
/// where `theta*` comes from folding each patient into the frozen model.
/// Tokens outside the model's vocabularies are dropped and counted.
pub fn perplexity(model: &FittedModel, heldout: &Corpus, fold_in_iters: usize) -> Result<Perplexity> {
    let (mapped, dropped) = heldout.reindex(&model.codes, &model.specialists);
    let v = model.num_codes();
    let t = model.num_specialists();
    let est = &model.estimates;
    let per_patient: Vec<(f64, usize, usize)> = mapped
        .patients
        .par_iter()
        .map(|p| -> Result<(f64, usize, usize)> {
            let f = fold_in(p, model, fold_in_iters)?;
            let mut ll = 0.0;
            let mut scored = 0;
            for tok in p.tokens.iter().filter(|tok| tok.code < v && tok.specialist < t) {
                let l: f64 = (0..model.k)
                    .map(|k| f.theta[k] * est.beta[(k, tok.specialist)] * est.eta.get(k, tok.specialist, tok.code))
                    .sum();
                ll += l.ln();
                scored += 1;
            }
            Ok((ll, scored, f.dropped_tokens))
        })
        .collect::<Result<_>>()?;
    let log_likelihood: f64 = per_patient.iter().map(|x| x.0).sum();
    let scored_tokens: usize = per_patient.iter().map(|x| x.1).sum();
    let dropped_tokens =
        per_patient.iter().map(|x| x.2).sum::<usize>() + dropped.iter().sum::<usize>();
    if scored_tokens == 0 {
        return Err(Error::NoScoredTokens);
    }
    let value = (-log_likelihood / scored_tokens as f64).exp();
    if !value.is_finite() {
        return Err(Error::NonFinite("perplexity".into()));
    }
    Ok(Perplexity {
        value,
        log_likelihood,
        scored_tokens,
        dropped_tokens,
    })
}

//! Probit-link mathematics: truncated-normal liabilities, the Bernoulli
//! predictive distribution, and fold-in of unseen patients.

use rayon::prelude::*;

use crate::corpus::{Corpus, PatientRecord};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::FittedModel;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Beyond this distance into the tail the Mills ratio comes from its
/// continued fraction instead of `phi / Phi`.
const TAIL_SWITCH: f64 = 6.0;

/// Default fold-in rounds.
pub const FOLD_IN_ITERS: usize = 50;
const FOLD_IN_TOL: f64 = 1e-6;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Mills ratio `(1 - Phi(u)) / phi(u)` for `u > 0`, by backward evaluation of
/// the Laplace continued fraction `1 / (u + 1 / (u + 2 / (u + 3 / ...)))`.
fn mills_ratio_tail(u: f64) -> f64 {
    debug_assert!(u > 0.0);
    let mut acc = u;
    for n in (1..=200).rev() {
        acc = u + n as f64 / acc;
    }
    1.0 / acc
}

/// `phi(x) / Phi(x)`, stable for any finite `x`.
pub fn inverse_mills(x: f64) -> f64 {
    if x < -TAIL_SWITCH {
        1.0 / mills_ratio_tail(-x)
    } else {
        normal_pdf(x) / normal_cdf(x)
    }
}

/// Mean of `N(lambda, 1)` truncated to `g > 0` (label 1) or `g <= 0` (label 0).
pub fn truncated_normal_mean(lambda: f64, label: bool) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(Error::NonFinite("truncated normal location".into()));
    }
    // phi(-l) / (1 - Phi(-l)) = phi(l) / Phi(l)
    Ok(if label {
        lambda + inverse_mills(lambda)
    } else {
        lambda - inverse_mills(-lambda)
    })
}

/// `E[g^2]` of the same truncated normal; `1 + lambda * E[g]` for truncation at 0.
pub fn truncated_normal_second_moment(lambda: f64, label: bool) -> Result<f64> {
    Ok(1.0 + lambda * truncated_normal_mean(lambda, label)?)
}

/// `log P(g in the truncation region)` under `N(lambda, 1)`.
pub fn truncated_normal_log_mass(lambda: f64, label: bool) -> f64 {
    let x = if label { lambda } else { -lambda };
    if x < -TAIL_SWITCH {
        // log(1 - Phi(u)) = log phi(u) + log R(u), u = -x
        let u = -x;
        (FRAC_1_SQRT_2PI).ln() - 0.5 * u * u + mills_ratio_tail(u).ln()
    } else {
        normal_cdf(x).ln()
    }
}

/// `P(y = 1 | zbar) = Phi(m' zbar / sqrt(1 + zbar' S zbar))`.
pub fn predict_probability(zbar: &[f64], mean: &[f64], covariance: &Matrix) -> Result<f64> {
    let k = mean.len();
    if zbar.len() != k || covariance.rows() != k || covariance.cols() != k {
        return Err(Error::ShapeMismatch("predictive input dimensions".into()));
    }
    let total: f64 = zbar.iter().sum();
    if zbar.iter().any(|&z| !(z >= 0.0)) || (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(
            "average topic assignment must lie on the simplex".into(),
        ));
    }
    let radicand = 1.0 + covariance.quad_form(zbar);
    if !(radicand > 0.0) || !radicand.is_finite() {
        return Err(Error::NotPositiveDefinite("regression covariance"));
    }
    let score = dot(mean, zbar) / radicand.sqrt();
    if !score.is_finite() {
        return Err(Error::NonFinite("predictive score".into()));
    }
    Ok(normal_cdf(score))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldIn {
    /// Smoothed topic mixture `(alpha + n) / (sum alpha + M)`.
    pub theta: Vec<f64>,
    /// Average responsibility over the scored tokens.
    pub zbar: Vec<f64>,
    pub probability: f64,
    pub used_tokens: usize,
    pub dropped_tokens: usize,
}

/// Infers a patient's topic mixture against the frozen topic estimates of
/// `model` and scores its label.
///
/// Token indices must already be expressed in the model's vocabularies (see
/// [`Corpus::reindex`]); indices outside them are dropped and counted.
pub fn fold_in(patient: &PatientRecord, model: &FittedModel, iters: usize) -> Result<FoldIn> {
    let k = model.k;
    let v = model.num_codes();
    let t = model.num_specialists();
    let alpha = &model.hyper.alpha;
    let alpha_sum: f64 = alpha.iter().sum();
    let est = &model.estimates;

    // tokens are folded in a canonical order so the result does not depend on
    // how the record lists them
    let mut tokens: Vec<_> = patient
        .tokens
        .iter()
        .filter(|tok| tok.code < v && tok.specialist < t)
        .collect();
    tokens.sort_by_key(|tok| (tok.specialist, tok.code));
    // beta_hat[k, b] * eta_hat[k, b, x] is fixed per token
    let weights: Vec<Vec<f64>> = tokens
        .iter()
        .map(|tok| {
            (0..k)
                .map(|kk| est.beta[(kk, tok.specialist)] * est.eta.get(kk, tok.specialist, tok.code))
                .collect()
        })
        .collect();
    let used = weights.len();
    let dropped = patient.tokens.len() - used;

    if used == 0 {
        let prior: Vec<f64> = alpha.iter().map(|a| a / alpha_sum).collect();
        let probability = predict_probability(&prior, &model.reg_mean, &model.reg_covariance)?;
        return Ok(FoldIn {
            theta: prior.clone(),
            zbar: prior,
            probability,
            used_tokens: 0,
            dropped_tokens: dropped,
        });
    }

    let mut gamma = vec![vec![1.0 / k as f64; k]; used];
    let mut n = vec![used as f64 / k as f64; k];
    let mut scratch = vec![0.0; k];
    for _ in 0..iters {
        let mut max_change: f64 = 0.0;
        for (g, w) in gamma.iter_mut().zip(&weights) {
            let mut total = 0.0;
            for kk in 0..k {
                let excl = (n[kk] - g[kk]).max(0.0);
                scratch[kk] = (alpha[kk] + excl) * w[kk];
                total += scratch[kk];
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::NonFinite("fold-in responsibilities".into()));
            }
            for kk in 0..k {
                let new = scratch[kk] / total;
                max_change = max_change.max((new - g[kk]).abs());
                n[kk] += new - g[kk];
                g[kk] = new;
            }
        }
        if max_change < FOLD_IN_TOL {
            break;
        }
    }
    // rebuild from the final responsibilities to shed incremental drift
    n.iter_mut().for_each(|x| *x = 0.0);
    for g in &gamma {
        for kk in 0..k {
            n[kk] += g[kk];
        }
    }
    let m = used as f64;
    let zbar: Vec<f64> = n.iter().map(|x| x / m).collect();
    let theta = (0..k)
        .map(|kk| (alpha[kk] + n[kk]) / (alpha_sum + m))
        .collect();
    let probability = predict_probability(&zbar, &model.reg_mean, &model.reg_covariance)?;
    Ok(FoldIn {
        theta,
        zbar,
        probability,
        used_tokens: used,
        dropped_tokens: dropped,
    })
}

/// Folds in every patient of `corpus`, mapping its vocabularies onto the
/// model's by name. Results are in patient order.
pub fn fold_in_corpus(corpus: &Corpus, model: &FittedModel, iters: usize) -> Result<Vec<FoldIn>> {
    let (mapped, dropped) = corpus.reindex(&model.codes, &model.specialists);
    let mut results: Vec<FoldIn> = mapped
        .patients
        .par_iter()
        .map(|p| fold_in(p, model, iters))
        .collect::<Result<_>>()?;
    for (r, d) in results.iter_mut().zip(dropped) {
        r.dropped_tokens += d;
    }
    Ok(results)
}

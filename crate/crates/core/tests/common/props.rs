//! Property bodies shared by the proptest suite and the acceptance binary.
//! Each takes plain generated inputs and reports through `TestCaseError`.

#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use mixtopic::corpus::{load_corpus, split_corpus, Corpus};
use mixtopic::eval::{auroc, perplexity, topic_recovery, ScoredLabels};
use mixtopic::inference::{compute_elbo, estimate_mixtures, train, update_token_gamma, TrainConfig, TrainMode};
use mixtopic::matrix::Matrix;
use mixtopic::model::{init_state, recompute_stats, EtaEstimates, FittedModel, InitOptions, PairIndex, TopicEstimates};
use mixtopic::probit::{fold_in_corpus, predict_probability, truncated_normal_mean};
use mixtopic::simulator::{simulate, SimConfig};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{random_corpus, rng};

type Outcome = Result<(), TestCaseError>;

fn small_config(k: usize, seed: u64, sweeps: usize, threads: usize) -> TrainConfig {
    TrainConfig {
        k,
        max_sweeps: sweeps,
        seed,
        threads,
        hyper_burn_in: 1,
        ..TrainConfig::default()
    }
}

/// Simplex responsibilities, conserved totals and agreement with a recount
/// after a few training sweeps, in sequential or sweep-synchronous mode.
pub fn training_keeps_counts_consistent(seed: u64, d: usize, k: usize, threads: usize) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, d, 6, 7, 3, true);
    let out = train(&corpus, &small_config(k, seed, 4, threads)).map_err(fail)?;
    let st = &out.state;
    for row in 0..st.num_tokens() {
        let g = st.resp.gamma.row(row);
        prop_assert!(g.iter().all(|&x| x >= 0.0));
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let total = st.num_tokens() as f64;
    for j in 0..st.num_patients() {
        let s: f64 = st.stats.n.row(j).iter().sum();
        prop_assert!((s - st.patient_len(j) as f64).abs() < 1e-6);
    }
    prop_assert!((st.stats.m.as_slice().iter().sum::<f64>() - total).abs() < 1e-6);
    prop_assert!((st.stats.p.as_slice().iter().sum::<f64>() - total).abs() < 1e-6);
    let fresh = recompute_stats(st, &corpus).map_err(fail)?;
    prop_assert!(fresh.max_abs_diff(&st.stats) < 1e-8);
    Ok(())
}

/// `update_token_gamma` returns a simplex vector for any token of a
/// supervised state.
pub fn token_update_is_simplex(seed: u64, k: usize) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 5, 5, 6, 3, true);
    let mut state = init_state(&corpus, k, seed, &InitOptions::default()).map_err(fail)?;
    for (i, m) in state.reg.mean.iter_mut().enumerate() {
        *m = (i as f64 - 1.0) * r.random_range(-2.0..2.0);
    }
    for j in 0..state.num_patients() {
        for i in 0..state.patient_len(j) {
            let g = update_token_gamma(&mut state, j, i).map_err(fail)?;
            prop_assert!(g.iter().all(|&x| x >= 0.0));
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    Ok(())
}

/// Relabeling topics permutes the recounted statistics, leaves the ELBO and
/// every predicted probability unchanged.
pub fn topic_permutation_invariance(seed: u64, k: usize) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 10, 6, 6, 3, true);
    let out = train(&corpus, &small_config(k, seed, 6, 1)).map_err(fail)?;
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(&mut r);
    let permuted = out.state.permute_topics(&perm);

    let recount = recompute_stats(&permuted, &corpus).map_err(fail)?;
    for (old, &new) in perm.iter().enumerate() {
        for j in 0..corpus.len() {
            prop_assert!((recount.n[(j, new)] - out.state.stats.n[(j, old)]).abs() < 1e-12);
        }
        for t in 0..corpus.num_specialists() {
            prop_assert!((recount.m[(t, new)] - out.state.stats.m[(t, old)]).abs() < 1e-12);
        }
        for pair in 0..recount.p.rows() {
            prop_assert!((recount.p[(pair, new)] - out.state.stats.p[(pair, old)]).abs() < 1e-12);
        }
    }

    let a = compute_elbo(&out.state).map_err(fail)?.total();
    let b = compute_elbo(&permuted).map_err(fail)?.total();
    prop_assert!((a - b).abs() < 1e-9, "ELBO {a} vs {b}");

    let model_a = FittedModel::from_state(&out.state, &corpus, estimate_mixtures(&out.state));
    let model_b = FittedModel::from_state(&permuted, &corpus, estimate_mixtures(&permuted));
    let pa = fold_in_corpus(&corpus, &model_a, 50).map_err(fail)?;
    let pb = fold_in_corpus(&corpus, &model_b, 50).map_err(fail)?;
    for (x, y) in pa.iter().zip(&pb) {
        prop_assert!((x.probability - y.probability).abs() < 1e-12);
    }
    Ok(())
}

/// E[g] lies beyond both 0 and the location on the labeled side. Strict
/// only for `|lambda| <= 8`; further out the gap is below one ulp.
pub fn liability_sign(lambda: f64) -> Outcome {
    let up = truncated_normal_mean(lambda, true).map_err(fail)?;
    let down = truncated_normal_mean(lambda, false).map_err(fail)?;
    if lambda.abs() <= 8.0 {
        prop_assert!(up > lambda.max(0.0), "{lambda}: {up}");
        prop_assert!(down < lambda.min(0.0), "{lambda}: {down}");
    } else {
        prop_assert!(up >= lambda.max(0.0) && up > 0.0, "{lambda}: {up}");
        prop_assert!(down <= lambda.min(0.0) && down < 0.0, "{lambda}: {down}");
    }
    Ok(())
}

/// Probability strictly inside (0, 1), exactly one half iff the score is
/// zero, and pulled towards one half by an inflated covariance.
pub fn predictive_bounds(seed: u64, k: usize, c: f64) -> Outcome {
    let mut r = rng(seed);
    let mean: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let zbar: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let mut b = Matrix::zeros(k, k);
    for x in b.as_mut_slice() {
        *x = r.random_range(-1.0..1.0);
    }
    let mut cov = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cov[(i, j)] = (0..k).map(|l| b[(i, l)] * b[(j, l)]).sum::<f64>() / k as f64;
        }
        cov[(i, i)] += 0.05;
    }
    let p = predict_probability(&zbar, &mean, &cov).map_err(fail)?;
    prop_assert!(p > 0.0 && p < 1.0);
    let score: f64 = mean.iter().zip(&zbar).map(|(a, b)| a * b).sum();
    prop_assert_eq!(p == 0.5, score == 0.0);

    let mut inflated = cov.clone();
    inflated.as_mut_slice().iter_mut().for_each(|x| *x *= c);
    let q = predict_probability(&zbar, &mean, &inflated).map_err(fail)?;
    if score != 0.0 {
        prop_assert!((q - 0.5).abs() < (p - 0.5).abs(), "{p} -> {q}");
    }

    let zero = vec![0.0; k];
    prop_assert_eq!(predict_probability(&zbar, &zero, &cov).map_err(fail)?, 0.5);
    Ok(())
}

/// AUROC is unchanged by a strictly increasing transform and complements to
/// one when scores are negated.
pub fn auroc_rank_invariance(scores: Vec<f64>, labels: Vec<bool>) -> Outcome {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Ok(());
    }
    let base = auroc(&ScoredLabels::new(scores.clone(), labels.clone()).map_err(fail)?).map_err(fail)?;
    let transformed: Vec<f64> = scores.iter().map(|&s| (s / 7.0).atan() * 3.0 + 1.0).collect();
    let moved = auroc(&ScoredLabels::new(transformed, labels.clone()).map_err(fail)?).map_err(fail)?;
    prop_assert_eq!(base, moved);
    let distinct: HashSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
    if distinct.len() == scores.len() {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let flipped = auroc(&ScoredLabels::new(neg, labels).map_err(fail)?).map_err(fail)?;
        prop_assert!((base + flipped - 1.0).abs() < 1e-12);
    }
    Ok(())
}

/// A model with `beta = 1/T` and `eta = 1/V` scores every corpus at `T * V`.
pub fn uniform_model(corpus: &Corpus, k: usize) -> FittedModel {
    let (v, t) = (corpus.num_codes(), corpus.num_specialists());
    let state = init_state(corpus, k, 0, &InitOptions::default()).unwrap();
    let estimates = TopicEstimates {
        theta: Matrix::filled(corpus.len(), k, 1.0 / k as f64),
        beta: Matrix::filled(k, t, 1.0 / t as f64),
        eta: EtaEstimates {
            zeta: Matrix::filled(k, v, 1.0),
            denominators: Matrix::filled(k, t, v as f64),
            pairs: Arc::new(PairIndex::default()),
            values: Matrix::zeros(0, k),
        },
    };
    FittedModel::from_state(&state, corpus, estimates)
}

pub fn uniform_perplexity(seed: u64, k: usize, v: usize, t: usize) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 6, 8, v, t, false);
    let model = uniform_model(&corpus, k);
    let px = perplexity(&model, &corpus, 20).map_err(fail)?;
    let expected = (t * v) as f64;
    prop_assert!((px.value - expected).abs() / expected < 1e-12, "{} vs {expected}", px.value);
    Ok(())
}

/// Perplexity ignores patient order and token order.
pub fn perplexity_order_invariance(seed: u64) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 12, 8, 6, 3, true);
    let out = train(&corpus, &small_config(3, seed, 5, 1)).map_err(fail)?;
    let model = FittedModel::from_state(&out.state, &corpus, out.estimates.clone());
    let mut shuffled = corpus.clone();
    shuffled.patients.shuffle(&mut r);
    for p in shuffled.patients.iter_mut() {
        p.tokens.shuffle(&mut r);
    }
    let a = perplexity(&model, &corpus, 50).map_err(fail)?;
    let b = perplexity(&model, &shuffled, 50).map_err(fail)?;
    prop_assert!((a.value - b.value).abs() / a.value < 1e-10, "{} vs {}", a.value, b.value);
    Ok(())
}

/// Permuting the columns of both inputs identically leaves matched_mean unchanged.
pub fn recovery_column_invariance(seed: u64, d: usize, k: usize) -> Outcome {
    let mut r = rng(seed);
    let mut x = Matrix::zeros(d, k);
    let mut y = Matrix::zeros(d, k);
    for v in x.as_mut_slice().iter_mut().chain(y.as_mut_slice()) {
        *v = r.random::<f64>();
    }
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(&mut r);
    let permute = |m: &Matrix| {
        let mut out = Matrix::zeros(d, k);
        for j in 0..d {
            for (old, &new) in perm.iter().enumerate() {
                out[(j, new)] = m[(j, old)];
            }
        }
        out
    };
    let a = topic_recovery(&x, &y).map_err(fail)?;
    let b = topic_recovery(&permute(&x), &permute(&y)).map_err(fail)?;
    prop_assert!((a.matched_mean - b.matched_mean).abs() < 1e-12);
    prop_assert!(a.correlation.as_slice().iter().all(|c| (-1.0..=1.0).contains(c)));
    let mut seen = a.matching.clone();
    seen.sort_unstable();
    prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
    Ok(())
}

/// The three splits are disjoint and cover the input.
pub fn split_partitions(seed: u64, d: usize, train: f64, valid: f64) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, d, 3, 4, 2, true);
    let (a, b, c) = split_corpus(&corpus, train, valid, seed).map_err(fail)?;
    let mut ids: Vec<&str> = [&a, &b, &c]
        .iter()
        .flat_map(|s| s.patients.iter().map(|p| p.id.as_str()))
        .collect();
    prop_assert_eq!(ids.len(), d);
    ids.sort_unstable();
    ids.dedup();
    prop_assert_eq!(ids.len(), d);
    Ok(())
}

/// Writing and reloading the TSV files reproduces tokens, labels and the
/// number of event rows.
pub fn corpus_round_trip(seed: u64, d: usize) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, d, 5, 9, 4, true);
    let dir = tempfile::tempdir().map_err(fail)?;
    let (ev, lab) = (dir.path().join("events.tsv"), dir.path().join("labels.tsv"));
    corpus.write_events(&ev).map_err(fail)?;
    corpus.write_labels(&lab).map_err(fail)?;
    let rows = std::fs::read_to_string(&ev).map_err(fail)?.lines().count() - 1;
    prop_assert_eq!(rows, corpus.num_tokens());
    let back = load_corpus(&ev, Some(&lab)).map_err(fail)?;
    prop_assert_eq!(back.num_tokens(), rows);
    prop_assert_eq!(back.len(), corpus.len());
    for (p, q) in corpus.patients.iter().zip(&back.patients) {
        prop_assert_eq!(&p.id, &q.id);
        prop_assert_eq!(p.label, q.label);
        let names = |c: &Corpus, t: &mixtopic::Token| {
            (
                c.codes.name(t.code).unwrap().to_owned(),
                c.specialists.name(t.specialist).unwrap().to_owned(),
            )
        };
        let a: Vec<_> = p.tokens.iter().map(|t| names(&corpus, t)).collect();
        let b: Vec<_> = q.tokens.iter().map(|t| names(&back, t)).collect();
        prop_assert_eq!(a, b);
    }
    // a second trip is index-for-index identical
    corpus_file_pair(&back, &ev, &lab)?;
    let again = load_corpus(&ev, Some(&lab)).map_err(fail)?;
    prop_assert_eq!(again, back);
    Ok(())
}

fn corpus_file_pair(c: &Corpus, ev: &std::path::Path, lab: &std::path::Path) -> Outcome {
    c.write_events(ev).map_err(fail)?;
    c.write_labels(lab).map_err(fail)
}

/// Same config gives the same draw; labels follow the liability sign; token
/// totals match the per-patient lengths.
pub fn simulator_consistency(seed: u64, k: usize) -> Outcome {
    let cfg = SimConfig {
        d: 30,
        v: 20,
        t: 3,
        k,
        tokens_min: 2,
        tokens_max: 9,
        seed,
        ..SimConfig::default()
    };
    let (corpus, truth) = simulate(&cfg).map_err(fail)?;
    let again = simulate(&cfg).map_err(fail)?;
    prop_assert!(again.0 == corpus && again.1 == truth);
    let mut total = 0;
    for (j, p) in corpus.patients.iter().enumerate() {
        prop_assert_eq!(p.label, Some(truth.g[j] > 0.0));
        prop_assert!((cfg.tokens_min..=cfg.tokens_max).contains(&p.len()));
        total += p.len();
    }
    prop_assert_eq!(total, corpus.num_tokens());
    let rows_ok = |m: &Matrix| (0..m.rows()).all(|r| (m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    prop_assert!(rows_ok(&truth.theta) && rows_ok(&truth.beta));
    prop_assert!(truth.eta.iter().all(rows_ok));
    Ok(())
}

/// Every row of the point estimates is a probability vector, and the model
/// JSON reproduces them exactly.
pub fn estimates_normalized_and_persisted(seed: u64, k: usize, unsupervised: bool) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 8, 6, 7, 3, true);
    let mut cfg = small_config(k, seed, 5, 1);
    if unsupervised {
        cfg.mode = TrainMode::Unsupervised;
    }
    let out = train(&corpus, &cfg).map_err(fail)?;
    let est = &out.estimates;
    let simplex = |row: &[f64]| row.iter().all(|&x| x >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-10;
    for j in 0..est.theta.rows() {
        prop_assert!(simplex(est.theta.row(j)));
    }
    for kk in 0..k {
        prop_assert!(simplex(est.beta.row(kk)));
        for t in 0..corpus.num_specialists() {
            prop_assert!(simplex(&est.eta.row(kk, t)));
        }
    }
    let model = FittedModel::from_state(&out.state, &corpus, out.estimates.clone());
    let back = FittedModel::from_json(&model.to_json().map_err(fail)?).map_err(fail)?;
    prop_assert!(back.estimates.theta.max_abs_diff(&model.estimates.theta) < 1e-12);
    prop_assert!(back.estimates.beta.max_abs_diff(&model.estimates.beta) < 1e-12);
    prop_assert!(back.reg_covariance.max_abs_diff(&model.reg_covariance) < 1e-12);
    for kk in 0..k {
        for t in 0..corpus.num_specialists() {
            let a = model.estimates.eta.row(kk, t);
            let b = back.estimates.eta.row(kk, t);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
    Ok(())
}

/// Regression covariance stays symmetric positive definite through training.
pub fn covariance_is_spd(seed: u64, k: usize) -> Outcome {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 10, 6, 6, 3, true);
    let out = train(&corpus, &small_config(k, seed, 5, 1)).map_err(fail)?;
    let s = &out.state.reg.covariance;
    for a in 0..k {
        for b in 0..k {
            prop_assert!((s[(a, b)] - s[(b, a)]).abs() < 1e-10);
        }
    }
    prop_assert!(mixtopic::matrix::spd_log_det(s, "covariance").is_ok());
    Ok(())
}

fn fail<E: std::fmt::Display>(e: E) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

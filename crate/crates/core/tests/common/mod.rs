//! Test-side oracles shared by the integration suites. Nothing here calls into
//! the library's numerical code except to build inputs.

#![allow(dead_code)]

use mixtopic::corpus::{Corpus, PatientRecord, Token, Vocabulary};
use mixtopic::model::{init_state, recompute_stats, InitOptions, ModelState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random corpus with `d` patients of `1..=max_len` tokens over `v` codes and
/// `t` specialists. Labels are random when `labeled`.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    d: usize,
    max_len: usize,
    v: usize,
    t: usize,
    labeled: bool,
) -> Corpus {
    let codes = Vocabulary::from_names((0..v).map(|i| format!("c{i}"))).unwrap();
    let specs = Vocabulary::from_names((0..t).map(|i| format!("s{i}"))).unwrap();
    let patients = (0..d)
        .map(|j| {
            let len = rng.random_range(1..=max_len);
            let toks = (0..len)
                .map(|_| Token::new(rng.random_range(0..v), rng.random_range(0..t)))
                .collect();
            let label = labeled.then(|| rng.random_bool(0.5));
            PatientRecord::new(format!("p{j}"), toks, label)
        })
        .collect();
    Corpus::new(patients, codes, specs)
}

pub fn unsupervised_state(corpus: &Corpus, k: usize, seed: u64) -> ModelState {
    let opts = InitOptions {
        supervised: false,
        ..InitOptions::default()
    };
    init_state(corpus, k, seed, &opts).unwrap()
}

/// Overwrites every responsibility with a one-hot row and recounts.
pub fn set_hard(state: &mut ModelState, corpus: &Corpus, z: &[Vec<usize>]) {
    for (j, zs) in z.iter().enumerate() {
        for (i, &topic) in zs.iter().enumerate() {
            let r = state.resp.offsets[j] + i;
            let row = state.resp.gamma.row_mut(r);
            row.iter_mut().for_each(|g| *g = 0.0);
            row[topic] = 1.0;
        }
    }
    state.stats = recompute_stats(state, corpus).unwrap();
}

/// Random positive hyperparameters drawn into `state`.
pub fn randomize_hyper(state: &mut ModelState, rng: &mut ChaCha8Rng) {
    for a in state.hyper.alpha.iter_mut() {
        *a = rng.random_range(0.05..2.0);
    }
    for i in state.hyper.iota.iter_mut() {
        *i = rng.random_range(0.05..2.0);
    }
    for z in state.hyper.zeta.as_mut_slice() {
        *z = rng.random_range(0.01..1.0);
    }
}

/// `log p(z, b, x | alpha, iota, zeta)` with theta, beta and eta integrated
/// out, for a hard assignment `z`. Specialists are treated as observed draws
/// from the topic and codes as draws from the (topic, specialist) cell.
pub fn log_joint_marginal(
    corpus: &Corpus,
    z: &[Vec<usize>],
    alpha: &[f64],
    iota: &[f64],
    zeta: &[Vec<f64>],
) -> f64 {
    let k = alpha.len();
    let t = iota.len();
    let v = zeta[0].len();
    let mut n = vec![vec![0usize; k]; corpus.len()];
    let mut m = vec![vec![0usize; t]; k];
    let mut p = vec![vec![vec![0usize; v]; t]; k];
    for (j, pat) in corpus.patients.iter().enumerate() {
        for (i, tok) in pat.tokens.iter().enumerate() {
            let kk = z[j][i];
            n[j][kk] += 1;
            m[kk][tok.specialist] += 1;
            p[kk][tok.specialist][tok.code] += 1;
        }
    }
    let dirmult = |conc: &[f64], counts: &[usize]| -> f64 {
        let a: f64 = conc.iter().sum();
        let total: usize = counts.iter().sum();
        let mut s = ln_gamma(a) - ln_gamma(a + total as f64);
        for (c, &x) in conc.iter().zip(counts) {
            s += ln_gamma(c + x as f64) - ln_gamma(*c);
        }
        s
    };
    let mut total = 0.0;
    for row in &n {
        total += dirmult(alpha, row);
    }
    for kk in 0..k {
        total += dirmult(iota, &m[kk]);
        for tt in 0..t {
            total += dirmult(&zeta[kk], &p[kk][tt]);
        }
    }
    total
}

pub fn zeta_rows(state: &ModelState) -> Vec<Vec<f64>> {
    (0..state.k).map(|k| state.hyper.zeta.row(k).to_vec()).collect()
}

pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub mod props;

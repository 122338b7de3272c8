use statrs::function::gamma::digamma;

use crate::model::ModelState;

/// Lower bound applied to every updated concentration.
pub const HYPER_FLOOR: f64 = 1e-6;

/// Runs `iters` rounds of the Gamma-prior fixed-point updates for alpha, iota
/// and zeta against the current expected counts.
///
/// Each family follows the Dirichlet-multinomial form
/// `a_k <- (c - 1 + a_k sum_g [Psi(a_k + c_gk) - Psi(a_k)]) / (d + sum_g [Psi(A + C_g) - Psi(A)])`
/// with groups `g` being patients for alpha, topics for iota and
/// (topic, specialist) cells for zeta, and `C_g` the group total.
pub fn update_hyperparameters(state: &mut ModelState, iters: usize) {
    let prior = state.hyper.prior;
    for _ in 0..iters {
        update_alpha(state, prior.c_alpha, prior.d_alpha);
        update_iota(state, prior.c_iota, prior.d_iota);
        update_zeta(state, prior.c_zeta, prior.d_zeta);
    }
}

fn finish(num: f64, den: f64) -> f64 {
    let v = num / den;
    if v.is_finite() {
        v.max(HYPER_FLOOR)
    } else {
        HYPER_FLOOR
    }
}

fn update_alpha(state: &mut ModelState, c: f64, d: f64) {
    let k = state.k;
    let alpha = &state.hyper.alpha;
    let a_sum: f64 = alpha.iter().sum();
    let psi_sum = digamma(a_sum);
    let psi_alpha: Vec<f64> = alpha.iter().map(|&a| digamma(a)).collect();
    let mut num = vec![0.0; k];
    let mut den = 0.0;
    for j in 0..state.num_patients() {
        let mj = state.patient_len(j);
        if mj == 0 {
            continue;
        }
        den += digamma(a_sum + mj as f64) - psi_sum;
        let n = state.stats.n.row(j);
        for kk in 0..k {
            num[kk] += digamma(alpha[kk] + n[kk]) - psi_alpha[kk];
        }
    }
    state.hyper.alpha = (0..k)
        .map(|kk| finish(c - 1.0 + alpha[kk] * num[kk], d + den))
        .collect();
}

fn update_iota(state: &mut ModelState, c: f64, d: f64) {
    let iota = &state.hyper.iota;
    let m = &state.stats.m;
    let i_sum: f64 = iota.iter().sum();
    let psi_sum = digamma(i_sum);
    let den: f64 = state
        .stats
        .topic_totals
        .iter()
        .map(|&tot| digamma(i_sum + tot) - psi_sum)
        .sum();
    state.hyper.iota = iota
        .iter()
        .enumerate()
        .map(|(t, &it)| {
            let psi_it = digamma(it);
            let s: f64 = m.row(t).iter().map(|&c_tk| digamma(it + c_tk) - psi_it).sum();
            finish(c - 1.0 + it * s, d + den)
        })
        .collect();
}

fn update_zeta(state: &mut ModelState, c: f64, d: f64) {
    let k = state.k;
    let zeta = &state.hyper.zeta;
    let sums = state.hyper.zeta_row_sums();
    let m = &state.stats.m;
    let t_count = m.rows();
    // numerator sums: only observed (t, w) pairs have nonzero counts
    let mut num = crate::matrix::Matrix::zeros(k, zeta.cols());
    for (pair, &(_, w)) in state.stats.pairs.keys().iter().enumerate() {
        let p = state.stats.p.row(pair);
        for kk in 0..k {
            let z = zeta[(kk, w)];
            num[(kk, w)] += digamma(z + p[kk]) - digamma(z);
        }
    }
    let mut updated = zeta.clone();
    for kk in 0..k {
        let psi_sum = digamma(sums[kk]);
        let den: f64 = (0..t_count)
            .map(|t| digamma(sums[kk] + m[(t, kk)]) - psi_sum)
            .sum();
        for w in 0..zeta.cols() {
            updated[(kk, w)] = finish(c - 1.0 + zeta[(kk, w)] * num[(kk, w)], d + den);
        }
    }
    state.hyper.zeta = updated;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Vocabulary};
    use crate::model::{init_state, InitOptions, PriorConstants};

    fn empty_state(prior: PriorConstants) -> ModelState {
        let codes = Vocabulary::from_names(["a", "b"]).unwrap();
        let specs = Vocabulary::from_names(["s"]).unwrap();
        let corpus = Corpus::new(vec![], codes, specs);
        let opts = InitOptions {
            prior,
            ..InitOptions::default()
        };
        init_state(&corpus, 3, 0, &opts).unwrap()
    }

    #[test]
    fn zero_counts_fixed_point() {
        let prior = PriorConstants {
            c_alpha: 2.0,
            d_alpha: 1.0,
            c_iota: 2.0,
            d_iota: 1.0,
            c_zeta: 2.0,
            d_zeta: 1.0,
        };
        let mut state = empty_state(prior);
        update_hyperparameters(&mut state, 1);
        assert_eq!(state.hyper.alpha, vec![1.0; 3]);
        assert_eq!(state.hyper.iota, vec![1.0]);
        assert!(state.hyper.zeta.as_slice().iter().all(|&z| z == 1.0));
    }

    #[test]
    fn zero_counts_floor() {
        let prior = PriorConstants {
            c_alpha: 1.0,
            d_alpha: 0.001,
            ..PriorConstants::default()
        };
        let mut state = empty_state(prior);
        update_hyperparameters(&mut state, 1);
        assert_eq!(state.hyper.alpha, vec![HYPER_FLOOR; 3]);
        // c_iota < 1 drives iota negative before flooring
        assert_eq!(state.hyper.iota, vec![HYPER_FLOOR]);
    }
}

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::matrix::{dot, spd_log_det};
use crate::model::ModelState;
use crate::probit::truncated_normal_log_mass;

use super::regression::summed_zbar_outer;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The nine expectation terms of the collapsed ELBO.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ElboTerms {
    pub log_p_z: f64,
    pub log_p_b: f64,
    pub log_p_x: f64,
    pub log_p_g: f64,
    pub log_p_w: f64,
    pub log_p_y: f64,
    pub log_q_z: f64,
    pub log_q_g: f64,
    pub log_q_w: f64,
}

impl ElboTerms {
    pub const NAMES: [&'static str; 9] = [
        "log_p_z", "log_p_b", "log_p_x", "log_p_g", "log_p_w", "log_p_y", "log_q_z", "log_q_g",
        "log_q_w",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.log_p_z,
            self.log_p_b,
            self.log_p_x,
            self.log_p_g,
            self.log_p_w,
            self.log_p_y,
            self.log_q_z,
            self.log_q_g,
            self.log_q_w,
        ]
    }

    pub fn total(&self) -> f64 {
        self.log_p_z + self.log_p_b + self.log_p_x + self.log_p_g + self.log_p_w + self.log_p_y
            - self.log_q_z
            - self.log_q_g
            - self.log_q_w
    }
}

/// Zero-order ELBO: expected counts are substituted into the log-Gamma
/// marginals.
pub fn compute_elbo(state: &ModelState) -> Result<ElboTerms> {
    let k = state.k;
    let stats = &state.stats;
    let hyper = &state.hyper;

    let alpha_sum = hyper.alpha_sum();
    let lg_alpha: f64 = hyper.alpha.iter().map(|&a| ln_gamma(a)).sum();
    let mut log_p_z = 0.0;
    for j in 0..state.num_patients() {
        let n = stats.n.row(j);
        let mut s = ln_gamma(alpha_sum) - lg_alpha - ln_gamma(alpha_sum + state.patient_len(j) as f64);
        for kk in 0..k {
            s += ln_gamma(hyper.alpha[kk] + n[kk]);
        }
        log_p_z += s;
    }

    let iota_sum = hyper.iota_sum();
    let lg_iota: f64 = hyper.iota.iter().map(|&i| ln_gamma(i)).sum();
    let mut log_p_b = 0.0;
    for kk in 0..k {
        let mut s = ln_gamma(iota_sum) - lg_iota;
        let mut col = 0.0;
        for t in 0..stats.m.rows() {
            let c = stats.m[(t, kk)];
            col += c;
            s += ln_gamma(hyper.iota[t] + c);
        }
        log_p_b += s - ln_gamma(iota_sum + col);
    }

    let zeta_sums = hyper.zeta_row_sums();
    let mut log_p_x = 0.0;
    for kk in 0..k {
        let lg_sum = ln_gamma(zeta_sums[kk]);
        for t in 0..stats.m.rows() {
            log_p_x += lg_sum - ln_gamma(zeta_sums[kk] + stats.m[(t, kk)]);
        }
    }
    // codes never seen with a specialist contribute lgamma(z) - lgamma(z) = 0
    for (pair, &(_, w)) in stats.pairs.keys().iter().enumerate() {
        let p = stats.p.row(pair);
        for kk in 0..k {
            let z = hyper.zeta[(kk, w)];
            log_p_x += ln_gamma(z + p[kk]) - ln_gamma(z);
        }
    }

    let mean = &state.reg.mean;
    let cov = &state.reg.covariance;
    let mut log_p_g = 0.0;
    let mut log_q_g = 0.0;
    let mut any = false;
    for j in 0..state.num_patients() {
        if !state.in_regression(j) {
            continue;
        }
        any = true;
        let y = state.layout.labels[j].expect("labeled");
        // q(g_j) is the truncated normal centred on the stored liability
        let lam_q = state.reg.liability[j];
        let eg = state.reg.expected_g[j];
        let eg2 = 1.0 + lam_q * eg;
        log_p_g += -0.5 * LN_2PI - 0.5 * eg2 + dot(mean, &state.gamma_bar(j)) * eg;
        let centred = eg2 - 2.0 * lam_q * eg + lam_q * lam_q;
        log_q_g += -0.5 * LN_2PI - 0.5 * centred - truncated_normal_log_mass(lam_q, y);
    }
    if any {
        // sum_j (m' A_j m + tr(A_j S)) = tr(A (S + m m'))
        let a = summed_zbar_outer(state);
        let mut quad = 0.0;
        for r in 0..k {
            for c in 0..k {
                quad += a[(r, c)] * (cov[(c, r)] + mean[c] * mean[r]);
            }
        }
        log_p_g -= 0.5 * quad;
    }

    let tau = hyper.tau;
    let kf = k as f64;
    let second: f64 = (0..k).map(|kk| mean[kk] * mean[kk] + cov[(kk, kk)]).sum();
    let log_p_w = -0.5 * kf * LN_2PI + 0.5 * kf * tau.ln() - 0.5 * tau * second;
    let log_q_w = -0.5 * kf * LN_2PI - 0.5 * kf - 0.5 * spd_log_det(cov, "regression covariance")?;

    let log_q_z: f64 = state
        .resp
        .gamma
        .as_slice()
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| g * g.ln())
        .sum();

    let terms = ElboTerms {
        log_p_z,
        log_p_b,
        log_p_x,
        log_p_g,
        log_p_w,
        log_p_y: 0.0,
        log_q_z,
        log_q_g,
        log_q_w,
    };
    if let Some(i) = terms.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("ELBO term {}", ElboTerms::NAMES[i])));
    }
    Ok(terms)
}

use crate::error::Result;
use crate::matrix::{dot, spd_inverse, Matrix};
use crate::model::ModelState;
use crate::probit::truncated_normal_mean;

/// `E[zbar_j zbar_j']` for patient `j`:
/// `(n n' - sum_i gamma_i gamma_i' + sum_i diag(gamma_i)) / M_j^2`,
/// i.e. cross products over distinct tokens plus the one-hot diagonal.
pub fn expected_zbar_outer(state: &ModelState, j: usize) -> Matrix {
    let k = state.k;
    let mut out = Matrix::zeros(k, k);
    accumulate_zbar_outer(state, j, &mut out);
    out
}

fn accumulate_zbar_outer(state: &ModelState, j: usize, acc: &mut Matrix) {
    let k = state.k;
    let mj = state.patient_len(j) as f64;
    let scale = 1.0 / (mj * mj);
    let n = state.stats.n.row(j);
    for a in 0..k {
        for b in 0..k {
            acc[(a, b)] += scale * n[a] * n[b];
        }
    }
    for r in state.resp.patient_range(j) {
        let g = state.resp.gamma.row(r);
        for a in 0..k {
            let ga = scale * g[a];
            acc[(a, a)] += ga;
            for b in 0..k {
                acc[(a, b)] -= ga * g[b];
            }
        }
    }
}

/// `sum_j E[zbar_j zbar_j']` over the patients in the regression.
pub(crate) fn summed_zbar_outer(state: &ModelState) -> Matrix {
    let mut acc = Matrix::zeros(state.k, state.k);
    for j in 0..state.num_patients() {
        if state.in_regression(j) {
            accumulate_zbar_outer(state, j, &mut acc);
        }
    }
    acc
}

/// Gaussian posterior of the regression weights given the current
/// responsibilities and liabilities.
pub fn update_regression(state: &mut ModelState) -> Result<()> {
    let k = state.k;
    let mut precision = summed_zbar_outer(state);
    for a in 0..k {
        precision[(a, a)] += state.hyper.tau;
    }
    let (cov, _) = spd_inverse(&precision, "regression precision")?;
    let mut rhs = vec![0.0; k];
    for j in 0..state.num_patients() {
        if !state.in_regression(j) {
            continue;
        }
        let eg = state.reg.expected_g[j];
        for (acc, z) in rhs.iter_mut().zip(state.gamma_bar(j)) {
            *acc += z * eg;
        }
    }
    state.reg.mean = cov.mat_vec(&rhs);
    state.reg.covariance = cov;
    Ok(())
}

/// Refreshes `lambda_j` and `E[g_j]` for every patient in the regression.
pub fn update_liability(state: &mut ModelState) -> Result<()> {
    let mut skipped = 0usize;
    for j in 0..state.num_patients() {
        if !state.supervised {
            break;
        }
        let Some(y) = state.layout.labels[j] else {
            continue;
        };
        if state.patient_len(j) == 0 {
            skipped += 1;
            continue;
        }
        let lambda = dot(&state.reg.mean, &state.gamma_bar(j));
        state.reg.liability[j] = lambda;
        state.reg.expected_g[j] = truncated_normal_mean(lambda, y)?;
    }
    if skipped > 0 {
        log::warn!("{skipped} labeled patients without tokens left out of the regression");
    }
    Ok(())
}

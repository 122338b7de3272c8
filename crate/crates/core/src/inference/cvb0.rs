use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::{aggregate_stats, Hyperparameters, ModelState, RegressionState};

/// Expected counts with one token's own responsibility removed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExclusiveCounts {
    /// `n[j, :]` minus the token.
    pub n: Vec<f64>,
    /// `m[b_ij, :]` minus the token.
    pub m: Vec<f64>,
    /// `sum_t m[t, :]` minus the token.
    pub m_row_totals: Vec<f64>,
    /// `p[:, b_ij, x_ij]` minus the token.
    pub p: Vec<f64>,
    /// `sum_w p[:, b_ij, w]` minus the token; equals `m` since the code rows
    /// of a specialist add up to its topic counts.
    pub p_row_totals: Vec<f64>,
}

pub fn exclusive_counts(state: &ModelState, j: usize, i: usize) -> ExclusiveCounts {
    let r = state.resp.offsets[j] + i;
    let g = state.resp.gamma.row(r);
    let sub = |row: &[f64]| -> Vec<f64> {
        row.iter().zip(g).map(|(c, x)| (c - x).max(0.0)).collect()
    };
    let m = sub(state.stats.m.row(state.layout.specialist[r]));
    ExclusiveCounts {
        n: sub(state.stats.n.row(j)),
        m_row_totals: sub(&state.stats.topic_totals),
        p: sub(state.stats.p.row(state.layout.pair[r])),
        p_row_totals: m.clone(),
        m,
    }
}

/// Everything the token update reads that stays fixed over a sweep.
pub(crate) struct UpdateCtx<'a> {
    k: usize,
    alpha: &'a [f64],
    iota: &'a [f64],
    iota_sum: f64,
    zeta: &'a Matrix,
    zeta_sums: Vec<f64>,
    mean: &'a [f64],
    cov: &'a Matrix,
}

impl<'a> UpdateCtx<'a> {
    pub(crate) fn new(hyper: &'a Hyperparameters, reg: &'a RegressionState) -> Self {
        UpdateCtx {
            k: hyper.alpha.len(),
            alpha: &hyper.alpha,
            iota: &hyper.iota,
            iota_sum: hyper.iota_sum(),
            zeta: &hyper.zeta,
            zeta_sums: hyper.zeta_row_sums(),
            mean: &reg.mean,
            cov: &reg.covariance,
        }
    }
}

/// Global counts the token update is taken against.
#[derive(Clone, Copy)]
pub(crate) struct GlobalCounts<'a> {
    pub m: &'a Matrix,
    pub totals: &'a [f64],
    pub p: &'a Matrix,
}

/// Supervision of one patient: `E[g_j]` and `M_j`.
#[derive(Clone, Copy)]
pub(crate) struct Supervision {
    expected_g: f64,
    len: f64,
}

pub(crate) fn supervision(state: &ModelState, j: usize) -> Option<Supervision> {
    state.in_regression(j).then(|| Supervision {
        expected_g: state.reg.expected_g[j],
        len: state.patient_len(j) as f64,
    })
}

pub(crate) struct Scratch {
    n_excl: Vec<f64>,
    s_n: Vec<f64>,
    logw: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(k: usize) -> Self {
        Scratch {
            n_excl: vec![0.0; k],
            s_n: vec![0.0; k],
            logw: vec![0.0; k],
        }
    }
}

/// Writes the updated responsibility of one token into `out`. `old` is the
/// token's current responsibility, which `global` and `n_row` still contain.
#[allow(clippy::too_many_arguments)]
pub(crate) fn token_update(
    ctx: &UpdateCtx,
    global: GlobalCounts,
    n_row: &[f64],
    old: &[f64],
    specialist: usize,
    pair: usize,
    code: usize,
    sup: Option<Supervision>,
    scratch: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let k = ctx.k;
    let m_row = global.m.row(specialist);
    let p_row = global.p.row(pair);
    let iota_b = ctx.iota[specialist];
    for kk in 0..k {
        scratch.n_excl[kk] = (n_row[kk] - old[kk]).max(0.0);
    }
    for kk in 0..k {
        let m_ex = (m_row[kk] - old[kk]).max(0.0);
        let tot_ex = (global.totals[kk] - old[kk]).max(0.0);
        let p_ex = (p_row[kk] - old[kk]).max(0.0);
        scratch.logw[kk] = (ctx.alpha[kk] + scratch.n_excl[kk]).ln()
            + (iota_b + m_ex).ln()
            - (ctx.iota_sum + tot_ex).ln()
            + (ctx.zeta[(kk, code)] + p_ex).ln()
            - (ctx.zeta_sums[kk] + m_ex).ln();
    }
    if let Some(s) = sup {
        let mt_n = dot(ctx.mean, &scratch.n_excl);
        for kk in 0..k {
            scratch.s_n[kk] = dot(ctx.cov.row(kk), &scratch.n_excl);
        }
        let inv_m = 1.0 / s.len;
        let half_inv_m2 = 0.5 * inv_m * inv_m;
        for kk in 0..k {
            let mk = ctx.mean[kk];
            scratch.logw[kk] += mk * s.expected_g * inv_m
                - half_inv_m2
                    * (2.0 * (mk * mt_n + scratch.s_n[kk]) + mk * mk + ctx.cov[(kk, kk)]);
        }
    }
    let max = scratch.logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("token responsibility weights".into()));
    }
    let mut total = 0.0;
    for kk in 0..k {
        let e = (scratch.logw[kk] - max).exp();
        out[kk] = e;
        total += e;
    }
    for x in out.iter_mut() {
        *x /= total;
    }
    Ok(())
}

/// Recomputes `gamma_ij` from the current state, stores it and updates the
/// counts incrementally. Returns the new responsibility.
pub fn update_token_gamma(state: &mut ModelState, j: usize, i: usize) -> Result<Vec<f64>> {
    let k = state.k;
    let mut out = vec![0.0; k];
    {
        let ctx = UpdateCtx::new(&state.hyper, &state.reg);
        let mut scratch = Scratch::new(k);
        let r = state.resp.offsets[j] + i;
        token_update(
            &ctx,
            GlobalCounts {
                m: &state.stats.m,
                totals: &state.stats.topic_totals,
                p: &state.stats.p,
            },
            state.stats.n.row(j),
            state.resp.gamma.row(r),
            state.layout.specialist[r],
            state.layout.pair[r],
            state.layout.code[r],
            supervision(state, j),
            &mut scratch,
            &mut out,
        )?;
    }
    apply_token(state, j, state.resp.offsets[j] + i, &out);
    Ok(out)
}

fn apply_token(state: &mut ModelState, j: usize, r: usize, new: &[f64]) {
    let t = state.layout.specialist[r];
    let pair = state.layout.pair[r];
    let stats = &mut state.stats;
    let old = state.resp.gamma.row_mut(r);
    for kk in 0..new.len() {
        let delta = new[kk] - old[kk];
        stats.n[(j, kk)] += delta;
        stats.m[(t, kk)] += delta;
        stats.p[(pair, kk)] += delta;
        stats.topic_totals[kk] += delta;
        old[kk] = new[kk];
    }
}

/// One sequential pass over every token with incremental count updates.
pub(crate) fn sweep_sequential(state: &mut ModelState) -> Result<()> {
    let k = state.k;
    // hyperparameters and regression state are read-only during a sweep
    let hyper = state.hyper.clone();
    let reg = state.reg.clone();
    let ctx = UpdateCtx::new(&hyper, &reg);
    let mut scratch = Scratch::new(k);
    let mut out = vec![0.0; k];
    for j in 0..state.num_patients() {
        let sup = supervision(state, j);
        for r in state.resp.patient_range(j) {
            token_update(
                &ctx,
                GlobalCounts {
                    m: &state.stats.m,
                    totals: &state.stats.topic_totals,
                    p: &state.stats.p,
                },
                state.stats.n.row(j),
                state.resp.gamma.row(r),
                state.layout.specialist[r],
                state.layout.pair[r],
                state.layout.code[r],
                sup,
                &mut scratch,
                &mut out,
            )?;
            apply_token(state, j, r, &out);
        }
    }
    Ok(())
}

/// Sweep-synchronous pass: every patient reads a snapshot of the global
/// counts taken at the start of the sweep and writes only its own
/// responsibilities and `n` row. Global counts are rebuilt afterwards.
pub(crate) fn sweep_parallel(state: &mut ModelState) -> Result<()> {
    let k = state.k;
    let snapshot_m = state.stats.m.clone();
    let snapshot_totals = state.stats.topic_totals.clone();
    let snapshot_p = state.stats.p.clone();
    let sups: Vec<Option<Supervision>> =
        (0..state.num_patients()).map(|j| supervision(state, j)).collect();
    let hyper = state.hyper.clone();
    let reg = state.reg.clone();
    let ctx = UpdateCtx::new(&hyper, &reg);
    let global = GlobalCounts {
        m: &snapshot_m,
        totals: &snapshot_totals,
        p: &snapshot_p,
    };
    let offsets = state.resp.offsets.clone();
    let layout = &state.layout;

    // carve the flat gamma buffer into per-patient slices
    let mut chunks: Vec<&mut [f64]> = Vec::with_capacity(offsets.len() - 1);
    let mut rest = state.resp.gamma.as_mut_slice();
    for j in 0..offsets.len() - 1 {
        let (head, tail) = rest.split_at_mut((offsets[j + 1] - offsets[j]) * k);
        chunks.push(head);
        rest = tail;
    }
    chunks
        .into_par_iter()
        .zip(state.stats.n.as_mut_slice().par_chunks_mut(k))
        .enumerate()
        .try_for_each_init(
            || (Scratch::new(k), vec![0.0; k]),
            |(scratch, out), (j, (gamma, n_row))| -> Result<()> {
                for (i, old) in gamma.chunks_mut(k).enumerate() {
                    let r = offsets[j] + i;
                    token_update(
                        &ctx,
                        global,
                        n_row,
                        old,
                        layout.specialist[r],
                        layout.pair[r],
                        layout.code[r],
                        sups[j],
                        scratch,
                        out,
                    )?;
                    for kk in 0..k {
                        n_row[kk] += out[kk] - old[kk];
                        old[kk] = out[kk];
                    }
                }
                Ok(())
            },
        )?;
    state.stats = aggregate_stats(state);
    Ok(())
}

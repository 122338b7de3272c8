use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{validate_corpus, Corpus};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{
    init_state, recompute_stats, EtaEstimates, ModelState, TopicEstimates,
};

use super::cvb0::{supervision, sweep_parallel, sweep_sequential, token_update, GlobalCounts, Scratch, UpdateCtx};
use super::elbo::compute_elbo;
use super::hyper::update_hyperparameters;
use super::regression::{update_liability, update_regression};
use super::{BatchMode, ElboTrace, TrainConfig};

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub state: ModelState,
    pub estimates: TopicEstimates,
    pub trace: ElboTrace,
    /// Sweeps (or sweep-equivalents) actually run.
    pub sweeps: usize,
    /// Whether the relative ELBO change fell below the tolerance.
    pub converged: bool,
}

/// Point estimates of theta, beta and eta from the expected counts.
pub fn estimate_mixtures(state: &ModelState) -> TopicEstimates {
    let k = state.k;
    let hyper = &state.hyper;
    let stats = &state.stats;
    let d = state.num_patients();
    let t_count = state.layout.num_specialists;

    let alpha_sum = hyper.alpha_sum();
    let mut theta = Matrix::zeros(d, k);
    for j in 0..d {
        let den = alpha_sum + state.patient_len(j) as f64;
        for kk in 0..k {
            theta[(j, kk)] = (hyper.alpha[kk] + stats.n[(j, kk)]) / den;
        }
    }

    let iota_sum = hyper.iota_sum();
    let mut beta = Matrix::zeros(k, t_count);
    for kk in 0..k {
        let col: f64 = (0..t_count).map(|t| stats.m[(t, kk)]).sum();
        for t in 0..t_count {
            beta[(kk, t)] = (hyper.iota[t] + stats.m[(t, kk)]) / (iota_sum + col);
        }
    }

    // sum_w p[k, t, w] taken from p itself so every eta row normalizes exactly
    let mut p_rows = Matrix::zeros(k, t_count);
    for (pair, &(t, _)) in stats.pairs.keys().iter().enumerate() {
        for kk in 0..k {
            p_rows[(kk, t)] += stats.p[(pair, kk)];
        }
    }
    let zeta_sums = hyper.zeta_row_sums();
    let mut denominators = Matrix::zeros(k, t_count);
    for kk in 0..k {
        for t in 0..t_count {
            denominators[(kk, t)] = zeta_sums[kk] + p_rows[(kk, t)];
        }
    }
    let mut values = Matrix::zeros(stats.pairs.len(), k);
    for (pair, &(t, w)) in stats.pairs.keys().iter().enumerate() {
        for kk in 0..k {
            values[(pair, kk)] = (hyper.zeta[(kk, w)] + stats.p[(pair, kk)]) / denominators[(kk, t)];
        }
    }

    TopicEstimates {
        theta,
        beta,
        eta: EtaEstimates {
            zeta: hyper.zeta.clone(),
            denominators,
            pairs: stats.pairs.clone(),
            values,
        },
    }
}

fn prepare(corpus: &Corpus, config: &TrainConfig) -> Result<ModelState> {
    config.validate()?;
    validate_corpus(corpus)?;
    if config.supervised()
        && !corpus
            .patients
            .iter()
            .any(|p| p.label.is_some() && !p.tokens.is_empty())
    {
        return Err(Error::NoLabeledPatients);
    }
    let mut init = config.init;
    init.supervised = config.supervised();
    init_state(corpus, config.k, config.seed, &init)
}

/// Regression, liability and hyperparameter updates that close each sweep.
fn end_of_sweep(state: &mut ModelState, config: &TrainConfig, sweep: usize) -> Result<()> {
    if state.supervised {
        update_regression(state)?;
        update_liability(state)?;
    }
    if sweep > config.hyper_burn_in && sweep.is_multiple_of(config.hyper_update_every) {
        update_hyperparameters(state, config.hyper_fixed_point_iters);
    }
    Ok(())
}

fn relative_change(prev: f64, next: f64) -> f64 {
    ((next - prev) / next).abs()
}

/// Full-batch training.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutput> {
    if let BatchMode::Stochastic { .. } = config.batch {
        return train_stochastic(corpus, config);
    }
    let state = prepare(corpus, config)?;
    train_from(state, corpus, config)
}

/// Full-batch training continued from an existing state built for `corpus`.
pub fn train_from(mut state: ModelState, corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut trace = ElboTrace::default();
    trace.push(0, compute_elbo(&state)?);

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=config.max_sweeps {
        match &pool {
            Some(pool) => pool.install(|| sweep_parallel(&mut state))?,
            None => sweep_sequential(&mut state)?,
        }
        if sweep % config.drift_reset_every == 0 {
            state.stats = recompute_stats(&state, corpus)?;
        }
        end_of_sweep(&mut state, config, sweep)?;
        let terms = compute_elbo(&state)?;
        let prev = trace.last().expect("initial ELBO recorded");
        trace.push(sweep, terms);
        sweeps = sweep;
        let change = relative_change(prev, terms.total());
        log::debug!("sweep {sweep}: elbo {:.6} (rel change {change:.3e})", terms.total());
        if change < config.elbo_rel_tol {
            converged = true;
            break;
        }
    }
    let estimates = estimate_mixtures(&state);
    Ok(TrainOutput {
        state,
        estimates,
        trace,
        sweeps,
        converged,
    })
}

/// `(s + delay)^(-kappa)`.
pub fn step_size(s: usize, delay: f64, kappa: f64) -> f64 {
    (s as f64 + delay).powf(-kappa)
}

/// One SCVB0 step over `batch`: token updates against the current global
/// counts, then a blend of the scaled minibatch counts into the global ones
/// with weight `rho`. Rows of `n` for the batch are replaced.
pub fn stochastic_step(state: &mut ModelState, batch: &[usize], rho: f64) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    let k = state.k;
    let hyper = state.hyper.clone();
    let reg = state.reg.clone();
    let ctx = UpdateCtx::new(&hyper, &reg);
    let mut scratch = Scratch::new(k);
    let mut out = vec![0.0; k];
    let mut m_hat = Matrix::zeros(state.stats.m.rows(), k);
    let mut p_hat = Matrix::zeros(state.stats.p.rows(), k);
    let mut n_row = vec![0.0; k];

    for &j in batch {
        let sup = supervision(state, j);
        n_row.copy_from_slice(state.stats.n.row(j));
        for r in state.resp.patient_range(j) {
            token_update(
                &ctx,
                GlobalCounts {
                    m: &state.stats.m,
                    totals: &state.stats.topic_totals,
                    p: &state.stats.p,
                },
                &n_row,
                state.resp.gamma.row(r),
                state.layout.specialist[r],
                state.layout.pair[r],
                state.layout.code[r],
                sup,
                &mut scratch,
                &mut out,
            )?;
            let old = state.resp.gamma.row_mut(r);
            for kk in 0..k {
                n_row[kk] += out[kk] - old[kk];
                old[kk] = out[kk];
            }
        }
        // exact recount of the patient's row
        let row = state.stats.n.row_mut(j);
        row.iter_mut().for_each(|x| *x = 0.0);
        for r in state.resp.patient_range(j) {
            let g = state.resp.gamma.row(r);
            let t = state.layout.specialist[r];
            let pair = state.layout.pair[r];
            for kk in 0..k {
                state.stats.n[(j, kk)] += g[kk];
                m_hat[(t, kk)] += g[kk];
                p_hat[(pair, kk)] += g[kk];
            }
        }
    }

    let scale = state.num_patients() as f64 / batch.len() as f64;
    let blend = |global: &mut [f64], hat: &[f64]| {
        for (g, h) in global.iter_mut().zip(hat) {
            *g = (1.0 - rho) * *g + rho * scale * h;
        }
    };
    blend(state.stats.m.as_mut_slice(), m_hat.as_slice());
    blend(state.stats.p.as_mut_slice(), p_hat.as_slice());
    for kk in 0..k {
        state.stats.topic_totals[kk] = (0..state.stats.m.rows()).map(|t| state.stats.m[(t, kk)]).sum();
    }
    Ok(())
}

/// Stochastic (SCVB0) training. Each sweep-equivalent shuffles the patients
/// and walks them in minibatches of `batch_size`.
pub fn train_stochastic(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutput> {
    let BatchMode::Stochastic {
        batch_size,
        kappa,
        delay,
    } = config.batch
    else {
        return Err(Error::InvalidArgument(
            "stochastic training needs a stochastic batch configuration".into(),
        ));
    };
    let mut state = prepare(corpus, config)?;
    let d = state.num_patients();
    if batch_size > d {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} exceeds the {d} patients"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..d).collect();
    let mut trace = ElboTrace::default();
    trace.push(0, compute_elbo(&state)?);

    let mut step = 0usize;
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=config.max_sweeps {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            step += 1;
            stochastic_step(&mut state, batch, step_size(step, delay, kappa))?;
        }
        end_of_sweep(&mut state, config, sweep)?;
        let terms = compute_elbo(&state)?;
        let prev = trace.last().expect("initial ELBO recorded");
        trace.push(sweep, terms);
        sweeps = sweep;
        let change = relative_change(prev, terms.total());
        log::debug!("sweep-equivalent {sweep}: elbo {:.6} (rel change {change:.3e})", terms.total());
        if change < config.elbo_rel_tol {
            converged = true;
            break;
        }
    }
    let estimates = estimate_mixtures(&state);
    Ok(TrainOutput {
        state,
        estimates,
        trace,
        sweeps,
        converged,
    })
}

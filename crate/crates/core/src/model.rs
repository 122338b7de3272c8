//! Learnable state: token responsibilities, expected counts, the regression
//! posterior and the Dirichlet hyperparameters.
//!
//! Count orders are fixed as `n[j, k]` (patient x topic), `m[t, k]`
//! (specialist x topic) and `p[k, t, w]` (topic x specialist x code), with `p`
//! stored sparsely over the observed `(t, w)` pairs.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::probit;

/// Gamma prior constants `(c, d)` for the three Dirichlet hyperparameter families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConstants {
    pub c_alpha: f64,
    pub d_alpha: f64,
    pub c_iota: f64,
    pub d_iota: f64,
    pub c_zeta: f64,
    pub d_zeta: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        PriorConstants {
            c_alpha: 1.0,
            c_iota: 0.001,
            c_zeta: 2.0,
            d_alpha: 10.0,
            d_iota: 0.01,
            d_zeta: 100.0,
        }
    }
}

impl PriorConstants {
    fn validate(&self) -> Result<()> {
        let all = [
            self.c_alpha,
            self.d_alpha,
            self.c_iota,
            self.d_iota,
            self.c_zeta,
            self.d_zeta,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "Gamma prior constants must be positive".into(),
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Topic concentrations, length K.
    pub alpha: Vec<f64>,
    /// Specialist concentrations, length T.
    pub iota: Vec<f64>,
    /// Code concentrations, K x V, shared across specialists.
    pub zeta: Matrix,
    /// Prior precision of the regression weights.
    pub tau: f64,
    pub prior: PriorConstants,
}

impl Hyperparameters {
    pub fn symmetric(
        k: usize,
        t: usize,
        v: usize,
        alpha: f64,
        iota: f64,
        zeta: f64,
        tau: f64,
        prior: PriorConstants,
    ) -> Self {
        Hyperparameters {
            alpha: vec![alpha; k],
            iota: vec![iota; t],
            zeta: Matrix::filled(k, v, zeta),
            tau,
            prior,
        }
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn iota_sum(&self) -> f64 {
        self.iota.iter().sum()
    }

    /// `sum_w zeta[k, w]` for every topic.
    pub fn zeta_row_sums(&self) -> Vec<f64> {
        (0..self.zeta.rows())
            .map(|k| self.zeta.row(k).iter().sum())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.alpha.iter().all(positive)
            || !self.iota.iter().all(positive)
            || !self.zeta.as_slice().iter().all(positive)
            || !positive(&self.tau)
        {
            return Err(Error::InvalidArgument(
                "hyperparameters must be strictly positive".into(),
            ));
        }
        self.prior.validate()
    }
}

/// Dense index over the distinct `(specialist, code)` pairs seen in a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairIndex {
    keys: Vec<(usize, usize)>,
    lookup: HashMap<(usize, usize), usize>,
}

impl PairIndex {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut index = PairIndex::default();
        for p in &corpus.patients {
            for tok in &p.tokens {
                index.insert(tok.specialist, tok.code);
            }
        }
        index
    }

    pub(crate) fn insert(&mut self, specialist: usize, code: usize) -> usize {
        let next = self.keys.len();
        *self.lookup.entry((specialist, code)).or_insert_with(|| {
            self.keys.push((specialist, code));
            next
        })
    }

    pub fn get(&self, specialist: usize, code: usize) -> Option<usize> {
        self.lookup.get(&(specialist, code)).copied()
    }

    /// `(specialist, code)` of each pair id.
    pub fn keys(&self) -> &[(usize, usize)] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Expected topic counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    /// D x K.
    pub n: Matrix,
    /// T x K.
    pub m: Matrix,
    /// `sum_t m[t, k]`, length K.
    pub topic_totals: Vec<f64>,
    /// One K-row per observed `(t, w)` pair; `p[k, t, w] = p.row(pair)[k]`.
    pub p: Matrix,
    pub pairs: Arc<PairIndex>,
    pub total_tokens: usize,
}

impl SufficientStats {
    pub fn zeros(d: usize, t: usize, k: usize, pairs: Arc<PairIndex>, total_tokens: usize) -> Self {
        SufficientStats {
            n: Matrix::zeros(d, k),
            m: Matrix::zeros(t, k),
            topic_totals: vec![0.0; k],
            p: Matrix::zeros(pairs.len(), k),
            pairs,
            total_tokens,
        }
    }

    /// `p[k, t, w]`, zero for unobserved pairs.
    pub fn p_at(&self, k: usize, t: usize, w: usize) -> f64 {
        self.pairs.get(t, w).map_or(0.0, |id| self.p[(id, k)])
    }

    /// Largest absolute difference across n, m, topic totals and p.
    pub fn max_abs_diff(&self, other: &SufficientStats) -> f64 {
        let totals = self
            .topic_totals
            .iter()
            .zip(&other.topic_totals)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.n
            .max_abs_diff(&other.n)
            .max(self.m.max_abs_diff(&other.m))
            .max(self.p.max_abs_diff(&other.p))
            .max(totals)
    }
}

/// Per-token topic responsibilities, stored flat (one K-row per token) with
/// patient offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    pub gamma: Matrix,
    pub offsets: Vec<usize>,
}

impl Responsibilities {
    pub fn token(&self, j: usize, i: usize) -> &[f64] {
        self.gamma.row(self.offsets[j] + i)
    }

    pub fn patient_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn num_patients(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Variational posterior of the regression weights and the liabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionState {
    /// Posterior mean of w, length K.
    pub mean: Vec<f64>,
    /// Posterior covariance of w, K x K.
    pub covariance: Matrix,
    /// `lambda_j = mean' gamma_bar_j`; zero for patients outside the regression.
    pub liability: Vec<f64>,
    /// Truncated-normal mean `E[g_j]`; zero for patients outside the regression.
    pub expected_g: Vec<f64>,
}

/// Token attributes flattened in the same order as the responsibilities.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayout {
    pub code: Vec<usize>,
    pub specialist: Vec<usize>,
    pub pair: Vec<usize>,
    pub labels: Vec<Option<bool>>,
    pub num_codes: usize,
    pub num_specialists: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub k: usize,
    pub hyper: Hyperparameters,
    pub resp: Responsibilities,
    pub stats: SufficientStats,
    pub reg: RegressionState,
    pub supervised: bool,
    pub layout: TokenLayout,
}

/// Starting values for [`init_state`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub alpha: f64,
    pub iota: f64,
    pub zeta: f64,
    pub tau: f64,
    pub prior: PriorConstants,
    pub supervised: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            alpha: 0.1,
            iota: 0.1,
            zeta: 0.01,
            tau: 1.0,
            prior: PriorConstants::default(),
            supervised: true,
        }
    }
}

impl ModelState {
    pub fn num_patients(&self) -> usize {
        self.resp.num_patients()
    }

    pub fn num_tokens(&self) -> usize {
        self.stats.total_tokens
    }

    pub fn patient_len(&self, j: usize) -> usize {
        self.resp.offsets[j + 1] - self.resp.offsets[j]
    }

    /// Whether patient `j` enters the regression: supervision on, labeled, and
    /// at least one token.
    pub fn in_regression(&self, j: usize) -> bool {
        self.supervised && self.layout.labels[j].is_some() && self.patient_len(j) > 0
    }

    /// `n[j, :] / M_j`.
    pub fn gamma_bar(&self, j: usize) -> Vec<f64> {
        let mj = self.patient_len(j) as f64;
        self.stats.n.row(j).iter().map(|v| v / mj).collect()
    }

    /// Relabels topics so that new topic `perm[k]` is old topic `k`.
    pub fn permute_topics(&self, perm: &[usize]) -> ModelState {
        let k = self.k;
        assert_eq!(perm.len(), k);
        let permute_cols = |src: &Matrix| {
            let mut out = Matrix::zeros(src.rows(), k);
            for r in 0..src.rows() {
                for (old, &new) in perm.iter().enumerate() {
                    out[(r, new)] = src[(r, old)];
                }
            }
            out
        };
        let permute_rows = |src: &Matrix| {
            let mut out = Matrix::zeros(k, src.cols());
            for (old, &new) in perm.iter().enumerate() {
                out.row_mut(new).copy_from_slice(src.row(old));
            }
            out
        };
        let mut alpha = vec![0.0; k];
        let mut mean = vec![0.0; k];
        let mut totals = vec![0.0; k];
        for (old, &new) in perm.iter().enumerate() {
            alpha[new] = self.hyper.alpha[old];
            mean[new] = self.reg.mean[old];
            totals[new] = self.stats.topic_totals[old];
        }
        let mut cov = Matrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                cov[(perm[a], perm[b])] = self.reg.covariance[(a, b)];
            }
        }
        ModelState {
            k,
            hyper: Hyperparameters {
                alpha,
                iota: self.hyper.iota.clone(),
                zeta: permute_rows(&self.hyper.zeta),
                tau: self.hyper.tau,
                prior: self.hyper.prior,
            },
            resp: Responsibilities {
                gamma: permute_cols(&self.resp.gamma),
                offsets: self.resp.offsets.clone(),
            },
            stats: SufficientStats {
                n: permute_cols(&self.stats.n),
                m: permute_cols(&self.stats.m),
                topic_totals: totals,
                p: permute_cols(&self.stats.p),
                pairs: Arc::clone(&self.stats.pairs),
                total_tokens: self.stats.total_tokens,
            },
            reg: RegressionState {
                mean,
                covariance: cov,
                liability: self.reg.liability.clone(),
                expected_g: self.reg.expected_g.clone(),
            },
            supervised: self.supervised,
            layout: self.layout.clone(),
        }
    }
}

/// Builds the initial state: Dirichlet(1) responsibilities, aggregated counts,
/// prior regression posterior.
pub fn init_state(corpus: &Corpus, k: usize, seed: u64, opts: &InitOptions) -> Result<ModelState> {
    if k < 1 {
        return Err(Error::InvalidArgument("number of topics must be >= 1".into()));
    }
    let v = corpus.num_codes();
    let t = corpus.num_specialists();
    let hyper = Hyperparameters::symmetric(k, t, v, opts.alpha, opts.iota, opts.zeta, opts.tau, opts.prior);
    hyper.validate()?;

    let pairs = Arc::new(PairIndex::from_corpus(corpus));
    let n_tokens = corpus.num_tokens();
    let mut offsets = Vec::with_capacity(corpus.len() + 1);
    offsets.push(0);
    let mut layout = TokenLayout {
        code: Vec::with_capacity(n_tokens),
        specialist: Vec::with_capacity(n_tokens),
        pair: Vec::with_capacity(n_tokens),
        labels: Vec::with_capacity(corpus.len()),
        num_codes: v,
        num_specialists: t,
    };
    for p in &corpus.patients {
        for tok in &p.tokens {
            if tok.code >= v || tok.specialist >= t {
                return Err(Error::ShapeMismatch(format!(
                    "token ({}, {}) outside vocabulary of patient `{}`",
                    tok.code, tok.specialist, p.id
                )));
            }
            layout.code.push(tok.code);
            layout.specialist.push(tok.specialist);
            layout.pair.push(pairs.get(tok.specialist, tok.code).expect("pair indexed"));
        }
        layout.labels.push(p.label);
        offsets.push(offsets.last().unwrap() + p.tokens.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gamma = Matrix::zeros(n_tokens, k);
    for r in 0..n_tokens {
        let row = gamma.row_mut(r);
        for g in row.iter_mut() {
            *g = Exp1.sample(&mut rng);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|g| *g /= s);
    }

    let d = corpus.len();
    let mut expected_g = vec![0.0; d];
    for (j, p) in corpus.patients.iter().enumerate() {
        if opts.supervised && !p.tokens.is_empty() {
            if let Some(y) = p.label {
                expected_g[j] = probit::truncated_normal_mean(0.0, y)?;
            }
        }
    }
    let reg = RegressionState {
        mean: vec![0.0; k],
        covariance: {
            let mut c = Matrix::identity(k);
            c.as_mut_slice().iter_mut().for_each(|x| *x /= opts.tau);
            c
        },
        liability: vec![0.0; d],
        expected_g,
    };

    let mut state = ModelState {
        k,
        hyper,
        resp: Responsibilities { gamma, offsets },
        stats: SufficientStats::zeros(d, t, k, Arc::clone(&pairs), n_tokens),
        reg,
        supervised: opts.supervised,
        layout,
    };
    state.stats = recompute_stats(&state, corpus)?;
    Ok(state)
}

/// Sums the responsibilities into fresh counts by walking the corpus.
pub fn recompute_stats(state: &ModelState, corpus: &Corpus) -> Result<SufficientStats> {
    let k = state.k;
    let d = corpus.len();
    let t = corpus.num_specialists();
    if state.num_patients() != d
        || state.resp.gamma.cols() != k
        || state.layout.num_specialists != t
        || state.layout.num_codes != corpus.num_codes()
    {
        return Err(Error::ShapeMismatch(
            "model state and corpus dimensions differ".into(),
        ));
    }
    let pairs = Arc::clone(&state.stats.pairs);
    let mut stats = SufficientStats::zeros(d, t, k, Arc::clone(&pairs), corpus.num_tokens());
    for (j, p) in corpus.patients.iter().enumerate() {
        if p.tokens.len() != state.patient_len(j) {
            return Err(Error::ShapeMismatch(format!(
                "patient {j} has {} tokens in the corpus but {} in the state",
                p.tokens.len(),
                state.patient_len(j)
            )));
        }
        for (i, tok) in p.tokens.iter().enumerate() {
            let g = state.resp.token(j, i);
            let pair = pairs.get(tok.specialist, tok.code).ok_or_else(|| {
                Error::ShapeMismatch(format!("pair ({}, {}) not indexed", tok.specialist, tok.code))
            })?;
            for kk in 0..k {
                stats.n[(j, kk)] += g[kk];
                stats.m[(tok.specialist, kk)] += g[kk];
                stats.p[(pair, kk)] += g[kk];
                stats.topic_totals[kk] += g[kk];
            }
        }
    }
    Ok(stats)
}

/// Same totals as [`recompute_stats`], taken from the flattened token layout.
pub(crate) fn aggregate_stats(state: &ModelState) -> SufficientStats {
    let k = state.k;
    let mut stats = SufficientStats::zeros(
        state.num_patients(),
        state.layout.num_specialists,
        k,
        Arc::clone(&state.stats.pairs),
        state.num_tokens(),
    );
    for j in 0..state.num_patients() {
        for r in state.resp.patient_range(j) {
            let g = state.resp.gamma.row(r);
            let t = state.layout.specialist[r];
            let pair = state.layout.pair[r];
            for kk in 0..k {
                stats.n[(j, kk)] += g[kk];
                stats.m[(t, kk)] += g[kk];
                stats.p[(pair, kk)] += g[kk];
                stats.topic_totals[kk] += g[kk];
            }
        }
    }
    stats
}

/// Sparse store for the code distributions `eta_hat[k, t, :]`.
///
/// Observed `(t, w)` pairs keep explicit values; any other code falls back to
/// `zeta[k, w] / denominator[k, t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaEstimates {
    pub zeta: Matrix,
    /// `sum_w zeta[k, w] + sum_w p[k, t, w]`, K x T.
    pub denominators: Matrix,
    pub pairs: Arc<PairIndex>,
    /// One K-row per pair.
    pub values: Matrix,
}

impl EtaEstimates {
    pub fn get(&self, k: usize, t: usize, w: usize) -> f64 {
        match self.pairs.get(t, w) {
            Some(id) => self.values[(id, k)],
            None => self.zeta[(k, w)] / self.denominators[(k, t)],
        }
    }

    /// Dense row `eta_hat[k, t, :]`.
    pub fn row(&self, k: usize, t: usize) -> Vec<f64> {
        (0..self.zeta.cols()).map(|w| self.get(k, t, w)).collect()
    }
}

/// Point estimates of the mixing proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicEstimates {
    /// D x K.
    pub theta: Matrix,
    /// K x T.
    pub beta: Matrix,
    pub eta: EtaEstimates,
}

/// The persisted, self-contained trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub k: usize,
    pub codes: Vocabulary,
    pub specialists: Vocabulary,
    pub hyper: Hyperparameters,
    pub reg_mean: Vec<f64>,
    pub reg_covariance: Matrix,
    pub supervised: bool,
    pub patient_ids: Vec<String>,
    pub estimates: TopicEstimates,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RegressionDoc {
    mean: Vec<f64>,
    /// Row-major K*K.
    covariance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EtaDoc {
    denominators: Matrix,
    /// `(k, t, w, value)` for observed `(t, w)` pairs.
    entries: Vec<(usize, usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct EstimatesDoc {
    patient_ids: Vec<String>,
    theta: Matrix,
    beta: Matrix,
    eta: EtaDoc,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "T")]
    t: usize,
    supervised: bool,
    vocabularies: VocabDoc,
    hyperparameters: Hyperparameters,
    regression: RegressionDoc,
    topic_estimates: EstimatesDoc,
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    codes: Vocabulary,
    specialists: Vocabulary,
}

impl FittedModel {
    pub fn from_state(state: &ModelState, corpus: &Corpus, estimates: TopicEstimates) -> Self {
        FittedModel {
            k: state.k,
            codes: corpus.codes.clone(),
            specialists: corpus.specialists.clone(),
            hyper: state.hyper.clone(),
            reg_mean: state.reg.mean.clone(),
            reg_covariance: state.reg.covariance.clone(),
            supervised: state.supervised,
            patient_ids: corpus.patients.iter().map(|p| p.id.clone()).collect(),
            estimates,
        }
    }

    pub fn num_codes(&self) -> usize {
        self.codes.len()
    }

    pub fn num_specialists(&self) -> usize {
        self.specialists.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let eta = &self.estimates.eta;
        let mut entries = Vec::with_capacity(eta.pairs.len() * self.k);
        for (id, &(t, w)) in eta.pairs.keys().iter().enumerate() {
            for k in 0..self.k {
                entries.push((k, t, w, eta.values[(id, k)]));
            }
        }
        let doc = ModelDoc {
            format_version: MODEL_FORMAT_VERSION,
            k: self.k,
            v: self.num_codes(),
            t: self.num_specialists(),
            supervised: self.supervised,
            vocabularies: VocabDoc {
                codes: self.codes.clone(),
                specialists: self.specialists.clone(),
            },
            hyperparameters: self.hyper.clone(),
            regression: RegressionDoc {
                mean: self.reg_mean.clone(),
                covariance: self.reg_covariance.as_slice().to_vec(),
            },
            topic_estimates: EstimatesDoc {
                patient_ids: self.patient_ids.clone(),
                theta: self.estimates.theta.clone(),
                beta: self.estimates.beta.clone(),
                eta: EtaDoc {
                    denominators: eta.denominators.clone(),
                    entries,
                },
            },
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        let (k, v, t) = (doc.k, doc.v, doc.t);
        let bad = |what: &str| Error::ShapeMismatch(format!("model file: {what}"));
        if doc.vocabularies.codes.len() != v || doc.vocabularies.specialists.len() != t {
            return Err(bad("vocabulary sizes"));
        }
        let h = &doc.hyperparameters;
        if h.alpha.len() != k || h.iota.len() != t || h.zeta.rows() != k || h.zeta.cols() != v {
            return Err(bad("hyperparameter shapes"));
        }
        h.validate()?;
        if doc.regression.mean.len() != k {
            return Err(bad("regression mean length"));
        }
        let covariance = Matrix::from_vec(k, k, doc.regression.covariance)?;
        let est = doc.topic_estimates;
        if est.theta.rows() != est.patient_ids.len() || (est.theta.rows() > 0 && est.theta.cols() != k)
        {
            return Err(bad("theta shape"));
        }
        if est.beta.rows() != k || est.beta.cols() != t {
            return Err(bad("beta shape"));
        }
        if est.eta.denominators.rows() != k || est.eta.denominators.cols() != t {
            return Err(bad("eta denominators shape"));
        }
        let mut pairs = PairIndex::default();
        for &(kk, tt, ww, _) in &est.eta.entries {
            if kk >= k || tt >= t || ww >= v {
                return Err(bad("eta entry index"));
            }
            pairs.insert(tt, ww);
        }
        let mut values = Matrix::zeros(pairs.len(), k);
        for &(kk, tt, ww, value) in &est.eta.entries {
            values[(pairs.get(tt, ww).unwrap(), kk)] = value;
        }
        let theta = if est.theta.rows() == 0 {
            Matrix::zeros(0, k)
        } else {
            est.theta
        };
        let zeta = doc.hyperparameters.zeta.clone();
        Ok(FittedModel {
            k,
            codes: doc.vocabularies.codes,
            specialists: doc.vocabularies.specialists,
            hyper: doc.hyperparameters,
            reg_mean: doc.regression.mean,
            reg_covariance: covariance,
            supervised: doc.supervised,
            patient_ids: est.patient_ids,
            estimates: TopicEstimates {
                theta,
                beta: est.beta,
                eta: EtaEstimates {
                    zeta,
                    denominators: est.eta.denominators,
                    pairs: Arc::new(pairs),
                    values,
                },
            },
        })
    }
}

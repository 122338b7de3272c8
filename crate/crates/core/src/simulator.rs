//! Synthetic corpora drawn from the generative model, with their ground truth.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PatientRecord, Token, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    pub v: usize,
    pub t: usize,
    pub k: usize,
    /// Tokens per patient drawn uniformly from this inclusive range.
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub alpha: f64,
    pub iota: f64,
    pub zeta: f64,
    /// Prior precision of the regression weights.
    pub tau: f64,
    /// Replaces the sampled weights when set.
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            d: 2500,
            v: 750,
            t: 48,
            k: 25,
            tokens_min: 20,
            tokens_max: 60,
            alpha: 0.5,
            iota: 0.5,
            zeta: 0.05,
            tau: 0.25,
            weights: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.v < 1 || self.t < 1 || self.k < 1 {
            return Err(Error::InvalidArgument("simulation sizes must be >= 1".into()));
        }
        if self.tokens_min < 1 || self.tokens_max < self.tokens_min {
            return Err(Error::InvalidArgument(
                "tokens per patient must satisfy 1 <= min <= max".into(),
            ));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("iota", self.iota),
            ("zeta", self.zeta),
            ("tau", self.tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.k || w.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(
                    "fixed weights must be K finite values".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// D x K.
    pub theta: Matrix,
    /// K x T.
    pub beta: Matrix,
    /// One T x V matrix per topic.
    pub eta: Vec<Matrix>,
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    /// Topic of every token, per patient.
    pub z: Vec<Vec<usize>>,
}

impl GroundTruth {
    /// `sum_t beta[k, t] eta[k, t, w]`: the marginal code distribution of a topic.
    pub fn code_marginal(&self, k: usize) -> Vec<f64> {
        let eta = &self.eta[k];
        let mut out = vec![0.0; eta.cols()];
        for t in 0..eta.rows() {
            let b = self.beta[(k, t)];
            for (o, e) in out.iter_mut().zip(eta.row(t)) {
                *o += b * e;
            }
        }
        out
    }
}

fn dirichlet<R: Rng>(rng: &mut R, conc: f64, dim: usize) -> Vec<f64> {
    let gamma = Gamma::new(conc, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 && s.is_finite() {
            return draws.into_iter().map(|x| x / s).collect();
        }
    }
}

fn categorical(p: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(p).expect("nonnegative weights with positive mass")
}

/// Draws a labeled corpus and its generating parameters.
pub fn simulate(config: &SimConfig) -> Result<(Corpus, GroundTruth)> {
    config.validate()?;
    let SimConfig { d, v, t, k, .. } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut beta = Matrix::zeros(k, t);
    for kk in 0..k {
        beta.row_mut(kk).copy_from_slice(&dirichlet(&mut rng, config.iota, t));
    }
    let mut eta = Vec::with_capacity(k);
    for _ in 0..k {
        let mut m = Matrix::zeros(t, v);
        for tt in 0..t {
            m.row_mut(tt).copy_from_slice(&dirichlet(&mut rng, config.zeta, v));
        }
        eta.push(m);
    }
    let w = match &config.weights {
        Some(w) => w.clone(),
        None => {
            let normal = Normal::new(0.0, config.tau.sqrt().recip()).expect("finite sd");
            (0..k).map(|_| normal.sample(&mut rng)).collect()
        }
    };

    let beta_dists: Vec<_> = (0..k).map(|kk| categorical(beta.row(kk))).collect();
    let eta_dists: Vec<Vec<_>> = eta
        .iter()
        .map(|m| (0..t).map(|tt| categorical(m.row(tt))).collect())
        .collect();

    let codes = Vocabulary::from_names((1..=v).map(|i| format!("C{i:04}")))?;
    let specialists = Vocabulary::from_names((1..=t).map(|i| format!("S{i:02}")))?;
    let width = d.to_string().len();

    let mut theta = Matrix::zeros(d, k);
    let mut g = Vec::with_capacity(d);
    let mut z_all = Vec::with_capacity(d);
    let mut patients = Vec::with_capacity(d);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    for j in 0..d {
        let th = dirichlet(&mut rng, config.alpha, k);
        theta.row_mut(j).copy_from_slice(&th);
        let topic_dist = categorical(&th);
        let m_j = rng.random_range(config.tokens_min..=config.tokens_max);
        let mut tokens = Vec::with_capacity(m_j);
        let mut zs = Vec::with_capacity(m_j);
        let mut zbar = vec![0.0; k];
        for _ in 0..m_j {
            let z = topic_dist.sample(&mut rng);
            let b = beta_dists[z].sample(&mut rng);
            let x = eta_dists[z][b].sample(&mut rng);
            tokens.push(Token::new(x, b));
            zs.push(z);
            zbar[z] += 1.0 / m_j as f64;
        }
        let gj = dot(&w, &zbar) + noise.sample(&mut rng);
        patients.push(PatientRecord::new(
            format!("P{:0width$}", j + 1),
            tokens,
            Some(gj > 0.0),
        ));
        g.push(gj);
        z_all.push(zs);
    }

    Ok((
        Corpus::new(patients, codes, specialists),
        GroundTruth {
            theta,
            beta,
            eta,
            w,
            g,
            z: z_all,
        },
    ))
}

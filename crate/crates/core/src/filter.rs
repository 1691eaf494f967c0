//! One-step-ahead event probabilities under thinned observations, by a
//! bootstrap particle filter, plus exact enumeration for small networks.
//!
//! The latent state before the first observed step is the zero vector, the
//! same convention the simulator uses.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{broadcast_probabilities, sigmoid, EventMatrix, NetworkModel};
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Observation probability per node; a single value is broadcast.
    pub p: Vec<f64>,
    /// Resample when ESS falls below this fraction of `n_particles`.
    pub resample_threshold: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 1000,
            p: vec![1.0],
            resample_threshold: 0.5,
            seed: 0,
        }
    }
}

impl FilterConfig {
    fn observation_probs(&self, n: usize) -> Result<Vec<f64>> {
        if self.n_particles == 0 {
            return Err(Error::Config("n_particles must be at least 1".into()));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "resample_threshold must lie in (0, 1], got {}",
                self.resample_threshold
            )));
        }
        broadcast_probabilities(&self.p, n, "observation probability")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub node_ids: Vec<String>,
    /// `predictive[i][n] = P(X_{i,n} = 1 | Z_0..Z_{n-1})`.
    pub predictive: Vec<Vec<f64>>,
    /// Effective sample size after each update, before resampling.
    pub ess_trace: Vec<f64>,
    pub expected_event_total: f64,
    /// Steps at which every particle contradicted the observation.
    pub reinjections: Vec<usize>,
}

impl FilterOutput {
    pub fn n_steps(&self) -> usize {
        self.predictive.first().map_or(0, Vec::len)
    }
}

/// `sum(predictive) / scale`.
pub fn expected_events(out: &FilterOutput, scale: f64) -> f64 {
    out.predictive.iter().flatten().sum::<f64>() / scale
}

fn check_dims(model: &NetworkModel, z: &EventMatrix) -> Result<()> {
    if model.dim() != z.n_nodes() {
        return Err(Error::Dimension(format!(
            "model has {} nodes, observations have {}",
            model.dim(),
            z.n_nodes()
        )));
    }
    Ok(())
}

/// `P(Z_i = z | X_i = x)` under thinning with probability `p`.
fn obs_lik(x: u8, z: u8, p: f64) -> f64 {
    match (x, z) {
        (1, 1) => p,
        (1, _) => 1.0 - p,
        (_, 1) => 0.0,
        _ => 1.0,
    }
}

fn systematic_resample(rng: &mut Rng, weights: &[f64], out: &mut Vec<usize>) {
    let n = weights.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    out.clear();
    let mut cum = weights[0];
    let mut k = 0;
    for j in 0..n {
        let u = u0 + j as f64 / n as f64;
        while u > cum && k + 1 < n {
            k += 1;
            cum += weights[k];
        }
        out.push(k);
    }
}

/// Bootstrap particle filter with a Rao-Blackwellized predictive.
pub fn filter_predict(model: &NetworkModel, z: &EventMatrix, cfg: &FilterConfig) -> Result<FilterOutput> {
    check_dims(model, z)?;
    let m = model.dim();
    let p = cfg.observation_probs(m)?;
    let n_part = cfg.n_particles;
    let steps = z.n_steps();
    let mut rng = stream(cfg.seed, "filter");

    let mut states = vec![0u8; n_part * m];
    let mut next = vec![0u8; n_part * m];
    let mut weights = vec![1.0 / n_part as f64; n_part];
    let mut probs = vec![0.0; n_part * m];
    let mut eta = vec![0.0; m];
    let mut idx = Vec::with_capacity(n_part);
    let mut predictive = vec![vec![0.0; steps]; m];
    let mut ess_trace = Vec::with_capacity(steps);
    let mut reinjections = Vec::new();

    for n in 0..steps {
        for k in 0..n_part {
            model.linear_predictor(&states[k * m..(k + 1) * m], &mut eta);
            for i in 0..m {
                let s = sigmoid(eta[i]);
                probs[k * m + i] = s;
                predictive[i][n] += weights[k] * s;
            }
        }
        for i in 0..m {
            predictive[i][n] = predictive[i][n].clamp(0.0, 1.0);
        }
        for (x, &s) in next.iter_mut().zip(&probs) {
            *x = (rng.random::<f64>() < s) as u8;
        }
        let obs = z.column(n);
        let mut total = 0.0;
        for k in 0..n_part {
            let lik: f64 = (0..m).map(|i| obs_lik(next[k * m + i], obs[i], p[i])).product();
            weights[k] *= lik;
            total += weights[k];
        }
        if total <= 0.0 {
            // Force every impossible coordinate to agree with the observation.
            reinjections.push(n);
            log::debug!("step {n}: every particle contradicts the observation; re-injecting");
            total = 0.0;
            for k in 0..n_part {
                let row = &mut next[k * m..(k + 1) * m];
                for i in 0..m {
                    if obs_lik(row[i], obs[i], p[i]) == 0.0 {
                        row[i] = obs[i];
                    }
                }
                let lik: f64 = (0..m).map(|i| obs_lik(row[i], obs[i], p[i])).product();
                weights[k] = lik / n_part as f64;
                total += weights[k];
            }
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        ess_trace.push(ess);
        if ess < cfg.resample_threshold * n_part as f64 {
            systematic_resample(&mut rng, &weights, &mut idx);
            for (k, &src) in idx.iter().enumerate() {
                states[k * m..(k + 1) * m].copy_from_slice(&next[src * m..(src + 1) * m]);
            }
            weights.iter_mut().for_each(|w| *w = 1.0 / n_part as f64);
        } else {
            std::mem::swap(&mut states, &mut next);
        }
    }

    if !reinjections.is_empty() {
        log::info!("re-injected particles at {} of {} steps", reinjections.len(), steps);
    }
    let mut out = FilterOutput {
        node_ids: z.node_ids().to_vec(),
        predictive,
        ess_trace,
        expected_event_total: 0.0,
        reinjections,
    };
    out.expected_event_total = expected_events(&out, 1.0);
    Ok(out)
}

/// Largest network handled by [`exact_forward_filter`].
pub const MAX_EXACT_NODES: usize = 12;

/// Forward algorithm over all `2^M` latent states. Same estimand as
/// [`filter_predict`] with no Monte Carlo error.
pub fn exact_forward_filter(model: &NetworkModel, z: &EventMatrix, p: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dims(model, z)?;
    let m = model.dim();
    if m > MAX_EXACT_NODES {
        return Err(Error::Config(format!("exact filter supports at most {MAX_EXACT_NODES} nodes")));
    }
    let p = broadcast_probabilities(p, m, "observation probability")?;
    let n_states = 1usize << m;
    let state = |s: usize| -> Vec<u8> { (0..m).map(|i| ((s >> i) & 1) as u8).collect() };
    // trans[s][i] = P(X_i = 1 | previous state s)
    let mut eta = vec![0.0; m];
    let trans: Vec<Vec<f64>> = (0..n_states)
        .map(|s| {
            model.linear_predictor(&state(s), &mut eta);
            eta.iter().map(|&e| sigmoid(e)).collect()
        })
        .collect();

    let mut belief = vec![0.0; n_states];
    belief[0] = 1.0;
    let mut predictive = vec![vec![0.0; z.n_steps()]; m];
    for n in 0..z.n_steps() {
        let mut prior = vec![0.0; n_states];
        for (s, &b) in belief.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for i in 0..m {
                predictive[i][n] += b * trans[s][i];
            }
            for (x, pr) in prior.iter_mut().enumerate() {
                let mut v = b;
                for i in 0..m {
                    let q = trans[s][i];
                    v *= if (x >> i) & 1 == 1 { q } else { 1.0 - q };
                }
                *pr += v;
            }
        }
        let obs = z.column(n);
        let mut total = 0.0;
        for (x, pr) in prior.iter_mut().enumerate() {
            for i in 0..m {
                *pr *= obs_lik(((x >> i) & 1) as u8, obs[i], p[i]);
            }
            total += *pr;
        }
        if total <= 0.0 {
            return Err(Error::Config(format!("observation at step {n} has zero probability")));
        }
        belief = prior.into_iter().map(|v| v / total).collect();
    }
    Ok(predictive)
}

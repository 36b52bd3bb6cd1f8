//! Gaussian-mixture mode estimation and mode-specific normalization for one
//! numeric column.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const EM_MAX_ITERS: usize = 300;
const EM_TOL: f64 = 1e-9;
/// Number of standard deviations mapped onto the scalar range [-1, 1].
pub const SCALE_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VgmParams {
    pub max_components: usize,
    pub weight_threshold: f64,
}

impl Default for VgmParams {
    fn default() -> Self {
        VgmParams {
            max_components: 10,
            weight_threshold: 0.005,
        }
    }
}

/// Fitted mixture for one numeric column. Means and standard deviations are
/// in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgmEncoder {
    pub column: String,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weight_threshold: f64,
}

/// Finite one-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Mixture {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Log posterior responsibilities `log p(k | x)`.
    pub fn log_responsibilities(&self, x: f64, out: &mut Vec<f64>) -> f64 {
        out.clear();
        for k in 0..self.k() {
            out.push(self.weights[k].ln() + log_normal(x, self.means[k], self.stds[k]));
        }
        let lse = log_sum_exp(out);
        for v in out.iter_mut() {
            *v -= lse;
        }
        lse
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.k());
        values
            .iter()
            .map(|&x| self.log_responsibilities(x, &mut buf))
            .sum()
    }

    /// Bayesian information criterion (lower is better): 3k - 1 free parameters.
    pub fn bic(&self, values: &[f64]) -> f64 {
        let p = (3 * self.k() - 1) as f64;
        -2.0 * self.log_likelihood(values) + p * (values.len() as f64).ln()
    }
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// k-means++ seeding of `k` centers.
fn kmeans_pp<R: Rng>(values: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![*values.choose(rng).expect("non-empty values")];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            *values.choose(rng).unwrap()
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = values[values.len() - 1];
            for (v, &w) in values.iter().zip(&d2) {
                if target < w {
                    pick = *v;
                    break;
                }
                target -= w;
            }
            pick
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers
}

/// Expectation–maximization for a `k`-component mixture with k-means++
/// initialization. Returns the mixture and the log-likelihood after every
/// iteration.
pub fn fit_em(values: &[f64], k: usize, seed: u64) -> (Mixture, Vec<f64>) {
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_var = variance(values).max(1e-300);
    let var_floor = total_var * 1e-6;
    let centers = kmeans_pp(values, k, &mut rng);

    // Hard assignment to the nearest center seeds weights and spreads.
    let mut counts = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for &x in values {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (x - c).powi(2)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        counts[best] += 1.0;
        sq[best] += d;
    }
    let mut mix = Mixture {
        weights: counts.iter().map(|c| (c + 1.0) / (n as f64 + k as f64)).collect(),
        means: centers,
        stds: (0..k)
            .map(|i| {
                let v = if counts[i] > 1.0 { sq[i] / counts[i] } else { total_var / k as f64 };
                v.max(var_floor).sqrt()
            })
            .collect(),
    };

    let mut trace = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut buf = Vec::with_capacity(k);
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERS {
        // E step
        for (i, &x) in values.iter().enumerate() {
            mix.log_responsibilities(x, &mut buf);
            for j in 0..k {
                resp[i * k + j] = buf[j].exp();
            }
        }
        // M step
        for j in 0..k {
            let mut nk = 0.0;
            let mut sx = 0.0;
            for (i, &x) in values.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                sx += r * x;
            }
            if nk < 1e-12 {
                // Dead component: keep it inert with negligible weight.
                mix.weights[j] = 1e-300;
                continue;
            }
            let mean = sx / nk;
            let mut sv = 0.0;
            for (i, &x) in values.iter().enumerate() {
                sv += resp[i * k + j] * (x - mean).powi(2);
            }
            mix.weights[j] = nk / n as f64;
            mix.means[j] = mean;
            mix.stds[j] = (sv / nk).max(var_floor).sqrt();
        }
        let ll = mix.log_likelihood(values);
        trace.push(ll);
        if (ll - prev).abs() <= EM_TOL * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    (mix, trace)
}

impl VgmEncoder {
    /// Estimates the modes of a numeric column.
    ///
    /// Mixtures with 1..=max_components components are fitted by EM and the
    /// one with the lowest BIC is kept (the scan stops once BIC has failed to
    /// improve twice in a row). Components below `weight_threshold` are then
    /// pruned and the weights renormalized.
    pub fn fit(column: &str, values: &[f64], params: VgmParams, seed: u64) -> Result<Self> {
        if params.max_components == 0 {
            return Err(Error::InvalidArgument("max_components must be at least 1".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot fit modes of empty column \"{column}\""
            )));
        }
        let first = values[0];
        if values.iter().all(|&v| v == first) {
            return Ok(VgmEncoder {
                column: column.to_string(),
                weights: vec![1.0],
                means: vec![first],
                stds: vec![(first.abs() * 1e-6).max(1e-6)],
                weight_threshold: params.weight_threshold,
            });
        }
        let mut distinct = values.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let max_k = params.max_components.min(distinct.len());

        let mut best: Option<(f64, Mixture)> = None;
        let mut misses = 0;
        for k in 1..=max_k {
            let (mix, _) = fit_em(values, k, seed.wrapping_add(k as u64));
            let bic = mix.bic(values);
            match &best {
                Some((b, _)) if bic >= *b => {
                    misses += 1;
                    if misses >= 2 {
                        break;
                    }
                }
                _ => {
                    best = Some((bic, mix));
                    misses = 0;
                }
            }
        }
        let (_, mix) = best.expect("at least one fit");
        Ok(Self::from_mixture(column, &mix, params.weight_threshold))
    }

    fn from_mixture(column: &str, mix: &Mixture, threshold: f64) -> Self {
        let mut keep: Vec<usize> = (0..mix.k()).filter(|&i| mix.weights[i] >= threshold).collect();
        if keep.is_empty() {
            let heaviest = (0..mix.k())
                .max_by(|&a, &b| mix.weights[a].total_cmp(&mix.weights[b]))
                .unwrap();
            keep.push(heaviest);
        }
        // Modes ordered by mean so encodings do not depend on EM labelling.
        keep.sort_by(|&a, &b| mix.means[a].total_cmp(&mix.means[b]));
        let total: f64 = keep.iter().map(|&i| mix.weights[i]).sum();
        VgmEncoder {
            column: column.to_string(),
            weights: keep.iter().map(|&i| mix.weights[i] / total).collect(),
            means: keep.iter().map(|&i| mix.means[i]).collect(),
            stds: keep.iter().map(|&i| mix.stds[i]).collect(),
            weight_threshold: threshold,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    fn mixture(&self) -> Mixture {
        Mixture {
            weights: self.weights.clone(),
            means: self.means.clone(),
            stds: self.stds.clone(),
        }
    }

    /// Posterior `p(k | x)` for every mode.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.k());
        self.mixture().log_responsibilities(x, &mut buf);
        buf.into_iter().map(f64::exp).collect()
    }

    /// Scalar position of `x` inside mode `k`, clamped to [-1, 1].
    pub fn scalar_for_mode(&self, x: f64, k: usize) -> f64 {
        ((x - self.means[k]) / (SCALE_SIGMAS * self.stds[k])).clamp(-1.0, 1.0)
    }

    /// Samples a mode from the posterior and returns `(scalar, mode index)`.
    pub fn encode<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> (f64, usize) {
        let post = self.responsibilities(x);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut mode = post.len() - 1;
        for (k, p) in post.iter().enumerate() {
            acc += p;
            if u < acc {
                mode = k;
                break;
            }
        }
        (self.scalar_for_mode(x, mode), mode)
    }

    pub fn decode_mode(&self, scalar: f64, k: usize) -> f64 {
        scalar * SCALE_SIGMAS * self.stds[k] + self.means[k]
    }

    /// Hard decoding uses the most probable mode (lowest index on ties);
    /// soft decoding averages the per-mode values by `mode_probs`.
    pub fn decode(&self, scalar: f64, mode_probs: &[f64], hard: bool) -> f64 {
        if hard {
            self.decode_mode(scalar, argmax(mode_probs))
        } else {
            mode_probs
                .iter()
                .enumerate()
                .map(|(k, &p)| p * self.decode_mode(scalar, k))
                .sum()
        }
    }
}

/// Index of the largest element, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

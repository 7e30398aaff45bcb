//! Ideal two-mode SPDC source: twin-beam pair states and pair-number
//! statistics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::FockState;

/// Largest tolerated truncation loss when sampling emissions.
pub const MAX_TRUNCATION_LOSS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdcParams {
    /// Interaction parameter `κt/ħ`.
    pub tau: f64,
    /// Highest pair number kept.
    pub n_max: u32,
}

impl SpdcParams {
    pub fn new(tau: f64, n_max: u32) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be finite and non-negative, got {tau}")));
        }
        Ok(SpdcParams { tau, n_max })
    }

    /// Probability mass beyond `n_max`.
    pub fn truncation_loss(&self) -> f64 {
        let kept: f64 = pair_distribution(self).iter().map(|&(_, p)| p).sum();
        (1.0 - kept).max(0.0)
    }

    /// Smallest truncation whose loss is below [`MAX_TRUNCATION_LOSS`],
    /// searching up to `limit`.
    pub fn adequate_cutoff(tau: f64, limit: u32) -> Result<u32> {
        let x = tau.tanh().powi(2);
        let head = (1.0 - x) * (1.0 - x);
        let mut kept = 0.0;
        for n in 0..=limit {
            kept += (n + 1) as f64 * x.powi(n as i32) * head;
            let loss = 1.0 - kept;
            if loss < MAX_TRUNCATION_LOSS {
                return Ok(n);
            }
        }
        Err(Error::TruncationTooCoarse { loss: 1.0 - kept })
    }
}

/// Twin-beam `n`-pair state `Σ_m (-1)^m |n-m, m; m, n-m> / √(n+1)`.
pub fn pair_state(n: u32) -> FockState {
    let k = 1.0 / ((n + 1) as f64).sqrt();
    FockState::from_real((0..=n).map(|m| ([n - m, m, m, n - m], if m % 2 == 0 { k } else { -k })))
}

/// Pair-number weight `p_n = (n+1) tanh^{2n}τ / cosh⁴τ`.
pub fn pair_probability(tau: f64, n: u32) -> f64 {
    let t2 = tau.tanh().powi(2);
    (n + 1) as f64 * t2.powi(n as i32) / tau.cosh().powi(4)
}

/// Raw (unrenormalized) weights for `n = 0..=n_max`.
pub fn pair_distribution(p: &SpdcParams) -> Vec<(u32, f64)> {
    (0..=p.n_max).map(|n| (n, pair_probability(p.tau, n))).collect()
}

/// Truncated source state `Σ_{n<=n_max} √p_n |ψ_n>` (not renormalized).
pub fn truncated_state(p: &SpdcParams) -> FockState {
    let mut s = FockState::zero();
    for (n, w) in pair_distribution(p) {
        s = s.add_scaled(num_complex::Complex64::new(w.sqrt(), 0.0), &pair_state(n));
    }
    s
}

/// Emission sampler renormalized over the kept pair numbers.
#[derive(Clone, Debug)]
pub struct EmissionSampler {
    dist: WeightedIndex<f64>,
}

impl EmissionSampler {
    pub fn new(p: &SpdcParams) -> Result<Self> {
        let loss = p.truncation_loss();
        if loss >= MAX_TRUNCATION_LOSS {
            return Err(Error::TruncationTooCoarse { loss });
        }
        let weights: Vec<f64> = pair_distribution(p).into_iter().map(|(_, w)| w).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(EmissionSampler { dist })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.dist.sample(rng) as u32
    }
}

/// Draws one pair number, deterministically for a given seed.
pub fn sample_emission(p: &SpdcParams, seed: u64) -> Result<u32> {
    let sampler = EmissionSampler::new(p)?;
    Ok(sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

//! Unitary circuit elements acting on the signal register.

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{binomial, factorial};

use crate::error::{Error, Result};
use crate::fock::{FockState, Mode, Occupation};
use crate::homodyne::HybridState;

/// Sign convention of the 50:50 beam splitter mode transform.
///
/// `Forward` maps `a† -> (a† + b†)/√2`, `b† -> (b† - a†)/√2`, which is
/// `exp(-π/4 (a†b - ab†))`. `Inverse` is its adjoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamSplitterConvention {
    #[default]
    Forward,
    Inverse,
}

impl BeamSplitterConvention {
    fn sign(self) -> f64 {
        match self {
            BeamSplitterConvention::Forward => 1.0,
            BeamSplitterConvention::Inverse => -1.0,
        }
    }
}

/// 50:50 beam splitter with the default convention.
pub fn beam_splitter(s: &FockState) -> Result<FockState> {
    beam_splitter_with(s, BeamSplitterConvention::Forward)
}

pub fn beam_splitter_with(s: &FockState, convention: BeamSplitterConvention) -> Result<FockState> {
    s.require_normalized()?;
    Ok(apply_beam_splitter(s, convention))
}

/// Linear action of the beam splitter without the normalization check.
pub(crate) fn apply_beam_splitter(s: &FockState, convention: BeamSplitterConvention) -> FockState {
    let sigma = convention.sign();
    let mut cache: HashMap<(u32, u32), Vec<(u32, u32, f64)>> = HashMap::new();
    let mut image = |pa: u32, pb: u32| {
        cache
            .entry((pa, pb))
            .or_insert_with(|| two_mode_image(pa, pb, sigma))
            .clone()
    };
    s.map_terms(|occ, amp| {
        let [ah, av, bh, bv] = occ.0;
        let h = image(ah, bh);
        let v = image(av, bv);
        let mut out = Vec::with_capacity(h.len() * v.len());
        for &(oah, obh, ch) in &h {
            for &(oav, obv, cv) in &v {
                out.push((Occupation::new(oah, oav, obh, obv), amp * (ch * cv)));
            }
        }
        out
    })
}

/// Image of `|m>_a |r>_b` under `a† -> (a† + σb†)/√2`, `b† -> (b† - σa†)/√2`.
fn two_mode_image(m: u32, r: u32, sigma: f64) -> Vec<(u32, u32, f64)> {
    let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
    let norm = (factorial(m as u64) * factorial(r as u64)).sqrt() * 2f64.powf((m + r) as f64 / 2.0);
    for k in 0..=m {
        for l in 0..=r {
            let p = k + r - l;
            let q = m - k + l;
            let sign = sigma.powi((m - k) as i32) * (-sigma).powi((r - l) as i32);
            let coeff = sign
                * binomial(m as u64, k as u64)
                * binomial(r as u64, l as u64)
                * (factorial(p as u64) * factorial(q as u64)).sqrt()
                / norm;
            *acc.entry((p, q)).or_default() += coeff;
        }
    }
    let mut out: Vec<_> = acc.into_iter().map(|((p, q), c)| (p, q, c)).collect();
    out.sort_by_key(|&(p, q, _)| (p, q));
    out
}

/// Multiplies each term by `exp(i n_m φ)`.
pub fn phase_shift(s: &FockState, m: Mode, phi: f64) -> FockState {
    s.map_terms(|occ, amp| Some((occ, amp * C64::from_polar(1.0, occ.get(m) as f64 * phi))))
}

/// Phase `φ` per photon on both polarizations of spatial mode `b`.
pub fn phase_shift_b(s: &FockState, phi: f64) -> FockState {
    s.map_terms(|occ, amp| Some((occ, amp * C64::from_polar(1.0, occ.spatial_b() as f64 * phi))))
}

/// Cross-Kerr phase rates (radians per photon) and the constant probe gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub rate_a: f64,
    pub rate_b: f64,
    pub probe_gate: f64,
}

impl PhaseConfig {
    /// Four-photon symmetry detector: `3θ/2` on `a`, `θ` on `b`, `-5θ` gate.
    pub fn fig1(theta: f64) -> Self {
        PhaseConfig {
            rate_a: 1.5 * theta,
            rate_b: theta,
            probe_gate: -5.0 * theta,
        }
    }

    /// Pair-number classifier: `2θ/3` on `a`, `θ/3` on `b`, `-θ` gate.
    pub fn npair(theta: f64) -> Self {
        PhaseConfig {
            rate_a: 2.0 * theta / 3.0,
            rate_b: theta / 3.0,
            probe_gate: -theta,
        }
    }

    pub fn preset(name: &str, theta: f64) -> Result<Self> {
        match name {
            "fig1" => Ok(Self::fig1(theta)),
            "npair" => Ok(Self::npair(theta)),
            other => Err(Error::InvalidConfig(format!("unknown phase preset {other:?}"))),
        }
    }

    /// Probe phase picked up from one signal basis term.
    pub fn phase_for(&self, occ: &Occupation) -> f64 {
        occ.spatial_a() as f64 * self.rate_a + occ.spatial_b() as f64 * self.rate_b + self.probe_gate
    }
}

/// Entangles the signal with the probe: each signal term moves to the branch
/// whose probe label is rotated by that term's accumulated Kerr phase.
pub fn cross_kerr(h: &HybridState, cfg: &PhaseConfig) -> HybridState {
    let parts = h.branches().iter().flat_map(|b| {
        b.signal.iter().map(move |(occ, amp)| {
            let label = b.label * C64::from_polar(1.0, cfg.phase_for(occ));
            (label, FockState::new([(*occ, *amp)]))
        })
    });
    HybridState::from_parts(h.alpha(), parts)
}

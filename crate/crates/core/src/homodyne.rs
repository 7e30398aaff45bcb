//! Coherent probe bookkeeping and X-quadrature homodyne measurement.
//!
//! A [`HybridState`] is a superposition `Σ_b |β_b> ⊗ |s_b>` of coherent probe
//! labels `β_b` and (unnormalized) signal states `s_b`. Measuring the probe
//! quadrature `x = a + a†` with outcome `x` leaves the signal in
//! `Σ_b <x|β_b> |s_b>`, where
//!
//! ```text
//! <x|β> = (2π)^(-1/4) exp[-(Im β)² - (x - 2β)²/4]
//! ```
//!
//! so each branch contributes a unit-variance Gaussian centred at `2 Re β`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2, TAU};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::fock::{FockState, NORM_TOL};
use crate::optics::phase_shift_b;

/// Relative tolerance for treating two probe labels as the same branch.
pub const LABEL_TOL: f64 = 1e-12;

/// Half-width (in standard deviations) of the support used for quadrature.
pub const SUPPORT_SIGMAS: f64 = 12.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBranch {
    pub label: C64,
    pub signal: FockState,
}

impl ProbeBranch {
    /// Centre of this branch's homodyne Gaussian.
    pub fn mean(&self) -> f64 {
        2.0 * self.label.re
    }

    pub fn weight(&self) -> f64 {
        self.signal.norm_sqr()
    }
}

/// Signal register entangled with a coherent probe.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridState {
    alpha: f64,
    branches: Vec<ProbeBranch>,
}

impl HybridState {
    /// `|α> ⊗ |signal>` with a real probe amplitude.
    pub fn coherent(alpha: f64, signal: FockState) -> Self {
        Self::from_parts(alpha, [(C64::new(alpha, 0.0), signal)])
    }

    /// Builds a hybrid from `(label, signal)` pairs. Labels closer than
    /// [`LABEL_TOL`] (relative) are merged, empty signals dropped, and the
    /// branches sorted by probe argument.
    pub fn from_parts<I>(alpha: f64, parts: I) -> Self
    where
        I: IntoIterator<Item = (C64, FockState)>,
    {
        let mut branches: Vec<ProbeBranch> = Vec::new();
        for (label, signal) in parts {
            match branches.iter_mut().find(|b| same_label(b.label, label)) {
                Some(b) => b.signal = b.signal.add_scaled(C64::new(1.0, 0.0), &signal),
                None => branches.push(ProbeBranch { label, signal }),
            }
        }
        branches.retain(|b| !b.signal.is_empty());
        branches.sort_by(|x, y| {
            x.label
                .arg()
                .total_cmp(&y.label.arg())
                .then(x.label.norm().total_cmp(&y.label.norm()))
        });
        HybridState { alpha, branches }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn branches(&self) -> &[ProbeBranch] {
        &self.branches
    }

    /// Signal inner products `<s_b|s_b'>`.
    pub fn gram(&self) -> Vec<Vec<C64>> {
        self.branches
            .iter()
            .map(|a| self.branches.iter().map(|b| a.signal.inner(&b.signal)).collect())
            .collect()
    }

    /// Squared norm of the joint signal-probe state.
    pub fn joint_norm_sqr(&self) -> f64 {
        let gram = self.gram();
        let mut acc = C64::default();
        for (i, a) in self.branches.iter().enumerate() {
            for (j, b) in self.branches.iter().enumerate() {
                acc += gram[i][j] * probe_overlap(a.label, b.label);
            }
        }
        acc.re
    }

    pub fn require_normalized(&self) -> Result<()> {
        let n = self.joint_norm_sqr().sqrt();
        if (n - 1.0).abs() <= NORM_TOL {
            Ok(())
        } else {
            Err(Error::NotNormalized { norm: n })
        }
    }

    /// Rescales all signals so the joint norm is one.
    pub fn normalize(&self) -> Result<HybridState> {
        let n = self.joint_norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroState);
        }
        let k = C64::new(1.0 / n, 0.0);
        Ok(HybridState {
            alpha: self.alpha,
            branches: self
                .branches
                .iter()
                .map(|b| ProbeBranch {
                    label: b.label,
                    signal: b.signal.scale(k),
                })
                .collect(),
        })
    }
}

fn same_label(a: C64, b: C64) -> bool {
    (a - b).norm() <= LABEL_TOL * a.norm().max(b.norm()).max(1.0)
}

/// Logarithm of `<x|β>`.
pub fn ln_kernel(x: f64, label: C64) -> C64 {
    let d = C64::new(x, 0.0) - 2.0 * label;
    C64::new(-0.25 * (2.0 * PI).ln() - label.im * label.im, 0.0) - d * d / 4.0
}

/// Quadrature wavefunction `<x|β>` of a coherent state.
pub fn homodyne_kernel(x: f64, label: C64) -> C64 {
    ln_kernel(x, label).exp()
}

/// `∫ conj(<x|β₁>) <x|β₂> dx` for the kernel above.
///
/// Equals the coherent-state overlap `<β₁|β₂>` up to the relative phase
/// `exp(i(Re β₁ Im β₁ - Re β₂ Im β₂))` carried by the kernel's convention.
pub fn probe_overlap(b1: C64, b2: C64) -> C64 {
    let e = -0.5 * b1.norm_sqr() - 0.5 * b2.norm_sqr()
        + b1.conj() * b2
        + C64::new(0.0, b1.re * b1.im - b2.re * b2.im);
    e.exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Gaussian probability mass of `N(mean, 1)` inside `(lower, upper]`.
fn gaussian_mass(mean: f64, lower: Option<f64>, upper: Option<f64>) -> f64 {
    // upper tail via erfc keeps precision far from the mean
    let above = |t: f64| 0.5 * erfc((t - mean) / SQRT_2);
    let hi = upper.map_or(0.0, above);
    let lo = lower.map_or(1.0, above);
    (lo - hi).max(0.0)
}

/// Outcome density with the Gram matrix precomputed.
#[derive(Clone, Debug)]
pub struct OutcomeDensity {
    labels: Vec<C64>,
    gram: Vec<Vec<C64>>,
}

impl OutcomeDensity {
    pub fn new(h: &HybridState) -> Self {
        OutcomeDensity {
            labels: h.branches.iter().map(|b| b.label).collect(),
            gram: h.gram(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let k: Vec<C64> = self.labels.iter().map(|&l| homodyne_kernel(x, l)).collect();
        quadratic_form(&self.gram, &k)
    }
}

fn quadratic_form(gram: &[Vec<C64>], k: &[C64]) -> f64 {
    let mut acc = C64::default();
    for (i, ki) in k.iter().enumerate() {
        for (j, kj) in k.iter().enumerate() {
            acc += ki.conj() * kj * gram[i][j];
        }
    }
    acc.re.max(0.0)
}

/// Probability density of the homodyne outcome `x`.
pub fn outcome_pdf(h: &HybridState, x: f64) -> f64 {
    OutcomeDensity::new(h).pdf(x)
}

/// Signal state conditioned on `x`, scaled so its largest kernel factor is
/// one. Returns the state and the log of that factor.
fn conditional_signal(h: &HybridState, x: f64) -> (FockState, f64) {
    let logs: Vec<C64> = h.branches.iter().map(|b| ln_kernel(x, b.label)).collect();
    let top = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = FockState::zero();
    for (b, l) in h.branches.iter().zip(&logs) {
        acc = acc.add_scaled((l - top).exp(), &b.signal);
    }
    (acc, top)
}

/// Decision windows over homodyne outcomes, one per declared pair count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub class: u32,
    /// Exclusive lower edge; `None` is `-∞`.
    pub lower: Option<f64>,
    /// Inclusive upper edge; `None` is `+∞`.
    pub upper: Option<f64>,
}

impl Window {
    pub fn contains(&self, x: f64) -> bool {
        self.lower.is_none_or(|l| x > l) && self.upper.is_none_or(|u| x <= u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowTable {
    pub windows: Vec<Window>,
}

impl WindowTable {
    pub fn classify(&self, x: f64) -> u32 {
        self.windows
            .iter()
            .find(|w| w.contains(x))
            .or(self.windows.last())
            .map_or(0, |w| w.class)
    }

    pub fn window(&self, class: u32) -> Option<&Window> {
        self.windows.iter().find(|w| w.class == class)
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.windows.iter().map(|w| w.class)
    }
}

/// Threshold between declared pair counts `m` and `m + 1`:
/// `α(cos((m-1)θ) + cos(mθ))`, midway between the two probe means.
pub fn window_boundary(alpha: f64, theta: f64, m: u32) -> f64 {
    alpha * (((m - 1) as f64 * theta).cos() + (m as f64 * theta).cos())
}

/// Windows for `m = 1..=n_max`; class `m` holds `boundary(m) < x <= boundary(m-1)`.
pub fn build_windows(alpha: f64, theta: f64, n_max: u32) -> Result<WindowTable> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidGeometry(format!("alpha must be positive, got {alpha}")));
    }
    if n_max == 0 {
        return Err(Error::InvalidGeometry("n_max must be at least 1".into()));
    }
    if n_max > 1 && !(theta > 0.0 && theta * (n_max as f64) < PI / 2.0) {
        return Err(Error::InvalidGeometry(format!(
            "need 0 < theta * n_max < pi/2, got theta = {theta}, n_max = {n_max}"
        )));
    }
    let windows = (1..=n_max)
        .map(|m| Window {
            class: m,
            lower: (m < n_max).then(|| window_boundary(alpha, theta, m)),
            upper: (m > 1).then(|| window_boundary(alpha, theta, m - 1)),
        })
        .collect();
    Ok(WindowTable { windows })
}

/// Feed-forward phase `φ_x = -α sin θ (x - 2α cos θ)/2 mod 2π`.
pub fn feed_forward_phase(alpha: f64, theta: f64, x: f64) -> f64 {
    (-alpha * theta.sin() * (x - 2.0 * alpha * theta.cos()) / 2.0).rem_euclid(TAU)
}

/// Outcome-dependent correction: when the declared class is `class`, apply
/// `-φ_x` per photon on spatial mode `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedForward {
    pub theta: f64,
    pub class: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomodyneOutcome {
    pub x: f64,
    pub declared_class: u32,
    pub post_state: FockState,
    pub correction_applied: bool,
}

/// Projects the probe onto `|x>` and renormalizes the signal.
pub fn project(
    h: &HybridState,
    x: f64,
    windows: &WindowTable,
    feed_forward: Option<FeedForward>,
) -> Result<HomodyneOutcome> {
    if !x.is_finite() {
        return Err(Error::ZeroDensity { x });
    }
    let (signal, _) = conditional_signal(h, x);
    if signal.norm_sqr() < 1e-28 {
        return Err(Error::ZeroDensity { x });
    }
    let mut post = signal.normalize()?;
    let declared_class = windows.classify(x);
    let mut correction_applied = false;
    if let Some(ff) = feed_forward {
        if ff.class == declared_class {
            post = phase_shift_b(&post, -feed_forward_phase(h.alpha, ff.theta, x));
            correction_applied = true;
        }
    }
    Ok(HomodyneOutcome {
        x,
        declared_class,
        post_state: post,
        correction_applied,
    })
}

/// Exact sampler for the homodyne outcome distribution.
///
/// Proposes from the branch-weighted Gaussian mixture and accepts with
/// probability `pdf / (M · mixture)`, where `M` bounds the normalized Gram
/// matrix's largest eigenvalue. Orthogonal branches give `M = 1` and every
/// proposal is accepted.
#[derive(Clone, Debug)]
pub struct OutcomeSampler {
    labels: Vec<C64>,
    means: Vec<f64>,
    cumulative: Vec<f64>,
    gram: Vec<Vec<C64>>,
    bound: f64,
    orthogonal: bool,
}

impl OutcomeSampler {
    pub fn new(h: &HybridState) -> Self {
        let gram = h.gram();
        let weights: Vec<f64> = (0..gram.len()).map(|i| gram[i][i].re).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        let mut bound: f64 = 1.0;
        let mut orthogonal = true;
        for i in 0..gram.len() {
            let mut row = 0.0;
            for j in 0..gram.len() {
                let g = gram[i][j].norm() / (weights[i] * weights[j]).sqrt();
                if i != j && g > 0.0 {
                    orthogonal = false;
                }
                row += g;
            }
            bound = bound.max(row);
        }
        OutcomeSampler {
            labels: h.branches.iter().map(|b| b.label).collect(),
            means: h.branches.iter().map(ProbeBranch::mean).collect(),
            cumulative,
            gram,
            bound,
            orthogonal,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.random();
            let b = self
                .cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.means.len() - 1);
            let z: f64 = rng.sample(StandardNormal);
            let x = self.means[b] + z;
            if self.orthogonal {
                return x;
            }
            let logs: Vec<C64> = self.labels.iter().map(|&l| ln_kernel(x, l)).collect();
            let top = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
            let k: Vec<C64> = logs.iter().map(|l| (l - top).exp()).collect();
            let target = quadratic_form(&self.gram, &k);
            let envelope: f64 = k
                .iter()
                .enumerate()
                .map(|(i, ki)| ki.norm_sqr() * self.gram[i][i].re)
                .sum::<f64>()
                * self.bound;
            if rng.random::<f64>() * envelope <= target {
                return x;
            }
        }
    }
}

/// Draws one homodyne outcome, deterministically for a given seed.
pub fn sample_outcome(h: &HybridState, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OutcomeSampler::new(h).sample(&mut rng)
}

/// Adaptive Simpson quadrature.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    // coarse panels so narrow peaks are not skipped
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = lo + h;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            step(&f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// Union of `mean ± SUPPORT_SIGMAS` intervals over all branches.
fn support(h: &HybridState) -> Vec<(f64, f64)> {
    let mut iv: Vec<(f64, f64)> = h
        .branches
        .iter()
        .map(|b| (b.mean() - SUPPORT_SIGMAS, b.mean() + SUPPORT_SIGMAS))
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in iv {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

/// `∫ pdf(x) dx` over `(lower, upper]`, by quadrature on the support.
pub fn integrate_pdf(h: &HybridState, lower: Option<f64>, upper: Option<f64>) -> f64 {
    let density = OutcomeDensity::new(h);
    support(h)
        .into_iter()
        .map(|(lo, hi)| {
            let a = lower.map_or(lo, |l| l.max(lo));
            let b = upper.map_or(hi, |u| u.min(hi));
            integrate(|x| density.pdf(x), a, b, 1e-12)
        })
        .sum()
}

/// Exact probability that the outcome lands in `window`: diagonal terms in
/// closed form, interference terms by quadrature.
pub fn window_probability(h: &HybridState, window: &Window) -> f64 {
    let gram = h.gram();
    let mut p: f64 = h
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| gram[i][i].re * gaussian_mass(b.mean(), window.lower, window.upper))
        .sum();
    let n = h.branches.len();
    let cross: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && gram[i][j].norm() > 0.0)
        .collect();
    if !cross.is_empty() {
        let labels: Vec<C64> = h.branches.iter().map(|b| b.label).collect();
        let f = |x: f64| {
            cross
                .iter()
                .map(|&(i, j)| {
                    (homodyne_kernel(x, labels[i]).conj() * homodyne_kernel(x, labels[j]) * gram[i][j]).re
                })
                .sum::<f64>()
        };
        p += support(h)
            .into_iter()
            .map(|(lo, hi)| {
                let a = window.lower.map_or(lo, |l| l.max(lo));
                let b = window.upper.map_or(hi, |u| u.min(hi));
                integrate(f, a, b, 1e-13)
            })
            .sum::<f64>();
    }
    p
}

/// Ideal split of a hybrid by the window each branch's mean falls in.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPart {
    pub class: u32,
    /// Joint-norm weight of the branches in this class.
    pub weight: f64,
    /// Normalized sum of those branches' signals.
    pub state: FockState,
}

/// Partitions the branches by window and returns each class's exact weight
/// and conditional signal state.
pub fn partition_by_window(h: &HybridState, windows: &WindowTable) -> Result<Vec<ClassPart>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, b) in h.branches.iter().enumerate() {
        groups.entry(windows.classify(b.mean())).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(class, idx)| {
            let mut weight = C64::default();
            let mut state = FockState::zero();
            for &i in &idx {
                let bi = &h.branches[i];
                state = state.add_scaled(C64::new(1.0, 0.0), &bi.signal);
                for &j in &idx {
                    let bj = &h.branches[j];
                    weight += bi.signal.inner(&bj.signal) * probe_overlap(bi.label, bj.label);
                }
            }
            Ok(ClassPart {
                class,
                weight: weight.re,
                state: state.normalize()?,
            })
        })
        .collect()
}

/// Mass of each branch's Gaussian that falls outside the window its mean
/// belongs to, summed with branch weights.
pub fn misclassification_mass(h: &HybridState, windows: &WindowTable) -> f64 {
    h.branches
        .iter()
        .map(|b| {
            let m = b.mean();
            let w = windows.window(windows.classify(m)).expect("classified window");
            b.weight() * (1.0 - gaussian_mass(m, w.lower, w.upper))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::fidelity;
    use crate::optics::{beam_splitter, cross_kerr, PhaseConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const ALPHA: f64 = 1e5;
    const THETA: f64 = 0.01;

    fn family(c: f64) -> FockState {
        FockState::from_real([([2, 0, 0, 2], 1.0), ([0, 2, 2, 0], 1.0), ([1, 1, 1, 1], -c)])
            .normalize()
            .unwrap()
    }

    fn fig1_hybrid(c: f64, alpha: f64, theta: f64) -> HybridState {
        let bs = beam_splitter(&family(c)).unwrap();
        cross_kerr(&HybridState::coherent(alpha, bs), &PhaseConfig::fig1(theta))
    }

    fn asym_target() -> FockState {
        FockState::from_real([([2, 2, 0, 0], 1.0), ([0, 0, 2, 2], 1.0)]).normalize().unwrap()
    }

    #[test]
    fn kernel_examples() {
        let a = 3.0;
        let k = homodyne_kernel(2.0 * a, C64::new(a, 0.0));
        assert_abs_diff_eq!(k.re, (2.0 * PI).powf(-0.25), epsilon = 1e-15);
        assert_abs_diff_eq!(k.im, 0.0);
        let k = homodyne_kernel(0.0, C64::new(1.0, 0.0));
        assert_abs_diff_eq!(k.re, (2.0 * PI).powf(-0.25) * (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_modulus_is_unit_gaussian() {
        let beta = C64::from_polar(7.0, 0.3);
        for x in [-3.0, 0.0, 5.0, 13.4, 20.0] {
            let want = (-(x - 2.0 * beta.re) * (x - 2.0 * beta.re) / 2.0).exp() / (2.0 * PI).sqrt();
            assert_abs_diff_eq!(homodyne_kernel(x, beta).norm_sqr(), want, epsilon = 1e-14);
        }
    }

    #[test]
    fn overlap_matches_kernel_quadrature() {
        let b1 = C64::from_polar(0.7, 0.4);
        let b2 = C64::from_polar(1.1, -0.9);
        let re = integrate(|x| (homodyne_kernel(x, b1).conj() * homodyne_kernel(x, b2)).re, -30.0, 30.0, 1e-13);
        let im = integrate(|x| (homodyne_kernel(x, b1).conj() * homodyne_kernel(x, b2)).im, -30.0, 30.0, 1e-13);
        let want = probe_overlap(b1, b2);
        assert!((C64::new(re, im) - want).norm() < 1e-10, "{re} {im} vs {want}");
    }

    #[test]
    fn single_branch_pdf_is_gaussian_at_two_alpha() {
        let h = HybridState::coherent(2.5, FockState::vacuum());
        let mean = integrate(|x| x * outcome_pdf(&h, x), -20.0, 30.0, 1e-12);
        let var = integrate(|x| (x - 5.0).powi(2) * outcome_pdf(&h, x), -20.0, 30.0, 1e-12);
        assert_abs_diff_eq!(mean, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn c1_hybrid_has_single_gaussian() {
        let h = fig1_hybrid(1.0, ALPHA, THETA);
        assert_eq!(h.branches().len(), 1);
        assert_abs_diff_eq!(h.branches()[0].mean(), 2.0 * ALPHA, epsilon = 1e-9);
    }

    #[test]
    fn c2_hybrid_mixture_weights() {
        let h = fig1_hybrid(2.0, ALPHA, THETA);
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let sym = window_probability(&h, w.window(1).unwrap());
        let asym = window_probability(&h, w.window(2).unwrap());
        let tail = erfc(ALPHA * (1.0 - THETA.cos()) / SQRT_2);
        assert!((sym - 11.0 / 12.0).abs() < tail);
        assert!((asym - 1.0 / 12.0).abs() < tail);
        assert_abs_diff_eq!(sym + asym, 1.0, epsilon = 1e-12);
        // density at the two centres
        let g0 = 1.0 / (2.0 * PI).sqrt();
        assert_abs_diff_eq!(outcome_pdf(&h, 2.0 * ALPHA) / g0, 11.0 / 12.0, epsilon = 1e-9);
        assert_abs_diff_eq!(outcome_pdf(&h, 2.0 * ALPHA * THETA.cos()) / g0, 1.0 / 12.0, epsilon = 1e-9);
    }

    #[test]
    fn windows_examples() {
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let b1 = ALPHA * (1.0 + THETA.cos());
        assert_eq!(w.windows.len(), 2);
        assert_eq!(w.windows[0], Window { class: 1, lower: Some(b1), upper: None });
        assert_eq!(w.windows[1], Window { class: 2, lower: None, upper: Some(b1) });
        assert_abs_diff_eq!(b1, 199995.0, epsilon = 1e-3);

        let one = build_windows(ALPHA, THETA, 1).unwrap();
        assert_eq!(one.windows, vec![Window { class: 1, lower: None, upper: None }]);
        assert_eq!(one.classify(-1e9), 1);

        let five = build_windows(ALPHA, THETA, 5).unwrap();
        for m in 1..=5u32 {
            let mean = 2.0 * ALPHA * ((m - 1) as f64 * THETA).cos();
            assert_eq!(five.classify(mean), m);
        }
        for pair in five.windows.windows(2) {
            assert!(pair[0].lower.unwrap() > pair[1].lower.unwrap_or(f64::NEG_INFINITY));
            assert_eq!(pair[0].lower, pair[1].upper);
        }

        assert!(matches!(build_windows(ALPHA, 0.5, 4), Err(Error::InvalidGeometry(_))));
        assert!(matches!(build_windows(-1.0, THETA, 2), Err(Error::InvalidGeometry(_))));
        assert!(matches!(build_windows(ALPHA, THETA, 0), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn window_json_uses_null_for_infinite_edges() {
        let w = build_windows(1.0, 0.1, 2).unwrap();
        let js = serde_json::to_value(&w).unwrap();
        assert!(js["windows"][0]["upper"].is_null());
        assert!(js["windows"][1]["lower"].is_null());
        let back: WindowTable = serde_json::from_value(js).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn strict_threshold_at_boundary() {
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let b1 = window_boundary(ALPHA, THETA, 1);
        assert_eq!(w.classify(b1), 2);
        assert_eq!(w.classify(b1 + 1e-6), 1);
    }

    #[test]
    fn project_c1_returns_input() {
        let h = fig1_hybrid(1.0, ALPHA, THETA);
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        for x in [2.0 * ALPHA - 1.5, 2.0 * ALPHA, 2.0 * ALPHA + 2.0] {
            let out = project(&h, x, &w, None).unwrap();
            assert_eq!(out.declared_class, 1);
            assert!((fidelity(&out.post_state, &family(1.0)).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn project_c2_symmetric_window() {
        let h = fig1_hybrid(2.0, ALPHA, THETA);
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let out = project(&h, 2.0 * ALPHA + 0.3, &w, None).unwrap();
        assert_eq!(out.declared_class, 1);
        assert!(fidelity(&out.post_state, &family(2.0 / 3.0)).unwrap() >= 1.0 - 1e-10);
    }

    #[test]
    fn project_c2_asymmetric_with_feed_forward() {
        let h = fig1_hybrid(2.0, ALPHA, THETA);
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let ff = Some(FeedForward { theta: THETA, class: 2 });
        let centre = 2.0 * ALPHA * THETA.cos();
        for dx in [-2.0, -0.7, 0.0, 0.4, 1.5] {
            let out = project(&h, centre + dx, &w, ff).unwrap();
            assert_eq!(out.declared_class, 2);
            assert!(out.correction_applied);
            let f = fidelity(&out.post_state, &asym_target()).unwrap();
            assert!(f >= 1.0 - 1e-9, "dx = {dx}: {f}");

            // without correction the relative phase is generally wrong
            let raw = project(&h, centre + dx, &w, None).unwrap();
            let expect = (ALPHA * THETA.sin() * dx).cos().powi(2);
            let f_raw = fidelity(&raw.post_state, &asym_target()).unwrap();
            assert!((f_raw - expect).abs() < 1e-6, "dx = {dx}: {f_raw} vs {expect}");
        }
    }

    #[test]
    fn project_far_tail_does_not_underflow() {
        let h = HybridState::coherent(1.0, FockState::basis([1, 0, 0, 1]));
        let w = build_windows(1.0, 0.1, 1).unwrap();
        let out = project(&h, 80.0, &w, None).unwrap();
        assert!((out.post_state.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(project(&h, f64::NAN, &w, None), Err(Error::ZeroDensity { .. })));
    }

    #[test]
    fn zero_density_under_destructive_interference() {
        // identical labels cannot coexist, so build cancelling signals in one branch
        let s = FockState::basis([1, 0, 0, 0]);
        let h = HybridState::from_parts(1.0, [(C64::new(1.0, 0.0), s.clone()), (C64::new(1.0, 0.0), s.scale(C64::new(-1.0, 0.0)))]);
        assert!(h.branches().is_empty());
        assert_eq!(outcome_pdf(&h, 2.0), 0.0);
        let w = build_windows(1.0, 0.1, 1).unwrap();
        assert!(matches!(project(&h, 2.0, &w, None), Err(Error::ZeroDensity { .. })));
    }

    #[test]
    fn sampling_single_branch_mean() {
        let h = HybridState::coherent(3.0, FockState::vacuum());
        let sampler = OutcomeSampler::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| sampler.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 6.0).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let h = fig1_hybrid(2.0, ALPHA, THETA);
        assert_eq!(sample_outcome(&h, 42), sample_outcome(&h, 42));
        assert_ne!(sample_outcome(&h, 42), sample_outcome(&h, 43));
    }

    #[test]
    fn sampling_symmetric_fraction_c2() {
        let h = fig1_hybrid(2.0, ALPHA, THETA);
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let sampler = OutcomeSampler::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let sym = (0..n).filter(|_| w.classify(sampler.sample(&mut rng)) == 1).count();
        let p = 11.0 / 12.0;
        let frac = sym as f64 / n as f64;
        assert!((frac - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn sampling_c1_always_symmetric() {
        let h = fig1_hybrid(1.0, ALPHA, THETA);
        let w = build_windows(ALPHA, THETA, 2).unwrap();
        let sampler = OutcomeSampler::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| w.classify(sampler.sample(&mut rng)) == 1));
    }

    #[test]
    fn rejection_sampler_matches_interfering_density() {
        // overlapping Gaussians with non-orthogonal signals
        let s1 = FockState::new([([1, 0, 0, 0], C64::new(1.0, 0.0)), ([0, 1, 0, 0], C64::new(0.3, 0.2))]);
        let s2 = FockState::new([([1, 0, 0, 0], C64::new(0.4, -0.5))]);
        let h = HybridState::from_parts(1.0, [(C64::from_polar(1.0, 0.0), s1), (C64::from_polar(1.0, 1.2), s2)])
            .normalize()
            .unwrap();
        assert_abs_diff_eq!(integrate_pdf(&h, None, None), 1.0, epsilon = 1e-9);
        let sampler = OutcomeSampler::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let cut = 1.2;
        let below = (0..n).filter(|_| sampler.sample(&mut rng) <= cut).count() as f64 / n as f64;
        let want = integrate_pdf(&h, None, Some(cut));
        assert!((below - want).abs() < 4.0 * (want * (1.0 - want) / n as f64).sqrt(), "{below} vs {want}");
    }

    #[test]
    fn feed_forward_phase_is_wrapped() {
        let phi = feed_forward_phase(ALPHA, THETA, 2.0 * ALPHA * THETA.cos() + 3.7);
        assert!((0.0..TAU).contains(&phi));
        assert_eq!(feed_forward_phase(ALPHA, THETA, 2.0 * ALPHA * THETA.cos()), 0.0);
    }

    fn random_hybrid() -> impl Strategy<Value = HybridState> {
        prop::collection::vec(
            (
                0.0f64..3.0,
                -3.0f64..3.0,
                prop::collection::vec((prop::array::uniform4(0u32..2), -1.0f64..1.0, -1.0f64..1.0), 1..4),
            ),
            1..=3,
        )
        .prop_filter_map("nonzero", |parts| {
            HybridState::from_parts(
                1.0,
                parts.into_iter().map(|(r, phi, terms)| {
                    (
                        C64::from_polar(r, phi),
                        FockState::new(terms.into_iter().map(|(o, re, im)| (o, C64::new(re, im)))),
                    )
                }),
            )
            .normalize()
            .ok()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pdf_integrates_to_one(h in random_hybrid()) {
            prop_assert!((integrate_pdf(&h, None, None) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn project_is_idempotent(h in random_hybrid(), dx in -2.0f64..2.0) {
            let w = build_windows(1.0, 0.1, 1).unwrap();
            let x = h.branches()[0].mean() + dx;
            let out = project(&h, x, &w, None).unwrap();
            let again = out.post_state.normalize().unwrap();
            prop_assert!((fidelity(&again, &out.post_state).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn window_probabilities_track_branch_weights(c in -0.9f64..6.0) {
            let h = fig1_hybrid(c, ALPHA, THETA);
            let w = build_windows(ALPHA, THETA, 2).unwrap();
            let parts = partition_by_window(&h, &w).unwrap();
            let d = 2.0 * ALPHA * (1.0 - THETA.cos());
            let bound = erfc(d / (2.0 * SQRT_2));
            for p in parts {
                let q = window_probability(&h, w.window(p.class).unwrap());
                prop_assert!((q - p.weight).abs() <= bound);
            }
        }
    }
}

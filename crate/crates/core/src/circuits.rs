//! The assembled circuits: the four-photon symmetry detector, the cascaded
//! coefficient purifier, and the pair-number classifier.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockState, Occupation};
use crate::homodyne::{
    build_windows, misclassification_mass, partition_by_window, project, FeedForward, HybridState, OutcomeSampler,
    WindowTable,
};
use crate::optics::{apply_beam_splitter, cross_kerr, BeamSplitterConvention, PhaseConfig};
use crate::spdc::pair_state;

/// Declared class of the symmetric (two photons per spatial mode) outcome.
pub const SYMMETRIC_CLASS: u32 = 1;
/// Declared class of the bunched (all four photons in one spatial mode) outcome.
pub const ASYMMETRIC_CLASS: u32 = 2;

const FAMILY_TOL: f64 = 1e-9;

/// `N(|2,0;0,2> + |0,2;2,0> - c|1,1;1,1>)` with real `c > -1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourPhotonFamily {
    c: f64,
}

impl FourPhotonFamily {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::BadInput(format!("coefficient must be finite, got {c}")));
        }
        if c <= -1.0 {
            return Err(Error::PoleError { stage: 1, c });
        }
        Ok(FourPhotonFamily { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn state(&self) -> FockState {
        let n = 1.0 / (2.0 + self.c * self.c).sqrt();
        FockState::from_real([([2, 0, 0, 2], n), ([0, 2, 2, 0], n), ([1, 1, 1, 1], -self.c * n)])
    }
}

/// `-a(1,1;1,1) / a(2,0;0,2)` without any membership checks.
fn coefficient_ratio(s: &FockState) -> Option<C64> {
    let a1 = s.amplitude([2, 0, 0, 2]);
    (a1.norm() > 0.0).then(|| -s.amplitude([1, 1, 1, 1]) / a1)
}

/// Recovers `c` from a state of the four-photon family.
pub fn extract_c(s: &FockState) -> Result<f64> {
    let norm = s.norm();
    let a1 = s.amplitude([2, 0, 0, 2]);
    let a2 = s.amplitude([0, 2, 2, 0]);
    if norm == 0.0 || a1.norm() <= FAMILY_TOL * norm {
        return Err(Error::NotInFamily("no |2,0;0,2> component".into()));
    }
    if (a1 - a2).norm() > FAMILY_TOL * norm {
        return Err(Error::NotInFamily("unequal |2,0;0,2> and |0,2;2,0> amplitudes".into()));
    }
    let span = [Occupation::new(2, 0, 0, 2), Occupation::new(0, 2, 2, 0), Occupation::new(1, 1, 1, 1)];
    let residual: f64 = s.iter().filter(|(o, _)| !span.contains(o)).map(|(_, a)| a.norm_sqr()).sum();
    if residual.sqrt() > FAMILY_TOL * norm {
        return Err(Error::NotInFamily(format!("weight {residual:e} outside the family span")));
    }
    let c = coefficient_ratio(s).expect("nonzero |2,0;0,2> amplitude");
    if c.im.abs() >= FAMILY_TOL {
        return Err(Error::NotInFamily(format!("complex coefficient {c}")));
    }
    Ok(c.re)
}

/// Symmetric-branch probability `1/{1 + (1-c)²/[2 + (1+c)²]}`.
pub fn symmetric_probability(c: f64) -> f64 {
    1.0 / (1.0 + (1.0 - c).powi(2) / (2.0 + (1.0 + c).powi(2)))
}

/// One step of the coefficient recurrence, `2/(1+c)`.
pub fn next_coefficient(c: f64) -> f64 {
    2.0 / (1.0 + c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum MeasurementMode {
    /// Propagate exact branch weights; no sampling.
    Analytic,
    /// Draw homodyne outcomes from a seeded generator.
    Sampled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectorBranch {
    Symmetric { c_out: Option<f64>, state: FockState },
    Asymmetric { state: FockState },
}

impl DetectorBranch {
    pub fn state(&self) -> &FockState {
        match self {
            DetectorBranch::Symmetric { state, .. } | DetectorBranch::Asymmetric { state } => state,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, DetectorBranch::Symmetric { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorResult {
    pub branch: DetectorBranch,
    /// Exact weight of this branch.
    pub probability: f64,
    /// Homodyne outcome, in sampled mode.
    pub x: Option<f64>,
}

/// Beam splitter followed by the `fig1` cross-Kerr interaction on `|α>`.
pub fn symmetry_detector_hybrid(input: &FockState, alpha: f64, theta: f64) -> HybridState {
    let bs = apply_beam_splitter(input, BeamSplitterConvention::Forward);
    cross_kerr(&HybridState::coherent(alpha, bs), &PhaseConfig::fig1(theta))
}

fn check_detector_input(input: &FockState) -> Result<()> {
    input.require_normalized()?;
    match input.iter().find(|(o, _)| o.total() != 4 || o.spatial_a() != 2) {
        Some((o, _)) => Err(Error::BadInput(format!(
            "term {o} does not have two photons in each spatial mode"
        ))),
        None => Ok(()),
    }
}

fn branch_for(class: u32, state: FockState) -> DetectorBranch {
    if class == SYMMETRIC_CLASS {
        DetectorBranch::Symmetric {
            c_out: extract_c(&state).ok(),
            state,
        }
    } else {
        DetectorBranch::Asymmetric { state }
    }
}

fn run_detector(
    input: &FockState,
    alpha: f64,
    theta: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<DetectorResult>> {
    let windows = build_windows(alpha, theta, 2)?;
    let h = symmetry_detector_hybrid(input, alpha, theta);
    let parts = partition_by_window(&h, &windows)?;
    match rng {
        None => Ok(parts
            .into_iter()
            .map(|p| DetectorResult {
                probability: p.weight,
                branch: branch_for(p.class, p.state),
                x: None,
            })
            .collect()),
        Some(rng) => {
            let x = OutcomeSampler::new(&h).sample(rng);
            let ff = FeedForward {
                theta,
                class: ASYMMETRIC_CLASS,
            };
            let out = project(&h, x, &windows, Some(ff))?;
            let probability = parts
                .iter()
                .find(|p| p.class == out.declared_class)
                .map_or(0.0, |p| p.weight);
            Ok(vec![DetectorResult {
                branch: branch_for(out.declared_class, out.post_state),
                probability,
                x: Some(x),
            }])
        }
    }
}

/// Runs one symmetry detector. Analytic mode returns every branch with its
/// exact probability; sampled mode returns the single observed branch.
pub fn symmetry_detector(
    input: &FockState,
    alpha: f64,
    theta: f64,
    mode: MeasurementMode,
) -> Result<Vec<DetectorResult>> {
    check_detector_input(input)?;
    match mode {
        MeasurementMode::Analytic => run_detector(input, alpha, theta, None),
        MeasurementMode::Sampled { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_detector(input, alpha, theta, Some(&mut rng))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub i: usize,
    pub c_i: f64,
    #[serde(rename = "P_i")]
    pub p_i: f64,
    #[serde(rename = "cumP")]
    pub cumulative_p: f64,
}

fn check_cascade_args(c0: f64, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("cascade needs at least one stage".into()));
    }
    FourPhotonFamily::new(c0).map(|_| ())
}

/// Coefficients and success probabilities of `k` cascaded detectors from the
/// recurrence alone.
pub fn cascade_closed_form(c0: f64, k: usize) -> Result<Vec<IterationRecord>> {
    check_cascade_args(c0, k)?;
    let mut c = c0;
    let mut cumulative = 1.0;
    let mut out = Vec::with_capacity(k);
    for i in 1..=k {
        if c == -1.0 {
            return Err(Error::PoleError { stage: i, c });
        }
        let p = symmetric_probability(c);
        c = next_coefficient(c);
        cumulative *= p;
        out.push(IterationRecord {
            i,
            c_i: c,
            p_i: p,
            cumulative_p: cumulative,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeRun {
    pub records: Vec<IterationRecord>,
    pub final_state: FockState,
}

/// Full Fock-space simulation of `k` cascaded detectors, continuing only on
/// symmetric outcomes.
pub fn cascade_simulated(c0: f64, k: usize, alpha: f64, theta: f64, mode: MeasurementMode) -> Result<CascadeRun> {
    check_cascade_args(c0, k)?;
    let mut state = FourPhotonFamily::new(c0)?.state();
    let mut rng = match mode {
        MeasurementMode::Analytic => None,
        MeasurementMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut cumulative = 1.0;
    let mut records = Vec::with_capacity(k);
    for i in 1..=k {
        let results = run_detector(&state, alpha, theta, rng.as_mut())?;
        let sym = results
            .into_iter()
            .find(|r| r.branch.is_symmetric())
            .ok_or(Error::CascadeAborted { stage: i })?;
        state = match sym.branch {
            DetectorBranch::Symmetric { state, .. } => state,
            DetectorBranch::Asymmetric { .. } => unreachable!(),
        };
        // sampled post-states may carry tail contamination outside the family
        let c = match mode {
            MeasurementMode::Analytic => extract_c(&state)?,
            MeasurementMode::Sampled { .. } => coefficient_ratio(&state)
                .ok_or_else(|| Error::NotInFamily("no |2,0;0,2> component".into()))?
                .re,
        };
        cumulative *= sym.probability;
        records.push(IterationRecord {
            i,
            c_i: c,
            p_i: sym.probability,
            cumulative_p: cumulative,
        });
    }
    Ok(CascadeRun {
        records,
        final_state: state,
    })
}

/// Declared pair count together with its exact probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassOutcome {
    /// Pair count; `0` is the vacuum class.
    pub class: u32,
    pub probability: f64,
    pub state: FockState,
    pub x: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub outcomes: Vec<ClassOutcome>,
    /// Gaussian-tail probability of declaring the wrong class.
    pub misclassification: f64,
}

impl Classification {
    pub fn probability(&self, class: u32) -> f64 {
        self.outcomes.iter().find(|o| o.class == class).map_or(0.0, |o| o.probability)
    }

    /// Distribution over `m >= 1`, renormalized to exclude the vacuum.
    pub fn given_pairs(&self) -> Vec<(u32, f64)> {
        let total: f64 = self.outcomes.iter().filter(|o| o.class > 0).map(|o| o.probability).sum();
        self.outcomes
            .iter()
            .filter(|o| o.class > 0)
            .map(|o| (o.class, o.probability / total))
            .collect()
    }
}

/// Pair-number classifier at a fixed operating point.
#[derive(Clone, Debug)]
pub struct PairClassifier {
    alpha: f64,
    theta: f64,
    windows: WindowTable,
}

impl PairClassifier {
    pub fn new(alpha: f64, theta: f64, n_max: u32) -> Result<Self> {
        Ok(PairClassifier {
            alpha,
            theta,
            windows: build_windows(alpha, theta, n_max)?,
        })
    }

    pub fn windows(&self) -> &WindowTable {
        &self.windows
    }

    /// Beam splitter and `npair` cross-Kerr on `|α>`.
    pub fn hybrid(&self, signal: &FockState) -> HybridState {
        let bs = apply_beam_splitter(signal, BeamSplitterConvention::Forward);
        cross_kerr(&HybridState::coherent(self.alpha, bs), &PhaseConfig::npair(self.theta))
    }

    /// Outcome sampler for a pure `m`-pair emission.
    pub fn pure_sampler(&self, m: u32) -> OutcomeSampler {
        OutcomeSampler::new(&self.hybrid(&pair_state(m)))
    }

    pub fn classify(&self, input: &FockState, mode: MeasurementMode) -> Result<Classification> {
        input.require_normalized()?;
        check_pair_sectors(input)?;
        let vacuum_amp = input.amplitude(Occupation::VACUUM);
        let vacuum_weight = vacuum_amp.norm_sqr();
        let pairs = input.filter(|o| *o != Occupation::VACUUM);
        if pairs.is_empty() {
            return Ok(Classification {
                outcomes: vec![ClassOutcome {
                    class: 0,
                    probability: 1.0,
                    state: FockState::vacuum(),
                    x: None,
                }],
                misclassification: 0.0,
            });
        }
        let h = self.hybrid(&pairs);
        let misclassification = misclassification_mass(&h, &self.windows);
        let parts = partition_by_window(&h, &self.windows)?;
        let vacuum = (vacuum_weight > 0.0).then(|| ClassOutcome {
            class: 0,
            probability: vacuum_weight,
            state: FockState::vacuum(),
            x: None,
        });
        let outcomes = match mode {
            MeasurementMode::Analytic => vacuum
                .into_iter()
                .chain(parts.into_iter().map(|p| ClassOutcome {
                    class: p.class,
                    probability: p.weight,
                    state: p.state,
                    x: None,
                }))
                .collect(),
            MeasurementMode::Sampled { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                if rng.random::<f64>() < vacuum_weight {
                    vacuum.into_iter().collect()
                } else {
                    let x = OutcomeSampler::new(&h).sample(&mut rng);
                    let out = project(&h, x, &self.windows, None)?;
                    let probability = parts
                        .iter()
                        .find(|p| p.class == out.declared_class)
                        .map_or(0.0, |p| p.weight);
                    vec![ClassOutcome {
                        class: out.declared_class,
                        probability,
                        state: out.post_state,
                        x: Some(x),
                    }]
                }
            }
        };
        Ok(Classification {
            outcomes,
            misclassification,
        })
    }
}

/// Every photon-number sector must be proportional to a twin-beam pair state.
fn check_pair_sectors(input: &FockState) -> Result<()> {
    let mut sectors: std::collections::BTreeMap<u32, FockState> = Default::default();
    for (occ, amp) in input.iter() {
        let [ah, av, bh, bv] = occ.0;
        if ah != bv || av != bh {
            return Err(Error::BadInput(format!("term {occ} is not a twin-beam pair term")));
        }
        let m = ah + av;
        let entry = sectors.entry(m).or_default();
        *entry = entry.add_scaled(C64::new(1.0, 0.0), &FockState::new([(*occ, *amp)]));
    }
    for (m, s) in sectors {
        let overlap = pair_state(m).inner(&s).norm_sqr();
        if overlap < (1.0 - FAMILY_TOL) * s.norm_sqr() {
            return Err(Error::BadInput(format!("{m}-pair sector is not proportional to the pair state")));
        }
    }
    Ok(())
}

/// Classifies a superposition of pair sectors by homodyne window.
pub fn classify_pairs(
    input: &FockState,
    n_max: u32,
    alpha: f64,
    theta: f64,
    mode: MeasurementMode,
) -> Result<Classification> {
    PairClassifier::new(alpha, theta, n_max)?.classify(input, mode)
}

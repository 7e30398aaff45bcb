//! Sparse four-mode Fock space.
//!
//! The signal register carries four bosonic modes in the fixed order
//! `(a_H, a_V, b_H, b_V)`: spatial modes `a` and `b`, each with a horizontal
//! and a vertical polarization. States are sparse maps from occupation tuples
//! to complex amplitudes and are immutable once built.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitudes with magnitude below this are dropped.
pub const DEFAULT_PRUNE: f64 = 1e-14;

/// Tolerance on `|norm - 1|` for a state to count as normalized.
pub const NORM_TOL: f64 = 1e-10;

/// One of the four signal modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    AH,
    AV,
    BH,
    BV,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::AH, Mode::AV, Mode::BH, Mode::BV];

    pub fn index(self) -> usize {
        match self {
            Mode::AH => 0,
            Mode::AV => 1,
            Mode::BH => 2,
            Mode::BV => 3,
        }
    }

    /// Modes belonging to spatial mode `a`.
    pub fn is_a(self) -> bool {
        matches!(self, Mode::AH | Mode::AV)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::AH => "a_H",
            Mode::AV => "a_V",
            Mode::BH => "b_H",
            Mode::BV => "b_V",
        };
        f.write_str(s)
    }
}

/// Photon counts `|m,n;r,s>` in the order `(a_H, a_V, b_H, b_V)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occupation(pub [u32; 4]);

impl Occupation {
    pub const VACUUM: Occupation = Occupation([0; 4]);

    pub fn new(ah: u32, av: u32, bh: u32, bv: u32) -> Self {
        Occupation([ah, av, bh, bv])
    }

    pub fn get(&self, m: Mode) -> u32 {
        self.0[m.index()]
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Photons in spatial mode `a` (both polarizations).
    pub fn spatial_a(&self) -> u32 {
        self.0[0] + self.0[1]
    }

    /// Photons in spatial mode `b` (both polarizations).
    pub fn spatial_b(&self) -> u32 {
        self.0[2] + self.0[3]
    }

    fn with(mut self, m: Mode, n: u32) -> Self {
        self.0[m.index()] = n;
        self
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [m, n, r, s] = self.0;
        write!(f, "|{m},{n};{r},{s}>")
    }
}

impl From<[u32; 4]> for Occupation {
    fn from(v: [u32; 4]) -> Self {
        Occupation(v)
    }
}

/// A pure state of the signal register.
#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    terms: BTreeMap<Occupation, C64>,
    prune: f64,
}

impl Default for FockState {
    fn default() -> Self {
        Self::zero()
    }
}

impl FockState {
    /// Builds a state from `(occupation, amplitude)` pairs. Duplicate
    /// occupations are summed before pruning.
    pub fn new<I, O>(terms: I) -> Self
    where
        I: IntoIterator<Item = (O, C64)>,
        O: Into<Occupation>,
    {
        Self::with_prune(terms, DEFAULT_PRUNE)
    }

    pub fn with_prune<I, O>(terms: I, prune: f64) -> Self
    where
        I: IntoIterator<Item = (O, C64)>,
        O: Into<Occupation>,
    {
        let mut map: BTreeMap<Occupation, C64> = BTreeMap::new();
        for (occ, amp) in terms {
            *map.entry(occ.into()).or_default() += amp;
        }
        map.retain(|_, a| a.norm() >= prune);
        FockState { terms: map, prune }
    }

    /// Convenience for real amplitudes.
    pub fn from_real<I, O>(terms: I) -> Self
    where
        I: IntoIterator<Item = (O, f64)>,
        O: Into<Occupation>,
    {
        Self::new(terms.into_iter().map(|(o, a)| (o, C64::new(a, 0.0))))
    }

    pub fn zero() -> Self {
        FockState {
            terms: BTreeMap::new(),
            prune: DEFAULT_PRUNE,
        }
    }

    pub fn vacuum() -> Self {
        Self::basis(Occupation::VACUUM)
    }

    pub fn basis(occ: impl Into<Occupation>) -> Self {
        Self::new([(occ.into(), C64::new(1.0, 0.0))])
    }

    pub fn prune_threshold(&self) -> f64 {
        self.prune
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn amplitude(&self, occ: impl Into<Occupation>) -> C64 {
        self.terms.get(&occ.into()).copied().unwrap_or_default()
    }

    /// Terms in canonical (lexicographic occupation) order.
    pub fn iter(&self) -> impl Iterator<Item = (&Occupation, &C64)> {
        self.terms.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOL
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::NotNormalized { norm: self.norm() })
        }
    }

    pub fn normalize(&self) -> Result<FockState> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroState);
        }
        Ok(self.scale(C64::new(1.0 / n, 0.0)))
    }

    /// `<self|other>`, conjugate-linear in `self`.
    pub fn inner(&self, other: &FockState) -> C64 {
        let (small, large, conj_small) = if self.len() <= other.len() {
            (self, other, true)
        } else {
            (other, self, false)
        };
        small
            .terms
            .iter()
            .filter_map(|(occ, a)| large.terms.get(occ).map(|b| (a, b)))
            .map(|(a, b)| if conj_small { a.conj() * b } else { b.conj() * a })
            .sum()
    }

    pub fn scale(&self, k: C64) -> FockState {
        Self::with_prune(self.terms.iter().map(|(o, a)| (*o, a * k)), self.prune)
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, k: C64, other: &FockState) -> FockState {
        Self::with_prune(
            self.terms
                .iter()
                .map(|(o, a)| (*o, *a))
                .chain(other.terms.iter().map(|(o, a)| (*o, a * k))),
            self.prune,
        )
    }

    /// Applies `f` to each term, collecting the images into a new state.
    pub fn map_terms<F, I>(&self, mut f: F) -> FockState
    where
        F: FnMut(Occupation, C64) -> I,
        I: IntoIterator<Item = (Occupation, C64)>,
    {
        Self::with_prune(
            self.terms.iter().flat_map(|(o, a)| f(*o, *a)).collect::<Vec<_>>(),
            self.prune,
        )
    }

    /// Keeps only the terms for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(&Occupation) -> bool) -> FockState {
        FockState {
            terms: self
                .terms
                .iter()
                .filter(|(o, _)| keep(o))
                .map(|(o, a)| (*o, *a))
                .collect(),
            prune: self.prune,
        }
    }

    pub fn create(&self, m: Mode) -> FockState {
        self.map_terms(|occ, amp| {
            let n = occ.get(m);
            Some((occ.with(m, n + 1), amp * ((n + 1) as f64).sqrt()))
        })
    }

    pub fn annihilate(&self, m: Mode) -> FockState {
        self.map_terms(|occ, amp| {
            let n = occ.get(m);
            (n > 0).then(|| (occ.with(m, n - 1), amp * (n as f64).sqrt()))
        })
    }

    pub fn max_photons(&self) -> u32 {
        self.terms.keys().map(Occupation::total).max().unwrap_or(0)
    }
}

/// `|<a|b>|^2` for two normalized states.
pub fn fidelity(a: &FockState, b: &FockState) -> Result<f64> {
    a.require_normalized()?;
    b.require_normalized()?;
    Ok(a.inner(b).norm_sqr().min(1.0))
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (occ, a)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "({:.6}{:+.6}i){}", a.re, a.im, occ)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    occ: [u32; 4],
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    terms: Vec<TermRepr>,
}

impl Serialize for FockState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StateRepr {
            terms: self
                .terms
                .iter()
                .map(|(o, a)| TermRepr {
                    occ: o.0,
                    re: a.re,
                    im: a.im,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FockState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = StateRepr::deserialize(deserializer)?;
        Ok(FockState::new(
            repr.terms
                .into_iter()
                .map(|t| (Occupation(t.occ), C64::new(t.re, t.im))),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn family(cc: f64) -> FockState {
        FockState::from_real([([2, 0, 0, 2], 1.0), ([0, 2, 2, 0], 1.0), ([1, 1, 1, 1], -cc)])
            .normalize()
            .unwrap()
    }

    #[test]
    fn make_state_examples() {
        let s = FockState::from_real([([2, 0, 0, 2], 1.0), ([0, 2, 2, 0], 1.0), ([1, 1, 1, 1], -1.0)]);
        assert_eq!(s.len(), 3);
        assert_abs_diff_eq!(s.norm_sqr(), 3.0);

        let v = FockState::from_real([([0, 0, 0, 0], 1.0)]);
        assert_eq!(v, FockState::vacuum());

        let merged = FockState::from_real([([1, 0, 0, 0], 0.5), ([1, 0, 0, 0], 0.5)]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.amplitude([1, 0, 0, 0]), c(1.0));
    }

    #[test]
    fn prunes_cancelled_terms() {
        let s = FockState::from_real([([1, 0, 0, 0], 0.5), ([1, 0, 0, 0], -0.5), ([0, 1, 0, 0], 1e-15)]);
        assert!(s.is_empty());
    }

    #[test]
    fn normalize_family_c2() {
        let s = family(2.0);
        let k = 1.0 / 6f64.sqrt();
        assert_abs_diff_eq!(s.amplitude([2, 0, 0, 2]).re, k, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitude([0, 2, 2, 0]).re, k, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitude([1, 1, 1, 1]).re, -2.0 * k, epsilon = 1e-15);
        assert!((s.norm() - 1.0).abs() < 1e-12);

        let again = s.normalize().unwrap();
        assert!((fidelity(&s, &again).unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(FockState::zero().normalize(), Err(Error::ZeroState)));
    }

    #[test]
    fn inner_product_examples() {
        let v = FockState::vacuum();
        assert_eq!(v.inner(&v), c(1.0));
        let a = FockState::basis([2, 0, 0, 2]);
        let b = FockState::basis([0, 2, 2, 0]);
        assert_eq!(a.inner(&b), c(0.0));
        // (1 + 1 + 2) / (sqrt3 * sqrt6)
        let ip = family(1.0).inner(&family(2.0));
        assert_abs_diff_eq!(ip.re, 4.0 / 18f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(ip.im, 0.0);
    }

    #[test]
    fn ladder_examples() {
        let v = FockState::vacuum();
        assert_eq!(v.create(Mode::AH), FockState::basis([1, 0, 0, 0]));
        let two = v.create(Mode::AH).create(Mode::AH);
        assert_abs_diff_eq!(two.amplitude([2, 0, 0, 0]).re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(FockState::basis([2, 0, 0, 2]).annihilate(Mode::AV).is_empty());
    }

    #[test]
    fn fidelity_examples() {
        let s = family(2.0);
        assert_abs_diff_eq!(fidelity(&s, &s).unwrap(), 1.0, epsilon = 1e-15);
        let a = FockState::basis([2, 0, 0, 2]);
        let b = FockState::basis([0, 2, 2, 0]);
        assert_eq!(fidelity(&a, &b).unwrap(), 0.0);
        assert_abs_diff_eq!(fidelity(&family(1.0), &family(2.0)).unwrap(), 8.0 / 9.0, epsilon = 1e-14);
        let unnorm = FockState::from_real([([1, 0, 0, 0], 2.0)]);
        assert!(matches!(fidelity(&unnorm, &a), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn json_schema() {
        let s = FockState::new([([1, 1, 1, 1], C64::new(0.5, -0.25))]);
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, r#"{"terms":[{"occ":[1,1,1,1],"re":0.5,"im":-0.25}]}"#);
        let back: FockState = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
    }

    fn small_state() -> impl Strategy<Value = FockState> {
        prop::collection::vec(
            (prop::array::uniform4(0u32..3), -1.0f64..1.0, -1.0f64..1.0),
            1..8,
        )
        .prop_map(|v| FockState::new(v.into_iter().map(|(o, re, im)| (o, C64::new(re, im)))))
    }

    proptest! {
        #[test]
        fn commutator_is_identity(s in small_state(), mi in 0usize..4) {
            let m = Mode::ALL[mi];
            let lhs = s.create(m).annihilate(m).add_scaled(c(-1.0), &s.annihilate(m).create(m));
            for (occ, amp) in s.iter() {
                prop_assert!((lhs.amplitude(*occ) - amp).norm() < 1e-12);
            }
            prop_assert!((lhs.norm_sqr() - s.norm_sqr()).abs() < 1e-12);
        }

        #[test]
        fn inner_is_conjugate_symmetric(a in small_state(), b in small_state()) {
            prop_assert!((a.inner(&b) - b.inner(&a).conj()).norm() < 1e-12);
            prop_assert!((a.inner(&a).re - a.norm_sqr()).abs() < 1e-12);
        }

        #[test]
        fn normalize_is_idempotent(s in small_state()) {
            prop_assume!(s.norm() > 1e-6);
            let once = s.normalize().unwrap();
            let twice = once.normalize().unwrap();
            prop_assert!((once.norm() - 1.0).abs() < 1e-12);
            for (occ, amp) in once.iter() {
                prop_assert!((twice.amplitude(*occ) - amp).norm() < 1e-12);
            }
        }
    }
}

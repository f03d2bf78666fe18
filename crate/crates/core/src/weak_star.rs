//! A concrete weak* metric on Borel probability measures of T².
//!
//! `dist*(μ, ν) = Σ_{i<K} 2^{-i} |∫φ_i dμ − ∫φ_i dν|` where `φ_0 ≡ 1` and
//! the remaining `φ_i = (1 + cos/sin(2π k·x)) / 2` run over Fourier modes
//! ordered by shell `max(|k1|, |k2|)`, then `(k1, k2)`, cosine before sine.
//! Only one representative of each `±k` pair is kept (`k1 > 0`, or `k1 = 0`
//! and `k2 > 0`): the other one gives the same `φ` (cosine) or `1 − φ`
//! (sine), hence identical moment differences.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{HyperbolicToralMap, TorusPoint};

pub const DEFAULT_FAMILY_SIZE: usize = 33;
pub const ENUMERATION_VERSION: &str = "fourier-halfplane-v1";
/// Atoms closer than this (torus distance) are merged.
pub const COALESCE_TOLERANCE: f64 = 1e-12;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FourierMode {
    pub frequency: [i32; 2],
    pub trig: Trig,
}

impl FourierMode {
    /// `(1 + trig(2π k·x)) / 2`, evaluated directly.
    pub fn evaluate(&self, p: TorusPoint) -> f64 {
        let phase = TAU * (self.frequency[0] as f64 * p.x1() + self.frequency[1] as f64 * p.x2());
        let t = match self.trig {
            Trig::Cos => phase.cos(),
            Trig::Sin => phase.sin(),
        };
        0.5 * (1.0 + t)
    }
}

/// Serialized identity of a family; distances are only comparable at equal specs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub k: usize,
    #[serde(default = "default_version")]
    pub version: String,
}

fn default_version() -> String {
    ENUMERATION_VERSION.to_string()
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            k: DEFAULT_FAMILY_SIZE,
            version: default_version(),
        }
    }
}

/// Truncated family `φ_0, …, φ_{K−1}` with weights `2^{-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionFamily {
    modes: Vec<FourierMode>,
    weights: Vec<f64>,
    max_shell: usize,
}

impl TestFunctionFamily {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "family size K must be positive".into(),
            ));
        }
        let mut modes = Vec::with_capacity(k.saturating_sub(1));
        let mut shell: i32 = 0;
        while modes.len() + 1 < k {
            shell += 1;
            let mut ks: Vec<[i32; 2]> = (-shell..=shell)
                .flat_map(|k1| (-shell..=shell).map(move |k2| [k1, k2]))
                .filter(|k| k[0].abs().max(k[1].abs()) == shell)
                .filter(|k| k[0] > 0 || (k[0] == 0 && k[1] > 0))
                .collect();
            ks.sort();
            for frequency in ks {
                for trig in [Trig::Cos, Trig::Sin] {
                    modes.push(FourierMode { frequency, trig });
                }
            }
        }
        modes.truncate(k - 1);
        let max_shell = modes
            .iter()
            .map(|m| {
                m.frequency[0]
                    .unsigned_abs()
                    .max(m.frequency[1].unsigned_abs()) as usize
            })
            .max()
            .unwrap_or(0);
        let weights = (0..k).map(|i| 0.5f64.powi(i as i32)).collect();
        Ok(Self {
            modes,
            weights,
            max_shell,
        })
    }

    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        if spec.version != ENUMERATION_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unknown family enumeration '{}', expected '{ENUMERATION_VERSION}'",
                spec.version
            )));
        }
        Self::new(spec.k)
    }

    pub fn spec(&self) -> FamilySpec {
        FamilySpec {
            k: self.size(),
            version: default_version(),
        }
    }

    /// Number of functions K.
    pub fn size(&self) -> usize {
        self.weights.len()
    }

    /// Mode behind `φ_i`; `None` for the constant `φ_0`.
    pub fn mode(&self, i: usize) -> Option<FourierMode> {
        if i == 0 {
            None
        } else {
            self.modes.get(i - 1).copied()
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Bound `Σ_{i≥K} 2^{-i} = 2^{1−K}` on what the truncation can hide.
    pub fn tail_bound(&self) -> f64 {
        2f64.powi(1 - self.size() as i32)
    }

    /// Direct evaluation of `φ_i(p)`.
    pub fn evaluate(&self, i: usize, p: TorusPoint) -> f64 {
        self.mode(i).map_or(1.0, |m| m.evaluate(p))
    }

    pub fn evaluator(&self) -> FamilyEvaluator<'_> {
        FamilyEvaluator {
            family: self,
            pow1: vec![(1.0, 0.0); self.max_shell + 1],
            pow2: vec![(1.0, 0.0); self.max_shell + 1],
        }
    }

    pub fn mean_values(&self) -> MomentVector {
        let mut m = vec![0.5; self.size()];
        m[0] = 1.0;
        MomentVector(m)
    }
}

/// Evaluates all `φ_i(p)` at once from powers of `e^{2πi x1}` and `e^{2πi x2}`.
pub struct FamilyEvaluator<'a> {
    family: &'a TestFunctionFamily,
    pow1: Vec<(f64, f64)>,
    pow2: Vec<(f64, f64)>,
}

impl FamilyEvaluator<'_> {
    #[inline]
    fn fill_powers(buf: &mut [(f64, f64)], x: f64) {
        let (s, c) = (TAU * x).sin_cos();
        buf[0] = (1.0, 0.0);
        for m in 1..buf.len() {
            let (re, im) = buf[m - 1];
            buf[m] = (re * c - im * s, re * s + im * c);
        }
    }

    /// Writes `φ_0(p), …, φ_{K−1}(p)` into `out`.
    #[inline]
    pub fn evaluate_into(&mut self, p: TorusPoint, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.family.size());
        Self::fill_powers(&mut self.pow1, p.x1());
        Self::fill_powers(&mut self.pow2, p.x2());
        out[0] = 1.0;
        for (slot, mode) in out[1..].iter_mut().zip(&self.family.modes) {
            let [k1, k2] = mode.frequency;
            let (a_re, a_im) = self.pow1[k1 as usize];
            let (b_re, b_im) = if k2 >= 0 {
                self.pow2[k2 as usize]
            } else {
                let (re, im) = self.pow2[(-k2) as usize];
                (re, -im)
            };
            let v = match mode.trig {
                Trig::Cos => a_re * b_re - a_im * b_im,
                Trig::Sin => a_re * b_im + a_im * b_re,
            };
            *slot = (0.5 * (1.0 + v)).clamp(0.0, 1.0);
        }
    }
}

/// Running sums `Σ_j φ_i(x_j)` along a sequence of points, accumulated in order.
pub struct MomentAccumulator<'a> {
    evaluator: FamilyEvaluator<'a>,
    sums: Vec<f64>,
    values: Vec<f64>,
    count: usize,
}

impl<'a> MomentAccumulator<'a> {
    pub fn new(family: &'a TestFunctionFamily) -> Self {
        Self {
            evaluator: family.evaluator(),
            sums: vec![0.0; family.size()],
            values: vec![0.0; family.size()],
            count: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, p: TorusPoint) {
        self.evaluator.evaluate_into(p, &mut self.values);
        for (s, v) in self.sums.iter_mut().zip(&self.values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `dist*(σ, target)` for the uniform measure σ on the pushed points.
    #[inline]
    pub fn distance_to(&self, target: &MomentVector) -> f64 {
        let n = self.count as f64;
        let weights = self.evaluator.family.weights();
        let mut d = 0.0;
        for ((s, t), w) in self.sums.iter().zip(&target.0).zip(weights) {
            d += w * (s / n - t).abs();
        }
        d
    }

    pub fn moments(&self) -> MomentVector {
        let n = self.count as f64;
        MomentVector(self.sums.iter().map(|s| s / n).collect())
    }
}

/// `m_i = ∫φ_i dμ` for `i < K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Weighted `ℓ¹` distance with weights `2^{-i}`.
    pub fn distance(&self, other: &MomentVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::FamilyMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .enumerate()
            .map(|(i, (a, b))| 0.5f64.powi(i as i32) * (a - b).abs())
            .sum())
    }

    /// Affine combination `Σ w_j m^{(j)}`.
    pub fn combine(parts: &[(f64, MomentVector)]) -> Result<MomentVector> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty combination".into()))?;
        let k = first.1.len();
        let mut out = vec![0.0; k];
        for (w, m) in parts {
            if m.len() != k {
                return Err(Error::FamilyMismatch {
                    left: k,
                    right: m.len(),
                });
            }
            for (o, v) in out.iter_mut().zip(&m.0) {
                *o += w * v;
            }
        }
        Ok(MomentVector(out))
    }
}

/// Finitely supported probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<TorusPoint>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<TorusPoint>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument(
                "a discrete measure needs at least one atom".into(),
            ));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { atoms, weights })
    }

    pub fn dirac(p: TorusPoint) -> Self {
        Self {
            atoms: vec![p],
            weights: vec![1.0],
        }
    }

    /// Uniform measure on `points` (with multiplicity), coalescing atoms
    /// closer than [`COALESCE_TOLERANCE`]. Atoms keep first-seen order.
    pub fn uniform(points: &[TorusPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "a discrete measure needs at least one atom".into(),
            ));
        }
        let mut atoms: Vec<TorusPoint> = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        const SCALE: f64 = 1.0 / COALESCE_TOLERANCE;
        const WRAP: i64 = 1_000_000_000_000;
        let bin_of = |p: &TorusPoint| {
            (
                (p.x1() * SCALE).floor() as i64,
                (p.x2() * SCALE).floor() as i64,
            )
        };
        for p in points {
            let (b1, b2) = bin_of(p);
            let mut found = None;
            'search: for d1 in -1..=1 {
                for d2 in -1..=1 {
                    let key = ((b1 + d1).rem_euclid(WRAP), (b2 + d2).rem_euclid(WRAP));
                    if let Some(list) = bins.get(&key) {
                        for &idx in list {
                            if atoms[idx].distance(p) < COALESCE_TOLERANCE {
                                found = Some(idx);
                                break 'search;
                            }
                        }
                    }
                }
            }
            match found {
                Some(idx) => counts[idx] += 1,
                None => {
                    bins.entry((b1, b2)).or_default().push(atoms.len());
                    atoms.push(*p);
                    counts.push(1);
                }
            }
        }
        let n = points.len() as f64;
        let weights = counts.into_iter().map(|c| c as f64 / n).collect();
        Ok(Self { atoms, weights })
    }

    /// `t·a + (1−t)·b` as a single atom list.
    pub fn mix(t: f64, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "mixing weight {t} outside [0, 1]"
            )));
        }
        let atoms = a.atoms.iter().chain(&b.atoms).copied().collect();
        let weights = a
            .weights
            .iter()
            .map(|w| t * w)
            .chain(b.weights.iter().map(|w| (1.0 - t) * w))
            .collect();
        DiscreteMeasure::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[TorusPoint] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TorusPoint, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }
}

/// A measure whose test-function moments can be computed.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureRep {
    Discrete(DiscreteMeasure),
    /// Normalized Lebesgue measure; every non-constant mode integrates to zero.
    LebesgueExact,
    /// Convex combination `Σ w_j μ_j`.
    Mixture(Vec<(f64, MeasureRep)>),
}

impl MeasureRep {
    pub fn dirac(p: TorusPoint) -> Self {
        MeasureRep::Discrete(DiscreteMeasure::dirac(p))
    }

    /// Checks that mixture weights are non-negative and sum to 1.
    pub fn validate(&self) -> Result<()> {
        if let MeasureRep::Mixture(parts) = self {
            if parts.is_empty() {
                return Err(Error::InvalidArgument("empty mixture".into()));
            }
            let total: f64 = parts.iter().map(|(w, _)| *w).sum();
            if parts.iter().any(|(w, _)| !(w.is_finite() && *w >= 0.0))
                || (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE
            {
                return Err(Error::InvalidArgument(format!(
                    "mixture weights must be non-negative and sum to 1 (sum {total})"
                )));
            }
            for (_, m) in parts {
                m.validate()?;
            }
        }
        Ok(())
    }
}

/// Empirical measure `σ_n(p) = (1/n) Σ_{j<n} δ_{f^j(p)}`, with coalesced atoms.
pub fn empirical_measure(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    n: usize,
) -> Result<DiscreteMeasure> {
    let orbit = map.orbit(p, n)?;
    DiscreteMeasure::uniform(&orbit)
}

pub fn discrete_moments(mu: &DiscreteMeasure, family: &TestFunctionFamily) -> MomentVector {
    let mut eval = family.evaluator();
    let mut values = vec![0.0; family.size()];
    let mut sums = vec![0.0; family.size()];
    for (p, w) in mu.iter() {
        eval.evaluate_into(p, &mut values);
        for (s, v) in sums.iter_mut().zip(&values) {
            *s += w * v;
        }
    }
    MomentVector(sums)
}

pub fn moments(mu: &MeasureRep, family: &TestFunctionFamily) -> MomentVector {
    match mu {
        MeasureRep::Discrete(d) => discrete_moments(d, family),
        MeasureRep::LebesgueExact => family.mean_values(),
        MeasureRep::Mixture(parts) => {
            let parts: Vec<_> = parts
                .iter()
                .map(|(w, m)| (*w, moments(m, family)))
                .collect();
            MomentVector::combine(&parts).expect("moments share the family size")
        }
    }
}

pub fn weak_star_distance(mu: &MeasureRep, nu: &MeasureRep, family: &TestFunctionFamily) -> f64 {
    moments(mu, family)
        .distance(&moments(nu, family))
        .expect("moments share the family size")
}

/// `f_*μ`: atoms mapped by `f`, weights unchanged.
pub fn pushforward(map: &HyperbolicToralMap, mu: &DiscreteMeasure) -> DiscreteMeasure {
    DiscreteMeasure {
        atoms: mu.atoms.iter().map(|p| map.step(*p)).collect(),
        weights: mu.weights.clone(),
    }
}

/// `dist*(σ_n(p), f_*σ_n(p))`; never exceeds `2/n`.
pub fn invariance_defect(
    map: &HyperbolicToralMap,
    p: TorusPoint,
    n: usize,
    family: &TestFunctionFamily,
) -> Result<f64> {
    let sigma = empirical_measure(map, p, n)?;
    let pushed = pushforward(map, &sigma);
    discrete_moments(&sigma, family).distance(&discrete_moments(&pushed, family))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fam() -> TestFunctionFamily {
        TestFunctionFamily::new(DEFAULT_FAMILY_SIZE).unwrap()
    }

    #[test]
    fn enumeration_order() {
        let f = fam();
        assert_eq!(f.size(), 33);
        assert_eq!(f.mode(0), None);
        let first: Vec<_> = (1..9).map(|i| f.mode(i).unwrap()).collect();
        let expect = [[0, 1], [1, -1], [1, 0], [1, 1]];
        for (j, m) in first.iter().enumerate() {
            assert_eq!(m.frequency, expect[j / 2]);
            assert_eq!(m.trig, if j % 2 == 0 { Trig::Cos } else { Trig::Sin });
        }
        // second shell starts at index 9 with the smallest (k1, k2)
        assert_eq!(f.mode(9).unwrap().frequency, [0, 2]);
        assert_eq!(
            f.mode(32).unwrap().frequency[0]
                .abs()
                .max(f.mode(32).unwrap().frequency[1].abs()),
            3
        );
        assert_abs_diff_eq!(f.tail_bound(), 2f64.powi(-32));
    }

    #[test]
    fn fast_evaluation_matches_direct() {
        let f = TestFunctionFamily::new(120).unwrap();
        let mut ev = f.evaluator();
        let mut out = vec![0.0; f.size()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = TorusPoint::new(rng.gen(), rng.gen());
            ev.evaluate_into(p, &mut out);
            for (i, v) in out.iter().enumerate() {
                assert!((0.0..=1.0).contains(v));
                assert_abs_diff_eq!(*v, f.evaluate(i, p), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn empirical_measure_examples() {
        let cat = HyperbolicToralMap::cat_map();
        let p = TorusPoint::new(0.3, 0.6);
        assert_eq!(
            empirical_measure(&cat, p, 1).unwrap(),
            DiscreteMeasure::dirac(p)
        );
        let fixed = empirical_measure(&cat, TorusPoint::origin(), 7).unwrap();
        assert_eq!(fixed, DiscreteMeasure::dirac(TorusPoint::origin()));
        let s = empirical_measure(&cat, TorusPoint::new(0.5, 0.5), 3).unwrap();
        assert_eq!(s.len(), 3);
        let atoms: Vec<_> = s.atoms().iter().map(|a| a.coords()).collect();
        assert_eq!(atoms, vec![[0.5, 0.5], [0.5, 0.0], [0.0, 0.5]]);
        assert!(s.weights().iter().all(|w| (*w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn coalescing_across_the_seam() {
        let pts = [
            TorusPoint::new(0.0, 0.5),
            TorusPoint::new(1.0 - 1e-14, 0.5),
            TorusPoint::new(0.25, 0.25),
        ];
        let m = DiscreteMeasure::uniform(&pts).unwrap();
        assert_eq!(m.len(), 2);
        assert_abs_diff_eq!(m.weights()[0], 2.0 / 3.0);
    }

    #[test]
    fn moments_examples() {
        let f = fam();
        let leb = moments(&MeasureRep::LebesgueExact, &f);
        assert_eq!(leb.values()[0], 1.0);
        assert!(leb.values()[1..].iter().all(|m| *m == 0.5));
        let d0 = moments(&MeasureRep::dirac(TorusPoint::origin()), &f);
        for i in 0..f.size() {
            let expect = match f.mode(i).map(|m| m.trig) {
                None | Some(Trig::Cos) => 1.0,
                Some(Trig::Sin) => 0.5,
            };
            assert_abs_diff_eq!(d0.values()[i], expect, epsilon = 1e-15);
        }
        // (1 + cos 2πx1)/2 is the cosine of mode k = (1, 0)
        let idx = (1..f.size())
            .find(|&i| {
                f.mode(i)
                    == Some(FourierMode {
                        frequency: [1, 0],
                        trig: Trig::Cos,
                    })
            })
            .unwrap();
        let two =
            DiscreteMeasure::uniform(&[TorusPoint::origin(), TorusPoint::new(0.5, 0.0)]).unwrap();
        let m = discrete_moments(&two, &f);
        assert_abs_diff_eq!(m.values()[idx], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn distance_dirac_to_lebesgue_by_summation() {
        let f = fam();
        // every cosine mode contributes 2^{-i}/2, every sine mode 0
        let oracle: f64 = (1..f.size())
            .filter(|&i| f.mode(i).unwrap().trig == Trig::Cos)
            .map(|i| 0.5f64.powi(i as i32) * 0.5)
            .sum();
        let d = weak_star_distance(
            &MeasureRep::dirac(TorusPoint::origin()),
            &MeasureRep::LebesgueExact,
            &f,
        );
        assert_abs_diff_eq!(d, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 1.0 / 3.0, epsilon = 1e-9);
        assert_eq!(
            weak_star_distance(&MeasureRep::LebesgueExact, &MeasureRep::LebesgueExact, &f),
            0.0
        );
    }

    #[test]
    fn family_mismatch() {
        let a = TestFunctionFamily::new(5).unwrap().mean_values();
        let b = TestFunctionFamily::new(7).unwrap().mean_values();
        assert!(matches!(
            a.distance(&b),
            Err(Error::FamilyMismatch { left: 5, right: 7 })
        ));
    }

    #[test]
    fn pushforward_examples() {
        let cat = HyperbolicToralMap::cat_map();
        let p = TorusPoint::new(0.2, 0.7);
        assert_eq!(
            pushforward(&cat, &DiscreteMeasure::dirac(p)),
            DiscreteMeasure::dirac(cat.step(p))
        );
        let d0 = DiscreteMeasure::dirac(TorusPoint::origin());
        assert_eq!(pushforward(&cat, &d0), d0);
    }

    #[test]
    fn pushforward_of_empirical_shifts_endpoints() {
        let f = fam();
        let cat = HyperbolicToralMap::cat_map();
        let p = TorusPoint::new(0.1234, 0.5678);
        let n = 25;
        let sigma = empirical_measure(&cat, p, n).unwrap();
        let diff: Vec<f64> = discrete_moments(&pushforward(&cat, &sigma), &f)
            .values()
            .iter()
            .zip(discrete_moments(&sigma, &f).values())
            .map(|(a, b)| a - b)
            .collect();
        let fnp = cat.iter_from(p).nth(n).unwrap();
        for (i, d) in diff.iter().enumerate() {
            let expect = (f.evaluate(i, fnp) - f.evaluate(i, p)) / n as f64;
            assert_abs_diff_eq!(*d, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn invariance_defect_examples() {
        let f = fam();
        let cat = HyperbolicToralMap::cat_map();
        assert_eq!(
            invariance_defect(&cat, TorusPoint::origin(), 10, &f).unwrap(),
            0.0
        );
        let p = TorusPoint::new(0.377, 0.291);
        assert!(invariance_defect(&cat, p, 10, &f).unwrap() <= 0.2);
        assert!(invariance_defect(&cat, p, 1000, &f).unwrap() <= 0.002);
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(DiscreteMeasure::new(vec![], vec![]).is_err());
        assert!(DiscreteMeasure::new(vec![TorusPoint::origin()], vec![0.9]).is_err());
        assert!(DiscreteMeasure::new(vec![TorusPoint::origin()], vec![1.0, 0.0]).is_err());
        let bad = MeasureRep::Mixture(vec![
            (0.7, MeasureRep::LebesgueExact),
            (0.2, MeasureRep::LebesgueExact),
        ]);
        assert!(bad.validate().is_err());
    }
}

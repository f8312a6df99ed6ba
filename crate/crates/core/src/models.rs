//! Outcome-assignment models for the two-wing singlet experiment.
//!
//! * [`gr_outcome`]: the symmetric nonlocal deterministic model. A lone
//!   measurement reads `sgn(a·λ)` (wing A) or `−sgn(b·λ)` (wing B); a joint
//!   measurement reads the same rule on the rotated pair from
//!   [`rotate_pair`].
//! * [`bell_outcome`]: an asymmetric reference variant in which only the
//!   A-axis is rotated (to make angle `ω̂` with `b`).
//! * [`qm_probability`]: exact singlet statistics.
//! * [`LocalDetMixture`]: finite mixtures of local deterministic strategies.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, omega_hat, rotate_pair, rotate_to_angle_from, UnitVector};

/// `|axis·λ|` below this is treated as an undefined sign.
pub const SIGN_EPSILON: f64 = 1e-12;

/// A ±1 measurement result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Outcome {
    Minus,
    Plus,
}

impl Outcome {
    pub fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    /// 0 for −1, 1 for +1; the index used in probability tables.
    pub fn index(self) -> usize {
        match self {
            Outcome::Minus => 0,
            Outcome::Plus => 1,
        }
    }

    pub fn flip(self) -> Outcome {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }
}

impl TryFrom<i8> for Outcome {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Outcome::Plus),
            -1 => Ok(Outcome::Minus),
            other => Err(format!("outcome must be +1 or -1, got {other}")),
        }
    }
}

impl From<Outcome> for i8 {
    fn from(o: Outcome) -> i8 {
        o.value()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// What is measured: one wing alone, or both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeasurementContext {
    SingleA(UnitVector),
    SingleB(UnitVector),
    Joint(UnitVector, UnitVector),
}

/// The supplementary variable λ. The state vector is always the singlet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HiddenState(pub UnitVector);

/// Results of one run; the unmeasured wing is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutcomePair {
    pub x: Option<Outcome>,
    pub y: Option<Outcome>,
}

impl OutcomePair {
    pub fn joint(x: Outcome, y: Outcome) -> Self {
        OutcomePair { x: Some(x), y: Some(y) }
    }

    pub fn only_x(x: Outcome) -> Self {
        OutcomePair { x: Some(x), y: None }
    }

    pub fn only_y(y: Outcome) -> Self {
        OutcomePair { x: None, y: Some(y) }
    }
}

/// How to resolve `axis·λ = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Read the sign as +1.
    #[default]
    Plus,
    /// Report [`Error::SignUndefined`]; the runner draws a fresh λ.
    Resample,
}

/// `sgn(axis·λ)` under the given tie-break policy.
pub fn sign(axis: &UnitVector, lambda: &UnitVector, tie: TieBreak) -> Result<Outcome> {
    let d = axis.dot(lambda);
    if d.abs() < SIGN_EPSILON {
        return match tie {
            TieBreak::Plus => Ok(Outcome::Plus),
            TieBreak::Resample => Err(Error::SignUndefined(d.abs())),
        };
    }
    Ok(if d > 0.0 { Outcome::Plus } else { Outcome::Minus })
}

/// The symmetric nonlocal deterministic model.
pub fn gr_outcome(ctx: &MeasurementContext, lambda: &HiddenState, tie: TieBreak) -> Result<OutcomePair> {
    let l = &lambda.0;
    match ctx {
        MeasurementContext::SingleA(a) => Ok(OutcomePair::only_x(sign(a, l, tie)?)),
        MeasurementContext::SingleB(b) => Ok(OutcomePair::only_y(sign(b, l, tie)?.flip())),
        MeasurementContext::Joint(a, b) => {
            let (a_hat, b_hat) = rotate_pair(a, b);
            Ok(OutcomePair::joint(sign(&a_hat, l, tie)?, sign(&b_hat, l, tie)?.flip()))
        }
    }
}

/// Effective A-axis of the asymmetric variant: in the plane of `(a, b)`, on
/// a's side of `b`, at angle `ω̂` from `b`.
pub fn bell_axis(a: &UnitVector, b: &UnitVector) -> UnitVector {
    let w_hat = omega_hat(angle_between(a, b)).expect("angle_between is in [0, pi]");
    rotate_to_angle_from(a, b, w_hat)
}

/// Asymmetric reference model: only the A-axis moves, B always reads
/// `−sgn(b·λ)`.
pub fn bell_outcome(ctx: &MeasurementContext, lambda: &HiddenState, tie: TieBreak) -> Result<OutcomePair> {
    let l = &lambda.0;
    match ctx {
        MeasurementContext::Joint(a, b) => {
            let a_eff = bell_axis(a, b);
            Ok(OutcomePair::joint(sign(&a_eff, l, tie)?, sign(b, l, tie)?.flip()))
        }
        single => gr_outcome(single, lambda, tie),
    }
}

/// Singlet probability `P(x, y | a, b) = (1 − x·y·cos ω)/4`; each lone
/// marginal is 1/2.
pub fn qm_probability(ctx: &MeasurementContext, outcome: &OutcomePair) -> Result<f64> {
    match (ctx, outcome.x, outcome.y) {
        (MeasurementContext::Joint(a, b), Some(x), Some(y)) => {
            let xy = f64::from(x.value() * y.value());
            Ok((1.0 - xy * a.dot(b).clamp(-1.0, 1.0)) / 4.0)
        }
        (MeasurementContext::SingleA(_), Some(_), None) => Ok(0.5),
        (MeasurementContext::SingleB(_), None, Some(_)) => Ok(0.5),
        _ => Err(Error::Config(format!("outcome {outcome:?} does not match measurement context {ctx:?}"))),
    }
}

/// Draws a joint outcome from the singlet distribution.
pub fn qm_sample<R: Rng + ?Sized>(a: &UnitVector, b: &UnitVector, rng: &mut R) -> (Outcome, Outcome) {
    let x = if rng.random::<bool>() { Outcome::Plus } else { Outcome::Minus };
    let p_anti = (1.0 + a.dot(b).clamp(-1.0, 1.0)) / 2.0;
    let y = if rng.random::<f64>() < p_anti { x.flip() } else { x };
    (x, y)
}

/// One local deterministic strategy: a response per setting on each wing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalStrategy {
    pub weight: f64,
    pub a: Vec<Outcome>,
    pub b: Vec<Outcome>,
}

/// A finite mixture of [`LocalStrategy`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile", into = "MixtureFile")]
pub struct LocalDetMixture {
    strategies: Vec<LocalStrategy>,
    // cumulative normalized weights, last entry 1
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    strategies: Vec<LocalStrategy>,
}

impl TryFrom<MixtureFile> for LocalDetMixture {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        LocalDetMixture::new(f.strategies)
    }
}

impl From<LocalDetMixture> for MixtureFile {
    fn from(m: LocalDetMixture) -> Self {
        MixtureFile { strategies: m.strategies }
    }
}

impl LocalDetMixture {
    /// Weights are normalized; every strategy must cover the same number of
    /// settings per wing.
    pub fn new(mut strategies: Vec<LocalStrategy>) -> Result<Self> {
        let first = strategies.first().ok_or_else(|| Error::Config("mixture has no strategies".into()))?;
        let (na, nb) = (first.a.len(), first.b.len());
        if na == 0 || nb == 0 {
            return Err(Error::Config("strategy responds to no settings".into()));
        }
        if strategies.iter().any(|s| s.a.len() != na || s.b.len() != nb) {
            return Err(Error::Config("strategies disagree on the number of settings".into()));
        }
        if strategies.iter().any(|s| !s.weight.is_finite() || s.weight < 0.0) {
            return Err(Error::Config("strategy weights must be finite and non-negative".into()));
        }
        let total: f64 = strategies.iter().map(|s| s.weight).sum();
        if total <= 0.0 {
            return Err(Error::Config("strategy weights sum to zero".into()));
        }
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(strategies.len());
        for s in &mut strategies {
            s.weight /= total;
            acc += s.weight;
            cumulative.push(acc);
        }
        *cumulative.last_mut().expect("non-empty") = 1.0;
        Ok(LocalDetMixture { strategies, cumulative })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every deterministic strategy over `na` × `nb` settings, equally weighted.
    pub fn all_deterministic(na: usize, nb: usize) -> Vec<LocalStrategy> {
        let responses = |n: usize| -> Vec<Vec<Outcome>> {
            (0..1usize << n)
                .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { Outcome::Plus } else { Outcome::Minus }).collect())
                .collect()
        };
        let (ra, rb) = (responses(na), responses(nb));
        let mut out = Vec::with_capacity(ra.len() * rb.len());
        for a in &ra {
            for b in &rb {
                out.push(LocalStrategy { weight: 1.0, a: a.clone(), b: b.clone() });
            }
        }
        out
    }

    /// Random weights over a random subset of all deterministic strategies.
    pub fn random<R: Rng + ?Sized>(na: usize, nb: usize, rng: &mut R) -> Self {
        let mut strategies = Self::all_deterministic(na, nb);
        loop {
            for s in &mut strategies {
                s.weight = if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 };
            }
            if strategies.iter().any(|s| s.weight > 0.0) {
                break;
            }
        }
        strategies.retain(|s| s.weight > 0.0);
        Self::new(strategies).expect("non-empty positive weights")
    }

    pub fn strategies(&self) -> &[LocalStrategy] {
        &self.strategies
    }

    pub fn settings_a(&self) -> usize {
        self.strategies[0].a.len()
    }

    pub fn settings_b(&self) -> usize {
        self.strategies[0].b.len()
    }

    /// Outcome of strategy `index`. `None` marks an unmeasured wing.
    pub fn outcome(&self, index: usize, a: Option<usize>, b: Option<usize>) -> Result<OutcomePair> {
        let s = self.strategies.get(index).ok_or(Error::IndexOutOfRange {
            what: "mixture strategy",
            index,
            len: self.strategies.len(),
        })?;
        let pick = |v: &[Outcome], i: usize, what| {
            v.get(i).copied().ok_or(Error::IndexOutOfRange { what, index: i, len: v.len() })
        };
        Ok(OutcomePair {
            x: a.map(|i| pick(&s.a, i, "wing A setting")).transpose()?,
            y: b.map(|i| pick(&s.b, i, "wing B setting")).transpose()?,
        })
    }

    /// Strategy selected by a uniformly distributed λ. `λ_z` is uniform on
    /// `[−1, 1]` for uniform λ, so banding it by cumulative weight draws
    /// strategies with the mixture weights.
    pub fn strategy_for(&self, lambda: &UnitVector) -> usize {
        let u = ((lambda.z() + 1.0) / 2.0).clamp(0.0, 1.0);
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.strategies.len() - 1)
    }

    /// Exact `E[x·y]` at the setting pair `(a, b)`.
    pub fn exact_correlation(&self, a: usize, b: usize) -> f64 {
        self.strategies.iter().map(|s| s.weight * f64::from(s.a[a].value() * s.b[b].value())).sum()
    }
}

/// Index and direction of a setting; strategies respond to the index, the
/// geometric models to the direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SettingRef {
    pub index: usize,
    pub dir: UnitVector,
}

/// The model selected for a run.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Gr,
    Bell,
    Qm,
    LocalDet(LocalDetMixture),
}

impl Model {
    /// Parses `gr`, `bell`, `qm` or `localdet:<path to JSON>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gr" => Ok(Model::Gr),
            "bell" => Ok(Model::Bell),
            "qm" => Ok(Model::Qm),
            other => match other.strip_prefix("localdet:") {
                Some(path) => Ok(Model::LocalDet(LocalDetMixture::from_json_file(Path::new(path))?)),
                None => {
                    Err(Error::Config(format!("unknown model '{other}' (expected gr, bell, qm or localdet:<file>)")))
                }
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Gr => "gr",
            Model::Bell => "bell",
            Model::Qm => "qm",
            Model::LocalDet(_) => "localdet",
        }
    }

    /// Outcomes are a function of settings and λ alone.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Model::Qm)
    }

    /// Reproduces singlet statistics after averaging over λ.
    pub fn is_qm_equivalent(&self) -> bool {
        matches!(self, Model::Gr | Model::Bell | Model::Qm)
    }

    /// Joint-mode outcomes. `outcome_rng` is used only by the quantum oracle.
    pub fn joint_outcome<R: Rng + ?Sized>(
        &self,
        a: SettingRef,
        b: SettingRef,
        lambda: &UnitVector,
        tie: TieBreak,
        outcome_rng: &mut R,
    ) -> Result<(Outcome, Outcome)> {
        let ctx = MeasurementContext::Joint(a.dir, b.dir);
        let hidden = HiddenState(*lambda);
        let pair = match self {
            Model::Gr => gr_outcome(&ctx, &hidden, tie)?,
            Model::Bell => bell_outcome(&ctx, &hidden, tie)?,
            Model::Qm => {
                let (x, y) = qm_sample(&a.dir, &b.dir, outcome_rng);
                OutcomePair::joint(x, y)
            }
            Model::LocalDet(m) => m.outcome(m.strategy_for(lambda), Some(a.index), Some(b.index))?,
        };
        Ok((pair.x.expect("joint"), pair.y.expect("joint")))
    }

    /// Analytic `E[x·y]` where one is available.
    pub fn exact_correlation(&self, a: SettingRef, b: SettingRef) -> Option<f64> {
        match self {
            Model::Gr | Model::Bell | Model::Qm => Some(-a.dir.dot(&b.dir).clamp(-1.0, 1.0)),
            Model::LocalDet(m) => Some(m.exact_correlation(a.index, b.index)),
        }
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::parse(s)
    }
}

/// `E[sgn(u·λ)·sgn(v·λ)] = 1 − 2·angle(u, v)/π` for uniform λ.
pub fn sign_correlation(u: &UnitVector, v: &UnitVector) -> f64 {
    1.0 - 2.0 * angle_between(u, v).value() / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AngleRad;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn joint(a: UnitVector, b: UnitVector) -> MeasurementContext {
        MeasurementContext::Joint(a, b)
    }

    #[test]
    fn single_a_reads_raw_axis() {
        let out = gr_outcome(&MeasurementContext::SingleA(UnitVector::Z), &HiddenState(UnitVector::Z), TieBreak::Plus)
            .unwrap();
        assert_eq!(out, OutcomePair::only_x(Outcome::Plus));
    }

    #[test]
    fn joint_at_right_angle_uses_raw_axes() {
        let ctx = joint(UnitVector::Z, UnitVector::X);
        // λ = z sits on b's equator: tie-break decides y
        let out = gr_outcome(&ctx, &HiddenState(UnitVector::Z), TieBreak::Plus).unwrap();
        assert_eq!(out, OutcomePair::joint(Outcome::Plus, Outcome::Minus));
        assert!(matches!(
            gr_outcome(&ctx, &HiddenState(UnitVector::Z), TieBreak::Resample),
            Err(Error::SignUndefined(_))
        ));

        let lambda = UnitVector::new(0.1f64.sin(), 0.0, 0.1f64.cos()).unwrap();
        let out = gr_outcome(&ctx, &HiddenState(lambda), TieBreak::Resample).unwrap();
        assert_eq!(out, OutcomePair::joint(Outcome::Plus, Outcome::Minus));
    }

    #[test]
    fn joint_flips_a_inside_signaling_region() {
        // λ = z, a at 85° from λ, b between a⊥ and −a at ω = 3π/4
        let theta = 85f64.to_radians();
        let omega = 3.0 * PI / 4.0;
        let a = UnitVector::in_xz_plane(theta);
        let b = UnitVector::in_xz_plane(theta - omega);
        assert_abs_diff_eq!(angle_between(&a, &b).value(), omega, epsilon = 1e-12);
        let l = HiddenState(UnitVector::Z);
        let single = gr_outcome(&MeasurementContext::SingleA(a), &l, TieBreak::Resample).unwrap();
        let both = gr_outcome(&joint(a, b), &l, TieBreak::Resample).unwrap();
        assert_eq!(single.x, Some(Outcome::Plus));
        assert_eq!(both.x, Some(Outcome::Minus));
    }

    #[test]
    fn single_modes_ignore_the_other_wing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let l = crate::sampling::sample_sphere(&mut rng);
            let a = crate::sampling::sample_sphere(&mut rng);
            let b = crate::sampling::sample_sphere(&mut rng);
            let xa = gr_outcome(&MeasurementContext::SingleA(a), &HiddenState(l), TieBreak::Plus).unwrap();
            assert_eq!(xa.x, Some(sign(&a, &l, TieBreak::Plus).unwrap()));
            let yb = gr_outcome(&MeasurementContext::SingleB(b), &HiddenState(l), TieBreak::Plus).unwrap();
            assert_eq!(yb.y, Some(sign(&b, &l, TieBreak::Plus).unwrap().flip()));
        }
    }

    #[test]
    fn bell_variant_cases() {
        // ω = 0: no rotation, same as gr
        let l = HiddenState(UnitVector::new(0.3, -0.2, 0.9).unwrap());
        let ctx = joint(UnitVector::Z, UnitVector::Z);
        assert_eq!(bell_outcome(&ctx, &l, TieBreak::Plus).unwrap(), gr_outcome(&ctx, &l, TieBreak::Plus).unwrap());
        // ω = π/2, λ = b → y = −1
        let ctx = joint(UnitVector::Z, UnitVector::X);
        let out = bell_outcome(&ctx, &HiddenState(UnitVector::X), TieBreak::Plus).unwrap();
        assert_eq!(out.y, Some(Outcome::Minus));
        // ω = 2π/3 → angle(â′, b) = 3π/4, still on a's side in the xz-plane
        let b = UnitVector::in_xz_plane(2.0 * PI / 3.0);
        let a_eff = bell_axis(&UnitVector::Z, &b);
        assert_abs_diff_eq!(angle_between(&a_eff, &b).value(), 3.0 * PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a_eff.y(), 0.0, epsilon = 1e-15);
        assert!(a_eff.x() < 0.0);
    }

    #[test]
    fn qm_probability_values() {
        let z = UnitVector::Z;
        let pp = OutcomePair::joint(Outcome::Plus, Outcome::Plus);
        assert_eq!(qm_probability(&joint(z, z), &pp).unwrap(), 0.0);
        for x in [Outcome::Plus, Outcome::Minus] {
            for y in [Outcome::Plus, Outcome::Minus] {
                let p = qm_probability(&joint(z, UnitVector::X), &OutcomePair::joint(x, y)).unwrap();
                assert_abs_diff_eq!(p, 0.25, epsilon = 1e-16);
            }
        }
        assert_eq!(qm_probability(&MeasurementContext::SingleA(z), &OutcomePair::only_x(Outcome::Plus)).unwrap(), 0.5);
        assert!(qm_probability(&MeasurementContext::SingleA(z), &pp).is_err());
    }

    proptest! {
        #[test]
        fn qm_probability_normalizes(t in 0.0..PI, p in 0.0..2.0 * PI) {
            let ctx = joint(UnitVector::Z, UnitVector::from_spherical(t, p));
            let mut total = 0.0;
            for x in [Outcome::Plus, Outcome::Minus] {
                for y in [Outcome::Plus, Outcome::Minus] {
                    let q = qm_probability(&ctx, &OutcomePair::joint(x, y)).unwrap();
                    prop_assert!(q >= 0.0);
                    total += q;
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-15);
        }

        #[test]
        fn equal_settings_anticorrelate(lt in 0.0..PI, lp in 0.0..2.0 * PI, at in 0.0..PI, ap in 0.0..2.0 * PI) {
            let a = UnitVector::from_spherical(at, ap);
            let l = HiddenState(UnitVector::from_spherical(lt, lp));
            prop_assume!(a.dot(&l.0).abs() > 1e-9);
            let out = gr_outcome(&joint(a, a), &l, TieBreak::Plus).unwrap();
            prop_assert_eq!(out.x.unwrap(), out.y.unwrap().flip());
        }

        #[test]
        fn outcomes_are_pure(lt in 0.0..PI, lp in 0.0..2.0 * PI, w in 0.0..PI) {
            let l = HiddenState(UnitVector::from_spherical(lt, lp));
            let ctx = joint(UnitVector::Z, UnitVector::in_xz_plane(w));
            prop_assert_eq!(
                gr_outcome(&ctx, &l, TieBreak::Plus).unwrap(),
                gr_outcome(&ctx, &l, TieBreak::Plus).unwrap()
            );
            prop_assert_eq!(
                bell_outcome(&ctx, &l, TieBreak::Plus).unwrap(),
                bell_outcome(&ctx, &l, TieBreak::Plus).unwrap()
            );
        }
    }

    #[test]
    fn constant_strategy() {
        let m = LocalDetMixture::new(vec![LocalStrategy {
            weight: 1.0,
            a: vec![Outcome::Plus, Outcome::Plus],
            b: vec![Outcome::Minus, Outcome::Minus],
        }])
        .unwrap();
        for ai in 0..2 {
            for bi in 0..2 {
                assert_eq!(
                    m.outcome(0, Some(ai), Some(bi)).unwrap(),
                    OutcomePair::joint(Outcome::Plus, Outcome::Minus)
                );
            }
        }
        assert!(matches!(m.outcome(1, Some(0), Some(0)), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(m.outcome(0, Some(2), Some(0)), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn symmetric_constant_mixture_has_flat_marginal() {
        let m = LocalDetMixture::new(vec![
            LocalStrategy { weight: 0.5, a: vec![Outcome::Plus], b: vec![Outcome::Minus] },
            LocalStrategy { weight: 0.5, a: vec![Outcome::Minus], b: vec![Outcome::Plus] },
        ])
        .unwrap();
        let p_plus: f64 = m.strategies().iter().filter(|s| s.a[0] == Outcome::Plus).map(|s| s.weight).sum();
        assert_eq!(p_plus, 0.5);
        // bands: λ_z < 0 → first strategy, λ_z > 0 → second
        assert_eq!(m.strategy_for(&-UnitVector::Z), 0);
        assert_eq!(m.strategy_for(&UnitVector::Z), 1);
    }

    #[test]
    fn local_marginals_ignore_remote_setting() {
        // brute force over every deterministic strategy on a 2×2 grid
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = LocalDetMixture::random(2, 2, &mut rng);
            for ai in 0..2 {
                let p: Vec<f64> = (0..2)
                    .map(|bi| {
                        m.strategies()
                            .iter()
                            .enumerate()
                            .filter(|(k, _)| m.outcome(*k, Some(ai), Some(bi)).unwrap().x == Some(Outcome::Plus))
                            .map(|(_, s)| s.weight)
                            .sum()
                    })
                    .collect();
                assert_abs_diff_eq!(p[0], p[1], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn mixture_json_round_trip_and_validation() {
        let text = r#"{"strategies":[{"weight":2,"a":[1,-1],"b":[-1,-1]},{"weight":2,"a":[-1,1],"b":[1,1]}]}"#;
        let m: LocalDetMixture = serde_json::from_str(text).unwrap();
        assert_eq!(m.strategies()[0].weight, 0.5);
        let back: LocalDetMixture = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<LocalDetMixture>(r#"{"strategies":[]}"#).is_err());
        assert!(serde_json::from_str::<LocalDetMixture>(r#"{"strategies":[{"weight":1,"a":[0],"b":[1]}]}"#).is_err());
    }

    #[test]
    fn model_ids_parse() {
        assert_eq!(Model::parse("gr").unwrap(), Model::Gr);
        assert_eq!("qm".parse::<Model>().unwrap(), Model::Qm);
        assert!(Model::parse("nope").is_err());
        assert!(Model::parse("localdet:/does/not/exist.json").is_err());
    }

    #[test]
    fn sign_identity_matches_cosine_after_rotation() {
        // 1 − 2ω̂/π = cos ω: the closed form behind predictive equivalence
        for i in 0..=100 {
            let w = PI * i as f64 / 100.0;
            let wh = omega_hat(AngleRad::pair(w).unwrap()).unwrap().value();
            assert_abs_diff_eq!(1.0 - 2.0 * wh / PI, w.cos(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(sign_correlation(&UnitVector::Z, &UnitVector::X), 0.0, epsilon = 1e-15);
    }
}

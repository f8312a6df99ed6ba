//! Finite joint probability tables over `(A, B, C, X, Y, Z)` and the
//! conditional-independence checkers run against them.
//!
//! `A`, `B` are the wing settings, `C` the setting of the λ read-out (a
//! singleton for the shipped models), `X`, `Y` the outcomes and `Z` a cell
//! of a [`LambdaPartition`].
//!
//! Every checker compares two sides of one or more identities
//! `P(T | G) = rhs` over all conditioning assignments `g` of `G`, using the
//! total-variation distance. Tables built from samples carry their sample
//! count `N`; each conditioning event with `n = P(g)·N` samples is held to
//! `4·√(k/n)`, `k` the number of target values, and events with fewer than
//! [`MIN_EVENT_COUNT`] samples are skipped. Exact tables use [`EXACT_TOLERANCE`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_pair, UnitVector};
use crate::models::{bell_axis, LocalDetMixture, Model};
use crate::sampling::{fold_events, EventRecord, RunConfig, SettingsGrid};

pub const EXACT_TOLERANCE: f64 = 1e-9;
/// Conditioning events with probability at or below this are skipped in
/// exact tables.
pub const EXACT_FLOOR: f64 = 1e-12;
/// Floor `ε = MIN_EVENT_COUNT / N` for sampled tables.
pub const MIN_EVENT_COUNT: f64 = 10.0;
/// Multiplier `c` of the statistical tolerance `c·√(k/n)`.
pub const TOLERANCE_SIGMAS: f64 = 4.0;

/// `c·√(k/n)`.
pub fn statistical_tolerance(k: usize, n: f64) -> f64 {
    TOLERANCE_SIGMAS * (k as f64 / n).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    A,
    B,
    C,
    X,
    Y,
    Z,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::A, Var::B, Var::C, Var::X, Var::Y, Var::Z];

    fn idx(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["A", "B", "C", "X", "Y", "Z"][self.idx()]
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value index per variable, in `Var::ALL` order.
pub type Assignment = [usize; 6];

/// Labels used for the outcome alphabets `X` and `Y`.
pub const OUTCOME_LABELS: [&str; 2] = ["-1", "+1"];
/// Label of the singleton `C` alphabet.
pub const OBSERVE_LAMBDA: &str = "observe-lambda";

/// Joint distribution over `(A, B, C, X, Y, Z)`, stored row-major in that
/// variable order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableFile", into = "TableFile")]
pub struct JointTable {
    alphabets: [Vec<String>; 6],
    p: Vec<f64>,
    /// Sample count behind an empirical table; `None` for exact tables.
    samples: Option<u64>,
    strides: [usize; 6],
}

#[derive(Serialize, Deserialize)]
struct VariableFile {
    name: String,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    variables: Vec<VariableFile>,
    p: Vec<f64>,
    #[serde(default)]
    samples: Option<u64>,
}

impl TryFrom<TableFile> for JointTable {
    type Error = Error;

    fn try_from(f: TableFile) -> Result<Self> {
        if f.variables.len() != 6 {
            return Err(Error::Table(format!("expected 6 variables, got {}", f.variables.len())));
        }
        let mut alphabets: [Vec<String>; 6] = Default::default();
        for (slot, (v, var)) in alphabets.iter_mut().zip(f.variables.into_iter().zip(Var::ALL)) {
            if v.name != var.name() {
                return Err(Error::Table(format!("variable {} out of order (expected {var})", v.name)));
            }
            *slot = v.labels;
        }
        JointTable::new(alphabets, f.p, f.samples)
    }
}

impl From<JointTable> for TableFile {
    fn from(t: JointTable) -> Self {
        TableFile {
            variables: Var::ALL
                .iter()
                .zip(t.alphabets)
                .map(|(v, labels)| VariableFile { name: v.name().to_string(), labels })
                .collect(),
            p: t.p,
            samples: t.samples,
        }
    }
}

fn strides_for(sizes: [usize; 6]) -> [usize; 6] {
    let mut strides = [1usize; 6];
    for i in (0..5).rev() {
        strides[i] = strides[i + 1] * sizes[i + 1];
    }
    strides
}

/// Visits every assignment of `vars`, keeping the other coordinates of `base`.
fn odometer(vars: &[Var], sizes: &[usize; 6], base: Assignment, mut f: impl FnMut(&Assignment)) {
    let mut a = base;
    for v in vars {
        a[v.idx()] = 0;
    }
    loop {
        f(&a);
        let mut k = vars.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            let i = vars[k].idx();
            a[i] += 1;
            if a[i] < sizes[i] {
                break;
            }
            a[i] = 0;
        }
    }
}

fn union(a: &[Var], b: &[Var]) -> Vec<Var> {
    let set: BTreeSet<Var> = a.iter().chain(b).copied().collect();
    set.into_iter().collect()
}

/// A marginal over a subset of the variables, addressed by full assignments.
#[derive(Clone, Debug)]
pub struct Marginal {
    vars: Vec<Var>,
    strides: [usize; 6],
    p: Vec<f64>,
}

impl Marginal {
    pub fn get(&self, a: &Assignment) -> f64 {
        let idx: usize = self.vars.iter().map(|v| a[v.idx()] * self.strides[v.idx()]).sum();
        self.p[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// A normalized distribution over the values of `targets`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub targets: Vec<Var>,
    pub p: Vec<f64>,
}

impl JointTable {
    pub fn new(alphabets: [Vec<String>; 6], p: Vec<f64>, samples: Option<u64>) -> Result<Self> {
        let sizes = alphabets.each_ref().map(Vec::len);
        if let Some(v) = Var::ALL.iter().find(|v| sizes[v.idx()] == 0) {
            return Err(Error::Table(format!("variable {v} has an empty alphabet")));
        }
        let len: usize = sizes.iter().product();
        if p.len() != len {
            return Err(Error::Table(format!("expected {len} probabilities, got {}", p.len())));
        }
        if p.iter().any(|&q| !q.is_finite() || q < 0.0) {
            return Err(Error::Table("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Table(format!("probabilities sum to {total}, not 1")));
        }
        if samples == Some(0) {
            return Err(Error::Table("sample count must be positive".into()));
        }
        Ok(JointTable { alphabets, p, samples, strides: strides_for(sizes) })
    }

    /// Exact table from unnormalized weights `f(assignment)`.
    pub fn from_fn(alphabets: [Vec<String>; 6], f: impl Fn(&Assignment) -> f64) -> Result<Self> {
        let sizes = alphabets.each_ref().map(Vec::len);
        let len: usize = sizes.iter().product();
        let strides = strides_for(sizes);
        let mut p: Vec<f64> = (0..len)
            .map(|i| {
                let a: Assignment = std::array::from_fn(|k| i / strides[k] % sizes[k]);
                f(&a)
            })
            .collect();
        let total: f64 = p.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Table(format!("weights sum to {total}")));
        }
        p.iter_mut().for_each(|q| *q /= total);
        JointTable::new(alphabets, p, None)
    }

    /// Alphabets `a0…`, `b0…`, a singleton `C`, `±1` outcomes and `z0…`.
    pub fn standard_alphabets(na: usize, nb: usize, nc: usize, nz: usize) -> [Vec<String>; 6] {
        let labels = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let c = if nc == 1 { vec![OBSERVE_LAMBDA.to_string()] } else { labels("c", nc) };
        [
            labels("a", na),
            labels("b", nb),
            c,
            OUTCOME_LABELS.iter().map(|s| s.to_string()).collect(),
            OUTCOME_LABELS.iter().map(|s| s.to_string()).collect(),
            labels("z", nz),
        ]
    }

    pub fn alphabet(&self, v: Var) -> &[String] {
        &self.alphabets[v.idx()]
    }

    pub fn size(&self, v: Var) -> usize {
        self.alphabets[v.idx()].len()
    }

    pub fn sizes(&self) -> [usize; 6] {
        self.alphabets.each_ref().map(Vec::len)
    }

    pub fn samples(&self) -> Option<u64> {
        self.samples
    }

    pub fn is_exact(&self) -> bool {
        self.samples.is_none()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn label_index(&self, v: Var, label: &str) -> Option<usize> {
        self.alphabet(v).iter().position(|l| l == label)
    }

    pub fn prob(&self, a: &Assignment) -> f64 {
        self.p[self.index(a)]
    }

    fn index(&self, a: &Assignment) -> usize {
        a.iter().zip(self.strides).map(|(x, s)| x * s).sum()
    }

    fn decode(&self, mut i: usize) -> Assignment {
        let sizes = self.sizes();
        let mut a = [0; 6];
        for k in (0..6).rev() {
            a[k] = i % sizes[k];
            i /= sizes[k];
        }
        a
    }

    pub fn marginal(&self, vars: &[Var]) -> Marginal {
        let vars = union(vars, &[]);
        let sizes = self.sizes();
        let mut strides = [0usize; 6];
        let mut len = 1;
        for v in vars.iter().rev() {
            strides[v.idx()] = len;
            len *= sizes[v.idx()];
        }
        let mut p = vec![0.0; len];
        for (i, &q) in self.p.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let a = self.decode(i);
            let idx: usize = vars.iter().map(|v| a[v.idx()] * strides[v.idx()]).sum();
            p[idx] += q;
        }
        Marginal { vars, strides, p }
    }

    /// `P(targets | givens = assignment)`.
    pub fn conditional(&self, targets: &[Var], givens: &[(Var, usize)]) -> Result<Distribution> {
        let targets = union(targets, &[]);
        let given_vars: Vec<Var> = givens.iter().map(|(v, _)| *v).collect();
        if let Some(v) = targets.iter().find(|v| given_vars.contains(v)) {
            return Err(Error::Table(format!("{v} is both a target and a given")));
        }
        let sizes = self.sizes();
        let mut base = [0; 6];
        for &(v, i) in givens {
            if i >= sizes[v.idx()] {
                return Err(Error::IndexOutOfRange { what: "table value", index: i, len: sizes[v.idx()] });
            }
            base[v.idx()] = i;
        }
        let den = self.marginal(&given_vars).get(&base);
        if den.is_nan() || den <= 0.0 {
            let desc: Vec<String> = givens.iter().map(|(v, i)| format!("{v}={}", self.alphabet(*v)[*i])).collect();
            return Err(Error::ZeroConditioningEvent(desc.join(", ")));
        }
        let num = self.marginal(&union(&targets, &given_vars));
        let mut p = Vec::new();
        odometer(&targets, &sizes, base, |a| p.push(num.get(a) / den));
        Ok(Distribution { targets, p })
    }

    fn describe(&self, vars: &[Var], a: &Assignment) -> BTreeMap<String, String> {
        vars.iter().map(|v| (v.name().to_string(), self.alphabet(*v)[a[v.idx()]].clone())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintId {
    #[serde(rename = "FR")]
    Fr,
    #[serde(rename = "NS")]
    NsFull,
    #[serde(rename = "FW")]
    Fw,
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "NS_weak")]
    NsWeak,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "OI")]
    Oi,
    #[serde(rename = "B-Loc")]
    BLoc,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 8] = [
        ConstraintId::Fr,
        ConstraintId::NsFull,
        ConstraintId::Fw,
        ConstraintId::St,
        ConstraintId::NsWeak,
        ConstraintId::Pi,
        ConstraintId::Oi,
        ConstraintId::BLoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintId::Fr => "FR",
            ConstraintId::NsFull => "NS",
            ConstraintId::Fw => "FW",
            ConstraintId::St => "ST",
            ConstraintId::NsWeak => "NS_weak",
            ConstraintId::Pi => "PI",
            ConstraintId::Oi => "OI",
            ConstraintId::BLoc => "B-Loc",
        }
    }

    pub fn check(self, t: &JointTable) -> Result<ConstraintReport> {
        match self {
            ConstraintId::Fr => check_fr(t),
            ConstraintId::NsFull => check_ns_full(t),
            ConstraintId::Fw => check_fw(t),
            ConstraintId::St => check_st(t),
            ConstraintId::NsWeak => check_ns_weak(t),
            ConstraintId::Pi => check_pi(t),
            ConstraintId::Oi => check_oi(t),
            ConstraintId::BLoc => check_bloc(t),
        }
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one checker.
///
/// `max_deviation`, `tolerance` and `witness` describe the conditioning
/// event that came closest to (or furthest past) its tolerance, so
/// `pass == (max_deviation <= tolerance)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub id: ConstraintId,
    pub pass: bool,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub witness: BTreeMap<String, String>,
    pub skipped_cells: usize,
    pub evaluated_cells: usize,
    /// The identity the witness belongs to.
    pub identity: String,
}

enum Rhs {
    Conditional(Vec<Var>),
    Product(Vec<(Vec<Var>, Vec<Var>)>),
}

struct Identity {
    label: &'static str,
    targets: Vec<Var>,
    givens: Vec<Var>,
    rhs: Rhs,
}

fn cond(label: &'static str, targets: &[Var], givens: &[Var], rhs_givens: &[Var]) -> Identity {
    Identity { label, targets: targets.to_vec(), givens: givens.to_vec(), rhs: Rhs::Conditional(rhs_givens.to_vec()) }
}

struct Worst {
    ratio: f64,
    deviation: f64,
    tolerance: f64,
    witness: BTreeMap<String, String>,
    identity: &'static str,
}

fn evaluate(t: &JointTable, id: ConstraintId, identities: &[Identity]) -> Result<ConstraintReport> {
    let sizes = t.sizes();
    let n_total = t.samples.map(|n| n as f64);
    let mut worst: Option<Worst> = None;
    let mut skipped = 0;
    let mut evaluated = 0;

    for ident in identities {
        let lhs_num = t.marginal(&union(&ident.targets, &ident.givens));
        let lhs_den = t.marginal(&ident.givens);
        let rhs: Vec<(Marginal, Marginal)> = match &ident.rhs {
            Rhs::Conditional(h) => vec![(t.marginal(&union(&ident.targets, h)), t.marginal(h))],
            Rhs::Product(parts) => parts.iter().map(|(tv, h)| (t.marginal(&union(tv, h)), t.marginal(h))).collect(),
        };
        let k: usize = ident.targets.iter().map(|v| sizes[v.idx()]).product();

        odometer(&ident.givens, &sizes, [0; 6], |g| {
            let pg = lhs_den.get(g);
            let (keep, tol) = match n_total {
                None => (pg > EXACT_FLOOR, EXACT_TOLERANCE),
                Some(n) => {
                    let count = pg * n;
                    (count >= MIN_EVENT_COUNT, statistical_tolerance(k, count))
                }
            };
            if !keep {
                // impossible events are not data; only thin ones are reported
                if pg > 0.0 {
                    skipped += 1;
                }
                return;
            }
            evaluated += 1;
            let mut l1 = 0.0;
            odometer(&ident.targets, &sizes, *g, |a| {
                let lhs = lhs_num.get(a) / pg;
                let rhs: f64 = rhs.iter().map(|(num, den)| num.get(a) / den.get(a)).product();
                l1 += (lhs - rhs).abs();
            });
            let deviation = l1 / 2.0;
            let ratio = deviation / tol;
            if worst.as_ref().is_none_or(|w| ratio > w.ratio) {
                worst = Some(Worst {
                    ratio,
                    deviation,
                    tolerance: tol,
                    witness: t.describe(&ident.givens, g),
                    identity: ident.label,
                });
            }
        });
    }

    let w = worst.ok_or_else(|| Error::AllConditioningEventsEmpty(id.name().to_string()))?;
    Ok(ConstraintReport {
        id,
        pass: w.deviation <= w.tolerance,
        max_deviation: w.deviation,
        tolerance: w.tolerance,
        witness: w.witness,
        skipped_cells: skipped,
        evaluated_cells: evaluated,
        identity: w.identity.to_string(),
    })
}

use Var::{A, B, C, X, Y, Z};

/// Free choice of all three settings.
pub fn check_fr(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::Fr,
        &[
            cond("P(A|BCYZ) = P(A)", &[A], &[B, C, Y, Z], &[]),
            cond("P(B|ACXZ) = P(B)", &[B], &[A, C, X, Z], &[]),
            cond("P(C|ABXY) = P(C)", &[C], &[A, B, X, Y], &[]),
        ],
    )
}

/// The non-signalling triple implied by free choice.
pub fn check_ns_full(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::NsFull,
        &[
            cond("P(YZ|ABC) = P(YZ|BC)", &[Y, Z], &[A, B, C], &[B, C]),
            cond("P(XZ|ABC) = P(XZ|AC)", &[X, Z], &[A, B, C], &[A, C]),
            cond("P(XY|ABC) = P(XY|AB)", &[X, Y], &[A, B, C], &[A, B]),
        ],
    )
}

/// Each setting independent of the other setting and of λ.
pub fn check_fw(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::Fw,
        &[cond("P(A|BZ) = P(A)", &[A], &[B, Z], &[]), cond("P(B|AZ) = P(B)", &[B], &[A, Z], &[])],
    )
}

/// The read-out of λ unaffected by settings and outcomes.
pub fn check_st(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(t, ConstraintId::St, &[cond("P(CZ|ABXY) = P(CZ)", &[C, Z], &[A, B, X, Y], &[])])
}

/// Operational no-signalling, without λ.
pub fn check_ns_weak(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::NsWeak,
        &[cond("P(X|AB) = P(X|A)", &[X], &[A, B], &[A]), cond("P(Y|AB) = P(Y|B)", &[Y], &[A, B], &[B])],
    )
}

/// Parameter independence.
pub fn check_pi(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::Pi,
        &[cond("P(X|ABZ) = P(X|AZ)", &[X], &[A, B, Z], &[A, Z]), cond("P(Y|ABZ) = P(Y|BZ)", &[Y], &[A, B, Z], &[B, Z])],
    )
}

/// Outcome independence.
pub fn check_oi(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::Oi,
        &[
            cond("P(X|ABYZ) = P(X|ABZ)", &[X], &[A, B, Y, Z], &[A, B, Z]),
            cond("P(Y|ABXZ) = P(Y|ABZ)", &[Y], &[A, B, X, Z], &[A, B, Z]),
        ],
    )
}

/// Bell locality: `P(XY|ABZ) = P(X|AZ)·P(Y|BZ)`.
pub fn check_bloc(t: &JointTable) -> Result<ConstraintReport> {
    evaluate(
        t,
        ConstraintId::BLoc,
        &[Identity {
            label: "P(XY|ABZ) = P(X|AZ) P(Y|BZ)",
            targets: vec![X, Y],
            givens: vec![A, B, Z],
            rhs: Rhs::Product(vec![(vec![X], vec![A, Z]), (vec![Y], vec![B, Z])]),
        }],
    )
}

pub fn check_all(t: &JointTable) -> Result<Vec<ConstraintReport>> {
    ConstraintId::ALL.iter().map(|id| id.check(t)).collect()
}

/// Disjoint cells covering S², used to discretize λ into `Z`.
#[derive(Clone, Debug, PartialEq)]
pub enum LambdaPartition {
    /// One cell: λ unobserved.
    Trivial,
    /// Cells of constant sign against each axis (at most 64 axes).
    SignCells(Vec<UnitVector>),
    /// The strategy a mixture assigns to λ.
    Strategies(LocalDetMixture),
    Octants,
}

impl LambdaPartition {
    /// Sign cells against the given axes, deduplicated up to sign.
    pub fn sign_cells(axes: impl IntoIterator<Item = UnitVector>) -> Result<Self> {
        let mut kept: Vec<UnitVector> = Vec::new();
        for axis in axes {
            if !kept.iter().any(|k| k.dot(&axis).abs() > 1.0 - 1e-12) {
                kept.push(axis);
            }
        }
        if kept.len() > 64 {
            return Err(Error::Config(format!("{} distinct axes exceed the 64-axis sign-cell limit", kept.len())));
        }
        Ok(LambdaPartition::SignCells(kept))
    }

    /// Every axis an outcome of `model` can depend on over `grid`: the raw
    /// settings plus the rotated joint-mode axes of every setting pair.
    pub fn effective_axes(model: &Model, grid: &SettingsGrid) -> Vec<UnitVector> {
        let mut axes: Vec<UnitVector> = grid.a.iter().chain(&grid.b).map(|s| s.dir).collect();
        for sa in &grid.a {
            for sb in &grid.b {
                match model {
                    Model::Bell => axes.push(bell_axis(&sa.dir, &sb.dir)),
                    _ => {
                        let (ah, bh) = rotate_pair(&sa.dir, &sb.dir);
                        axes.push(ah);
                        axes.push(bh);
                    }
                }
            }
        }
        axes
    }

    /// Sign cells for geometric models, strategy bands for mixtures.
    pub fn default_for(model: &Model, grid: &SettingsGrid) -> Result<Self> {
        match model {
            Model::LocalDet(m) => Ok(LambdaPartition::Strategies(m.clone())),
            other => Self::sign_cells(Self::effective_axes(other, grid)),
        }
    }

    pub fn cell(&self, lambda: &UnitVector) -> u64 {
        match self {
            LambdaPartition::Trivial => 0,
            LambdaPartition::SignCells(axes) => {
                axes.iter().enumerate().fold(0u64, |acc, (i, ax)| acc | u64::from(ax.dot(lambda) > 0.0) << i)
            }
            LambdaPartition::Strategies(m) => m.strategy_for(lambda) as u64,
            LambdaPartition::Octants => {
                u64::from(lambda.x() > 0.0) | u64::from(lambda.y() > 0.0) << 1 | u64::from(lambda.z() > 0.0) << 2
            }
        }
    }

    pub fn label(&self, cell: u64) -> String {
        match self {
            LambdaPartition::Trivial => "all".to_string(),
            LambdaPartition::SignCells(axes) => {
                (0..axes.len()).map(|i| if cell >> i & 1 == 1 { '+' } else { '-' }).collect()
            }
            LambdaPartition::Strategies(_) => format!("s{cell}"),
            LambdaPartition::Octants => format!("o{cell}"),
        }
    }
}

/// Mergeable event counts keyed by `(a, b, x, y, cell)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableCounts {
    counts: BTreeMap<(usize, usize, usize, usize, u64), u64>,
    total: u64,
}

impl TableCounts {
    pub fn add(&mut self, e: &EventRecord, partition: &LambdaPartition) {
        let key = (e.a, e.b, e.x.index(), e.y.index(), partition.cell(&e.lambda));
        *self.counts.entry(key).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn merge(mut self, other: TableCounts) -> TableCounts {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self.total += other.total;
        self
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Normalizes the counts. `Z` ranges over the observed cells in id order.
    pub fn into_table(self, grid: &SettingsGrid, partition: &LambdaPartition) -> Result<JointTable> {
        if self.total == 0 {
            return Err(Error::EmptyStream);
        }
        let cells: Vec<u64> = self.counts.keys().map(|k| k.4).collect::<BTreeSet<_>>().into_iter().collect();
        let alphabets = [
            grid.a.iter().map(|s| s.label.clone()).collect(),
            grid.b.iter().map(|s| s.label.clone()).collect(),
            vec![OBSERVE_LAMBDA.to_string()],
            OUTCOME_LABELS.iter().map(|s| s.to_string()).collect(),
            OUTCOME_LABELS.iter().map(|s| s.to_string()).collect(),
            cells.iter().map(|&c| partition.label(c)).collect::<Vec<_>>(),
        ];
        let sizes = alphabets.each_ref().map(Vec::len);
        let strides = strides_for(sizes);
        let mut p = vec![0.0; sizes.iter().product()];
        let n = self.total as f64;
        for ((a, b, x, y, cell), count) in self.counts {
            let z = cells.binary_search(&cell).expect("cell collected above");
            let idx = a * strides[0] + b * strides[1] + x * strides[3] + y * strides[4] + z * strides[5];
            p[idx] = count as f64 / n;
        }
        JointTable::new(alphabets, p, Some(self.total))
    }
}

/// Empirical table from an event stream.
pub fn build_table(
    events: impl IntoIterator<Item = Result<EventRecord>>,
    grid: &SettingsGrid,
    partition: &LambdaPartition,
) -> Result<JointTable> {
    let mut counts = TableCounts::default();
    for e in events {
        counts.add(&e?, partition);
    }
    counts.into_table(grid, partition)
}

/// Runs `cfg` in parallel and accumulates its table without keeping events.
pub fn build_table_from_run(cfg: &RunConfig, partition: &LambdaPartition) -> Result<JointTable> {
    let counts = fold_events(
        cfg,
        TableCounts::default,
        |mut c, e| {
            c.add(e, partition);
            c
        },
        TableCounts::merge,
    )?;
    counts.into_table(&cfg.grid, partition)
}

/// What the generating model is declared to be.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTraits {
    pub deterministic: bool,
    pub qm_equivalent: bool,
}

impl From<&Model> for ModelTraits {
    fn from(m: &Model) -> Self {
        ModelTraits { deterministic: m.is_deterministic(), qm_equivalent: m.is_qm_equivalent() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AuditStatus {
    Consistent,
    Inconsistent,
}

/// Largest CHSH value over all 2×2 sub-grids of the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableChsh {
    pub value: f64,
    pub tolerance: f64,
    pub settings: [String; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub status: AuditStatus,
    pub reports: Vec<ConstraintReport>,
    pub chsh: Option<TableChsh>,
    /// Whether the deterministic-completion chain (deterministic and
    /// Bell-violating ⇒ PI fails) applied to this table.
    pub pi_chain_applies: bool,
    pub findings: Vec<String>,
}

impl AuditReport {
    pub fn report(&self, id: ConstraintId) -> Option<&ConstraintReport> {
        self.reports.iter().find(|r| r.id == id)
    }
}

/// `max |E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)|` from `P(XY|AB)`.
pub fn table_chsh(t: &JointTable) -> Option<TableChsh> {
    let (na, nb) = (t.size(A), t.size(B));
    if na < 2 || nb < 2 {
        return None;
    }
    let pab = t.marginal(&[A, B]);
    let pxyab = t.marginal(&[A, B, X, Y]);
    let sizes = t.sizes();
    let mut e = vec![vec![0.0; nb]; na];
    let mut n = vec![vec![0.0; nb]; na];
    for ai in 0..na {
        for bi in 0..nb {
            let mut g = [0; 6];
            g[0] = ai;
            g[1] = bi;
            let den = pab.get(&g);
            n[ai][bi] = den * t.samples.map_or(f64::INFINITY, |s| s as f64);
            if den > 0.0 {
                let mut corr = 0.0;
                odometer(&[X, Y], &sizes, g, |a| {
                    let xy = if a[3] == a[4] { 1.0 } else { -1.0 };
                    corr += xy * pxyab.get(a) / den;
                });
                e[ai][bi] = corr;
            }
        }
    }
    let mut best: Option<TableChsh> = None;
    for a0 in 0..na {
        for a1 in (0..na).filter(|&i| i != a0) {
            for b0 in 0..nb {
                for b1 in (0..nb).filter(|&i| i != b0) {
                    if [n[a0][b0], n[a0][b1], n[a1][b0], n[a1][b1]].contains(&0.0) {
                        continue;
                    }
                    let s = (e[a0][b0] - e[a0][b1] + e[a1][b0] + e[a1][b1]).abs();
                    if best.as_ref().is_none_or(|b| s > b.value) {
                        let tolerance = if t.is_exact() {
                            EXACT_TOLERANCE
                        } else {
                            let var: f64 = [n[a0][b0], n[a0][b1], n[a1][b0], n[a1][b1]].iter().map(|c| 1.0 / c).sum();
                            TOLERANCE_SIGMAS * var.sqrt()
                        };
                        best = Some(TableChsh {
                            value: s,
                            tolerance,
                            settings: [
                                t.alphabet(A)[a0].clone(),
                                t.alphabet(A)[a1].clone(),
                                t.alphabet(B)[b0].clone(),
                                t.alphabet(B)[b1].clone(),
                            ],
                        });
                    }
                }
            }
        }
    }
    best
}

/// Smallest PI deviation compatible with the CHSH excess when OI holds.
///
/// With outcomes independent given λ, swapping each `P(X|ABZ)` for
/// `P(X|AZ)` (and likewise for `Y`) moves every correlator by at most
/// `4δ`, where δ is the PI deviation, and the swapped model obeys CHSH.
/// Hence `S ≤ 2 + 16δ`.
pub fn pi_floor(c: &TableChsh) -> f64 {
    ((c.value - 2.0 - c.tolerance) / 16.0).max(0.0)
}

/// Runs every checker and cross-checks the results:
///
/// * `FW ∧ NS_weak ∧ ST ⇒ FR`: if the three premises pass, FR may not fail
///   beyond the combined tolerance.
/// * For a model declared deterministic and quantum-equivalent whose table
///   violates CHSH, Bell locality is impossible while OI holds, so the PI
///   deviation must reach [`pi_floor`]. A PI pass on a table too thin to
///   resolve that floor is not a finding.
pub fn audit_implications(t: &JointTable, traits: ModelTraits) -> Result<AuditReport> {
    let reports = check_all(t)?;
    let get = |id| reports.iter().find(|r: &&ConstraintReport| r.id == id).expect("all checkers ran");
    let (fr, fw, ns, st) =
        (get(ConstraintId::Fr), get(ConstraintId::Fw), get(ConstraintId::NsWeak), get(ConstraintId::St));
    let mut findings = Vec::new();

    if fw.pass && ns.pass && st.pass {
        let combined = fr.tolerance + fw.tolerance + ns.tolerance + st.tolerance;
        if fr.max_deviation > combined {
            findings.push(format!(
                "FW, NS_weak and ST hold but FR deviates by {:.3e} (> {:.3e}) at {:?}",
                fr.max_deviation, combined, fr.witness
            ));
        }
    }

    let chsh = table_chsh(t);
    let violates_chsh = chsh.as_ref().is_some_and(|c| c.value > 2.0 + c.tolerance);
    let pi_chain_applies = traits.deterministic && traits.qm_equivalent && violates_chsh;
    if pi_chain_applies {
        let (pi, oi) = (get(ConstraintId::Pi), get(ConstraintId::Oi));
        let floor = pi_floor(chsh.as_ref().expect("violation implies a value"));
        if pi.max_deviation + pi.tolerance < floor {
            findings.push(format!(
                "CHSH violation forces a PI deviation of at least {floor:.3e}, found {:.3e}",
                pi.max_deviation
            ));
        }
        if !oi.pass {
            findings.push(format!(
                "model declared deterministic but OI fails by {:.3e} at {:?}",
                oi.max_deviation, oi.witness
            ));
        }
    }

    Ok(AuditReport {
        status: if findings.is_empty() { AuditStatus::Consistent } else { AuditStatus::Inconsistent },
        reports,
        chsh,
        pi_chain_applies,
        findings,
    })
}

/// Audit when λ is inaccessible: only the checker that never mentions `Z`.
pub fn audit_z_free(t: &JointTable) -> Result<AuditReport> {
    Ok(AuditReport {
        status: AuditStatus::Consistent,
        reports: vec![check_ns_weak(t)?],
        chsh: table_chsh(t),
        pi_chain_applies: false,
        findings: Vec::new(),
    })
}

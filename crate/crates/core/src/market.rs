//! Finite probability-space markets under the reference martingale measure,
//! moment-constraint uncertainty sets and the Gauss–Hermite discretisation of
//! a lognormal terminal price.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpStatus, StandardLp};
use crate::numeric::{weighted_sum, KahanSum};

/// Probabilities below this are rejected in user-supplied markets.
pub const MIN_PROB: f64 = 1e-14;
/// Absolute tolerance on `Σ p_i = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Default strict-feasibility threshold (relative to `1 + |a_λ|`).
pub const STRICT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceObservable {
    pub initial: f64,
    pub tolerance: f64,
}

/// A finite probability space `(Ω, ℙ)` with named observables `h_λ(ω_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMarket {
    probs: Vec<f64>,
    observables: BTreeMap<String, Vec<f64>>,
    prices: BTreeMap<String, PriceObservable>,
}

impl FiniteMarket {
    pub fn new(probs: Vec<f64>, observables: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= MIN_PROB)) {
            return Err(Error::validation(format!(
                "probs must be positive (at least {MIN_PROB:e}); probs[{i}] = {p}"
            )));
        }
        Self::build(probs, observables)
    }

    /// Like `new` but accepts any strictly positive weights (quadrature markets
    /// carry exact, tiny tail weights).
    pub(crate) fn from_weights(probs: Vec<f64>, observables: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
            return Err(Error::validation(format!("probs must be positive; probs[{i}] = {p}")));
        }
        Self::build(probs, observables)
    }

    fn build(probs: Vec<f64>, observables: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::validation("market needs at least one state"));
        }
        let total = probs.iter().copied().collect::<KahanSum>().total();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::validation(format!("probs must sum to 1 (sum = {total})")));
        }
        let n = probs.len();
        for (id, v) in &observables {
            if v.len() != n {
                return Err(Error::validation(format!(
                    "observable '{id}' has {} values, expected {n}",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::validation(format!("observable '{id}' has a non-finite value at state {i}")));
            }
        }
        Ok(Self {
            probs,
            observables,
            prices: BTreeMap::new(),
        })
    }

    /// Marks an observable as a traded price whose ℙ-expectation must equal `initial`.
    pub fn with_price(mut self, id: &str, initial: f64, tolerance: f64) -> Result<Self> {
        let h = self.observable(id)?;
        let mean = weighted_sum(&self.probs, h);
        if (mean - initial).abs() > tolerance {
            return Err(Error::validation(format!(
                "price observable '{id}' has E[{id}] = {mean} but initial value {initial} (tolerance {tolerance:e}); ℙ must be a martingale measure"
            )));
        }
        self.prices
            .insert(id.to_string(), PriceObservable { initial, tolerance });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn observables(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.observables
    }

    pub fn prices(&self) -> &BTreeMap<String, PriceObservable> {
        &self.prices
    }

    pub fn observable(&self, id: &str) -> Result<&[f64]> {
        self.observables
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::validation(format!("undeclared observable '{id}'")))
    }

    /// `E[values] = Σ p_i values_i`, compensated, in fixed state order.
    pub fn expectation(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(weighted_sum(&self.probs, values))
    }

    /// Unchecked `E[values]` for internal hot loops.
    #[inline]
    pub(crate) fn mean(&self, values: &[f64]) -> f64 {
        weighted_sum(&self.probs, values)
    }

    /// `E[f(i)]` over states.
    #[inline]
    pub(crate) fn mean_by<F: FnMut(usize) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = KahanSum::new();
        for (i, p) in self.probs.iter().enumerate() {
            acc.add(p * f(i));
        }
        acc.total()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    /// `E[Z·h] ≥ a`
    Ge,
    /// `E[Z·h] = a`
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub observable: String,
    pub kind: ConstraintKind,
    pub bound: f64,
}

/// A constraint with its observable vector looked up.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConstraint {
    pub h: Vec<f64>,
    pub kind: ConstraintKind,
    pub bound: f64,
}

/// Moment constraints `E[Z·h_λ] ≥ a_λ` (or `=`) defining the density polytope.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintSet {
    items: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(items: Vec<Constraint>) -> Self {
        Self { items }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ge(mut self, observable: &str, bound: f64) -> Self {
        self.items.push(Constraint {
            observable: observable.to_string(),
            kind: ConstraintKind::Ge,
            bound,
        });
        self
    }

    pub fn eq(mut self, observable: &str, bound: f64) -> Self {
        self.items.push(Constraint {
            observable: observable.to_string(),
            kind: ConstraintKind::Eq,
            bound,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Constraint] {
        &self.items
    }

    pub fn validate(&self, market: &FiniteMarket) -> Result<()> {
        let mut eq = 0;
        for c in &self.items {
            if !market.observables.contains_key(&c.observable) {
                return Err(Error::validation(format!(
                    "constraint references undeclared observable '{}'",
                    c.observable
                )));
            }
            if !c.bound.is_finite() {
                return Err(Error::validation(format!("bound for '{}' is not finite", c.observable)));
            }
            if c.kind == ConstraintKind::Eq {
                eq += 1;
            }
        }
        if eq > market.n().saturating_sub(1) {
            return Err(Error::validation(format!(
                "{eq} equality constraints on a {}-state market (at most n-1 allowed)",
                market.n()
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, market: &FiniteMarket) -> Result<Vec<ResolvedConstraint>> {
        self.validate(market)?;
        self.items
            .iter()
            .map(|c| {
                Ok(ResolvedConstraint {
                    h: market.observable(&c.observable)?.to_vec(),
                    kind: c.kind,
                    bound: c.bound,
                })
            })
            .collect()
    }
}

/// Lognormal terminal price `S_T = s0·exp(−σ²T/2 + σW_T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalSpec {
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub s0: f64,
    pub nodes: usize,
}

impl LognormalSpec {
    pub fn new(sigma: f64, t: f64, s0: f64, nodes: usize) -> Result<Self> {
        let spec = Self { sigma, t, s0, nodes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.t > 0.0 && self.s0 > 0.0) {
            return Err(Error::validation("lognormal spec needs sigma, T, s0 > 0"));
        }
        if self.nodes < 2 {
            return Err(Error::validation("lognormal spec needs at least 2 nodes"));
        }
        Ok(())
    }
}

/// Observable id carried by quadrature markets.
pub const TERMINAL_PRICE: &str = "S_T";

/// Gauss–Hermite nodes and weights for `∫ f(x) e^{−x²} dx` (ascending nodes).
/// Nodes come from the eigenvalues of the Jacobi matrix and are polished by
/// Newton steps on the orthonormal recurrence, which also yields the weights
/// with full relative accuracy in the tails.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    roots.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    // returns (p_n(z), p_n'(z)) for the orthonormal Hermite recurrence
    let eval = |z: f64| {
        let mut p1 = PIM4;
        let mut p2 = 0.0;
        for j in 0..n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        }
        (p1, (2.0 * nf).sqrt() * p2)
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // polish the nonnegative root and mirror it
        let mut z = roots[n - 1 - i].abs();
        let mut pp = eval(z).1;
        for _ in 0..4 {
            let (p, dp) = eval(z);
            pp = dp;
            let step = p / dp;
            z -= step;
            if step.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == half - 1 {
            z = 0.0;
            pp = eval(0.0).1;
        }
        x[n - 1 - i] = z;
        x[i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature market for the lognormal terminal price: state `i` carries
/// `S_T = s0·exp(−σ²T/2 + σ√T·z_i)` with `z_i = √2·x_i` and probability `w_i/√π`
/// renormalised to sum to one. With 16 or more nodes `S_T` is flagged as a price.
pub fn gauss_hermite_market(spec: &LognormalSpec) -> Result<FiniteMarket> {
    spec.validate()?;
    let (x, w) = gauss_hermite(spec.nodes);
    let total = w.iter().copied().collect::<KahanSum>().total();
    let probs: Vec<f64> = w.iter().map(|wi| wi / total).collect();
    let drift = -0.5 * spec.sigma * spec.sigma * spec.t;
    let vol = spec.sigma * spec.t.sqrt();
    let s: Vec<f64> = x
        .iter()
        .map(|xi| spec.s0 * (drift + vol * std::f64::consts::SQRT_2 * xi).exp())
        .collect();
    let mut obs = BTreeMap::new();
    obs.insert(TERMINAL_PRICE.to_string(), s);
    let market = FiniteMarket::from_weights(probs, obs)?;
    if spec.nodes >= 16 {
        market.with_price(TERMINAL_PRICE, spec.s0, 1e-8 * spec.s0)
    } else {
        log::warn!(
            "{} quadrature nodes: S_T not flagged as a price (discretisation too coarse for the martingale check)",
            spec.nodes
        );
        Ok(market)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub strictly_feasible: bool,
    /// Largest `t` with a density satisfying `Z_i ≥ t` and every GE slack `≥ t·(1+|a_λ|)`.
    pub margin: f64,
    pub witness: Option<Vec<f64>>,
}

impl FeasibilityReport {
    pub fn summary(&self) -> String {
        if !self.feasible {
            "no density satisfies the constraints".to_string()
        } else if !self.strictly_feasible {
            format!("feasible but not strictly feasible (margin {:.3e})", self.margin)
        } else {
            format!("strictly feasible (margin {:.3e})", self.margin)
        }
    }
}

/// Decides whether some density `Z ≥ 0`, `E[Z] = 1` satisfies the constraints,
/// and whether one exists with `Z > 0` and every GE constraint slack at least
/// `STRICT_SLACK·(1+|a_λ|)`. Solved as `max t` over `Z = Z' + t`, `Z' ≥ 0`,
/// with the masses `q_i = p_i Z'_i` as LP columns so that tiny tail
/// probabilities do not wreck the scaling.
/// When `strict` is set, `witness` is only reported for strictly feasible sets.
pub fn feasibility_check(market: &FiniteMarket, constraints: &ConstraintSet, strict: bool) -> Result<FeasibilityReport> {
    let rows = constraints.resolve(market)?;
    let n = market.n();
    let p = market.probs();
    let n_ge = rows.iter().filter(|r| r.kind == ConstraintKind::Ge).count();
    // columns: Z'_0..Z'_{n-1}, t, GE slacks
    let cols = n + 1 + n_ge;
    let mut a = Vec::with_capacity(1 + rows.len());
    let mut b = Vec::with_capacity(1 + rows.len());
    let mut norm = vec![0.0; cols];
    norm[..n].fill(1.0);
    norm[n] = 1.0;
    a.push(norm);
    b.push(1.0);
    let mut slack_col = n + 1;
    for r in &rows {
        let mut row = vec![0.0; cols];
        row[..n].copy_from_slice(&r.h);
        let mean_h = weighted_sum(p, &r.h);
        match r.kind {
            ConstraintKind::Ge => {
                row[n] = mean_h - (1.0 + r.bound.abs());
                row[slack_col] = -1.0;
                slack_col += 1;
            }
            ConstraintKind::Eq => row[n] = mean_h,
        }
        a.push(row);
        b.push(r.bound);
    }
    let mut c = vec![0.0; cols];
    c[n] = -1.0;
    let sol = lp::solve(&StandardLp { a, b, c });
    match sol.status {
        LpStatus::Infeasible => Ok(FeasibilityReport {
            feasible: false,
            strictly_feasible: false,
            margin: f64::NEG_INFINITY,
            witness: None,
        }),
        LpStatus::Optimal | LpStatus::IterationLimit | LpStatus::Unbounded => {
            let t = sol.x[n];
            let z: Vec<f64> = sol.x[..n].iter().zip(p).map(|(q, pi)| q / pi + t).collect();
            let strictly = t >= STRICT_SLACK;
            Ok(FeasibilityReport {
                feasible: true,
                strictly_feasible: strictly,
                margin: t,
                witness: if strict && !strictly { None } else { Some(z) },
            })
        }
    }
}

/// Checks a density against normalisation and every constraint; returns the
/// largest violation (0 when all hold).
pub fn density_violation(market: &FiniteMarket, rows: &[ResolvedConstraint], z: &[f64]) -> f64 {
    let mut worst = (market.mean(z) - 1.0).abs();
    if let Some(neg) = z.iter().map(|v| -v).reduce(f64::max) {
        worst = worst.max(neg.max(0.0));
    }
    for r in rows {
        let m = market.mean_by(|i| z[i] * r.h[i]);
        let v = match r.kind {
            ConstraintKind::Ge => (r.bound - m).max(0.0),
            ConstraintKind::Eq => (m - r.bound).abs(),
        };
        worst = worst.max(v);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteMarket {
        let mut obs = BTreeMap::new();
        obs.insert("h".to_string(), vec![0.0, 2.0]);
        FiniteMarket::new(vec![0.5, 0.5], obs).unwrap()
    }

    fn bs64() -> FiniteMarket {
        gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, 64).unwrap()).unwrap()
    }

    #[test]
    fn market_validation() {
        let mut obs = BTreeMap::new();
        obs.insert("h".to_string(), vec![0.0, 2.0]);
        let err = FiniteMarket::new(vec![0.5, 0.49], obs.clone()).unwrap_err();
        assert!(err.to_string().contains("probs must sum to 1"));
        assert!(FiniteMarket::new(vec![1.0 - 1e-15, 1e-15], obs.clone()).is_err());
        obs.insert("bad".to_string(), vec![0.0]);
        assert!(FiniteMarket::new(vec![0.5, 0.5], obs).is_err());
    }

    #[test]
    fn expectation_examples() {
        let m = bs64();
        let c = vec![3.25; m.n()];
        assert!((m.expectation(&c).unwrap() - 3.25).abs() < 1e-14);
        let s = m.observable(TERMINAL_PRICE).unwrap();
        assert!((m.expectation(s).unwrap() - 1.0).abs() < 1e-12);
        let mut bad = c.clone();
        bad[3] = f64::NAN;
        assert!(matches!(m.expectation(&bad), Err(Error::NonFinite { index: 3 })));
        assert!(matches!(m.expectation(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn hermite_moments() {
        let m = bs64();
        let s = m.observable(TERMINAL_PRICE).unwrap();
        let s2: Vec<f64> = s.iter().map(|v| v * v).collect();
        assert!((m.mean(s) - 1.0).abs() < 1e-12);
        assert!((m.mean(&s2) - 0.25f64.exp()).abs() < 1e-10);
        assert!((0.25f64.exp() - 1.2840254).abs() < 1e-7);
        // symmetric positive weights
        let p = m.probs();
        for i in 0..p.len() {
            assert!(p[i] > 0.0);
            assert!((p[i] - p[p.len() - 1 - i]).abs() <= 1e-13 * p[i].max(1e-300));
        }
    }

    #[test]
    fn hermite_small_and_degenerate() {
        let m = gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, 2).unwrap()).unwrap();
        assert_eq!(m.n(), 2);
        assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let m = gauss_hermite_market(&LognormalSpec::new(1e-8, 1.0, 1.0, 16).unwrap()).unwrap();
        assert!(m.observable(TERMINAL_PRICE).unwrap().iter().all(|s| (s - 1.0).abs() < 1e-7));
        assert!(LognormalSpec::new(0.5, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn hermite_large_node_counts() {
        for n in [16usize, 128, 256] {
            let m = gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, n).unwrap()).unwrap();
            let s = m.observable(TERMINAL_PRICE).unwrap();
            assert!((m.mean(s) - 1.0).abs() < 1e-10, "n = {n}");
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn feasibility_examples() {
        let m = bs64();
        let smax = m.observable(TERMINAL_PRICE).unwrap().iter().cloned().fold(0.0, f64::max);
        let r = feasibility_check(&m, &ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1), true).unwrap();
        assert!(r.feasible && r.strictly_feasible);
        let w = r.witness.unwrap();
        assert!(w.iter().all(|z| *z > 0.0));
        let rows = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1).resolve(&m).unwrap();
        assert!(density_violation(&m, &rows, &w) < 1e-9);

        let r = feasibility_check(&m, &ConstraintSet::empty().ge(TERMINAL_PRICE, smax + 1.0), false).unwrap();
        assert!(!r.feasible);

        let r = feasibility_check(&m, &ConstraintSet::empty(), true).unwrap();
        assert!(r.feasible && r.strictly_feasible);
        assert!(r.witness.unwrap().iter().all(|z| (z - 1.0).abs() < 1e-12));
    }

    #[test]
    fn feasibility_boundary_is_not_strict() {
        let m = two_state();
        // E[Zh] ≥ 2 forces Z = (0, 2)
        let r = feasibility_check(&m, &ConstraintSet::empty().ge("h", 2.0), true).unwrap();
        assert!(r.feasible && !r.strictly_feasible);
        assert!(r.witness.is_none());
        let r = feasibility_check(&m, &ConstraintSet::empty().eq("h", 1.0), true).unwrap();
        assert!(r.strictly_feasible);
    }

    #[test]
    fn constraint_validation() {
        let m = two_state();
        assert!(ConstraintSet::empty().ge("nope", 1.0).validate(&m).is_err());
        assert!(ConstraintSet::empty().eq("h", 1.0).eq("h", 1.0).validate(&m).is_err());
    }
}

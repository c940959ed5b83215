//! Utility functions on `(0, ∞)`, their convex conjugates, inverses and the
//! perspective pair `γ*_y(z) = z·V(y/z)` / `γ_y(x) = y·U⁻¹(|x|)`.
//!
//! Every `UtilityFunction` is normalised so that `U(0⁺) = 0`. Custom utilities
//! that are bounded below declare their limit at zero and it is subtracted.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::logspace;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const X_MIN: f64 = 1e-300;
const X_MAX: f64 = 1e300;
const BISECTION_STEPS: usize = 80;
const NEWTON_POLISHES: usize = 5;
/// Below this the perspective `z·V(y/z)` is replaced by its limit 0.
const GAMMA_STAR_Z_FLOOR: f64 = 1e-12;

/// A user-supplied utility given by `U` and `U'`.
#[derive(Clone)]
pub struct CustomUtility {
    name: String,
    u: ScalarFn,
    u_prime: ScalarFn,
    value_at_zero: f64,
    supremum: f64,
}

impl CustomUtility {
    pub fn new<U, D>(name: impl Into<String>, u: U, u_prime: D) -> Self
    where
        U: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            u: Arc::new(u),
            u_prime: Arc::new(u_prime),
            value_at_zero: 0.0,
            supremum: f64::INFINITY,
        }
    }

    /// Declares `lim_{x→0⁺} U(x)`; it is subtracted so the normalised utility starts at 0.
    pub fn with_value_at_zero(mut self, u0: f64) -> Self {
        self.value_at_zero = u0;
        self
    }

    /// Declares `sup U` for a bounded utility (in the raw, un-normalised scale).
    pub fn with_supremum(mut self, sup: f64) -> Self {
        self.supremum = sup;
        self
    }
}

impl fmt::Debug for CustomUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomUtility")
            .field("name", &self.name)
            .field("value_at_zero", &self.value_at_zero)
            .field("supremum", &self.supremum)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    /// `U(x) = x^α / α`, `α ∈ (0, 1)`.
    Power { alpha: f64 },
    Custom(CustomUtility),
}

#[derive(Debug, Clone)]
pub struct UtilityFunction {
    family: Family,
}

enum RootFailure {
    /// The target is attained (if at all) below `X_MIN`.
    Below,
    /// The target is attained (if at all) above `X_MAX`.
    Above,
}

/// Solves `g(x) = target` for a strictly monotone `g` on `[X_MIN, X_MAX]`:
/// doubling bracket from 1, log-space bisection, then guarded Newton polishes.
fn solve_monotone(
    g: &dyn Fn(f64) -> f64,
    dg: &dyn Fn(f64) -> f64,
    target: f64,
    increasing: bool,
) -> std::result::Result<f64, RootFailure> {
    let s = |x: f64| {
        let r = g(x) - target;
        if increasing {
            r
        } else {
            -r
        }
    };
    let mut lo = 1.0;
    let mut hi = 1.0;
    let s1 = s(1.0);
    if s1 == 0.0 {
        return Ok(1.0);
    }
    if s1 < 0.0 {
        loop {
            hi *= 2.0;
            if hi > X_MAX {
                return Err(RootFailure::Above);
            }
            if s(hi) >= 0.0 {
                break;
            }
            lo = hi;
        }
    } else {
        loop {
            lo *= 0.5;
            if lo < X_MIN {
                return Err(RootFailure::Below);
            }
            if s(lo) <= 0.0 {
                break;
            }
            hi = lo;
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if s(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = (lo * hi).sqrt();
    let mut r = s(x);
    for _ in 0..NEWTON_POLISHES {
        if r == 0.0 {
            break;
        }
        let slope = if increasing { dg(x) } else { -dg(x) };
        if !(slope.is_finite() && slope > 0.0) {
            break;
        }
        let cand = x - r / slope;
        if !(cand > lo && cand < hi) {
            break;
        }
        let rc = s(cand);
        if rc.abs() >= r.abs() {
            break;
        }
        let rel_step = (cand / x - 1.0).abs();
        x = cand;
        r = rc;
        if rel_step < 1e-12 {
            break;
        }
    }
    Ok(x)
}

impl UtilityFunction {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("power utility needs alpha in (0,1), got {alpha}")));
        }
        Ok(Self {
            family: Family::Power { alpha },
        })
    }

    /// Builds a custom utility after checking on a sampled grid that `U' > 0`
    /// is strictly decreasing (strictly increasing, strictly concave `U`).
    pub fn custom(c: CustomUtility) -> Result<Self> {
        if !c.value_at_zero.is_finite() {
            return Err(Error::domain("custom utility must be bounded below at 0"));
        }
        let grid = logspace(1e-6, 1e6, 121);
        let mut prev = f64::INFINITY;
        for &x in &grid {
            let d = (c.u_prime)(x);
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::domain(format!("U'({x:e}) = {d} is not positive and finite")));
            }
            if d >= prev {
                return Err(Error::domain(format!("U' is not strictly decreasing near x = {x:e}")));
            }
            prev = d;
        }
        Ok(Self {
            family: Family::Custom(c),
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            Family::Power { alpha } => Some(alpha),
            Family::Custom(_) => None,
        }
    }

    /// `Δ = lim_{x→∞} U(x)` (normalised); `+∞` for unbounded utilities.
    pub fn supremum(&self) -> f64 {
        match &self.family {
            Family::Power { .. } => f64::INFINITY,
            Family::Custom(c) => c.supremum - c.value_at_zero,
        }
    }

    pub fn label(&self) -> String {
        match &self.family {
            Family::Power { alpha } => format!("power:{alpha}"),
            Family::Custom(c) => format!("custom:{}", c.name),
        }
    }

    /// `U(x)`; `U(0) = 0` and `-∞` for negative wealth.
    pub fn value(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Power { alpha } => x.powf(*alpha) / alpha,
            Family::Custom(c) => (c.u)(x) - c.value_at_zero,
        }
    }

    /// `U'(x)`, `+∞` at and below 0.
    pub fn marginal(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::INFINITY;
        }
        match &self.family {
            Family::Power { alpha } => x.powf(alpha - 1.0),
            Family::Custom(c) => (c.u_prime)(x),
        }
    }

    pub(crate) fn marginal_slope(&self, x: f64) -> f64 {
        match &self.family {
            Family::Power { alpha } => (alpha - 1.0) * x.powf(alpha - 2.0),
            Family::Custom(c) => {
                let h = 1e-6 * x;
                ((c.u_prime)(x + h) - (c.u_prime)(x - h)) / (2.0 * h)
            }
        }
    }

    fn custom_marginal_inverse(&self, c: &CustomUtility, y: f64) -> std::result::Result<f64, RootFailure> {
        let g = |x: f64| (c.u_prime)(x);
        let dg = |x: f64| self.marginal_slope(x);
        solve_monotone(&g, &dg, y, false)
    }

    fn custom_inverse(&self, c: &CustomUtility, u: f64) -> std::result::Result<f64, RootFailure> {
        let g = |x: f64| (c.u)(x) - c.value_at_zero;
        let dg = |x: f64| (c.u_prime)(x);
        solve_monotone(&g, &dg, u, true)
    }

    /// `I(y) = (U')⁻¹(y)` for `y > 0`; `I(∞) = 0`, `I(0) = ∞`.
    pub fn marginal_inverse(&self, y: f64) -> f64 {
        if y.is_infinite() && y > 0.0 {
            return 0.0;
        }
        if y <= 0.0 {
            return f64::INFINITY;
        }
        match &self.family {
            Family::Power { alpha } => y.powf(1.0 / (alpha - 1.0)),
            Family::Custom(c) => match self.custom_marginal_inverse(c, y) {
                Ok(x) => x,
                Err(RootFailure::Below) => 0.0,
                Err(RootFailure::Above) => X_MAX,
            },
        }
    }

    /// Convex conjugate `V(y) = sup_{x>0} [U(x) − xy]`.
    pub fn conjugate_v(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::domain(format!("conjugate V needs y > 0, got {y}")));
        }
        match &self.family {
            Family::Power { alpha } => Ok(self.v_power(*alpha, y)),
            Family::Custom(c) => {
                if y.is_infinite() {
                    return Ok(0.0);
                }
                let x = self.custom_marginal_inverse(c, y).map_err(|_| {
                    Error::Convergence(format!("U'(x) = {y:e} not bracketed in [1e-300, 1e300]"))
                })?;
                Ok(self.value(x) - x * y)
            }
        }
    }

    fn v_power(&self, alpha: f64, y: f64) -> f64 {
        (1.0 - alpha) / alpha * y.powf(-alpha / (1.0 - alpha))
    }

    /// `V` without error reporting: `V(0⁺) = Δ`, root-solve failures fall back to
    /// the limiting value at the end of the admissible range.
    pub(crate) fn v(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return self.supremum();
        }
        match &self.family {
            Family::Power { alpha } => self.v_power(*alpha, y),
            Family::Custom(c) => match self.custom_marginal_inverse(c, y) {
                Ok(x) => self.value(x) - x * y,
                Err(RootFailure::Below) => 0.0,
                Err(RootFailure::Above) => self.supremum(),
            },
        }
    }

    /// `V'(y) = −I(y)`.
    pub fn conjugate_v_prime(&self, y: f64) -> f64 {
        -self.marginal_inverse(y)
    }

    /// `U⁻¹(u)` for `u ≥ 0`; `+∞` when `u ≥ Δ` for bounded utilities.
    pub fn u_inverse(&self, u: f64) -> Result<f64> {
        if u < 0.0 || u.is_nan() {
            return Err(Error::domain(format!("U⁻¹ needs u ≥ 0, got {u}")));
        }
        Ok(self.inv(u))
    }

    /// `(U⁻¹)'(u) = 1 / U'(U⁻¹(u))`, with `(U⁻¹)'(0) = 0`.
    pub fn u_inverse_prime(&self, u: f64) -> Result<f64> {
        if u < 0.0 || u.is_nan() {
            return Err(Error::domain(format!("(U⁻¹)' needs u ≥ 0, got {u}")));
        }
        Ok(self.inv_prime(u))
    }

    pub(crate) fn inv(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= self.supremum() {
            return f64::INFINITY;
        }
        match &self.family {
            Family::Power { alpha } => (alpha * u).powf(1.0 / alpha),
            Family::Custom(c) => match self.custom_inverse(c, u) {
                Ok(x) => x,
                Err(RootFailure::Below) => 0.0,
                Err(RootFailure::Above) => f64::INFINITY,
            },
        }
    }

    pub(crate) fn inv_prime(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= self.supremum() {
            return f64::INFINITY;
        }
        match &self.family {
            Family::Power { alpha } => (alpha * u).powf(1.0 / alpha - 1.0),
            Family::Custom(_) => {
                let x = self.inv(u);
                if x == 0.0 {
                    0.0
                } else {
                    1.0 / self.marginal(x)
                }
            }
        }
    }

    /// `(U⁻¹)''(u) = −U''(x)/U'(x)³` at `x = U⁻¹(u)`; 0 at `u ≤ 0`.
    pub(crate) fn inv_second(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= self.supremum() {
            return f64::INFINITY;
        }
        match &self.family {
            Family::Power { alpha } => (1.0 - alpha) * (alpha * u).powf(1.0 / alpha - 2.0),
            Family::Custom(_) => {
                let x = self.inv(u);
                if x == 0.0 {
                    return 0.0;
                }
                let d = self.marginal(x);
                -self.marginal_slope(x) / (d * d * d)
            }
        }
    }

    /// Perspective `γ*_y(z)`: `+∞` for `z < 0`, `0` at `z = 0`, `z·V(y/z)` otherwise
    /// (with `z·V(0⁺) = z·Δ` when `y = 0`).
    pub fn gamma_star(&self, y: f64, z: f64) -> f64 {
        if z < 0.0 || z.is_nan() {
            return f64::INFINITY;
        }
        if z == 0.0 {
            return 0.0;
        }
        if y <= 0.0 {
            return z * self.supremum();
        }
        match &self.family {
            Family::Power { alpha } => {
                let a = *alpha;
                (1.0 - a) / a * y.powf(-a / (1.0 - a)) * z.powf(1.0 / (1.0 - a))
            }
            Family::Custom(_) => {
                if z < GAMMA_STAR_Z_FLOOR {
                    return 0.0;
                }
                z * self.v(y / z)
            }
        }
    }

    /// `∂γ*_y/∂z = U(I(y/z))`, which is 0 at `z = 0`.
    pub fn gamma_star_prime(&self, y: f64, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        self.value(self.marginal_inverse(y / z))
    }

    /// `γ_y(x) = y·U⁻¹(|x|)` with `0·∞ = 0`.
    pub fn gamma(&self, y: f64, x: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        y * self.inv(x.abs())
    }
}

impl FromStr for UtilityFunction {
    type Err = Error;

    /// Parses `power:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::domain(format!("utility spec '{s}' must look like power:<alpha>")))?;
        match kind.trim() {
            "power" => {
                let alpha: f64 = arg
                    .trim()
                    .parse()
                    .map_err(|_| Error::domain(format!("bad alpha in utility spec '{s}'")))?;
                UtilityFunction::power(alpha)
            }
            other => Err(Error::domain(format!("unknown utility family '{other}'"))),
        }
    }
}

/// Constants of the doubling conditions `V(y/2) ≤ aV(y) + b(y+1)` and
/// `U⁻¹(2y) ≤ kU⁻¹(y) + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta2Constants {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub d: f64,
}

impl Delta2Constants {
    pub fn new(a: f64, b: f64, k: f64, d: f64) -> Result<Self> {
        if [a, b, k, d].iter().all(|c| *c > 0.0 && c.is_finite()) {
            Ok(Self { a, b, k, d })
        } else {
            Err(Error::domain("Δ₂ constants must be strictly positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Delta2Report {
    pub holds_v: bool,
    pub holds_uinv: bool,
    pub worst_slack_v: f64,
    pub worst_slack_uinv: f64,
    /// `min(worst_slack_v, worst_slack_uinv)`.
    pub worst_slack: f64,
}

/// Checks both doubling inequalities at every grid point.
pub fn check_delta2(uf: &UtilityFunction, c: &Delta2Constants, grid: &[f64]) -> Result<Delta2Report> {
    if grid.is_empty() || grid.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::domain("Δ₂ grid must be nonempty and positive"));
    }
    let mut slack_v = f64::INFINITY;
    let mut slack_u = f64::INFINITY;
    for &y in grid {
        let sv = c.a * uf.v(y) + c.b * (y + 1.0) - uf.v(y / 2.0);
        let su = c.k * uf.inv(y) + c.d - uf.inv(2.0 * y);
        slack_v = slack_v.min(sv);
        slack_u = slack_u.min(su);
    }
    Ok(Delta2Report {
        holds_v: slack_v >= 0.0,
        holds_uinv: slack_u >= 0.0,
        worst_slack_v: slack_v,
        worst_slack_uinv: slack_u,
        worst_slack: slack_v.min(slack_u),
    })
}

/// Smallest `(a, k)` making both doubling inequalities hold on the grid with `b = d = 0`:
/// the maxima of `V(y/2)/V(y)` and `U⁻¹(2y)/U⁻¹(y)`.
pub fn fit_delta2(uf: &UtilityFunction, grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() || grid.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::domain("Δ₂ grid must be nonempty and positive"));
    }
    let mut a = 0.0_f64;
    let mut k = 0.0_f64;
    for &y in grid {
        let v = uf.v(y);
        if v > 0.0 {
            a = a.max(uf.v(y / 2.0) / v);
        }
        let ui = uf.inv(y);
        if ui > 0.0 && ui.is_finite() {
            k = k.max(uf.inv(2.0 * y) / ui);
        }
    }
    Ok((a, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElasticityReport {
    pub value: f64,
    pub below_one: bool,
}

/// Largest `x·U'(x)/U(x)` over the probes at or beyond `1e6`.
pub fn asymptotic_elasticity(uf: &UtilityFunction, probes: &[f64]) -> Result<ElasticityReport> {
    if probes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("elasticity probes must be increasing"));
    }
    match probes.last() {
        Some(&last) if last >= 1e6 => {}
        _ => return Err(Error::domain("largest elasticity probe must be at least 1e6")),
    }
    let mut value = f64::NEG_INFINITY;
    for &x in probes.iter().filter(|x| **x >= 1e6) {
        let u = uf.value(x);
        if !(u > 0.0) {
            return Err(Error::domain(format!("U({x:e}) = {u} is not positive")));
        }
        value = value.max(x * uf.marginal(x) / u);
    }
    Ok(ElasticityReport {
        value,
        below_one: value < 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InadaReport {
    /// `U'(1e-100) / U'(1)`
    pub ratio_at_zero: f64,
    /// `U'(1e100) / U'(1)`
    pub ratio_at_infinity: f64,
    pub holds: bool,
}

/// Endpoint diagnostic for `U'(0⁺) = ∞`, `U'(∞) = 0`.
pub fn inada_diagnostic(uf: &UtilityFunction) -> InadaReport {
    let base = uf.marginal(1.0);
    let r0 = uf.marginal(1e-100) / base;
    let rinf = uf.marginal(1e100) / base;
    InadaReport {
        ratio_at_zero: r0,
        ratio_at_infinity: rinf,
        holds: r0 > 1e6 && rinf < 1e-6,
    }
}

//! The outer problem `u(x) = min_y [v(y) + xy]`, recovery of the worst-case
//! density and optimal terminal wealth, and the single-model value `u_Q`.

use serde::Serialize;

use crate::dual::{solve_dual, DualOptions, DualPoint, DualSolution, Kkt};
use crate::error::{Error, Result};
use crate::market::{feasibility_check, ConstraintSet, FiniteMarket};
use crate::numeric::{bisect, golden_section};
use crate::par;
use crate::utility::{Family, UtilityFunction};

const Y_MIN: f64 = 1e-8;
const Y_MAX: f64 = 1e8;

/// `v` on a grid of dual levels, with the shape checks that must hold for it.
#[derive(Debug, Clone, Serialize)]
pub struct ValueCurve {
    pub points: Vec<(f64, f64)>,
    pub convex: bool,
    pub decreasing: bool,
}

fn check_grid(y_grid: &[f64]) -> Result<()> {
    if y_grid.is_empty() {
        return Err(Error::validation("y grid is empty"));
    }
    if y_grid.iter().any(|y| !(*y > 0.0 && y.is_finite())) {
        return Err(Error::validation("y grid must be positive and finite"));
    }
    if y_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("y grid must be strictly increasing"));
    }
    Ok(())
}

fn require_strict_feasibility(market: &FiniteMarket, constraints: &ConstraintSet) -> Result<()> {
    let report = feasibility_check(market, constraints, true)?;
    if report.strictly_feasible {
        Ok(())
    } else {
        Err(Error::InfeasibleModel(Box::new(report)))
    }
}

/// `v(y)` at each grid point (solved independently, possibly in parallel).
pub fn dual_value_curve(
    market: &FiniteMarket,
    constraints: &ConstraintSet,
    uf: &UtilityFunction,
    y_grid: &[f64],
    opts: &DualOptions,
) -> Result<ValueCurve> {
    check_grid(y_grid)?;
    if opts.check_feasibility {
        require_strict_feasibility(market, constraints)?;
    }
    let inner = DualOptions {
        check_feasibility: false,
        ..opts.clone()
    };
    let solved = par::map_slice(y_grid, |&y| {
        solve_dual(market, constraints, uf, y, &inner).map_err(|e| Error::at_level(y, e))
    });
    let mut points = Vec::with_capacity(y_grid.len());
    for (y, s) in y_grid.iter().zip(solved) {
        points.push((*y, s?.value));
    }
    let slack = |v: f64| 1e-9 * (1.0 + v.abs());
    let decreasing = points.windows(2).all(|w| w[1].1 <= w[0].1 + slack(w[0].1));
    let convex = points.windows(3).all(|w| {
        let (a, b, c) = (w[0], w[1], w[2]);
        let lam = (c.0 - b.0) / (c.0 - a.0);
        let chord = lam * a.1 + (1.0 - lam) * c.1;
        b.1 <= chord + slack(chord)
    });
    if !(convex && decreasing) {
        log::warn!("v(y) curve fails shape checks (convex: {convex}, decreasing: {decreasing})");
    }
    Ok(ValueCurve {
        points,
        convex,
        decreasing,
    })
}

/// Solution of the single-model problem `sup {E[Z_Q U(X)] : E[X] ≤ x}`.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalSolution {
    pub u: f64,
    pub y: f64,
    pub wealth: Vec<f64>,
}

fn check_density(market: &FiniteMarket, q: &[f64]) -> Result<()> {
    if q.len() != market.n() {
        return Err(Error::LengthMismatch {
            expected: market.n(),
            got: q.len(),
        });
    }
    if let Some(index) = q.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if q.iter().any(|v| *v < 0.0) {
        return Err(Error::validation("density has negative entries"));
    }
    let mean = market.mean(q);
    if (mean - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("density has mean {mean}, expected 1")));
    }
    Ok(())
}

/// Optimal wealth `X_i = I(y/Z_i)` on `{Z > 0}` and `0` elsewhere.
pub(crate) fn wealth_for(uf: &UtilityFunction, y: f64, z: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|zi| if *zi > 0.0 { uf.marginal_inverse(y / zi) } else { 0.0 })
        .collect()
}

/// `E[X(y)]` for the wealth above.
fn budget(market: &FiniteMarket, uf: &UtilityFunction, y: f64, z: &[f64]) -> f64 {
    market.mean_by(|i| if z[i] > 0.0 { uf.marginal_inverse(y / z[i]) } else { 0.0 })
}

/// `u_Q(x)`: solves the budget equation `E[I(y/Z_Q)] = x` for `y`.
pub fn classical_u_q(market: &FiniteMarket, uf: &UtilityFunction, q: &[f64], x: f64) -> Result<ClassicalSolution> {
    check_density(market, q)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("wealth must be positive, got {x}")));
    }
    let y = match uf.family() {
        Family::Power { alpha } => {
            // E[I(y/Z)] = y^{−1/(1−α)} E[Z^{1/(1−α)}]
            let r = 1.0 / (1.0 - alpha);
            let moment = market.mean_by(|i| q[i].powf(r));
            (moment / x).powf(1.0 - alpha)
        }
        Family::Custom(_) => {
            let excess = |y: f64| budget(market, uf, y, q) - x;
            let (mut lo, mut hi) = (1.0, 1.0);
            while excess(lo) < 0.0 {
                lo *= 0.5;
                if lo < 1e-300 {
                    return Err(Error::Budget(format!("E[I(y/Z)] stays below x = {x} for y ≥ 1e-300")));
                }
            }
            while excess(hi) > 0.0 {
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(Error::Budget(format!("E[I(y/Z)] stays above x = {x} for y ≤ 1e300")));
                }
            }
            bisect(excess, lo, hi, true, 200)
        }
    };
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Budget(format!("no positive multiplier for x = {x}")));
    }
    let wealth = wealth_for(uf, y, q);
    let u = market.mean_by(|i| if q[i] > 0.0 { q[i] * uf.value(wealth[i]) } else { 0.0 });
    Ok(ClassicalSolution { u, y, wealth })
}

#[derive(Debug, Clone)]
pub struct RobustOptions {
    pub dual: DualOptions,
    /// Relative width of the final `y` bracket.
    pub rel_width: f64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            dual: DualOptions::default(),
            rel_width: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustDiagnostics {
    /// `|E[X̂] − x| / x`.
    pub budget_residual: f64,
    /// `|E[Ẑ] − 1|`.
    pub normalization_residual: f64,
    /// `|E[Ẑ·U(X̂)] − u| / max(1, |u|)`.
    pub worst_case_value_residual: f64,
    /// `u_Q(x) − u` at `Q = Ẑ·P`; zero at a saddle point.
    pub saddle_gap: f64,
    /// `min_± [v(ŷ(1±δ)) + xŷ(1±δ)] − u` with `δ = 1e-4`; nonnegative when `ŷ` is a minimizer.
    pub superdifferential_margin: f64,
    pub kkt: Kkt,
    /// Dual iterations summed over every level visited.
    pub iterations: usize,
    /// Number of dual levels visited by the outer search.
    pub levels: usize,
    pub invariants_hold: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustSolution {
    pub x: f64,
    pub y_hat: f64,
    pub u_value: f64,
    pub v_at_y_hat: f64,
    pub z_hat: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub dual: DualPoint,
    pub diagnostics: RobustDiagnostics,
}

/// Warm start for level `y` from a solution at `y_prev`. For power utilities
/// the worst-case density does not depend on `y` and `(g, β)` scales exactly
/// as `(y_prev/y)^{α/(1−α)}`.
fn rescale(uf: &UtilityFunction, point: &DualPoint, y_prev: f64, y: f64) -> DualPoint {
    let factor = match uf.family() {
        Family::Power { alpha } => (y_prev / y).powf(alpha / (1.0 - alpha)),
        Family::Custom(_) => y_prev / y,
    };
    DualPoint::new(point.g.iter().map(|g| g * factor).collect(), point.beta * factor)
}

/// Sequential evaluator of `v(y)` that warm-starts from the nearest level solved so far.
struct Levels<'a> {
    market: &'a FiniteMarket,
    constraints: &'a ConstraintSet,
    uf: &'a UtilityFunction,
    opts: DualOptions,
    solved: Vec<(f64, DualSolution)>,
    iterations: usize,
    error: Option<Error>,
}

impl<'a> Levels<'a> {
    fn solve(&mut self, y: f64) -> Result<&DualSolution> {
        if let Some(k) = self.solved.iter().position(|(v, _)| *v == y) {
            return Ok(&self.solved[k].1);
        }
        let nearest = self
            .solved
            .iter()
            .min_by(|a, b| (a.0 / y).ln().abs().total_cmp(&(b.0 / y).ln().abs()));
        let mut opts = self.opts.clone();
        opts.warm_start = nearest.map(|(yp, s)| rescale(self.uf, &s.point, *yp, y));
        let sol = solve_dual(self.market, self.constraints, self.uf, y, &opts).map_err(|e| Error::at_level(y, e))?;
        self.iterations += sol.iterations;
        self.solved.push((y, sol));
        Ok(&self.solved.last().expect("just pushed").1)
    }

    /// `v(e^t) + x e^t`, recording the first error and returning `+∞` after it.
    fn phi(&mut self, t: f64, x: f64) -> f64 {
        if self.error.is_some() {
            return f64::INFINITY;
        }
        let y = t.exp();
        match self.solve(y) {
            Ok(s) => s.value + x * y,
            Err(e) => {
                self.error = Some(e);
                f64::INFINITY
            }
        }
    }
}

/// Solves the robust problem at initial wealth `x`.
pub fn solve_robust(
    market: &FiniteMarket,
    constraints: &ConstraintSet,
    uf: &UtilityFunction,
    x: f64,
    opts: &RobustOptions,
) -> Result<RobustSolution> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("initial wealth must be positive, got {x}")));
    }
    if opts.dual.check_feasibility {
        require_strict_feasibility(market, constraints)?;
    }
    let mut levels = Levels {
        market,
        constraints,
        uf,
        opts: DualOptions {
            check_feasibility: false,
            multistarts: 1,
            ..opts.dual.clone()
        },
        solved: Vec::new(),
        iterations: 0,
        error: None,
    };
    let (t_min, t_max) = (Y_MIN.ln(), Y_MAX.ln());

    // three-point bracket in t = log y around an interior minimum of φ
    let mut step = std::f64::consts::LN_2;
    let (mut a, mut b) = (0.0, step);
    let (fa, mut fb) = (levels.phi(a, x), levels.phi(b, x));
    if let Some(e) = levels.error.take() {
        return Err(e);
    }
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        fb = fa;
        step = -step;
    }
    let c = loop {
        step *= 2.0;
        let c = b + step;
        if c < t_min || c > t_max {
            return Err(Error::BracketFailure { lo: Y_MIN, hi: Y_MAX });
        }
        let fc = levels.phi(c, x);
        if let Some(e) = levels.error.take() {
            return Err(e);
        }
        if fc >= fb {
            break c;
        }
        a = b;
        b = c;
        fb = fc;
    };
    let (lo, hi) = if a < c { (a, c) } else { (c, a) };
    let width = opts.rel_width.max(1e-15);
    let gs = golden_section(|t| levels.phi(t, x), lo, hi, width, 200);
    if let Some(e) = levels.error.take() {
        return Err(e);
    }

    // polish: the budget residual E[I(y/Z^y)] − x = −φ'(y) is decreasing in y
    let excess = |lv: &mut Levels<'_>, t: f64| -> Result<f64> {
        let y = t.exp();
        let z = lv.solve(y)?.z.clone();
        Ok(budget(market, uf, y, &z) - x)
    };
    let (mut pl, mut ph) = (gs.lo, gs.hi);
    let (mut el, mut eh) = (excess(&mut levels, pl)?, excess(&mut levels, ph)?);
    let mut widen = 0;
    while !(el >= 0.0 && eh <= 0.0) && widen < 60 {
        let w = (ph - pl).max(1e-12);
        if el < 0.0 {
            pl -= w;
            el = excess(&mut levels, pl)?;
        }
        if eh > 0.0 {
            ph += w;
            eh = excess(&mut levels, ph)?;
        }
        widen += 1;
    }
    let mut t_hat = gs.x;
    if el >= 0.0 && eh <= 0.0 {
        for _ in 0..80 {
            let mid = 0.5 * (pl + ph);
            if mid <= pl || mid >= ph {
                break;
            }
            let em = excess(&mut levels, mid)?;
            t_hat = mid;
            if em.abs() <= 1e-13 * x {
                break;
            }
            if em > 0.0 {
                pl = mid;
            } else {
                ph = mid;
            }
        }
    } else {
        log::warn!("budget polish could not bracket a sign change; keeping the golden-section point");
    }

    // final solve at ŷ with the full multistart budget
    let y_hat = t_hat.exp();
    let warm = levels
        .solved
        .iter()
        .min_by(|a, b| (a.0 / y_hat).ln().abs().total_cmp(&(b.0 / y_hat).ln().abs()))
        .map(|(yp, s)| rescale(uf, &s.point, *yp, y_hat));
    let final_opts = DualOptions {
        check_feasibility: false,
        warm_start: warm,
        ..opts.dual.clone()
    };
    let sol = solve_dual(market, constraints, uf, y_hat, &final_opts).map_err(|e| Error::at_level(y_hat, e))?;
    let iterations = levels.iterations + sol.iterations;
    let level_count = levels.solved.len() + 1;

    let delta = 1e-4;
    let mut margin = f64::INFINITY;
    let u_value = sol.value + x * y_hat;
    for y in [y_hat * (1.0 - delta), y_hat * (1.0 + delta)] {
        let v = levels.solve(y)?.value;
        margin = margin.min(v + x * y - u_value);
    }

    let z_hat = sol.z.clone();
    let x_hat = wealth_for(uf, y_hat, &z_hat);
    let u_scale = u_value.abs().max(1.0);
    let budget_residual = (market.mean(&x_hat) - x).abs() / x;
    let normalization_residual = (market.mean(&z_hat) - 1.0).abs();
    let worst = market.mean_by(|i| if z_hat[i] > 0.0 { z_hat[i] * uf.value(x_hat[i]) } else { 0.0 });
    let worst_case_value_residual = (worst - u_value).abs() / u_scale;
    let saddle_gap = match classical_u_q(market, uf, &renormalized(market, &z_hat), x) {
        Ok(c) => c.u - u_value,
        Err(e) => {
            log::warn!("saddle-point check skipped: {e}");
            f64::NAN
        }
    };
    let invariants_hold = budget_residual <= 1e-7
        && normalization_residual <= 1e-7
        && worst_case_value_residual <= 1e-6
        && saddle_gap.abs() <= 1e-5;
    if !invariants_hold {
        log::warn!(
            "robust solution invariants: budget {budget_residual:.2e}, normalization {normalization_residual:.2e}, \
             worst-case value {worst_case_value_residual:.2e}, saddle gap {saddle_gap:.2e}"
        );
    }
    if margin < -1e-9 * u_scale {
        log::warn!("ŷ = {y_hat:e} is not a minimizer of v(y) + xy to within 1e-9 (margin {margin:.3e})");
    }
    Ok(RobustSolution {
        x,
        y_hat,
        u_value,
        v_at_y_hat: sol.value,
        z_hat,
        x_hat,
        dual: sol.point,
        diagnostics: RobustDiagnostics {
            budget_residual,
            normalization_residual,
            worst_case_value_residual,
            saddle_gap,
            superdifferential_margin: margin,
            kkt: sol.kkt,
            iterations,
            levels: level_count,
            invariants_hold,
        },
    })
}

/// Divides out the (tiny) normalization error so the density passes the
/// `|E[Z] − 1| ≤ 1e-9` precondition of `classical_u_q`.
fn renormalized(market: &FiniteMarket, z: &[f64]) -> Vec<f64> {
    let m = market.mean(z);
    z.iter().map(|v| v / m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{gauss_hermite_market, LognormalSpec, TERMINAL_PRICE};

    fn half() -> UtilityFunction {
        UtilityFunction::power(0.5).unwrap()
    }

    fn bs(nodes: usize) -> FiniteMarket {
        gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, nodes).unwrap()).unwrap()
    }

    #[test]
    fn unconstrained_curve_is_conjugate() {
        let m = bs(16);
        let grid = [0.25, 0.5, 1.0, 2.0, 4.0];
        let c = dual_value_curve(&m, &ConstraintSet::empty(), &half(), &grid, &DualOptions::default()).unwrap();
        for (y, v) in &c.points {
            assert!((v - 1.0 / y).abs() < 1e-9);
        }
        assert!(c.convex && c.decreasing);
        assert!(dual_value_curve(&m, &ConstraintSet::empty(), &half(), &[1.0, 0.5], &DualOptions::default()).is_err());
    }

    #[test]
    fn bs_curve() {
        let m = bs(64);
        let cs = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1);
        let c = dual_value_curve(&m, &cs, &half(), &[0.5, 1.0, 2.0], &DualOptions::default()).unwrap();
        for (y, v) in &c.points {
            assert!((v - 1.035208 / y).abs() < 1e-3);
        }
    }

    #[test]
    fn bs_robust_solution() {
        let m = bs(64);
        let cs = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1);
        let r = solve_robust(&m, &cs, &half(), 1.0, &RobustOptions::default()).unwrap();
        assert!((r.y_hat - 1.017452).abs() < 1e-3, "{}", r.y_hat);
        assert!((r.u_value - 2.034904).abs() < 1e-3, "{}", r.u_value);
        let d = &r.diagnostics;
        assert!(d.invariants_hold, "{d:?}");
        assert!(d.superdifferential_margin >= -1e-12);
        let e = 0.25f64.exp();
        let s = m.observable(TERMINAL_PRICE).unwrap();
        for (xh, si) in r.x_hat.iter().zip(s) {
            let exact = (e - 1.1 + si * 0.1).powi(2) / ((e - 1.0 + 0.01) * (e - 1.0));
            assert!((xh - exact).abs() <= 1e-3 * exact);
        }
    }

    #[test]
    fn unconstrained_merton() {
        let m = bs(16);
        let r = solve_robust(&m, &ConstraintSet::empty(), &half(), 1.0, &RobustOptions::default()).unwrap();
        assert!((r.u_value - 2.0).abs() < 1e-9);
        assert!(r.z_hat.iter().all(|z| (z - 1.0).abs() < 1e-9));
        assert!(r.x_hat.iter().all(|x| (x - 1.0).abs() < 1e-7));
    }

    #[test]
    fn classical_examples() {
        let m = bs(16);
        let c = classical_u_q(&m, &half(), &[1.0; 16], 1.0).unwrap();
        assert!((c.u - 2.0).abs() < 1e-12);
        assert!(c.wealth.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let mut q = vec![0.0; 16];
        let p = m.probs();
        q[7] = 0.5 / p[7];
        q[8] = 0.5 / p[8];
        let c = classical_u_q(&m, &half(), &q, 1.0).unwrap();
        assert!(c.wealth.iter().enumerate().all(|(i, x)| (i == 7 || i == 8) || *x == 0.0));
        assert!((m.mean(&c.wealth) - 1.0).abs() < 1e-12);
        assert!(classical_u_q(&m, &half(), &[2.0; 16], 1.0).is_err());
    }
}

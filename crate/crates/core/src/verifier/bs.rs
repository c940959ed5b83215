//! Closed forms for the lognormal market with one mean constraint
//! `E_Q[S_T] ≥ A·s0` and square-root utility `U(x) = 2√x`.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{gauss_hermite_market, ConstraintSet, FiniteMarket, LognormalSpec, TERMINAL_PRICE};
use crate::robust::{solve_robust, RobustOptions, RobustSolution};
use crate::utility::UtilityFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BSOracle {
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub x: f64,
    pub s0: f64,
}

impl BSOracle {
    /// Checks `e^{σ²T} > A > 1` and `x > 0`.
    pub fn new(sigma: f64, t: f64, a: f64, x: f64) -> Result<Self> {
        let o = Self { sigma, t, a, x, s0: 1.0 };
        o.validate()?;
        Ok(o)
    }

    pub fn with_s0(mut self, s0: f64) -> Result<Self> {
        self.s0 = s0;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.t > 0.0 && self.s0 > 0.0 && self.x > 0.0) {
            return Err(Error::domain("sigma, T, s0 and x must be positive"));
        }
        if !self.a.is_finite() {
            return Err(Error::domain("A must be finite"));
        }
        let e = self.second_moment();
        if !(e > self.a && self.a > 1.0) {
            return Err(Error::Regime(format!(
                "need e^(sigma^2 T) = {e} > A = {} > 1",
                self.a
            )));
        }
        Ok(())
    }

    /// `E[(S_T/s0)²] = e^{σ²T}`.
    pub fn second_moment(&self) -> f64 {
        (self.sigma * self.sigma * self.t).exp()
    }

    /// `K = 1 + (A−1)²/(e^{σ²T}−1)`.
    pub fn k(&self) -> f64 {
        (self.a - 1.0).powi(2) / (self.second_moment() - 1.0) + 1.0
    }

    /// `u(x) = 2√(xK)`.
    pub fn u(&self) -> f64 {
        2.0 * (self.x * self.k()).sqrt()
    }

    /// `ŷ = √(K/x)`.
    pub fn y_hat(&self) -> f64 {
        (self.k() / self.x).sqrt()
    }

    /// `v(y) = K/y`.
    pub fn v(&self, y: f64) -> f64 {
        self.k() / y
    }

    /// Optimal `(β, g)` of the multiplier problem at level `y`, with `g` the
    /// multiplier of the constraint on `S_T/s0`.
    pub fn multipliers_at(&self, y: f64) -> (f64, f64) {
        let e = self.second_moment();
        let d = y * (e - 1.0);
        (2.0 * (e - self.a) / d, 2.0 * (self.a - 1.0) / d)
    }

    /// Worst-case density as a function of the terminal price `s`.
    pub fn z_hat(&self, s: f64) -> f64 {
        let e = self.second_moment();
        (e - self.a + (s / self.s0) * (self.a - 1.0)) / (e - 1.0)
    }

    /// Optimal terminal wealth as a function of the terminal price `s`.
    pub fn x_hat(&self, s: f64) -> f64 {
        let e = self.second_moment();
        let num = e - self.a + (s / self.s0) * (self.a - 1.0);
        self.x * num * num / ((e - 1.0 + (self.a - 1.0).powi(2)) * (e - 1.0))
    }

    pub fn market(&self, nodes: usize) -> Result<FiniteMarket> {
        gauss_hermite_market(&LognormalSpec::new(self.sigma, self.t, self.s0, nodes)?)
    }

    pub fn constraints(&self) -> ConstraintSet {
        ConstraintSet::empty().ge(TERMINAL_PRICE, self.a * self.s0)
    }
}

/// Scalar summary of the closed forms.
#[derive(Debug, Clone, Serialize)]
pub struct BsClosedForm {
    #[serde(rename = "K")]
    pub k: f64,
    pub u: f64,
    pub y_hat: f64,
    pub beta_at_y_hat: f64,
    pub g_at_y_hat: f64,
}

pub fn bs_closed_form(o: &BSOracle) -> Result<BsClosedForm> {
    o.validate()?;
    let y_hat = o.y_hat();
    let (beta, g) = o.multipliers_at(y_hat);
    Ok(BsClosedForm {
        k: o.k(),
        u: o.u(),
        y_hat,
        beta_at_y_hat: beta,
        g_at_y_hat: g,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub quantity: String,
    pub computed: f64,
    pub expected: f64,
    pub abs_error: f64,
    /// `abs_error / max(1, |expected|)`; for pointwise quantities the worst state.
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BsReport {
    pub oracle: BSOracle,
    pub nodes: usize,
    pub tolerance: f64,
    pub closed_form: BsClosedForm,
    pub rows: Vec<Comparison>,
    pub max_rel_error: f64,
    pub pass: bool,
    pub runtime_ms: f64,
    #[serde(skip)]
    pub solution: RobustSolution,
}

/// Tolerance used by [`verify_bs`] when none is given.
pub fn default_tolerance(nodes: usize) -> f64 {
    if nodes >= 256 {
        1e-4
    } else {
        1e-3
    }
}

fn compare(quantity: &str, computed: f64, expected: f64, tol: f64) -> Comparison {
    let abs_error = (computed - expected).abs();
    let rel_error = abs_error / expected.abs().max(1.0);
    Comparison {
        quantity: quantity.to_string(),
        computed,
        expected,
        abs_error,
        rel_error,
        pass: rel_error <= tol,
    }
}

/// Worst pointwise discrepancy; `computed`/`expected` report the offending state.
fn compare_pointwise(quantity: &str, computed: &[f64], expected: &[f64], tol: f64) -> Comparison {
    let mut worst = compare(quantity, computed[0], expected[0], tol);
    for (c, e) in computed.iter().zip(expected).skip(1) {
        let row = compare(quantity, *c, *e, tol);
        if row.rel_error > worst.rel_error {
            worst = row;
        }
    }
    worst
}

/// Runs the robust solver on the quadrature market and compares every output
/// with the closed forms.
pub fn verify_bs(o: &BSOracle, nodes: usize, tol: Option<f64>, opts: &RobustOptions) -> Result<BsReport> {
    let closed_form = bs_closed_form(o)?;
    let tolerance = tol.unwrap_or_else(|| default_tolerance(nodes));
    let started = Instant::now();
    let market = o.market(nodes)?;
    let uf = UtilityFunction::power(0.5)?;
    let sol = solve_robust(&market, &o.constraints(), &uf, o.x, opts)?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    let s = market.observable(TERMINAL_PRICE)?;
    let z_expected: Vec<f64> = s.iter().map(|v| o.z_hat(*v)).collect();
    let x_expected: Vec<f64> = s.iter().map(|v| o.x_hat(*v)).collect();
    // the solver's multiplier acts on S_T itself, the closed form on S_T/s0
    let g = sol.dual.g.first().copied().unwrap_or(0.0) * o.s0;
    let rows = vec![
        compare("u", sol.u_value, closed_form.u, tolerance),
        compare("y_hat", sol.y_hat, closed_form.y_hat, tolerance),
        compare("v(y_hat)", sol.v_at_y_hat, o.v(sol.y_hat), tolerance),
        compare("beta(y_hat)", sol.dual.beta, o.multipliers_at(sol.y_hat).0, tolerance),
        compare("g(y_hat)", g, o.multipliers_at(sol.y_hat).1, tolerance),
        compare_pointwise("Z_hat", &sol.z_hat, &z_expected, tolerance),
        compare_pointwise("X_hat", &sol.x_hat, &x_expected, tolerance),
    ];
    let max_rel_error = rows.iter().fold(0.0_f64, |m, r| m.max(r.rel_error));
    let pass = rows.iter().all(|r| r.pass);
    Ok(BsReport {
        oracle: *o,
        nodes,
        tolerance,
        closed_form,
        rows,
        max_rel_error,
        pass,
        runtime_ms,
        solution: sol,
    })
}

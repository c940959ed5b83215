//! The finite-dimensional dual-of-dual problem at a fixed dual level `y`:
//!
//! ```text
//! maximize  F(g, β) = Σ_λ g_λ a_λ + β − y·E[U⁻¹((β + Σ_λ g_λ h_λ)₊)]
//! over      g_λ ≥ 0 (GE constraints), g_λ free (EQ constraints), β free.
//! ```
//!
//! Its value is `v(y)`, and the worst-case density at level `y` is read off
//! pointwise as `Z_i = y·(U⁻¹)'(w_i₊)` with `w = β + Σ g_λ h_λ`.

mod brute;
mod verify;

pub use brute::{primal_brute_force, BruteForceOptions, BruteForceResult};
pub use verify::{verify_optimality, OptimalityReport};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::concave::{maximize, Ascent, AscentOptions, Eval};
use crate::error::{Error, Result};
use crate::market::{feasibility_check, ConstraintKind, ConstraintSet, FeasibilityReport, FiniteMarket, ResolvedConstraint};
use crate::numeric::KahanSum;
use crate::par;
use crate::utility::UtilityFunction;

/// Multipliers `(g, β)`; `g` is ordered like the constraint set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPoint {
    pub g: Vec<f64>,
    pub beta: f64,
}

impl DualPoint {
    pub fn new(g: Vec<f64>, beta: f64) -> Self {
        Self { g, beta }
    }

    /// `w_i = β + Σ_λ g_λ h_λ(ω_i)`.
    pub fn level(&self, rows: &[ResolvedConstraint], i: usize) -> f64 {
        let mut w = self.beta;
        for (g, r) in self.g.iter().zip(rows) {
            w += g * r.h[i];
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kkt {
    /// Norm of the projected gradient of the dual objective.
    pub grad_norm: f64,
    /// `|E[Z] − 1|`.
    pub normalization_residual: f64,
    /// Per constraint: `max(0, a − E[Zh])` for GE, `|E[Zh] − a|` for EQ.
    pub constraint_residuals: Vec<f64>,
    /// Per constraint: `|g_λ·(E[Zh_λ] − a_λ)|`.
    pub complementarity_residuals: Vec<f64>,
}

impl Kkt {
    pub fn max_residual(&self) -> f64 {
        self.constraint_residuals
            .iter()
            .chain(&self.complementarity_residuals)
            .fold(self.normalization_residual, |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DualSolution {
    pub point: DualPoint,
    /// `v(y)`.
    pub value: f64,
    /// The primal density `Z^y`.
    #[serde(rename = "Z")]
    pub z: Vec<f64>,
    pub kkt: Kkt,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct DualOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub multistarts: usize,
    pub seed: u64,
    /// Run the strict-feasibility LP before solving.
    pub check_feasibility: bool,
    /// For bounded utilities: keep `w < sup U` with a vanishing log-barrier.
    pub log_barrier: bool,
    /// Initial point for the first start (others are perturbations of it).
    pub warm_start: Option<DualPoint>,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 2000,
            multistarts: 4,
            seed: 42,
            check_feasibility: true,
            log_barrier: false,
            warm_start: None,
        }
    }
}

fn check_level(y: f64) -> Result<()> {
    if y > 0.0 && y.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("dual level y must be positive and finite, got {y}")))
    }
}

/// Value and gradient `(∂/∂g_1, …, ∂/∂g_m, ∂/∂β)` of the dual objective.
pub fn dual_objective(
    market: &FiniteMarket,
    constraints: &ConstraintSet,
    uf: &UtilityFunction,
    y: f64,
    point: &DualPoint,
) -> Result<(f64, Vec<f64>)> {
    check_level(y)?;
    let rows = constraints.resolve(market)?;
    if point.g.len() != rows.len() {
        return Err(Error::LengthMismatch {
            expected: rows.len(),
            got: point.g.len(),
        });
    }
    for (g, r) in point.g.iter().zip(&rows) {
        if r.kind == ConstraintKind::Ge && *g < 0.0 {
            return Err(Error::domain("GE multipliers must be nonnegative"));
        }
    }
    let e = evaluate(market, &rows, uf, y, &pack(point), 0.0, false);
    Ok((e.value, e.grad))
}

fn pack(p: &DualPoint) -> Vec<f64> {
    let mut v = p.g.clone();
    v.push(p.beta);
    v
}

fn unpack(v: &[f64]) -> DualPoint {
    let m = v.len() - 1;
    DualPoint::new(v[..m].to_vec(), v[m])
}

/// Objective, gradient and Hessian at the packed point `(g, β)`; with
/// `barrier > 0` a term `barrier·E[log(Δ − w)]` is added for bounded `U`.
fn evaluate(
    market: &FiniteMarket,
    rows: &[ResolvedConstraint],
    uf: &UtilityFunction,
    y: f64,
    x: &[f64],
    barrier: f64,
    with_hessian: bool,
) -> Eval {
    let m = rows.len();
    let beta = x[m];
    let sup = uf.supremum();
    let mut value = KahanSum::new();
    for (g, r) in x[..m].iter().zip(rows) {
        value.add(g * r.bound);
    }
    value.add(beta);
    let mut grad: Vec<KahanSum> = vec![KahanSum::new(); m + 1];
    for (g, r) in grad.iter_mut().zip(rows) {
        g.add(r.bound);
    }
    grad[m].add(1.0);
    let mut hess = DMatrix::zeros(m + 1, m + 1);
    let neg_inf = |m: usize| Eval {
        value: f64::NEG_INFINITY,
        grad: vec![0.0; m + 1],
        hess: DMatrix::zeros(m + 1, m + 1),
    };
    let mut theta = vec![0.0; m + 1];
    theta[m] = 1.0;
    for (i, p) in market.probs().iter().enumerate() {
        let mut w = beta;
        for (l, r) in rows.iter().enumerate() {
            theta[l] = r.h[i];
            w += x[l] * r.h[i];
        }
        if w >= sup {
            return neg_inf(m);
        }
        if barrier > 0.0 && sup.is_finite() {
            let gap = sup - w;
            value.add(barrier * p * gap.ln());
            for (k, t) in theta.iter().enumerate() {
                grad[k].add(-barrier * p * t / gap);
            }
            if with_hessian {
                let c = -barrier * p / (gap * gap);
                add_outer(&mut hess, &theta, c);
            }
        }
        if w <= 0.0 {
            continue;
        }
        value.add(-p * y * uf.inv(w));
        let z = y * uf.inv_prime(w);
        for (k, t) in theta.iter().enumerate() {
            grad[k].add(-p * z * t);
        }
        if with_hessian {
            let c = -p * y * uf.inv_second(w);
            add_outer(&mut hess, &theta, c);
        }
    }
    let value = value.total();
    if !value.is_finite() {
        return neg_inf(m);
    }
    Eval {
        value,
        grad: grad.iter().map(|g| g.total()).collect(),
        hess,
    }
}

fn add_outer(h: &mut DMatrix<f64>, theta: &[f64], c: f64) {
    if c == 0.0 || !c.is_finite() {
        return;
    }
    let k = theta.len();
    for a in 0..k {
        let ca = c * theta[a];
        for b in a..k {
            let v = ca * theta[b];
            h[(a, b)] += v;
            if a != b {
                h[(b, a)] += v;
            }
        }
    }
}

/// The constraint rows actually handed to the optimizer after merging
/// parallel duplicates, and how to map multipliers back.
pub(crate) struct Reduced {
    pub rows: Vec<ResolvedConstraint>,
    /// For each original constraint: `(reduced index, factor)` such that
    /// `g_original = factor·g_reduced`, or `None` when it carries no multiplier.
    pub map: Vec<Option<(usize, f64)>>,
}

fn infeasible() -> Error {
    Error::InfeasibleModel(Box::new(FeasibilityReport {
        feasible: false,
        strictly_feasible: false,
        margin: f64::NEG_INFINITY,
        witness: None,
    }))
}

/// Merges constraints whose observables are positive multiples of each other
/// (keeping the tightest bound), and drops constant observables that the
/// normalization already decides.
pub(crate) fn reduce_constraints(probs: &[f64], rows: &[ResolvedConstraint]) -> Result<Reduced> {
    const SAME: f64 = 1e-12;
    let mut reduced: Vec<ResolvedConstraint> = Vec::new();
    // per reduced row: index of the original constraint supplying the bound, and its scale
    let mut source: Vec<(usize, f64)> = Vec::new();
    let mut map = vec![None; rows.len()];
    for (idx, r) in rows.iter().enumerate() {
        // E|h| is the natural size of E[Z·h]; rows are compared after dividing by it
        let scale: f64 = r.h.iter().zip(probs).map(|(v, p)| p * v.abs()).sum();
        if scale == 0.0 {
            let ok = match r.kind {
                ConstraintKind::Ge => r.bound <= 0.0,
                ConstraintKind::Eq => r.bound == 0.0,
            };
            if !ok {
                return Err(infeasible());
            }
            continue;
        }
        let h: Vec<f64> = r.h.iter().map(|v| v / scale).collect();
        let a = r.bound / scale;
        let first = h[0];
        if h.iter().all(|v| (v - first).abs() <= SAME * (1.0 + first.abs())) {
            // constant observable: E[Z·c] = c is fixed by normalization
            let c = first;
            let ok = match r.kind {
                ConstraintKind::Ge => c >= a - SAME,
                ConstraintKind::Eq => (c - a).abs() <= SAME,
            };
            if !ok {
                return Err(infeasible());
            }
            continue;
        }
        let found = reduced
            .iter()
            .position(|q| q.h.iter().zip(&h).all(|(u, v)| (u - v).abs() <= SAME * (1.0 + u.abs())));
        match found {
            None => {
                reduced.push(ResolvedConstraint {
                    h,
                    kind: r.kind,
                    bound: a,
                });
                source.push((idx, scale));
            }
            Some(k) => {
                let q = &mut reduced[k];
                let tol = SAME * (1.0 + a.abs());
                match (q.kind, r.kind) {
                    (ConstraintKind::Ge, ConstraintKind::Ge) => {
                        if a > q.bound {
                            q.bound = a;
                            source[k] = (idx, scale);
                        }
                    }
                    (ConstraintKind::Eq, ConstraintKind::Eq) => {
                        if (a - q.bound).abs() > tol {
                            return Err(infeasible());
                        }
                    }
                    (ConstraintKind::Eq, ConstraintKind::Ge) => {
                        if a > q.bound + tol {
                            return Err(infeasible());
                        }
                    }
                    (ConstraintKind::Ge, ConstraintKind::Eq) => {
                        if q.bound > a + tol {
                            return Err(infeasible());
                        }
                        q.kind = ConstraintKind::Eq;
                        q.bound = a;
                        source[k] = (idx, scale);
                    }
                }
            }
        }
    }
    for (k, (idx, scale)) in source.iter().enumerate() {
        map[*idx] = Some((k, 1.0 / scale));
    }
    Ok(Reduced { rows: reduced, map })
}

/// The unconstrained optimum `β₀` with `y·(U⁻¹)'(β₀) = 1`, i.e. `β₀ = U(I(y))`.
pub(crate) fn unconstrained_beta(uf: &UtilityFunction, y: f64) -> f64 {
    uf.value(uf.marginal_inverse(y))
}

/// Builds a `DualSolution` (density, KKT residuals) from multipliers given on
/// the original constraint rows.
pub(crate) fn assemble(
    market: &FiniteMarket,
    rows: &[ResolvedConstraint],
    uf: &UtilityFunction,
    y: f64,
    point: DualPoint,
    value: f64,
    grad_norm: f64,
    iterations: usize,
) -> DualSolution {
    let z: Vec<f64> = (0..market.n())
        .map(|i| {
            let w = point.level(rows, i);
            if w <= 0.0 {
                0.0
            } else {
                y * uf.inv_prime(w)
            }
        })
        .collect();
    let normalization_residual = (market.mean(&z) - 1.0).abs();
    let mut constraint_residuals = Vec::with_capacity(rows.len());
    let mut complementarity_residuals = Vec::with_capacity(rows.len());
    for (g, r) in point.g.iter().zip(rows) {
        let ezh = market.mean_by(|i| z[i] * r.h[i]);
        let slack = ezh - r.bound;
        constraint_residuals.push(match r.kind {
            ConstraintKind::Ge => (-slack).max(0.0),
            ConstraintKind::Eq => slack.abs(),
        });
        complementarity_residuals.push((g * slack).abs());
    }
    DualSolution {
        point,
        value,
        z,
        kkt: Kkt {
            grad_norm,
            normalization_residual,
            constraint_residuals,
            complementarity_residuals,
        },
        iterations,
    }
}

fn ascend(
    market: &FiniteMarket,
    reduced: &Reduced,
    uf: &UtilityFunction,
    y: f64,
    start: &[f64],
    opts: &DualOptions,
    unbounded_at: f64,
) -> Ascent {
    let nonneg: Vec<bool> = reduced
        .rows
        .iter()
        .map(|r| r.kind == ConstraintKind::Ge)
        .chain(std::iter::once(false))
        .collect();
    let ascent_opts = |tol: f64| AscentOptions {
        tol,
        max_iter: opts.max_iter,
        unbounded_at,
    };
    let rows = &reduced.rows;
    if opts.log_barrier && uf.supremum().is_finite() {
        let mut x = start.to_vec();
        let mut total = 0;
        let mut mu = 1e-3;
        while mu >= 1e-13 {
            let r = maximize(|v| evaluate(market, rows, uf, y, v, mu, true), &nonneg, &x, &ascent_opts(opts.tol));
            total += r.iterations;
            if !r.value.is_finite() {
                break;
            }
            x = r.x;
            mu *= 0.1;
        }
        let mut r = maximize(|v| evaluate(market, rows, uf, y, v, 0.0, true), &nonneg, &x, &ascent_opts(opts.tol));
        r.iterations += total;
        r
    } else {
        maximize(|v| evaluate(market, rows, uf, y, v, 0.0, true), &nonneg, start, &ascent_opts(opts.tol))
    }
}

/// Initial point for the reduced problem: the warm start mapped onto the
/// reduced rows when available, otherwise `g = 0, β = β₀`.
fn base_start(reduced: &Reduced, uf: &UtilityFunction, y: f64, opts: &DualOptions) -> Vec<f64> {
    let m = reduced.rows.len();
    let mut x = vec![0.0; m + 1];
    x[m] = unconstrained_beta(uf, y);
    if let Some(ws) = &opts.warm_start {
        if ws.g.len() == reduced.map.len() {
            for (orig, slot) in reduced.map.iter().enumerate() {
                if let Some((k, factor)) = slot {
                    x[*k] += ws.g[orig] / factor;
                }
            }
            x[m] = ws.beta;
        }
    }
    x
}

/// Solves the dual-of-dual at level `y` and recovers `Z^y`.
pub fn solve_dual(
    market: &FiniteMarket,
    constraints: &ConstraintSet,
    uf: &UtilityFunction,
    y: f64,
    opts: &DualOptions,
) -> Result<DualSolution> {
    check_level(y)?;
    if !(opts.tol > 0.0) || opts.multistarts == 0 || opts.max_iter == 0 {
        return Err(Error::validation("dual options need tol > 0, multistarts ≥ 1 and max_iter ≥ 1"));
    }
    let rows = constraints.resolve(market)?;
    if opts.check_feasibility {
        let report = feasibility_check(market, constraints, true)?;
        if !report.strictly_feasible {
            return Err(Error::InfeasibleModel(Box::new(report)));
        }
    }
    let reduced = reduce_constraints(market.probs(), &rows)?;
    let m = reduced.rows.len();
    let base = base_start(&reduced, uf, y, opts);
    let v_ref = uf.v(y);
    let unbounded_at = (1.0 + v_ref.abs()) / opts.tol;
    let scales: Vec<f64> = reduced
        .rows
        .iter()
        .map(|r| 1.0 / r.h.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300))
        .collect();
    let beta0 = unconstrained_beta(uf, y).abs().max(1e-12);
    let runs = par::map_indexed(opts.multistarts, |s| {
        let mut start = base.clone();
        if s > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(par::task_seed(opts.seed, s));
            for (k, r) in reduced.rows.iter().enumerate() {
                let mag = beta0 * scales[k] * rng.random_range(0.0..1.0);
                start[k] = match r.kind {
                    ConstraintKind::Ge => start[k].max(0.0) + mag,
                    ConstraintKind::Eq => start[k] + if rng.random_bool(0.5) { mag } else { -mag },
                };
            }
            start[m] *= rng.random_range(0.5..2.0);
        }
        ascend(market, &reduced, uf, y, &start, opts, unbounded_at)
    });
    if let Some(r) = runs.iter().find(|r| r.unbounded) {
        return Err(Error::UnboundedDual { value: r.value });
    }
    let total_iterations: usize = runs.iter().map(|r| r.iterations).sum();
    let best = runs
        .iter()
        .filter(|r| r.converged && r.value.is_finite())
        .fold(None::<&Ascent>, |b, r| match b {
            Some(b) if b.value >= r.value => Some(b),
            _ => Some(r),
        });
    let Some(best) = best else {
        let residual = runs.iter().map(|r| r.pg_norm).fold(f64::INFINITY, f64::min);
        return Err(Error::NonConvergence {
            iterations: total_iterations,
            residual,
        });
    };
    // map multipliers back to the original constraint order
    let reduced_point = unpack(&best.x);
    let mut g = vec![0.0; rows.len()];
    for (orig, slot) in reduced.map.iter().enumerate() {
        if let Some((k, factor)) = slot {
            g[orig] = reduced_point.g[*k] * factor;
        }
    }
    let point = DualPoint::new(g, reduced_point.beta);
    let sol = assemble(market, &rows, uf, y, point, best.value, best.pg_norm, best.iterations);
    let limit = 10.0 * opts.tol;
    let scale_of = |r: &ResolvedConstraint| 1.0 + r.bound.abs() + r.h.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let kkt_ok = sol.kkt.normalization_residual <= limit
        && sol
            .kkt
            .constraint_residuals
            .iter()
            .zip(&rows)
            .all(|(v, r)| *v <= limit * scale_of(r))
        && sol
            .kkt
            .complementarity_residuals
            .iter()
            .zip(&rows)
            .all(|(v, r)| *v <= limit * scale_of(r) * (1.0 + sol.value.abs()));
    if !kkt_ok {
        log::warn!(
            "dual solve at y = {y:e}: KKT residual {:.3e} above 10·tol",
            sol.kkt.max_residual()
        );
    }
    log::debug!(
        "dual solve at y = {y:e}: value {:.12e}, {} iterations, |pg| = {:.3e}",
        sol.value,
        sol.iterations,
        sol.kkt.grad_norm
    );
    Ok(sol)
}

#[cfg(test)]
mod tests;

//! Both sides of the minimax identity for an uncertainty set given as the
//! convex hull of finitely many densities `Q_1..Q_k`:
//!
//! * `inf_sup = min_{λ ∈ Δ_k} u_{Q_λ}(x)` with `Q_λ = Σ λ_j Q_j`, minimized over
//!   the hull weights (`u_Q` is convex in `Q`, with gradient `E[Q_j U(X_λ)]`);
//! * `sup_inf = max {min_j E[Q_j U(X)] : X ≥ 0, E[X] = x}`, computed directly in
//!   wealth space by supergradient ascent, an interior-point polish and, for
//!   `n ≤ 4`, a grid over the budget simplex.
//!
//! The two sides share no code beyond `u_Q`, so their agreement is a genuine
//! check. Every reported value is attained at a feasible point, hence
//! `sup_inf ≤ inf_sup` up to rounding.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::FiniteMarket;
use crate::numeric::KahanSum;
use crate::par;
use crate::robust::classical_u_q;
use crate::utility::UtilityFunction;

/// State-count guard when more than one density is given.
const MAX_STATES: usize = 8;

#[derive(Debug, Clone)]
pub struct MinimaxOptions {
    /// Supergradient multistarts.
    pub starts: usize,
    pub supergradient_iter: usize,
    pub seed: u64,
    /// Grid cross-check for `n ≤ 4`.
    pub grid: bool,
    /// Grid spacing in budget-share coordinates (at least `1e-2` for four states).
    pub grid_step: f64,
    /// Gap below which the optimizers are reported as a saddle candidate.
    pub saddle_tol: f64,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        Self {
            starts: 200,
            supergradient_iter: 300,
            seed: 42,
            grid: true,
            grid_step: 1e-3,
            saddle_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Saddle {
    /// Optimal terminal wealth `X*`.
    pub wealth: Vec<f64>,
    /// Hull weights `λ*` of the least favourable density.
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
    /// Generating density with the largest weight.
    pub dominant: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimaxReport {
    pub sup_inf: f64,
    pub inf_sup: f64,
    /// `inf_sup − sup_inf`.
    pub gap: f64,
    /// `min_j u_{Q_j}(x)` over the generators alone (an upper bound on `inf_sup`).
    pub vertex_min: f64,
    pub hull_weights: Vec<f64>,
    pub supergradient_value: f64,
    pub interior_point_value: f64,
    pub grid_value: Option<f64>,
    pub saddle: Option<Saddle>,
}

fn validate(market: &FiniteMarket, densities: &[Vec<f64>], x: f64) -> Result<()> {
    let n = market.n();
    if densities.is_empty() {
        return Err(Error::EmptySet("minimax check needs at least one density".into()));
    }
    if densities.len() > 1 && n > MAX_STATES {
        return Err(Error::DimensionGuard(format!(
            "minimax check with several densities supports at most {MAX_STATES} states, got {n}"
        )));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("wealth must be positive, got {x}")));
    }
    for (j, q) in densities.iter().enumerate() {
        if q.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: q.len() });
        }
        if let Some(index) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if q.iter().any(|v| *v < 0.0) {
            return Err(Error::validation(format!("density {j} has negative entries")));
        }
        let mean = market.mean(q);
        if (mean - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("density {j} has mean {mean}, expected 1")));
        }
    }
    Ok(())
}

fn combine(densities: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let n = densities[0].len();
    (0..n)
        .map(|i| weights.iter().zip(densities).map(|(w, q)| w * q[i]).sum())
        .collect()
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, si) in s.iter().enumerate() {
        cum += si;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if si - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|vi| (vi - tau).max(0.0)).collect()
}

struct Hull {
    value: f64,
    weights: Vec<f64>,
}

/// `u_{Q_λ}(x)` and its gradient `E[Q_j U(X_λ)]` in `λ`.
fn hull_eval(
    market: &FiniteMarket,
    uf: &UtilityFunction,
    densities: &[Vec<f64>],
    weights: &[f64],
    x: f64,
) -> Result<(f64, Vec<f64>)> {
    let q = combine(densities, weights);
    let mean = market.mean(&q);
    let q: Vec<f64> = q.iter().map(|v| v / mean).collect();
    let sol = classical_u_q(market, uf, &q, x)?;
    let utils: Vec<f64> = sol.wealth.iter().map(|w| uf.value(*w)).collect();
    let grad = densities
        .iter()
        .map(|qj| market.mean_by(|i| if qj[i] > 0.0 { qj[i] * utils[i] } else { 0.0 }))
        .collect();
    Ok((sol.u, grad))
}

/// Minimizes the convex `λ ↦ u_{Q_λ}(x)` over the simplex by projected
/// gradient from every vertex and the barycentre, stopping on the Frank–Wolfe gap.
fn minimize_hull(market: &FiniteMarket, uf: &UtilityFunction, densities: &[Vec<f64>], x: f64) -> Result<Hull> {
    let k = densities.len();
    let mut starts: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if k > 1 {
        starts.push(vec![1.0 / k as f64; k]);
    }
    let runs = par::map_slice(&starts, |start| -> Result<Hull> {
        let mut lam = start.clone();
        let (mut f, mut g) = hull_eval(market, uf, densities, &lam, x)?;
        let mut t = 1.0 / (1.0 + f.abs());
        for _ in 0..5000 {
            let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
            let fw_gap: f64 = g.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() - gmin;
            if fw_gap <= 1e-14 * (1.0 + f.abs()) {
                break;
            }
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = lam.iter().zip(&g).map(|(l, gi)| l - t * gi).collect();
                let cand = project_simplex(&trial);
                let d: Vec<f64> = cand.iter().zip(&lam).map(|(a, b)| a - b).collect();
                let lin: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
                let sq: f64 = d.iter().map(|a| a * a).sum();
                if sq == 0.0 {
                    break;
                }
                let (fc, gc) = hull_eval(market, uf, densities, &cand, x)?;
                if fc <= f + lin + sq / (2.0 * t) + 1e-15 * (1.0 + f.abs()) {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, fc, gc)) = accepted else {
                break;
            };
            let progress = f - fc;
            lam = cand;
            f = fc;
            g = gc;
            t *= 2.0;
            if progress.abs() <= 1e-16 * (1.0 + f.abs()) {
                break;
            }
        }
        Ok(Hull { value: f, weights: lam })
    });
    let mut best: Option<Hull> = None;
    for r in runs {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Worst-case expected utility `min_j E[Q_j U(X)]` and the active index.
fn inner_min(market: &FiniteMarket, uf: &UtilityFunction, densities: &[Vec<f64>], x: &[f64]) -> (f64, usize) {
    let utils: Vec<f64> = x.iter().map(|w| uf.value(*w)).collect();
    densities
        .iter()
        .enumerate()
        .map(|(j, q)| (market.mean_by(|i| if q[i] > 0.0 { q[i] * utils[i] } else { 0.0 }), j))
        .fold((f64::INFINITY, 0), |b, c| if c.0 < b.0 { c } else { b })
}

/// `p`-weighted projection onto `{X ≥ floor, E[X] = x}`.
fn project_budget(p: &[f64], v: &[f64], x: f64, floor: f64) -> Vec<f64> {
    let mass = |tau: f64| -> f64 { v.iter().zip(p).map(|(vi, pi)| pi * (vi - tau).max(floor)).sum() };
    let (mut lo, mut hi) = (
        v.iter().copied().fold(f64::INFINITY, f64::min) - x,
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    while mass(lo) < x {
        lo -= (hi - lo).abs() + 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) >= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out: Vec<f64> = v.iter().map(|vi| (vi - lo).max(floor)).collect();
    let m: f64 = out.iter().zip(p).map(|(a, b)| a * b).sum();
    out.iter().map(|a| a * x / m).collect()
}

/// Projected supergradient ascent with the diminishing step `1/(it+10)`,
/// run from random budget-feasible starts. Returns the best point visited.
fn supergradient(
    market: &FiniteMarket,
    uf: &UtilityFunction,
    densities: &[Vec<f64>],
    x: f64,
    opts: &MinimaxOptions,
) -> (f64, Vec<f64>) {
    let n = market.n();
    let p = market.probs();
    let floor = 1e-12 * x;
    let runs = par::map_indexed(opts.starts.max(1), |s| {
        let start: Vec<f64> = if s == 0 {
            vec![x; n]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(par::task_seed(opts.seed, s));
            let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            let m: f64 = raw.iter().zip(p).map(|(a, b)| a * b).sum();
            raw.iter().map(|r| (r * x / m).max(floor)).collect()
        };
        let mut xv = project_budget(p, &start, x, floor);
        let (mut best, _) = inner_min(market, uf, densities, &xv);
        let mut best_x = xv.clone();
        for it in 0..opts.supergradient_iter {
            let (_, j) = inner_min(market, uf, densities, &xv);
            // supergradient in the p-weighted inner product
            let d: Vec<f64> = (0..n).map(|i| densities[j][i] * uf.marginal(xv[i])).collect();
            let rms = market.mean_by(|i| d[i] * d[i]).sqrt();
            if !(rms > 0.0 && rms.is_finite()) {
                break;
            }
            let step = x / (it as f64 + 10.0) / rms;
            let trial: Vec<f64> = xv.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            xv = project_budget(p, &trial, x, floor);
            let (f, _) = inner_min(market, uf, densities, &xv);
            if f > best {
                best = f;
                best_x = xv.clone();
            }
        }
        (best, best_x)
    });
    runs.into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |b, r| if r.0 > b.0 { r } else { b })
}

/// Log-barrier interior-point method on the epigraph form
/// `max t  s.t.  E[Q_j U(X)] ≥ t,  X > 0,  E[X] = x`.
fn interior_point(
    market: &FiniteMarket,
    uf: &UtilityFunction,
    densities: &[Vec<f64>],
    x: f64,
    start: &[f64],
) -> Vec<f64> {
    let n = market.n();
    let p = market.probs();
    // keep away from the boundary so the barrier is well conditioned
    let mut xv: Vec<f64> = start.iter().map(|v| 0.99 * v + 0.01 * x).collect();
    let (f0, _) = inner_min(market, uf, densities, &xv);
    let mut t = f0 - 0.1 * (1.0 + f0.abs());

    let slacks = |xv: &[f64], t: f64| -> Vec<f64> {
        densities
            .iter()
            .map(|q| {
                (0..n)
                    .map(|i| if q[i] > 0.0 { p[i] * q[i] * uf.value(xv[i]) } else { 0.0 })
                    .collect::<KahanSum>()
                    .total()
                    - t
            })
            .collect()
    };
    let psi = |xv: &[f64], t: f64, mu: f64| -> f64 {
        if xv.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        let s = slacks(xv, t);
        if s.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        let logs: f64 = s.iter().map(|v| v.ln()).sum::<f64>() + (0..n).map(|i| p[i] * xv[i].ln()).sum::<f64>();
        -t - mu * logs
    };

    let scale = 1.0 + f0.abs();
    let mut mu = 1e-2 * scale;
    while mu >= 1e-13 * scale {
        for _ in 0..100 {
            let s = slacks(&xv, t);
            let dim = n + 1;
            let mut grad = DVector::zeros(dim);
            let mut hess = DMatrix::zeros(dim, dim);
            grad[n] = -1.0;
            for (j, q) in densities.iter().enumerate() {
                let mut a = DVector::zeros(dim);
                for i in 0..n {
                    a[i] = p[i] * q[i] * uf.marginal(xv[i]);
                }
                a[n] = -1.0;
                let inv = 1.0 / s[j];
                grad -= &a * (mu * inv);
                hess += &a * a.transpose() * (mu * inv * inv);
                for i in 0..n {
                    hess[(i, i)] -= mu * inv * p[i] * q[i] * uf.marginal_slope(xv[i]);
                }
            }
            for i in 0..n {
                grad[i] -= mu * p[i] / xv[i];
                hess[(i, i)] += mu * p[i] / (xv[i] * xv[i]);
            }
            // equality-constrained Newton step
            let mut kkt = DMatrix::zeros(dim + 1, dim + 1);
            kkt.view_mut((0, 0), (dim, dim)).copy_from(&hess);
            for i in 0..n {
                kkt[(i, dim)] = p[i];
                kkt[(dim, i)] = p[i];
            }
            let mut rhs = DVector::zeros(dim + 1);
            rhs.rows_mut(0, dim).copy_from(&(-&grad));
            // symmetric diagonal equilibration: state probabilities span many
            // orders of magnitude on quadrature markets
            let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let eq: Vec<f64> = (0..=dim)
                .map(|r| if r < dim && kkt[(r, r)] > 0.0 { 1.0 / kkt[(r, r)].sqrt() } else { 1.0 / pn })
                .collect();
            let scaled = DMatrix::from_fn(dim + 1, dim + 1, |r, c| eq[r] * kkt[(r, c)] * eq[c]);
            let srhs = DVector::from_fn(dim + 1, |r, _| eq[r] * rhs[r]);
            let Some(sol) = scaled.lu().solve(&srhs) else {
                break;
            };
            let d = DVector::from_fn(dim, |r, _| eq[r] * sol[r]);
            let decrement = -grad.dot(&d);
            if !(decrement > 1e-15 * scale) {
                break;
            }
            // fraction to the boundary of X > 0
            let mut step = 1.0_f64;
            for i in 0..n {
                if d[i] < 0.0 {
                    step = step.min(-0.99 * xv[i] / d[i]);
                }
            }
            let f = psi(&xv, t, mu);
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = (0..n).map(|i| xv[i] + step * d[i]).collect();
                let tc = t + step * d[n];
                let fc = psi(&cand, tc, mu);
                if fc <= f - 1e-4 * step * decrement {
                    xv = cand;
                    t = tc;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        mu *= 0.1;
    }
    // restore the budget exactly
    let m = market.mean(&xv);
    xv.iter().map(|v| v * x / m).collect()
}

/// Best point on the grid of budget shares `p_i X_i / x ∈ step·ℕ`, `n ≤ 4`.
fn grid_sweep(market: &FiniteMarket, uf: &UtilityFunction, densities: &[Vec<f64>], x: f64, step: f64) -> (f64, Vec<f64>) {
    let n = market.n();
    let p = market.probs();
    let m = (1.0 / step).round() as usize;
    let point = |shares: &[usize]| -> Vec<f64> { (0..n).map(|i| shares[i] as f64 / m as f64 * x / p[i]).collect() };
    let best_of = |candidates: &mut dyn Iterator<Item = Vec<usize>>| -> (f64, Vec<f64>) {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for shares in candidates {
            let xv = point(&shares);
            let (f, _) = inner_min(market, uf, densities, &xv);
            if f > best.0 {
                best = (f, xv);
            }
        }
        best
    };
    let runs = match n {
        1 => vec![best_of(&mut std::iter::once(vec![m]))],
        2 => vec![best_of(&mut (0..=m).map(|a| vec![a, m - a]))],
        3 => par::map_indexed(m + 1, |a| best_of(&mut (0..=m - a).map(move |b| vec![a, b, m - a - b]))),
        _ => par::map_indexed(m + 1, |a| {
            best_of(&mut (0..=m - a).flat_map(move |b| (0..=m - a - b).map(move |c| vec![a, b, c, m - a - b - c])))
        }),
    };
    runs.into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |b, r| if r.0 > b.0 { r } else { b })
}

/// Computes both sides of the minimax identity over the convex hull of
/// `densities` at initial wealth `x`.
pub fn minimax_check(
    market: &FiniteMarket,
    densities: &[Vec<f64>],
    uf: &UtilityFunction,
    x: f64,
    opts: &MinimaxOptions,
) -> Result<MinimaxReport> {
    validate(market, densities, x)?;
    let vertex_min = densities
        .iter()
        .map(|q| classical_u_q(market, uf, q, x).map(|s| s.u))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let hull = minimize_hull(market, uf, densities, x)?;

    let (sg_value, sg_x) = supergradient(market, uf, densities, x, opts);
    let ip_x = interior_point(market, uf, densities, x, &sg_x);
    let (ip_value, _) = inner_min(market, uf, densities, &ip_x);
    let (mut sup_inf, mut x_star) = if ip_value >= sg_value { (ip_value, ip_x) } else { (sg_value, sg_x) };

    let grid_value = if opts.grid && market.n() <= 4 {
        // four states: the full-resolution grid has ~1.7e8 points, use a coarser one
        let step = if market.n() <= 3 { opts.grid_step } else { opts.grid_step.max(1e-2) };
        let (gv, gx) = grid_sweep(market, uf, densities, x, step);
        if gv > sup_inf {
            sup_inf = gv;
            x_star = gx;
        }
        Some(gv)
    } else {
        None
    };

    let inf_sup = hull.value.min(vertex_min);
    let gap = inf_sup - sup_inf;
    if gap < -1e-9 * (1.0 + inf_sup.abs()) {
        log::warn!("weak duality violated: sup_inf = {sup_inf}, inf_sup = {inf_sup}");
    }
    let saddle = (gap.abs() <= opts.saddle_tol).then(|| {
        let density = combine(densities, &hull.weights);
        let dominant = hull
            .weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, w)| if *w > b.1 { (j, *w) } else { b })
            .0;
        Saddle {
            wealth: x_star.clone(),
            weights: hull.weights.clone(),
            density,
            dominant,
        }
    });
    Ok(MinimaxReport {
        sup_inf,
        inf_sup,
        gap,
        vertex_min,
        hull_weights: hull.weights,
        supergradient_value: sg_value,
        interior_point_value: ip_value,
        grid_value,
        saddle,
    })
}

//! Projected Newton ascent for smooth concave functions of a few variables,
//! some of which are constrained to be nonnegative.
//!
//! Used for the multiplier problems: the dual-of-dual in `(g, β)` and the
//! weighted-projection duals of the brute-force oracle.

use nalgebra::{DMatrix, DVector};

/// Value, gradient and Hessian at a point. `value = −∞` marks a domain exit.
pub(crate) struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub pg_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The value exceeded the unboundedness threshold.
    pub unbounded: bool,
}

pub(crate) struct AscentOptions {
    /// Stop when `‖projected gradient‖ ≤ tol·(1 + |value|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Values above this are reported as unbounded.
    pub unbounded_at: f64,
}

fn project(x: &mut [f64], nonneg: &[bool]) {
    for (v, nn) in x.iter_mut().zip(nonneg) {
        if *nn && *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub(crate) fn projected_gradient(x: &[f64], grad: &[f64], nonneg: &[bool]) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .zip(nonneg)
        .map(|((xi, gi), nn)| if *nn && *xi <= 0.0 { gi.max(0.0) } else { *gi })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Newton direction on the free coordinates: `(−H_FF + λI) d_F = g_F`.
fn newton_direction(e: &Eval, free: &[usize], lambda: f64) -> Option<Vec<f64>> {
    let k = free.len();
    let scale = free.iter().fold(0.0_f64, |m, &i| m.max(-e.hess[(i, i)]));
    let reg = lambda * scale.max(1e-300) + 1e-14 * scale;
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for (r, &i) in free.iter().enumerate() {
        b[r] = e.grad[i];
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = -e.hess[(i, j)];
        }
        a[(r, r)] += reg;
    }
    let chol = a.cholesky()?;
    let d = chol.solve(&b);
    let mut full = vec![0.0; e.grad.len()];
    for (r, &i) in free.iter().enumerate() {
        full[i] = d[r];
    }
    full.iter().all(|v| v.is_finite()).then_some(full)
}

/// Projected line search along `x + t·d`. Returns the accepted point and its evaluation.
fn line_search<F>(f: &F, x: &[f64], e: &Eval, d: &[f64], nonneg: &[bool], t0: f64) -> Option<(Vec<f64>, Eval, f64)>
where
    F: Fn(&[f64]) -> Eval,
{
    let scale = 1.0 + e.value.abs();
    let mut t = t0;
    for _ in 0..60 {
        let mut cand: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        project(&mut cand, nonneg);
        let predicted: f64 = e.grad.iter().zip(cand.iter().zip(x)).map(|(g, (c, a))| g * (c - a)).sum();
        if predicted <= 0.0 {
            t *= 0.5;
            continue;
        }
        let ec = f(&cand);
        if ec.value.is_finite() {
            let gain = ec.value - e.value;
            if gain >= 1e-4 * predicted {
                return Some((cand, ec, t));
            }
            // Below rounding level the value cannot certify progress; accept a
            // step that does not lose value and shrinks the projected gradient.
            if predicted <= 1e-12 * scale && gain >= -1e-14 * scale {
                let pg_old = norm(&projected_gradient(x, &e.grad, nonneg));
                let pg_new = norm(&projected_gradient(&cand, &ec.grad, nonneg));
                if pg_new < pg_old {
                    return Some((cand, ec, t));
                }
            }
        }
        t *= 0.5;
    }
    None
}

/// Maximizes a concave `f` from `x0`, projecting `nonneg` coordinates onto `[0, ∞)`.
pub(crate) fn maximize<F>(f: F, nonneg: &[bool], x0: &[f64], opts: &AscentOptions) -> Ascent
where
    F: Fn(&[f64]) -> Eval,
{
    let mut x = x0.to_vec();
    project(&mut x, nonneg);
    let mut e = f(&x);
    let mut lambda = 1e-12;
    let mut pg_step = f64::NAN;
    let mut iterations = 0;
    let finish = |x: Vec<f64>, e: Eval, iterations, converged, unbounded| {
        let pg = projected_gradient(&x, &e.grad, nonneg);
        Ascent {
            pg_norm: norm(&pg),
            x,
            value: e.value,
            iterations,
            converged,
            unbounded,
        }
    };
    if !e.value.is_finite() {
        return finish(x, e, 0, false, false);
    }
    while iterations < opts.max_iter {
        if e.value > opts.unbounded_at {
            return finish(x, e, iterations, false, true);
        }
        let pg = projected_gradient(&x, &e.grad, nonneg);
        if norm(&pg) <= opts.tol * (1.0 + e.value.abs()) {
            return finish(x, e, iterations, true, false);
        }
        iterations += 1;
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| !(nonneg[i] && x[i] <= 0.0 && e.grad[i] <= 0.0))
            .collect();
        let mut step = None;
        if let Some(d) = newton_direction(&e, &free, lambda) {
            step = line_search(&f, &x, &e, &d, nonneg, 1.0);
            match &step {
                Some((_, _, t)) if *t == 1.0 => lambda = (lambda * 0.1).max(1e-14),
                _ => lambda = (lambda * 10.0).min(1e6),
            }
        } else {
            lambda = (lambda * 100.0).min(1e6);
        }
        if step.is_none() {
            // steepest ascent with a step scaled by the curvature
            if !pg_step.is_finite() {
                let curv = (0..x.len()).fold(0.0_f64, |m, i| m.max(-e.hess[(i, i)]));
                pg_step = if curv > 0.0 { 1.0 / curv } else { 1.0 };
            }
            step = line_search(&f, &x, &e, &pg, nonneg, pg_step * 4.0);
            if let Some((_, _, t)) = &step {
                pg_step = *t;
            }
        }
        match step {
            Some((xn, en, _)) => {
                x = xn;
                e = en;
            }
            None => {
                // stalled: converged only if at the rounding floor
                let pg = projected_gradient(&x, &e.grad, nonneg);
                let converged = norm(&pg) <= 1e3 * opts.tol * (1.0 + e.value.abs());
                return finish(x, e, iterations, converged, false);
            }
        }
    }
    let pg = projected_gradient(&x, &e.grad, nonneg);
    let converged = norm(&pg) <= opts.tol * (1.0 + e.value.abs());
    finish(x, e, iterations, converged, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_constrained_quadratic() {
        // maximize −(x−1)² − (y+2)² − xy/2 with y ≥ 0
        let f = |v: &[f64]| {
            let (x, y) = (v[0], v[1]);
            Eval {
                value: -(x - 1.0).powi(2) - (y + 2.0).powi(2) - 0.5 * x * y,
                grad: vec![-2.0 * (x - 1.0) - 0.5 * y, -2.0 * (y + 2.0) - 0.5 * x],
                hess: DMatrix::from_row_slice(2, 2, &[-2.0, -0.5, -0.5, -2.0]),
            }
        };
        let r = maximize(
            f,
            &[false, true],
            &[5.0, 5.0],
            &AscentOptions {
                tol: 1e-12,
                max_iter: 100,
                unbounded_at: 1e12,
            },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-12 && r.x[1] == 0.0);
    }

    #[test]
    fn reports_unbounded() {
        let f = |v: &[f64]| Eval {
            value: v[0],
            grad: vec![1.0],
            hess: DMatrix::zeros(1, 1),
        };
        let r = maximize(
            f,
            &[false],
            &[0.0],
            &AscentOptions {
                tol: 1e-9,
                max_iter: 1000,
                unbounded_at: 1e9,
            },
        );
        assert!(r.unbounded);
    }
}

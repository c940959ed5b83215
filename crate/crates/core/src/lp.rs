//! Dense two-phase primal simplex with Bland's rule, for the small feasibility
//! programs over density polytopes.

/// `minimize c·x  s.t.  A x = b,  x ≥ 0`.
#[derive(Debug, Clone)]
pub struct StandardLp {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 50_000;

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Column count excluding the right-hand side.
    cols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.rows[r][self.cols]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let p = self.rows[r][e];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[e];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[e] = 0.0;
            }
        }
        self.basis[r] = e;
    }

    /// Runs simplex iterations for cost vector `cost` over columns where `allowed` holds.
    fn optimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> LpStatus {
        for _ in 0..MAX_PIVOTS {
            // reduced costs d_j = c_j − Σ_r c_{B(r)} T[r][j]
            let mut entering = None;
            for j in 0..self.cols {
                if !allowed(j) || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for (r, row) in self.rows.iter().enumerate() {
                    d -= cost[self.basis[r]] * row[j];
                }
                if d < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(e) = entering else {
                return LpStatus::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][e];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-14
                                || (ratio <= lratio + 1e-14 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return LpStatus::Unbounded;
            };
            self.pivot(r, e);
        }
        LpStatus::IterationLimit
    }
}

pub fn solve(lp: &StandardLp) -> LpSolution {
    let m = lp.a.len();
    let n = lp.c.len();
    let mut rows = Vec::with_capacity(m);
    for (i, row) in lp.a.iter().enumerate() {
        assert_eq!(row.len(), n, "LP row {i} has wrong length");
        let scale = row.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(1e-300);
        let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut t = vec![0.0; n + m + 1];
        for (j, v) in row.iter().enumerate() {
            t[j] = sign * v / scale;
        }
        t[n + i] = 1.0;
        t[n + m] = sign * lp.b[i] / scale;
        rows.push(t);
    }
    let mut tab = Tableau {
        rows,
        basis: (n..n + m).collect(),
        cols: n + m,
    };

    // phase 1: minimize the sum of artificials
    let mut cost1 = vec![0.0; n + m];
    for c in cost1.iter_mut().skip(n) {
        *c = 1.0;
    }
    let status = tab.optimize(&cost1, &|_| true);
    if status == LpStatus::IterationLimit {
        return LpSolution {
            status,
            x: vec![0.0; n],
            objective: f64::NAN,
        };
    }
    let infeas: f64 = (0..m).filter(|r| tab.basis[*r] >= n).map(|r| tab.rhs(r)).sum();
    let b_scale = tab.rows.iter().fold(1.0_f64, |s, r| s.max(r[n + m].abs()));
    if infeas > 1e-9 * b_scale {
        return LpSolution {
            status: LpStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::NAN,
        };
    }
    // drive remaining artificials out of the basis; drop redundant rows
    let mut r = 0;
    while r < tab.rows.len() {
        if tab.basis[r] >= n {
            let col = (0..n).find(|&j| tab.rows[r][j].abs() > 1e-9 && !tab.basis.contains(&j));
            match col {
                Some(j) => tab.pivot(r, j),
                None => {
                    tab.rows.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    let mut cost2 = lp.c.clone();
    cost2.extend(std::iter::repeat_n(0.0, m));
    let status = tab.optimize(&cost2, &|j| j < n);
    let mut x = vec![0.0; n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(r).max(0.0);
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution { status, x, objective }
}

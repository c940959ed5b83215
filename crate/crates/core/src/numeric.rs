//! Small one-dimensional numerical helpers shared by the solvers.

/// Compensated (Kahan–Babuška/Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// `Σ w_i v_i` in fixed order with compensation. No length or finiteness checks.
#[inline]
pub fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .collect::<KahanSum>()
        .total()
}

/// `n` points log-uniformly spaced on `[lo, hi]`, endpoints included.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Result of a golden-section search.
#[derive(Debug, Clone, Copy)]
pub struct GoldenResult {
    pub x: f64,
    pub f: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]` until the bracket
/// width is at most `width`. Returns the best probed point.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, width: f64, max_iter: usize) -> GoldenResult
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_GOLDEN * (b - a);
    let mut d = a + INV_GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > width && iterations < max_iter {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_GOLDEN * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let (x, fx) = if fc <= fd { (c, fc) } else { (d, fd) };
    GoldenResult {
        x,
        f: fx,
        lo: a,
        hi: b,
        iterations,
    }
}

/// Bisection for a root of a monotone `f` on `[lo, hi]` where `f(lo)` and `f(hi)`
/// differ in sign. Bisects in log space when `geometric` is set (requires `lo > 0`).
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, geometric: bool, iterations: usize) -> f64
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let lo_negative = f_lo < 0.0;
    for _ in 0..iterations {
        let mid = if geometric { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if geometric {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// Largest absolute value of a slice (0 for an empty slice).
pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Sup-norm distance between two equally long slices.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = KahanSum::new();
        acc.add(1.0);
        for _ in 0..10_000 {
            acc.add(1e-16);
        }
        assert!((acc.total() - (1.0 + 1e-12)).abs() < 1e-20);
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let r = golden_section(|x| (x - 0.3) * (x - 0.3), -1.0, 2.0, 1e-10, 200);
        assert!((r.x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn bisect_geometric() {
        let root = bisect(|x| x * x - 2.0, 1e-3, 1e3, true, 200);
        assert!((root - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1e-6, 1e6, 13);
        assert_eq!(g[0], 1e-6);
        assert_eq!(g[12], 1e6);
        assert!((g[6] - 1.0).abs() < 1e-12);
    }
}

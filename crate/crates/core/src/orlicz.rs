//! Modulars built from the perspective pair `γ*_Y` / `γ_Y` on a finite market,
//! their Luxemburg and Amemiya norms, and a randomized inequality battery.
//!
//! Values are extended reals: `+∞` propagates through expectations and the
//! norm searches treat it as "too large".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::FiniteMarket;
use crate::numeric::{bisect, golden_section, KahanSum};
use crate::par;
use crate::utility::UtilityFunction;

const NORM_LO: f64 = 1e-300;
const NORM_HI: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModularKind {
    /// `E[|Z|·V(Y/|Z|)]`.
    EtaStar,
    /// `E[Y·U⁻¹(|X|)]`.
    Eta,
}

#[derive(Debug, Clone)]
pub struct Modular<'a> {
    market: &'a FiniteMarket,
    uf: &'a UtilityFunction,
    kind: ModularKind,
    deflator: Vec<f64>,
}

impl<'a> Modular<'a> {
    /// Complete-case modular with deflator `Y ≡ 1`.
    pub fn new(market: &'a FiniteMarket, uf: &'a UtilityFunction, kind: ModularKind) -> Self {
        Self {
            market,
            uf,
            kind,
            deflator: vec![1.0; market.n()],
        }
    }

    /// Replaces the deflator; it must be componentwise nonnegative with `E[Y] ≤ 1`.
    pub fn with_deflator(mut self, deflator: Vec<f64>) -> Result<Self> {
        check_deflator(self.market, &deflator)?;
        self.deflator = deflator;
        Ok(self)
    }

    pub fn kind(&self) -> ModularKind {
        self.kind
    }

    pub fn deflator(&self) -> &[f64] {
        &self.deflator
    }

    pub fn market(&self) -> &FiniteMarket {
        self.market
    }

    /// The modular evaluated at `Z` (extended real, `≥ 0`).
    pub fn value(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.market.n() {
            return Err(Error::LengthMismatch {
                expected: self.market.n(),
                got: z.len(),
            });
        }
        Ok(self.eval(z, 1.0))
    }

    /// Modular of `scale·Z` without allocating.
    fn eval(&self, z: &[f64], scale: f64) -> f64 {
        let y = &self.deflator;
        let mut acc = KahanSum::new();
        for (i, p) in self.market.probs().iter().enumerate() {
            let zi = (scale * z[i]).abs();
            if zi == 0.0 {
                continue;
            }
            let term = match self.kind {
                ModularKind::EtaStar => self.uf.gamma_star(y[i], zi),
                ModularKind::Eta => self.uf.gamma(y[i], zi),
            };
            if term == f64::INFINITY {
                return f64::INFINITY;
            }
            acc.add(p * term);
        }
        acc.total()
    }
}

fn check_deflator(market: &FiniteMarket, y: &[f64]) -> Result<()> {
    if y.len() != market.n() {
        return Err(Error::LengthMismatch {
            expected: market.n(),
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation(format!("deflator entry {i} is negative or non-finite")));
    }
    let mean = market.mean(y);
    if mean > 1.0 + 1e-12 {
        return Err(Error::validation(format!("deflator has expectation {mean} > 1")));
    }
    Ok(())
}

/// `modular_value` as a free function.
pub fn modular_value(modular: &Modular<'_>, z: &[f64]) -> Result<f64> {
    modular.value(z)
}

fn check_finite(z: &[f64]) -> Result<()> {
    match z.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// `inf{β > 0 : modular(Z/β) ≤ 1}`; `+∞` if no `β ≤ 1e300` qualifies.
pub fn luxemburg_norm(modular: &Modular<'_>, z: &[f64]) -> Result<f64> {
    modular.value(z)?;
    check_finite(z)?;
    let zmax = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if zmax == 0.0 {
        return Ok(0.0);
    }
    let excess = |beta: f64| modular.eval(z, 1.0 / beta) - 1.0;
    let mut hi = zmax;
    while excess(hi) > 0.0 {
        hi *= 16.0;
        if hi > NORM_HI {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = hi;
    while excess(lo) <= 0.0 {
        lo /= 16.0;
        if lo < NORM_LO {
            return Ok(lo);
        }
    }
    // excess is decreasing in β; iterate until the relative width is below 1e-12
    let mut a = lo;
    let mut b = hi;
    for _ in 0..200 {
        if b / a - 1.0 <= 1e-12 {
            break;
        }
        let mid = (a * b).sqrt();
        if excess(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(b)
}

/// `inf_{k>0} (1 + modular(kZ))/k`, by golden-section search on `log k`.
pub fn amemiya_norm(modular: &Modular<'_>, z: &[f64]) -> Result<f64> {
    let lux = luxemburg_norm(modular, z)?;
    if lux == 0.0 {
        return Ok(0.0);
    }
    if lux.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let f = |t: f64| {
        let k = t.exp();
        (1.0 + modular.eval(z, k)) / k
    };
    // at k = 1/lux the objective equals 2·lux; expand a bracket around it
    let t0 = -lux.ln();
    let f0 = f(t0);
    let mut step = 1.0;
    let (mut lo, mut hi) = (t0 - step, t0 + step);
    while f(lo) < f0 && lo > NORM_LO.ln() {
        step *= 2.0;
        lo = t0 - step;
    }
    step = 1.0;
    while f(hi) < f0 {
        step *= 2.0;
        hi = t0 + step;
        if hi > NORM_HI.ln() {
            // the infimum is approached as k → ∞ (linear-growth modular)
            return Ok(f(hi).min(f0));
        }
    }
    let r = golden_section(f, lo, hi, 1e-10, 500);
    Ok(r.f.min(f0))
}

/// The deflator family over which the incomplete-case modular takes its infimum.
#[derive(Debug, Clone)]
pub enum DeflatorSet {
    Finite(Vec<Vec<f64>>),
    /// `{Y : lower ≤ Y ≤ upper, E[Y] ≤ mass}` (a one-period stand-in).
    Polytope { lower: Vec<f64>, upper: Vec<f64>, mass: f64 },
}

#[derive(Debug, Clone)]
pub struct IncompleteModular {
    pub value: f64,
    pub deflator: Vec<f64>,
}

/// `I(Z) = inf_Y E[|Z|·V(Y/|Z|)]` over a deflator set, with an attaining `Y`.
pub fn modular_i_incomplete(
    market: &FiniteMarket,
    uf: &UtilityFunction,
    set: &DeflatorSet,
    z: &[f64],
    seed: u64,
) -> Result<IncompleteModular> {
    match set {
        DeflatorSet::Finite(family) => {
            if family.is_empty() {
                return Err(Error::EmptySet("deflator family is empty".into()));
            }
            let mut best: Option<IncompleteModular> = None;
            for y in family {
                let m = Modular::new(market, uf, ModularKind::EtaStar).with_deflator(y.clone())?;
                let value = m.value(z)?;
                if best.as_ref().is_none_or(|b| value < b.value) {
                    best = Some(IncompleteModular {
                        value,
                        deflator: y.clone(),
                    });
                }
            }
            Ok(best.expect("nonempty family"))
        }
        DeflatorSet::Polytope { lower, upper, mass } => polytope_infimum(market, uf, lower, upper, *mass, z, seed),
    }
}

/// Projection in the `p`-weighted metric onto `{l ≤ Y ≤ u, E[Y] ≤ mass}`:
/// `Y_i = clamp(v_i − μ, l_i, u_i)` with the smallest `μ ≥ 0` meeting the mass bound.
fn project_box_mass(p: &[f64], lower: &[f64], upper: &[f64], mass: f64, v: &[f64]) -> Vec<f64> {
    let clamp = |mu: f64| -> Vec<f64> {
        v.iter()
            .zip(lower.iter().zip(upper))
            .map(|(vi, (l, u))| (vi - mu).clamp(*l, *u))
            .collect()
    };
    let mean = |y: &[f64]| y.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
    let y0 = clamp(0.0);
    if mean(&y0) <= mass {
        return y0;
    }
    let mut hi = 1.0;
    while mean(&clamp(hi)) > mass {
        hi *= 2.0;
    }
    let mu = bisect(|mu| mean(&clamp(mu)) - mass, 0.0, hi, false, 200);
    let mut y = clamp(mu);
    // guard the last ulp of the mass bound
    let m = mean(&y);
    if m > mass && m > 0.0 {
        for v in y.iter_mut() {
            *v *= mass / m;
        }
    }
    y
}

fn polytope_infimum(
    market: &FiniteMarket,
    uf: &UtilityFunction,
    lower: &[f64],
    upper: &[f64],
    mass: f64,
    z: &[f64],
    seed: u64,
) -> Result<IncompleteModular> {
    let n = market.n();
    for (name, v) in [("lower", lower), ("upper", upper)] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: v.len(),
            });
        }
        check_finite(v).map_err(|_| Error::validation(format!("deflator polytope '{name}' is not finite")))?;
    }
    if lower.iter().zip(upper).any(|(l, u)| *l < 0.0 || l > u) || !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::EmptySet("deflator polytope needs 0 ≤ lower ≤ upper and mass in (0, 1]".into()));
    }
    if market.mean(lower) > mass + 1e-12 {
        return Err(Error::EmptySet("deflator polytope is empty (E[lower] > mass)".into()));
    }
    let p = market.probs();
    let zabs: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    let objective = |y: &[f64]| market.mean_by(|i| uf.gamma_star(y[i], zabs[i]));
    // gradient in the p-weighted metric: ∂/∂Y_i [z V(Y_i/z)] = −I(Y_i/z)
    let gradient = |y: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| if zabs[i] == 0.0 { 0.0 } else { -uf.marginal_inverse(y[i] / zabs[i]) })
            .collect()
    };
    const STARTS: usize = 50;
    let runs = par::map_indexed(STARTS, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::task_seed(seed, s));
        let start: Vec<f64> = (0..n)
            .map(|i| {
                let w: f64 = if s == 0 { 1.0 } else { rng.random_range(0.05..1.0) };
                lower[i] + w * (upper[i] - lower[i])
            })
            .collect();
        let mut y = project_box_mass(p, lower, upper, mass, &start);
        let mut f = objective(&y);
        if !f.is_finite() {
            return (f, y);
        }
        let mut step = 1.0;
        for _ in 0..2000 {
            let g = gradient(&y);
            let mut accepted = false;
            while step > 1e-16 {
                let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let cand = project_box_mass(p, lower, upper, mass, &trial);
                let decrease: f64 = (0..n).map(|i| p[i] * g[i] * (y[i] - cand[i])).sum();
                let fc = objective(&cand);
                if fc.is_finite() && fc <= f - 1e-4 * decrease.max(0.0) {
                    let moved = (0..n).map(|i| (cand[i] - y[i]).abs()).fold(0.0, f64::max);
                    y = cand;
                    let improvement = f - fc;
                    f = fc;
                    accepted = true;
                    step *= 2.0;
                    if moved <= 1e-14 * (1.0 + y.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
                        || improvement <= 1e-16 * (1.0 + f.abs())
                    {
                        return (f, y);
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (f, y)
    });
    let (value, deflator) = runs
        .into_iter()
        .fold((f64::INFINITY, Vec::new()), |best, run| if run.0 < best.0 { run } else { best });
    if deflator.is_empty() {
        // every start had an infinite value: the infimum is +∞
        return Ok(IncompleteModular {
            value: f64::INFINITY,
            deflator: project_box_mass(p, lower, upper, mass, upper),
        });
    }
    Ok(IncompleteModular { value, deflator })
}

/// Worst margins of the inequality battery (positive margin = inequality holds).
#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub samples: usize,
    pub violations: usize,
    /// `2‖Z‖^l_I ‖X‖^l_J − |E[XZ]|`.
    pub worst_holder: f64,
    /// `I(Z) + J(X) − E[XZ]`.
    pub worst_young: f64,
    /// `‖·‖^a − ‖·‖^l`, over both the `I` and `J` norms.
    pub worst_norm_lower: f64,
    /// `2‖·‖^l − ‖·‖^a`.
    pub worst_norm_upper: f64,
}

struct SampleMargins {
    holder: f64,
    young: f64,
    lower: f64,
    upper: f64,
    violated: bool,
}

const BATTERY_SLACK: f64 = 1e-9;

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect()
}

fn battery_sample(market: &FiniteMarket, uf: &UtilityFunction, z: &[f64], x: &[f64]) -> Result<SampleMargins> {
    let i_mod = Modular::new(market, uf, ModularKind::EtaStar);
    let j_mod = Modular::new(market, uf, ModularKind::Eta);
    let exz = market.mean_by(|i| x[i] * z[i]);
    let (iz, jx) = (i_mod.value(z)?, j_mod.value(x)?);
    let (lz, lx) = (luxemburg_norm(&i_mod, z)?, luxemburg_norm(&j_mod, x)?);
    let (az, ax) = (amemiya_norm(&i_mod, z)?, amemiya_norm(&j_mod, x)?);
    let slack = |rhs: f64| BATTERY_SLACK * (1.0 + rhs.abs());
    let holder_rhs = 2.0 * lz * lx;
    let holder = holder_rhs - exz.abs();
    let young = iz + jx - exz;
    let lower = (az - lz).min(ax - lx);
    let upper = (2.0 * lz - az).min(2.0 * lx - ax);
    let violated = holder < -slack(holder_rhs)
        || young < -slack(iz + jx)
        || az - lz < -slack(az)
        || ax - lx < -slack(ax)
        || 2.0 * lz - az < -slack(az)
        || 2.0 * lx - ax < -slack(ax);
    Ok(SampleMargins {
        holder,
        young,
        lower,
        upper,
        violated,
    })
}

/// Draws `samples` random pairs `(Z, X)` and checks the Hölder, Young and norm
/// equivalence inequalities for the complete-case modulars `I` (η*) and `J` (η).
/// Samples may be evaluated in parallel; margins are reduced in sample order.
pub fn inequality_battery(
    market: &FiniteMarket,
    uf: &UtilityFunction,
    samples: usize,
    seed: u64,
) -> Result<BatteryReport> {
    if samples == 0 {
        return Err(Error::validation("inequality battery needs at least one sample"));
    }
    let n = market.n();
    let results = par::map_indexed(samples, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::task_seed(seed, s));
        let z = random_vector(&mut rng, n);
        let x = random_vector(&mut rng, n);
        battery_sample(market, uf, &z, &x)
    });
    let mut report = BatteryReport {
        samples,
        violations: 0,
        worst_holder: f64::INFINITY,
        worst_young: f64::INFINITY,
        worst_norm_lower: f64::INFINITY,
        worst_norm_upper: f64::INFINITY,
    };
    for r in results {
        let m = r?;
        report.violations += usize::from(m.violated);
        report.worst_holder = report.worst_holder.min(m.holder);
        report.worst_young = report.worst_young.min(m.young);
        report.worst_norm_lower = report.worst_norm_lower.min(m.lower);
        report.worst_norm_upper = report.worst_norm_upper.min(m.upper);
    }
    if report.violations > 0 {
        log::warn!("inequality battery: {} of {samples} samples violated a bound", report.violations);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{gauss_hermite_market, LognormalSpec};
    use std::collections::BTreeMap;

    fn uniform(n: usize) -> FiniteMarket {
        FiniteMarket::new(vec![1.0 / n as f64; n], BTreeMap::new()).unwrap()
    }

    fn half() -> UtilityFunction {
        UtilityFunction::power(0.5).unwrap()
    }

    #[test]
    fn modular_examples() {
        let m = uniform(4);
        let uf = half();
        let star = Modular::new(&m, &uf, ModularKind::EtaStar);
        let eta = Modular::new(&m, &uf, ModularKind::Eta);
        assert!((star.value(&[1.0; 4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(star.value(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(eta.value(&[0.0; 4]).unwrap(), 0.0);
        assert!((eta.value(&[2.0; 4]).unwrap() - 1.0).abs() < 1e-15);
        // even
        let z = [0.3, -1.2, 2.0, 0.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert_eq!(star.value(&z).unwrap(), star.value(&neg).unwrap());
        assert!(star.value(&[1.0; 3]).is_err());
    }

    #[test]
    fn norm_examples() {
        let m = uniform(5);
        let uf = half();
        let star = Modular::new(&m, &uf, ModularKind::EtaStar);
        assert!((luxemburg_norm(&star, &[1.0; 5]).unwrap() - 1.0).abs() < 1e-11);
        assert!((amemiya_norm(&star, &[1.0; 5]).unwrap() - 2.0).abs() < 1e-10);
        assert_eq!(luxemburg_norm(&star, &[0.0; 5]).unwrap(), 0.0);
        assert_eq!(amemiya_norm(&star, &[0.0; 5]).unwrap(), 0.0);
        let l1 = luxemburg_norm(&star, &[1.0; 5]).unwrap();
        let l3 = luxemburg_norm(&star, &[3.0; 5]).unwrap();
        assert!((l3 - 3.0 * l1).abs() < 1e-10);
    }

    #[test]
    fn amemiya_is_twice_luxemburg_for_squared_norm() {
        let m = uniform(6);
        let uf = half();
        let star = Modular::new(&m, &uf, ModularKind::EtaStar);
        let z = [0.1, -2.0, 0.7, 3.3, 0.0, 1.1];
        let l = luxemburg_norm(&star, &z).unwrap();
        let a = amemiya_norm(&star, &z).unwrap();
        // modular is E[Z²]: Luxemburg is the L² norm
        let l2 = (z.iter().map(|v| v * v).sum::<f64>() / 6.0).sqrt();
        assert!((l - l2).abs() < 1e-11 * l2);
        assert!((a - 2.0 * l).abs() < 1e-9 * l);
    }

    #[test]
    fn finite_deflator_family() {
        let m = uniform(3);
        let uf = half();
        let z = [1.0, 0.5, 2.0];
        let single = modular_i_incomplete(&m, &uf, &DeflatorSet::Finite(vec![vec![1.0; 3]]), &z, 1).unwrap();
        let direct = Modular::new(&m, &uf, ModularKind::EtaStar).value(&z).unwrap();
        assert_eq!(single.value, direct);
        let y1 = vec![1.0, 0.9, 1.0];
        let y2 = vec![0.5, 0.5, 0.9];
        let r = modular_i_incomplete(&m, &uf, &DeflatorSet::Finite(vec![y2, y1.clone()]), &z, 1).unwrap();
        assert_eq!(r.deflator, y1);
        assert!(modular_i_incomplete(&m, &uf, &DeflatorSet::Finite(vec![]), &z, 1).is_err());
        assert!(Modular::new(&m, &uf, ModularKind::EtaStar)
            .with_deflator(vec![2.0, 1.0, 1.0])
            .is_err());
    }

    #[test]
    fn polytope_matches_grid() {
        let m = FiniteMarket::new(vec![0.2, 0.5, 0.3], BTreeMap::new()).unwrap();
        let uf = UtilityFunction::power(0.4).unwrap();
        let z = [1.3, 0.6, 1.0];
        let lower = vec![0.2; 3];
        let upper = vec![1.5, 1.2, 1.4];
        let mass = 0.95;
        let set = DeflatorSet::Polytope {
            lower: lower.clone(),
            upper: upper.clone(),
            mass,
        };
        let r = modular_i_incomplete(&m, &uf, &set, &z, 7).unwrap();
        // V is decreasing, so the grid only needs the face E[Y] = mass
        let p = m.probs();
        let obj = |y: &[f64]| (0..3).map(|i| p[i] * uf.gamma_star(y[i], z[i])).sum::<f64>();
        let mut best = f64::INFINITY;
        let step = 1e-3;
        let mut y0 = lower[0];
        while y0 <= upper[0] + 1e-12 {
            let mut y1 = lower[1];
            while y1 <= upper[1] + 1e-12 {
                let y2 = (mass - p[0] * y0 - p[1] * y1) / p[2];
                if y2 >= lower[2] && y2 <= upper[2] {
                    best = best.min(obj(&[y0, y1, y2]));
                }
                y1 += step;
            }
            y0 += step;
        }
        assert!((r.value - best).abs() < 1e-5, "{} vs {}", r.value, best);
        assert!(r.value <= best + 1e-12);
        assert!(m.mean(&r.deflator) <= mass + 1e-12);
    }

    #[test]
    fn battery_on_quadrature_market() {
        let m = gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, 16).unwrap()).unwrap();
        let r = inequality_battery(&m, &half(), 50, 3).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
        let r = inequality_battery(&m, &UtilityFunction::power(0.3).unwrap(), 50, 4).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
    }

    #[test]
    fn young_example() {
        let m = uniform(2);
        let uf = half();
        let i1 = Modular::new(&m, &uf, ModularKind::EtaStar).value(&[1.0, 1.0]).unwrap();
        let j1 = Modular::new(&m, &uf, ModularKind::Eta).value(&[1.0, 1.0]).unwrap();
        assert!((i1 + j1 - 1.25).abs() < 1e-15);
    }
}

use std::collections::BTreeMap;

use super::*;
use crate::market::{gauss_hermite_market, LognormalSpec, TERMINAL_PRICE};

fn half() -> UtilityFunction {
    UtilityFunction::power(0.5).unwrap()
}

fn bs(nodes: usize) -> FiniteMarket {
    gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, nodes).unwrap()).unwrap()
}

#[test]
fn objective_at_origin() {
    let m = bs(16);
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1);
    let (v, g) = dual_objective(&m, &c, &half(), 1.0, &DualPoint::new(vec![0.0], 0.0)).unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(g, vec![1.1, 1.0]);
    assert!(dual_objective(&m, &c, &half(), 0.0, &DualPoint::new(vec![0.0], 0.0)).is_err());
}

#[test]
fn objective_at_closed_form_point() {
    let m = bs(64);
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1);
    let e = 0.25f64.exp();
    let beta = 2.0 * (e - 1.1) / (e - 1.0);
    let g = 2.0 * 0.1 / (e - 1.0);
    assert!((beta - 1.295838).abs() < 1e-6 && (g - 0.704162).abs() < 1e-6);
    let (v, grad) = dual_objective(&m, &c, &half(), 1.0, &DualPoint::new(vec![g], beta)).unwrap();
    assert!((v - 1.035208).abs() < 2e-3, "{v}");
    assert!(grad.iter().all(|d| d.abs() < 2e-3), "{grad:?}");
}

#[test]
fn bs_dual_solve() {
    let m = bs(64);
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1);
    let sol = solve_dual(&m, &c, &half(), 1.0, &DualOptions::default()).unwrap();
    assert!((sol.value - 1.035208).abs() < 1e-3, "{}", sol.value);
    let e = 0.25f64.exp();
    let s = m.observable(TERMINAL_PRICE).unwrap();
    for (z, si) in sol.z.iter().zip(s) {
        let exact = (e - 1.1 + si * 0.1) / (e - 1.0);
        assert!((z - exact).abs() <= 1e-3 * exact, "{z} vs {exact}");
    }
    assert!(sol.kkt.max_residual() < 1e-8, "{:?}", sol.kkt);
    let rep = verify_optimality(&m, &c, &half(), 1.0, &sol).unwrap();
    assert!(rep.passes(1e-6), "{rep:?}");
}

#[test]
fn inactive_constraint_gives_reference_measure() {
    let m = bs(32);
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, 0.9);
    for y in [0.5, 1.0, 2.0] {
        let sol = solve_dual(&m, &c, &half(), y, &DualOptions::default()).unwrap();
        assert_eq!(sol.point.g, vec![0.0]);
        assert!((sol.point.beta - 2.0 / y).abs() < 1e-12);
        assert!(sol.z.iter().all(|z| (z - 1.0).abs() < 1e-12));
        assert!((sol.value - 1.0 / y).abs() < 1e-12);
    }
}

#[test]
fn two_state_equality() {
    let mut obs = BTreeMap::new();
    obs.insert("h".to_string(), vec![0.0, 2.0]);
    let m = FiniteMarket::new(vec![0.5, 0.5], obs).unwrap();
    let c = ConstraintSet::empty().eq("h", 1.0);
    let sol = solve_dual(&m, &c, &half(), 1.0, &DualOptions::default()).unwrap();
    assert!(sol.z.iter().all(|z| (z - 1.0).abs() < 1e-9), "{:?}", sol.z);
    assert!((sol.value - 1.0).abs() < 1e-9);
    let rep = verify_optimality(&m, &c, &half(), 1.0, &sol).unwrap();
    assert!(rep.passes(1e-9));
}

#[test]
fn unconstrained_verification_is_exact() {
    let m = bs(16);
    let sol = solve_dual(&m, &ConstraintSet::empty(), &half(), 1.0, &DualOptions::default()).unwrap();
    let rep = verify_optimality(&m, &ConstraintSet::empty(), &half(), 1.0, &sol).unwrap();
    assert!(rep.max() < 1e-12, "{rep:?}");
}

#[test]
fn perturbation_is_detected() {
    let m = bs(16);
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1);
    let mut sol = solve_dual(&m, &c, &half(), 1.0, &DualOptions::default()).unwrap();
    let j = 8;
    sol.z[j] += 0.1;
    let mean = m.mean(&sol.z);
    for v in sol.z.iter_mut() {
        *v /= mean;
    }
    let rep = verify_optimality(&m, &c, &half(), 1.0, &sol).unwrap();
    assert!(rep.pointwise >= 0.05, "{rep:?}");
}

#[test]
fn infeasible_and_boundary_errors() {
    let m = bs(16);
    let smax = m.observable(TERMINAL_PRICE).unwrap().iter().cloned().fold(0.0, f64::max);
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, smax + 1.0);
    assert!(matches!(
        solve_dual(&m, &c, &half(), 1.0, &DualOptions::default()),
        Err(Error::InfeasibleModel(_))
    ));
    let opts = DualOptions {
        check_feasibility: false,
        ..DualOptions::default()
    };
    assert!(matches!(
        solve_dual(&m, &c, &half(), 1.0, &opts),
        Err(Error::UnboundedDual { .. })
    ));
}

#[test]
fn duplicate_constraints_are_merged() {
    let m = bs(32);
    let mut obs = m.observables().clone();
    let s = obs[TERMINAL_PRICE].clone();
    obs.insert("S2".into(), s.iter().map(|v| 2.0 * v).collect());
    let m2 = FiniteMarket::from_weights(m.probs().to_vec(), obs).unwrap();
    let single = solve_dual(&m, &ConstraintSet::empty().ge(TERMINAL_PRICE, 1.1), &half(), 1.0, &DualOptions::default()).unwrap();
    let c = ConstraintSet::empty().ge(TERMINAL_PRICE, 1.05).ge("S2", 2.2);
    let dup = solve_dual(&m2, &c, &half(), 1.0, &DualOptions::default()).unwrap();
    assert!((single.value - dup.value).abs() < 1e-10);
    assert_eq!(dup.point.g[0], 0.0);
    assert!((dup.point.g[1] * 2.0 - single.point.g[0]).abs() < 1e-8);
}

#[test]
fn brute_force_matches_on_small_instance() {
    let mut obs = BTreeMap::new();
    obs.insert("h".to_string(), vec![0.0, 1.0, 3.0]);
    let m = FiniteMarket::new(vec![0.3, 0.4, 0.3], obs).unwrap();
    let c = ConstraintSet::empty().ge("h", 1.6);
    let uf = half();
    let d = solve_dual(&m, &c, &uf, 1.0, &DualOptions::default()).unwrap();
    let b = primal_brute_force(&m, &c, &uf, 1.0, &BruteForceOptions::default()).unwrap();
    assert!((d.value - b.value).abs() <= 1e-6 * (1.0 + d.value.abs()), "{} vs {}", d.value, b.value);
    assert!(b.grid_value.unwrap() >= d.value - 1e-9);
    let unc = primal_brute_force(&m, &ConstraintSet::empty(), &uf, 2.0, &BruteForceOptions::default()).unwrap();
    assert!((unc.value - 0.5).abs() < 1e-9);
}

#[test]
fn brute_force_guards() {
    let m = FiniteMarket::new(vec![1.0 / 13.0; 13], BTreeMap::new()).unwrap();
    assert!(matches!(
        primal_brute_force(&m, &ConstraintSet::empty(), &half(), 1.0, &BruteForceOptions::default()),
        Err(Error::DimensionGuard(_))
    ));
}

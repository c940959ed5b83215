use std::collections::BTreeMap;

use super::*;
use crate::error::Error;
use crate::market::{FiniteMarket, LognormalSpec, TERMINAL_PRICE};
use crate::robust::RobustOptions;
use crate::utility::UtilityFunction;

fn half() -> UtilityFunction {
    UtilityFunction::power(0.5).unwrap()
}

fn uniform(n: usize) -> FiniteMarket {
    FiniteMarket::new(vec![1.0 / n as f64; n], BTreeMap::new()).unwrap()
}

fn reference_oracle() -> BSOracle {
    BSOracle::new(0.5, 1.0, 1.1, 1.0).unwrap()
}

#[test]
fn closed_form_constants() {
    let cf = bs_closed_form(&reference_oracle()).unwrap();
    assert!((cf.k - 1.035_208_2).abs() < 1e-7);
    assert!((cf.u - 2.034_904).abs() < 1e-6);
    assert!((cf.y_hat - 1.017_452).abs() < 1e-6);
    let (beta, g) = reference_oracle().multipliers_at(1.0);
    assert!((beta - 1.295_838).abs() < 1e-6);
    assert!((g - 0.704_162).abs() < 1e-6);
}

#[test]
fn inactive_limit() {
    let o = BSOracle::new(0.5, 1.0, 1.0 + 1e-9, 2.0).unwrap();
    assert!((o.k() - 1.0).abs() < 1e-15);
    assert!((o.u() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    for s in [0.01, 1.0, 5.0] {
        assert!((o.z_hat(s) - 1.0).abs() < 1e-7);
    }
}

#[test]
fn regime_is_enforced() {
    assert!(matches!(BSOracle::new(0.5, 1.0, 1.5, 1.0), Err(Error::Regime(_))));
    assert!(matches!(BSOracle::new(0.5, 1.0, 0.9, 1.0), Err(Error::Regime(_))));
}

#[test]
fn density_is_normalised_on_quadrature() {
    let o = reference_oracle();
    let m = o.market(64).unwrap();
    let s = m.observable(TERMINAL_PRICE).unwrap();
    let z: Vec<f64> = s.iter().map(|v| o.z_hat(*v)).collect();
    assert!((m.mean(&z) - 1.0).abs() < 1e-10);
    assert!((m.mean_by(|i| z[i] * s[i]) - 1.1).abs() < 1e-8);
}

#[test]
fn verify_bs_passes_at_64_nodes() {
    let r = verify_bs(&reference_oracle(), 64, None, &RobustOptions::default()).unwrap();
    assert!(r.pass, "{:#?}", r.rows);
    assert!(r.max_rel_error <= 1e-3);
}

#[test]
fn minimax_without_robustness() {
    let m = uniform(3);
    let r = minimax_check(&m, &[vec![1.0; 3]], &half(), 1.0, &MinimaxOptions::default()).unwrap();
    assert!((r.inf_sup - 2.0).abs() < 1e-12);
    assert!((r.sup_inf - 2.0).abs() < 1e-9);
    assert!(r.saddle.is_some());
}

#[test]
fn minimax_two_state_symmetric() {
    let m = uniform(2);
    let qs = vec![vec![1.2, 0.8], vec![0.8, 1.2]];
    let r = minimax_check(&m, &qs, &half(), 1.0, &MinimaxOptions::default()).unwrap();
    assert!(r.gap.abs() <= 1e-4, "{r:?}");
    assert!(r.gap >= -1e-9);
    // the hull contains P itself, so the least favourable value is the classical one
    assert!((r.inf_sup - 2.0).abs() < 1e-9);
    assert!(r.vertex_min > r.inf_sup);
    assert!(r.grid_value.is_some());
}

#[test]
fn minimax_on_bs_worst_case_density() {
    let o = reference_oracle();
    let m = o.market(64).unwrap();
    let z: Vec<f64> = m.observable(TERMINAL_PRICE).unwrap().iter().map(|s| o.z_hat(*s)).collect();
    let r = minimax_check(&m, &[z], &half(), 1.0, &MinimaxOptions::default()).unwrap();
    assert!((r.sup_inf - 2.034_904).abs() < 1e-3, "{r:?}");
    assert!((r.inf_sup - 2.034_904).abs() < 1e-3);
    assert!(r.gap.abs() < 1e-6);
}

#[test]
fn minimax_value_is_concave_in_wealth() {
    let m = FiniteMarket::new(vec![0.2, 0.5, 0.3], BTreeMap::new()).unwrap();
    let qs = vec![vec![2.5, 1.0, 0.0], vec![0.5, 1.2, 1.0]];
    let opts = MinimaxOptions {
        grid: false,
        ..MinimaxOptions::default()
    };
    let xs = [0.5, 1.0, 1.5, 2.0];
    let vals: Vec<f64> = xs
        .iter()
        .map(|x| minimax_check(&m, &qs, &half(), *x, &opts).unwrap().sup_inf)
        .collect();
    for w in vals.windows(3) {
        assert!(w[1] >= 0.5 * (w[0] + w[2]) - 1e-9);
    }
}

#[test]
fn minimax_guard() {
    let m = uniform(9);
    let qs = vec![vec![1.0; 9], vec![1.0; 9]];
    let err = minimax_check(&m, &qs, &half(), 1.0, &MinimaxOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DimensionGuard(_)));
}

#[test]
fn sandwich_examples() {
    let m = uniform(4);
    let r = sandwich_check(&m, &[vec![1.0; 4]], &half(), &[1.0, 4.0]).unwrap();
    assert_eq!(r.violations, 0);
    let at1 = &r.rows[0];
    assert!((at1.luxemburg - 1.0).abs() < 1e-9 && (at1.amemiya - 2.0).abs() < 1e-9);
    assert!((at1.u_q - 2.0).abs() < 1e-12);
    assert!((at1.u_q - at1.lower).abs() < 1e-8);
    let at4 = &r.rows[1];
    assert!((at4.u_q - 4.0).abs() < 1e-12 && (at4.upper - 5.0).abs() < 1e-8);
}

#[test]
fn sandwich_random_densities() {
    let m = LognormalSpec::new(0.5, 1.0, 1.0, 64).and_then(|s| crate::gauss_hermite_market(&s)).unwrap();
    let zs = random_densities(&m, 50, 7);
    let r = sandwich_check(&m, &zs, &half(), &[0.5, 1.0, 4.0]).unwrap();
    assert_eq!(r.rows.len(), 150);
    assert_eq!(r.violations, 0, "upper {}, lower {}", r.min_upper_margin, r.min_lower_margin);
}

#[test]
fn truncated_sequence() {
    let spec = LognormalSpec::new(0.5, 1.0, 1.0, 64).unwrap();
    let r = truncation_check(&spec, 1.1, 1.0, 6).unwrap();
    assert!(r.rows.len() >= 3);
    assert!(r.tail_decreasing && r.value_nondecreasing);
    assert!(r.rows.iter().all(|row| row.mean_h >= 1.1 * row.n as f64));
    assert!(r.affine_residual_half < 1e-8, "{}", r.affine_residual_half);
    assert!(r.quadratic_residual_third < 1e-8, "{}", r.quadratic_residual_third);
    assert!(r.affine_residual_third > 1e-4, "{}", r.affine_residual_third);
    assert!(r.minimizer_distance > 1e-3);
}

//! JSON scenario files: an explicit finite market or a lognormal generator,
//! plus constraints and optional vectors/densities for the diagnostic commands.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{gauss_hermite_market, Constraint, ConstraintKind, ConstraintSet, FiniteMarket, LognormalSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Generator {
    Lognormal(LognormalSpec),
}

/// On-disk schema. Either `probs`/`observables` or `generator` must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_observables: Option<BTreeMap<String, f64>>,
    /// Absolute tolerance for the martingale check of price observables (default 1e-8).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    /// Named vectors for the `norms` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<BTreeMap<String, Vec<f64>>>,
    /// Generating densities for the `minimax` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub densities: Option<Vec<Vec<f64>>>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub market: FiniteMarket,
    pub constraints: ConstraintSet,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub densities: Vec<Vec<f64>>,
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("{origin}:{}:{}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    /// Builds the market, attaches price flags and validates the constraints.
    pub fn into_scenario(self) -> Result<Scenario> {
        let market = match (&self.generator, &self.probs) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("scenario gives both 'generator' and 'probs'"));
            }
            (Some(Generator::Lognormal(spec)), None) => {
                if self.observables.is_some() {
                    return Err(Error::validation("generator scenarios cannot declare 'observables'"));
                }
                gauss_hermite_market(spec)?
            }
            (None, Some(probs)) => {
                let obs = self.observables.clone().unwrap_or_default();
                let mut market = FiniteMarket::new(probs.clone(), obs)?;
                let tol = self.price_tolerance.unwrap_or(1e-8);
                if !(tol > 0.0) {
                    return Err(Error::validation("price_tolerance must be positive"));
                }
                for (id, initial) in self.price_observables.iter().flatten() {
                    market = market.with_price(id, *initial, tol)?;
                }
                market
            }
            (None, None) => return Err(Error::validation("scenario needs either 'probs' or 'generator'")),
        };
        let constraints = ConstraintSet::new(self.constraints);
        constraints.validate(&market)?;
        let vectors = self.vectors.unwrap_or_default();
        for (name, v) in &vectors {
            if v.len() != market.n() {
                return Err(Error::validation(format!(
                    "vector '{name}' has {} entries, expected {}",
                    v.len(),
                    market.n()
                )));
            }
        }
        let densities = self.densities.unwrap_or_default();
        for (j, d) in densities.iter().enumerate() {
            if d.len() != market.n() {
                return Err(Error::validation(format!(
                    "density {j} has {} entries, expected {}",
                    d.len(),
                    market.n()
                )));
            }
        }
        Ok(Scenario {
            market,
            constraints,
            vectors,
            densities,
        })
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        ScenarioFile::parse(&text, &path.display().to_string())?.into_scenario()
    }
}

/// Reads and validates a scenario file, returning its market and constraints.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(FiniteMarket, ConstraintSet)> {
    let s = Scenario::load(path)?;
    Ok((s.market, s.constraints))
}

/// A random finite scenario with `states` states, `constraints` GE constraints
/// on observables `h1, h2, …` and `densities` random generating densities.
///
/// Probabilities are bounded away from zero. Each bound is the mean of its
/// observable under a random strictly positive density, so the constraint set
/// is nonempty and, for non-degenerate draws, strictly feasible; whether a
/// constraint binds at the optimum varies from draw to draw.
pub fn random_scenario(states: usize, constraints: usize, densities: usize, seed: u64) -> Result<ScenarioFile> {
    if states < 2 {
        return Err(Error::validation("a random scenario needs at least 2 states"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..states)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            0.2 + e
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let reference: Vec<f64> = (0..states).map(|_| rng.random_range(0.3..1.7)).collect();
    let ref_mean: f64 = reference.iter().zip(&probs).map(|(a, b)| a * b).sum();
    let mut observables = BTreeMap::new();
    let mut items = Vec::new();
    for k in 0..constraints {
        let name = format!("h{}", k + 1);
        let h: Vec<f64> = (0..states)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            })
            .collect();
        let bound = (0..states).map(|i| probs[i] * reference[i] / ref_mean * h[i]).sum();
        items.push(Constraint {
            observable: name.clone(),
            kind: ConstraintKind::Ge,
            bound,
        });
        observables.insert(name, h);
    }
    let dens = (0..densities)
        .map(|_| {
            let raw: Vec<f64> = (0..states)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    e
                })
                .collect();
            let m: f64 = raw.iter().zip(&probs).map(|(a, b)| a * b).sum();
            raw.iter().map(|r| r / m).collect()
        })
        .collect::<Vec<Vec<f64>>>();
    Ok(ScenarioFile {
        probs: Some(probs),
        observables: Some(observables),
        constraints: items,
        densities: (densities > 0).then_some(dens),
        ..ScenarioFile::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ConstraintKind;

    #[test]
    fn random_scenarios_are_valid() {
        for seed in 0..20 {
            let f = random_scenario(5, 2, 3, seed).unwrap();
            let text = serde_json::to_string(&f).unwrap();
            let s = ScenarioFile::parse(&text, "mem").unwrap().into_scenario().unwrap();
            assert_eq!(s.densities.len(), 3);
            let report = crate::market::feasibility_check(&s.market, &s.constraints, false).unwrap();
            assert!(report.feasible);
        }
    }

    #[test]
    fn two_state_file() {
        let text = r#"{"probs":[0.5,0.5],"observables":{"h":[0,2]},
                       "constraints":[{"observable":"h","kind":"ge","bound":1.5}]}"#;
        let s = ScenarioFile::parse(text, "mem").unwrap().into_scenario().unwrap();
        assert_eq!(s.market.n(), 2);
        assert_eq!(s.constraints.len(), 1);
        assert_eq!(s.constraints.items()[0].kind, ConstraintKind::Ge);
    }

    #[test]
    fn bad_sum_and_undeclared() {
        let text = r#"{"probs":[0.5,0.49],"observables":{"h":[0,2]},"constraints":[]}"#;
        let err = ScenarioFile::parse(text, "mem").unwrap().into_scenario().unwrap_err();
        assert!(err.to_string().contains("probs must sum to 1"));
        let text = r#"{"probs":[0.5,0.5],"observables":{"h":[0,2]},
                       "constraints":[{"observable":"g","kind":"eq","bound":1}]}"#;
        let err = ScenarioFile::parse(text, "mem").unwrap().into_scenario().unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn parse_error_has_location() {
        let err = ScenarioFile::parse("{\"probs\": [0.5,\n oops]}", "f.json").unwrap_err();
        match err {
            Error::Parse { context, .. } => assert!(context.starts_with("f.json:2:")),
            other => panic!("unexpected {other:?}"),
        }
        let err = ScenarioFile::parse(r#"{"probs":[1], "constraints":[{"observable":"h","kind":"le","bound":1}]}"#, "f")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn generator_form() {
        let text = r#"{"generator":{"type":"lognormal","sigma":0.5,"T":1,"s0":1,"nodes":64},
                       "constraints":[{"observable":"S_T","kind":"ge","bound":1.1}]}"#;
        let s = ScenarioFile::parse(text, "mem").unwrap().into_scenario().unwrap();
        assert_eq!(s.market.n(), 64);
        assert!(s.market.prices().contains_key("S_T"));
    }

    #[test]
    fn price_martingale_check() {
        let text = r#"{"probs":[0.5,0.5],"observables":{"S":[0.5,1.6]},"price_observables":{"S":1.0}}"#;
        assert!(ScenarioFile::parse(text, "mem").unwrap().into_scenario().is_err());
        let text = r#"{"probs":[0.5,0.5],"observables":{"S":[0.5,1.5]},"price_observables":{"S":1.0}}"#;
        assert!(ScenarioFile::parse(text, "mem").unwrap().into_scenario().is_ok());
    }
}

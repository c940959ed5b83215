//! Robust utility maximization from terminal wealth in finite complete markets
//! whose uncertainty set is a polytope of densities cut out by moment constraints.

pub(crate) mod concave;
pub mod dual;
pub mod error;
pub mod lp;
pub mod market;
pub mod numeric;
pub mod orlicz;
pub mod par;
pub mod robust;
pub mod scenario;
pub mod utility;
pub mod verifier;

pub use error::{Error, Result};
pub use market::{
    feasibility_check, gauss_hermite_market, Constraint, ConstraintKind, ConstraintSet, FeasibilityReport,
    FiniteMarket, LognormalSpec, TERMINAL_PRICE,
};
pub use scenario::{load_scenario, random_scenario, Scenario, ScenarioFile};
pub use utility::{CustomUtility, Delta2Constants, UtilityFunction};

//! Independent oracles for the solvers: the lognormal closed forms, a
//! two-sided minimax computation on finite instances, the coercivity sandwich
//! for `u_Q`, and the truncated conditional-law sequence.

mod bs;
mod minimax;
mod sandwich;
mod truncation;

pub use bs::{bs_closed_form, default_tolerance, verify_bs, BSOracle, BsClosedForm, BsReport, Comparison};
pub use minimax::{minimax_check, MinimaxOptions, MinimaxReport, Saddle};
pub use sandwich::{random_densities, random_density, sandwich_check, SandwichReport, SandwichRow};
pub use truncation::{truncation_check, TruncationReport, TruncationRow};

#[cfg(test)]
mod tests;

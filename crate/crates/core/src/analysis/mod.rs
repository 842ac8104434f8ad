//! Ground-truth oracles: efficient allocations, equilibrium checks and
//! existence, constructive pricing procedures, structural classifiers.

pub mod certificate;
pub mod constructive;
pub mod efficient;
pub mod equilibrium;
pub mod existence;
pub mod linear;
pub mod structure;

pub use certificate::{CertificateError, CertificateKind, EquilibriumCertificate};
pub use constructive::{
    equilibrium_no_input_complementarities, equilibrium_polytree, sufficient_value_polytree, ConstructError,
};
pub use efficient::{efficient_allocation, efficient_optima, min_cost_serving, Mode, Optima};
pub use equilibrium::{
    bound_report, check_competitive_equilibrium, check_lambda_delta, classify_outcome, classify_protocol_outcome,
    max_surplus, would_be_surplus, BoundReport, Classification, LambdaDeltaReport, LambdaParams, OutcomeClass,
};
pub use existence::{competitive_equilibrium_exists, equilibrium_system, Clash, Existence};
pub use structure::{has_input_complementarities, is_polytree, is_tree};

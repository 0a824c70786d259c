//! Desk-scale laboratory for data-constrained pre-training experiments:
//! train small autoregressive models under fixed token budgets, certify
//! locally optimal hyperparameters, ensemble by logit averaging, fit
//! saturating power laws and their asymptotes, compute data-efficiency
//! ratios, and distill teachers into fresh students.

pub mod corpus;
pub mod distill;
pub mod ensemble;
pub mod hypersearch;
pub mod ledger;
pub mod model;
pub mod scalinglaw;
pub mod tensor;
pub mod trainer;
pub mod workspace;

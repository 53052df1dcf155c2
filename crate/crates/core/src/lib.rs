//! Policy evaluation with accelerated (low-rank preconditioned) temporal
//! difference learning, linear baselines, and exact expected-update analysis.

pub mod linalg;
pub mod mdp;
pub mod features;
pub mod svd;
pub mod traces;
pub mod learners;
pub mod analysis;
pub mod eval;

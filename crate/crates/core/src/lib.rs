//! Reservoir matched-pair designs for online A/B tests.
//!
//! Units arrive one at a time with covariates and must be assigned to
//! treatment or control immediately. A *reservoir design* either gives the
//! arrival a fresh fair coin (and parks it in the reservoir of unpaired
//! units) or pairs it with a reservoir unit and assigns the opposite arm.
//!
//! The crate is organised as:
//!
//! * [`engine`] – the assignment state machine shared by every design.
//! * [`designs`] – IID, packing-radius, KK14, oracle-g and offline Bai-optimal designs.
//! * [`estimators`] – the IPW estimator and exact conditional-variance formulas.
//! * [`numerics`] – standardization, Cholesky, quantiles, PCA and logistic regression.
//! * [`dgp`] – synthetic data-generating processes and the Criteo semi-synthetic pipeline.
//! * [`harness`] – seeded Monte-Carlo replication, CSV output and the CLI.

pub mod designs;
pub mod dgp;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod numerics;
pub mod rng;

pub use designs::{
    bai_optimal_matching, iid_policy, kk14_policy, oracle_g_policy, packing_policy, packing_radius,
    Kk14Config, OracleGConfig, PackingConfig,
};
pub use engine::{
    engine_step, run_stream, Arm, Decision, DesignPolicy, DiagnosticsTrace, History, PairingState, RunOutput,
    UnitRecord,
};
pub use error::{Error, Result};
pub use estimators::{
    conditional_variance, empty_reservoir_variance, exact_variance_oracle, ipw_estimate, OutcomeModel,
    UnitMoments,
};
pub use numerics::Matrix;
pub use rng::RandomSource;

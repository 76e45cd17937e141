//! The assignment policies compared in the benchmark: IID coin flips, the
//! packing-radius design, the Mahalanobis design of Kapelner & Krieger
//! (KK14), packing on the true `g(X)`, and the offline sort-and-pair design.

mod kk14;
mod oracle;
mod packing;

pub use kk14::{kk14_cutoff, kk14_policy, Kk14Config, Kk14Policy};
pub use oracle::{bai_optimal_assign, bai_optimal_matching, oracle_g_policy, OracleGConfig, OracleGPolicy};
pub use packing::{packing_policy, packing_radius, PackingConfig, PackingPolicy};

use crate::engine::{Decision, DesignPolicy, History, PairingState};

/// Every unit gets its own fair coin.
#[derive(Debug, Clone, Default)]
pub struct IidPolicy;

impl DesignPolicy for IidPolicy {
    fn name(&self) -> String {
        "iid".into()
    }

    fn decide(&mut self, _: &History<'_>, _: &PairingState) -> Decision {
        Decision::NewIndependent
    }
}

pub fn iid_policy() -> IidPolicy {
    IidPolicy
}

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use super::packing::{packing_policy, PackingConfig, PackingPolicy};
use crate::engine::{Arm, Decision, DesignPolicy, History, PairingState};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::RandomSource;

pub type GFunction = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct OracleGConfig {
    /// The true `g(x) = μ₁(x) + μ₀(x)`.
    pub g: GFunction,
    pub delta: f64,
}

impl fmt::Debug for OracleGConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleGConfig")
            .field("delta", &self.delta)
            .finish_non_exhaustive()
    }
}

pub fn oracle_g_policy(cfg: OracleGConfig) -> Result<OracleGPolicy> {
    let inner = packing_policy(PackingConfig {
        delta: cfg.delta,
        dimension: 1,
        standardize: true,
    })?;
    Ok(OracleGPolicy {
        g: cfg.g,
        derived: Matrix::with_cols(1),
        inner,
    })
}

/// The packing design run on the one-dimensional covariate `g(X_t)`.
pub struct OracleGPolicy {
    g: GFunction,
    derived: Matrix,
    inner: PackingPolicy,
}

impl DesignPolicy for OracleGPolicy {
    fn name(&self) -> String {
        "oracle-g".into()
    }

    fn decide(&mut self, history: &History<'_>, state: &PairingState) -> Decision {
        while self.derived.rows() < history.len() {
            let i = self.derived.rows() + 1;
            let value = (self.g)(history.unit(i));
            self.derived.push_row(&[value]).expect("one column");
        }
        self.inner.decide(&History::new(&self.derived), state)
    }

    fn last_pair_distance(&self) -> Option<f64> {
        self.inner.last_pair_distance()
    }
}

/// Offline optimal pairing: sort units by `g` (ties by arrival index) and
/// pair ranks (1,2), (3,4), …; with an odd count the top-ranked unit stays
/// unpaired.
pub fn bai_optimal_matching(g_values: &[f64]) -> Result<PairingState> {
    if g_values.is_empty() {
        return Err(Error::input("no units to match"));
    }
    if let Some(i) = g_values.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("g of unit {} is not finite", i + 1)));
    }
    let mut order: Vec<usize> = (1..=g_values.len()).collect();
    order.sort_by(|&a, &b| g_values[a - 1].total_cmp(&g_values[b - 1]));
    let pairs: Vec<(usize, usize)> = order.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let reservoir: BTreeSet<usize> = order.chunks_exact(2).remainder().iter().copied().collect();
    PairingState::from_parts(g_values.len(), reservoir, pairs)
}

/// [`bai_optimal_matching`] plus arms: one coin per pair decides which
/// partner is treated; a leftover unit gets its own coin.
pub fn bai_optimal_assign(g_values: &[f64], rng: &mut RandomSource) -> Result<(Vec<Arm>, PairingState)> {
    let state = bai_optimal_matching(g_values)?;
    let mut arms = vec![Arm::Control; g_values.len()];
    for &(a, b) in state.matches() {
        let first = Arm::from_bit(rng.fair_coin());
        arms[a - 1] = first;
        arms[b - 1] = first.opposite();
    }
    for &s in state.reservoir() {
        arms[s - 1] = Arm::from_bit(rng.fair_coin());
    }
    Ok((arms, state))
}

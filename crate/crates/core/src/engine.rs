//! The reservoir assignment state machine.
//!
//! Units are indexed by arrival order starting at 1. At each arrival a
//! [`DesignPolicy`] looks at the covariates seen so far and the current
//! reservoir and emits a [`Decision`]; [`engine_step`] turns that into an
//! arm. Policies never see outcomes or future covariates: they are handed a
//! [`History`] that only contains rows `1..=t`, and outcomes are attached
//! after the assignment pass has finished.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::{euclidean, Matrix};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Arm::Treatment
        } else {
            Arm::Control
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    /// `2Z − 1`.
    pub fn sign(self) -> f64 {
        match self {
            Arm::Control => -1.0,
            Arm::Treatment => 1.0,
        }
    }
}

/// One arrival, with its outcome once observed.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub index: usize,
    pub covariates: Vec<f64>,
    pub arm: Arm,
    pub outcome: Option<f64>,
}

/// Join covariates, arms and (later) outcomes into unit records.
pub fn unit_records(covariates: &Matrix, arms: &[Arm], outcomes: Option<&[f64]>) -> Result<Vec<UnitRecord>> {
    if arms.len() != covariates.rows() {
        return Err(Error::Dimension {
            expected: covariates.rows(),
            got: arms.len(),
        });
    }
    if let Some(y) = outcomes {
        if y.len() != arms.len() {
            return Err(Error::Dimension {
                expected: arms.len(),
                got: y.len(),
            });
        }
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("outcome of unit {} is not finite", bad + 1)));
        }
    }
    Ok(arms
        .iter()
        .enumerate()
        .map(|(i, &arm)| UnitRecord {
            index: i + 1,
            covariates: covariates.row(i).to_vec(),
            arm,
            outcome: outcomes.map(|y| y[i]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    NewIndependent,
    PairWith(usize),
}

/// Reservoir `R_t` and matched pairs `M_t` after `t` arrivals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairingState {
    t: usize,
    reservoir: BTreeSet<usize>,
    /// Stored as `(min, max)` in the order the pairs formed.
    matches: Vec<(usize, usize)>,
}

impl PairingState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of arrivals processed.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn reservoir(&self) -> &BTreeSet<usize> {
        &self.reservoir
    }

    pub fn in_reservoir(&self, index: usize) -> bool {
        self.reservoir.contains(&index)
    }

    pub fn matches(&self) -> &[(usize, usize)] {
        &self.matches
    }

    pub fn n_reservoir(&self) -> usize {
        self.reservoir.len()
    }

    /// Units in matched pairs (twice the number of pairs).
    pub fn n_matched(&self) -> usize {
        2 * self.matches.len()
    }

    /// Build a state directly, e.g. for an offline design. Fails unless the
    /// pairs and reservoir partition `1..=t`.
    pub fn from_parts(t: usize, reservoir: BTreeSet<usize>, matches: Vec<(usize, usize)>) -> Result<Self> {
        let state = Self {
            t,
            reservoir,
            matches: matches.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect(),
        };
        if !state.is_partition() {
            return Err(Error::contract("reservoir and pairs do not partition 1..=t"));
        }
        Ok(state)
    }

    /// Reservoir and flattened pairs cover `1..=t` exactly once.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.t + 1];
        let all = self
            .reservoir
            .iter()
            .copied()
            .chain(self.matches.iter().flat_map(|&(a, b)| [a, b]));
        let mut count = 0;
        for i in all {
            if i == 0 || i > self.t || seen[i] {
                return false;
            }
            seen[i] = true;
            count += 1;
        }
        count == self.t && self.reservoir.len() + 2 * self.matches.len() == self.t
    }
}

/// Read-only view of the covariates of units `1..=t`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    rows: &'a Matrix,
}

impl<'a> History<'a> {
    pub fn new(rows: &'a Matrix) -> Self {
        Self { rows }
    }

    /// Number of arrivals so far, including the current one.
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Covariates of unit `index` (1-based).
    pub fn unit(&self, index: usize) -> &'a [f64] {
        self.rows.row(index - 1)
    }

    /// The arrival being decided.
    pub fn latest(&self) -> &'a [f64] {
        self.rows.row(self.rows.rows() - 1)
    }

    pub fn as_matrix(&self) -> &'a Matrix {
        self.rows
    }
}

/// A sequential assignment rule. Implementations see only covariates of
/// units that have already arrived; their decision must be a deterministic
/// function of them.
pub trait DesignPolicy: Send {
    fn name(&self) -> String;

    /// Covariate dimension the policy was configured for, if fixed.
    fn dimension(&self) -> Option<usize> {
        None
    }

    /// Decide for unit `history.len()`. `state` is the pairing state before
    /// this unit.
    fn decide(&mut self, history: &History<'_>, state: &PairingState) -> Decision;

    /// Distance, in the policy's own matching metric, of the most recent
    /// pairing it proposed.
    fn last_pair_distance(&self) -> Option<f64> {
        None
    }
}

impl<P: DesignPolicy + ?Sized> DesignPolicy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }

    fn decide(&mut self, history: &History<'_>, state: &PairingState) -> Decision {
        (**self).decide(history, state)
    }

    fn last_pair_distance(&self) -> Option<f64> {
        (**self).last_pair_distance()
    }
}

/// Apply one decision for unit `t = state.t() + 1`, appending its arm to
/// `arms`. A fresh coin is drawn only for `NewIndependent`; a paired unit's
/// arm is fixed by its partner.
pub fn engine_step(
    state: &mut PairingState,
    arms: &mut Vec<Arm>,
    history: &History<'_>,
    decision: Decision,
    rng: &mut RandomSource,
) -> Result<Arm> {
    let t = state.t + 1;
    if history.len() != t {
        return Err(Error::contract(format!(
            "history holds {} rows but unit {t} is arriving",
            history.len()
        )));
    }
    if arms.len() != state.t {
        return Err(Error::contract("arm vector out of sync with pairing state"));
    }
    let arm = match decision {
        Decision::NewIndependent => {
            state.reservoir.insert(t);
            Arm::from_bit(rng.fair_coin())
        }
        Decision::PairWith(s) => {
            if !state.reservoir.remove(&s) {
                return Err(Error::contract(format!(
                    "unit {t} cannot pair with {s}: not in the reservoir"
                )));
            }
            state.matches.push((s, t));
            arms[s - 1].opposite()
        }
    };
    arms.push(arm);
    state.t = t;
    Ok(arm)
}

/// Per-step reservoir size and running mean intra-pair distance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsTrace {
    /// `n_R(t)` for `t = 1..=T`.
    pub n_reservoir: Vec<usize>,
    /// Mean Euclidean distance between matched partners in the raw
    /// covariates, after each step; `None` until the first pair forms.
    pub mean_pair_distance: Vec<Option<f64>>,
    /// Same, in the coordinates the policy matched on (e.g. standardized).
    pub mean_decision_distance: Vec<Option<f64>>,
    pub final_matches: usize,
}

impl DiagnosticsTrace {
    /// `(t, mean distance)` for every step where at least one pair exists.
    pub fn pair_distance_series(&self) -> Vec<(usize, f64)> {
        self.mean_pair_distance
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|d| (i + 1, d)))
            .collect()
    }

    pub fn final_mean_pair_distance(&self) -> Option<f64> {
        self.mean_pair_distance.last().copied().flatten()
    }

    pub fn final_reservoir(&self) -> usize {
        self.n_reservoir.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub(crate) struct DiagnosticsTracker {
    trace: DiagnosticsTrace,
    raw_sum: f64,
    decision_sum: f64,
    decision_count: usize,
    pairs: usize,
}

impl DiagnosticsTracker {
    pub(crate) fn record(
        &mut self,
        state: &PairingState,
        covariates: &Matrix,
        decision: Decision,
        decision_distance: Option<f64>,
    ) {
        if let Decision::PairWith(s) = decision {
            let t = state.t();
            self.raw_sum += euclidean(covariates.row(s - 1), covariates.row(t - 1));
            self.pairs += 1;
            if let Some(d) = decision_distance {
                self.decision_sum += d;
                self.decision_count += 1;
            }
        }
        let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
        self.trace.n_reservoir.push(state.n_reservoir());
        self.trace.mean_pair_distance.push(mean(self.raw_sum, self.pairs));
        self.trace
            .mean_decision_distance
            .push(mean(self.decision_sum, self.decision_count));
        self.trace.final_matches = self.pairs;
    }

    pub(crate) fn finish(self) -> DiagnosticsTrace {
        self.trace
    }
}

/// Rebuild the diagnostics of a completed run from its decision log.
/// `decision_distances` may be empty when the policy reports none.
pub fn diagnostics(
    covariates: &Matrix,
    decisions: &[Decision],
    decision_distances: &[Option<f64>],
) -> Result<DiagnosticsTrace> {
    if decisions.len() != covariates.rows() {
        return Err(Error::Dimension {
            expected: covariates.rows(),
            got: decisions.len(),
        });
    }
    let mut state = PairingState::new();
    let mut tracker = DiagnosticsTracker::default();
    for (i, &decision) in decisions.iter().enumerate() {
        let t = i + 1;
        match decision {
            Decision::NewIndependent => {
                state.reservoir.insert(t);
            }
            Decision::PairWith(s) => {
                if !state.reservoir.remove(&s) {
                    return Err(Error::contract(format!(
                        "unit {t} pairs with {s}, not in reservoir"
                    )));
                }
                state.matches.push((s, t));
            }
        }
        state.t = t;
        tracker.record(
            &state,
            covariates,
            decision,
            decision_distances.get(i).copied().flatten(),
        );
    }
    Ok(tracker.finish())
}

/// Everything produced by one assignment pass.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub arms: Vec<Arm>,
    pub state: PairingState,
    pub decisions: Vec<Decision>,
    pub trace: DiagnosticsTrace,
}

/// Feed a covariate stream through a policy, one unit at a time.
pub fn run_stream<P, I, R>(policy: &mut P, units: I, rng: &mut RandomSource) -> Result<RunOutput>
where
    P: DesignPolicy + ?Sized,
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut units = units.into_iter().peekable();
    let dim = match units.peek() {
        Some(first) => first.as_ref().len(),
        None => return Err(Error::input("empty covariate stream")),
    };
    if let Some(expected) = policy.dimension() {
        if expected != dim {
            return Err(Error::Dimension { expected, got: dim });
        }
    }
    let mut seen = Matrix::with_cols(dim);
    let mut state = PairingState::new();
    let mut arms = Vec::new();
    let mut decisions = Vec::new();
    let mut tracker = DiagnosticsTracker::default();
    for unit in units {
        seen.push_row(unit.as_ref())?;
        let history = History::new(&seen);
        let decision = policy.decide(&history, &state);
        let distance = match decision {
            Decision::PairWith(_) => policy.last_pair_distance(),
            Decision::NewIndependent => None,
        };
        engine_step(&mut state, &mut arms, &history, decision, rng)?;
        tracker.record(&state, &seen, decision, distance);
        decisions.push(decision);
    }
    Ok(RunOutput {
        arms,
        state,
        decisions,
        trace: tracker.finish(),
    })
}

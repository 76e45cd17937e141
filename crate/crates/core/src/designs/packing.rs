use std::collections::HashMap;

use crate::engine::{Decision, DesignPolicy, History, PairingState};
use crate::error::{Error, Result};
use crate::numerics::ColumnStats;

#[derive(Debug, Clone, PartialEq)]
pub struct PackingConfig {
    /// Exponent offset; the radius at step `t` is `t^(−1/((2+δ)d))`.
    pub delta: f64,
    pub dimension: usize,
    /// Re-standardize all rows seen so far before measuring distances.
    pub standardize: bool,
}

impl PackingConfig {
    pub fn new(dimension: usize) -> Self {
        Self {
            delta: 0.0,
            dimension,
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "delta must be a finite value ≥ 0, got {}",
                self.delta
            )));
        }
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Pairing radius `λ_t = t^(−1/((2+δ)d))`.
pub fn packing_radius(t: usize, cfg: &PackingConfig) -> f64 {
    (t as f64).powf(-1.0 / ((2.0 + cfg.delta) * cfg.dimension as f64))
}

pub fn packing_policy(cfg: PackingConfig) -> Result<PackingPolicy> {
    cfg.validate()?;
    Ok(PackingPolicy::new(cfg))
}

/// Nearest-neighbour pairing against a radius that shrinks with `t`.
///
/// Distances are Euclidean on the covariates standardized over all `t`
/// rows seen so far. Standardization is affine per column, so the distance
/// between two standardized rows is the raw difference times the inverse
/// column scale; only running scales are needed, not a re-standardized copy.
#[derive(Debug, Clone)]
pub struct PackingPolicy {
    cfg: PackingConfig,
    stats: ColumnStats,
    grid: Grid,
    last_distance: Option<f64>,
}

impl PackingPolicy {
    fn new(cfg: PackingConfig) -> Self {
        let d = cfg.dimension;
        Self {
            stats: ColumnStats::new(d),
            grid: Grid::new(d),
            cfg,
            last_distance: None,
        }
    }

    pub fn config(&self) -> &PackingConfig {
        &self.cfg
    }

    fn scales(&self) -> Vec<f64> {
        if self.cfg.standardize {
            self.stats.inverse_scales()
        } else {
            vec![1.0; self.cfg.dimension]
        }
    }
}

pub(crate) fn scaled_distance(a: &[f64], b: &[f64], scales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scales)
        .map(|((x, y), s)| {
            let d = (x - y) * s;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Exact scan over the reservoir in ascending index order; the first of
/// several equidistant units wins.
pub(crate) fn nearest_by_scan(
    history: &History<'_>,
    state: &PairingState,
    x: &[f64],
    scales: &[f64],
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &s in state.reservoir() {
        let d = scaled_distance(x, history.unit(s), scales);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((s, d));
        }
    }
    best
}

impl DesignPolicy for PackingPolicy {
    fn name(&self) -> String {
        "packing".into()
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.cfg.dimension)
    }

    fn decide(&mut self, history: &History<'_>, state: &PairingState) -> Decision {
        let t = history.len();
        let x = history.latest();
        if self.cfg.standardize {
            self.stats.push(x);
        }
        self.last_distance = None;
        if state.n_reservoir() == 0 {
            self.grid.insert(t, x);
            return Decision::NewIndependent;
        }
        let radius = packing_radius(t, &self.cfg);
        let scales = self.scales();
        let nearest = self.grid.nearest_within(history, state, x, &scales, radius);
        match nearest {
            Some((s, d)) if d < radius => {
                self.grid.remove(s, history.unit(s));
                self.last_distance = Some(d);
                Decision::PairWith(s)
            }
            _ => {
                self.grid.insert(t, x);
                Decision::NewIndependent
            }
        }
    }

    fn last_pair_distance(&self) -> Option<f64> {
        self.last_distance
    }
}

/// Largest dimension indexed by the uniform grid; higher dimensions scan.
const MAX_GRID_DIM: usize = 4;
type CellKey = [i64; MAX_GRID_DIM];

/// Uniform grid over raw coordinates, used to find reservoir units that can
/// lie within the pairing radius. Any unit closer than the radius is in one
/// of the scanned cells, so results are identical to the exhaustive scan.
#[derive(Debug, Clone)]
struct Grid {
    dim: usize,
    width: Vec<f64>,
    cells: HashMap<CellKey, Vec<usize>>,
    len: usize,
}

impl Grid {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            width: Vec::new(),
            cells: HashMap::new(),
            len: 0,
        }
    }

    fn built(&self) -> bool {
        !self.width.is_empty()
    }

    fn key(&self, x: &[f64]) -> CellKey {
        let mut key = [0i64; MAX_GRID_DIM];
        for k in 0..self.dim {
            key[k] = (x[k] / self.width[k]).floor() as i64;
        }
        key
    }

    fn insert(&mut self, index: usize, x: &[f64]) {
        if self.built() {
            let key = self.key(x);
            self.cells.entry(key).or_default().push(index);
            self.len += 1;
        }
    }

    fn remove(&mut self, index: usize, x: &[f64]) {
        if self.built() {
            let key = self.key(x);
            if let Some(cell) = self.cells.get_mut(&key) {
                if let Some(pos) = cell.iter().position(|&i| i == index) {
                    cell.swap_remove(pos);
                    self.len -= 1;
                    if cell.is_empty() {
                        self.cells.remove(&key);
                    }
                }
            }
        }
    }

    fn rebuild(&mut self, history: &History<'_>, state: &PairingState, width: Vec<f64>) {
        self.width = width;
        self.cells.clear();
        self.len = 0;
        for &s in state.reservoir() {
            self.insert(s, history.unit(s));
        }
    }

    fn nearest_within(
        &mut self,
        history: &History<'_>,
        state: &PairingState,
        x: &[f64],
        scales: &[f64],
        radius: f64,
    ) -> Option<(usize, f64)> {
        let n = state.n_reservoir();
        // Per-axis reach in raw units; a zero scale means the axis is
        // unconstrained, which the grid cannot prune.
        let reach: Vec<f64> = scales.iter().map(|&s| radius / s).collect();
        if self.dim > MAX_GRID_DIM || n < 32 || reach.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            self.width.clear();
            return nearest_by_scan(history, state, x, scales);
        }
        let stale = !self.built()
            || self.len != n
            || reach
                .iter()
                .zip(&self.width)
                .any(|(r, w)| *r > 2.0 * w || *r < 0.25 * w);
        if stale {
            self.rebuild(history, state, reach.clone());
        }
        // pad the reach so rounding can never drop a unit inside the radius
        let mut lo = [0i64; MAX_GRID_DIM];
        let mut hi = [0i64; MAX_GRID_DIM];
        let mut cells = 1usize;
        for k in 0..self.dim {
            let r = reach[k] * (1.0 + 1e-9);
            lo[k] = ((x[k] - r) / self.width[k]).floor() as i64;
            hi[k] = ((x[k] + r) / self.width[k]).floor() as i64;
            cells = cells.saturating_mul((hi[k] - lo[k] + 1) as usize);
        }
        if cells > n {
            return nearest_by_scan(history, state, x, scales);
        }
        let mut best: Option<(usize, f64)> = None;
        let mut key = lo;
        loop {
            if let Some(members) = self.cells.get(&key) {
                for &s in members {
                    let d = scaled_distance(x, history.unit(s), scales);
                    let better = match best {
                        None => true,
                        Some((bs, bd)) => d < bd || (d == bd && s < bs),
                    };
                    if better {
                        best = Some((s, d));
                    }
                }
            }
            // odometer over the cell box
            let mut k = 0;
            loop {
                if k == self.dim {
                    return best;
                }
                if key[k] < hi[k] {
                    key[k] += 1;
                    break;
                }
                key[k] = lo[k];
                k += 1;
            }
        }
    }
}

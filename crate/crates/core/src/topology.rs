//! Communication graphs and their mixing matrices.
//!
//! A [`WeightMatrix`] is one gossip round: agent `i` replaces its vector with
//! `Σ_j w_ij v_j`. The builders here cover ring, line, exponential and
//! per-round random (Metropolis–Hastings) graphs. Line and exponential graphs
//! can be built exactly as their closed-form weight rules read
//! ([`BuildMode::AsWritten`]), in which case any loss of double stochasticity
//! is attached to the matrix as a warning instead of being repaired.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsboError, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::scalar::Scalar;

/// Connectivity retries for random graphs.
pub const MAX_GRAPH_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Line,
    Exponential,
    DynamicMh,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Literal closed-form weights; may not be doubly stochastic.
    AsWritten,
    /// Metropolis–Hastings weights on the same adjacency.
    #[default]
    #[serde(alias = "metropolis")]
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T> {
    n: usize,
    entries: Vec<T>,
    kind: TopologyKind,
    neighbors: Vec<BTreeSet<usize>>,
    warnings: Vec<String>,
}

impl<T: Scalar> WeightMatrix<T> {
    /// Wrap an explicit row-major matrix. The adjacency is read off the
    /// nonzero off-diagonal pattern.
    pub fn custom(n: usize, entries: Vec<T>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(DsboError::InvalidMatrix(format!("need {n}x{n} entries, got {}", entries.len())));
        }
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && (entries[i * n + j] != T::zero() || entries[j * n + i] != T::zero()))
                    .collect()
            })
            .collect();
        let mut w = Self {
            n,
            entries,
            kind: TopologyKind::Custom,
            neighbors,
            warnings: Vec::new(),
        };
        w.attach_warnings();
        Ok(w)
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![T::zero(); n * n];
        for i in 0..n {
            entries[i * n + i] = T::one();
        }
        Self {
            n,
            entries,
            kind: TopologyKind::Custom,
            neighbors: vec![BTreeSet::new(); n],
            warnings: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    /// Validation problems detected at construction time.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `(W + I) / 2`, the second matrix used by EXTRA.
    pub fn half_lazy(&self) -> Self {
        let half = T::of(0.5);
        let mut entries: Vec<T> = self.entries.iter().map(|&w| half * w).collect();
        for i in 0..self.n {
            entries[i * self.n + i] += half;
        }
        Self {
            n: self.n,
            entries,
            kind: self.kind,
            neighbors: self.neighbors.clone(),
            warnings: Vec::new(),
        }
    }

    /// One gossip round: `out[i] = Σ_j w_ij · inputs[j]`.
    pub fn mix(&self, inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        if inputs.len() != self.n {
            return Err(DsboError::InvalidInput(format!(
                "mix expects {} vectors, got {}",
                self.n,
                inputs.len()
            )));
        }
        let dim = inputs[0].len();
        if let Some(bad) = inputs.iter().position(|v| v.len() != dim) {
            return Err(DsboError::InvalidInput(format!(
                "vector {bad} has dimension {}, expected {dim}",
                inputs[bad].len()
            )));
        }
        Ok(self.mix_unchecked(inputs))
    }

    pub(crate) fn mix_unchecked(&self, inputs: &[Vec<T>]) -> Vec<Vec<T>> {
        let dim = inputs.first().map_or(0, Vec::len);
        let row = |i: usize| {
            let mut acc = vec![T::zero(); dim];
            for (j, &w) in self.row(i).iter().enumerate() {
                if w != T::zero() {
                    for (a, &v) in acc.iter_mut().zip(&inputs[j]) {
                        *a += w * v;
                    }
                }
            }
            acc
        };
        // rows are independent and summed in a fixed order, so the result
        // does not depend on the number of threads
        if self.n * dim >= 1 << 14 {
            (0..self.n).into_par_iter().map(row).collect()
        } else {
            (0..self.n).map(row).collect()
        }
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && (self.get(i, j) != T::zero() || self.get(j, i) != T::zero()) {
                    *s = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.n;
        let tol = T::structural_tol(n);
        let mut violations = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.get(i, j);
                if w < T::zero() {
                    violations.push(Violation::Negative { i, j, value: w.as_f64() });
                }
                if j > i && (w - self.get(j, i)).abs() > tol {
                    violations.push(Violation::Asymmetric {
                        i,
                        j,
                        w_ij: w.as_f64(),
                        w_ji: self.get(j, i).as_f64(),
                    });
                }
                if i != j && w != T::zero() && self.kind != TopologyKind::Custom && !self.neighbors[i].contains(&j) {
                    violations.push(Violation::OutsideAdjacency { i, j });
                }
            }
        }
        for i in 0..n {
            let sum: T = self.row(i).iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                violations.push(Violation::RowSum { row: i, sum: sum.as_f64() });
            }
        }
        for j in 0..n {
            let sum: T = (0..n).map(|i| self.get(i, j)).sum();
            if (sum - T::one()).abs() > tol {
                violations.push(Violation::ColumnSum {
                    column: j,
                    sum: sum.as_f64(),
                });
            }
        }
        if !self.is_connected() {
            violations.push(Violation::Disconnected);
        }
        ValidationReport {
            n,
            kind: self.kind,
            violations,
        }
    }

    pub fn spectral_report(&self) -> Result<ConnectivityReport<T>> {
        let n = self.n;
        let tol = T::structural_tol(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return Err(DsboError::InvalidMatrix(format!(
                        "asymmetric entry ({i},{j}): {} vs {}",
                        self.get(i, j),
                        self.get(j, i)
                    )));
                }
            }
        }
        let eigenvalues = symmetric_eigenvalues(&self.entries, n)?;
        let (lambda2, lambda_n) = if n > 1 {
            (eigenvalues[1], eigenvalues[n - 1])
        } else {
            (T::zero(), T::zero())
        };
        let rho = lambda2.abs().max(lambda_n.abs());
        Ok(ConnectivityReport {
            rho,
            lambda2,
            lambda_n,
            spectral_gap: T::one() - rho,
            connected: self.is_connected(),
            eigenvalues,
        })
    }

    fn attach_warnings(&mut self) {
        let report = self.validate();
        self.warnings = report.violations.iter().map(ToString::to_string).collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityReport<T> {
    pub rho: T,
    pub lambda2: T,
    pub lambda_n: T,
    pub spectral_gap: T,
    /// Breadth-first reachability on the nonzero pattern.
    pub connected: bool,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Negative { i: usize, j: usize, value: f64 },
    Asymmetric { i: usize, j: usize, w_ij: f64, w_ji: f64 },
    RowSum { row: usize, sum: f64 },
    ColumnSum { column: usize, sum: f64 },
    OutsideAdjacency { i: usize, j: usize },
    Disconnected,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Negative { i, j, value } => write!(f, "negative weight w[{i}][{j}] = {value}"),
            Violation::Asymmetric { i, j, w_ij, w_ji } => {
                write!(f, "asymmetric: w[{i}][{j}] = {w_ij} but w[{j}][{i}] = {w_ji}")
            }
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}, not 1"),
            Violation::ColumnSum { column, sum } => write!(f, "column {column} sums to {sum}, not 1"),
            Violation::OutsideAdjacency { i, j } => write!(f, "w[{i}][{j}] is nonzero but ({i},{j}) is not an edge"),
            Violation::Disconnected => write!(f, "graph is disconnected"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub kind: TopologyKind,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        !self
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RowSum { .. } | Violation::ColumnSum { .. }))
    }
}

fn assemble<T: Scalar>(n: usize, entries: Vec<T>, kind: TopologyKind, neighbors: Vec<BTreeSet<usize>>) -> WeightMatrix<T> {
    let mut w = WeightMatrix {
        n,
        entries,
        kind,
        neighbors,
        warnings: Vec::new(),
    };
    w.attach_warnings();
    w
}

/// Metropolis–Hastings weights `1/(1+max(deg_i,deg_j))` on edges, self-weights
/// completing each row.
pub fn metropolis_weights<T: Scalar>(neighbors: &[BTreeSet<usize>]) -> Vec<T> {
    let n = neighbors.len();
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        for &j in &neighbors[i] {
            let deg = neighbors[i].len().max(neighbors[j].len());
            entries[i * n + j] = T::one() / T::of((1 + deg) as f64);
        }
    }
    for i in 0..n {
        let off: T = (0..n).filter(|&j| j != i).map(|j| entries[i * n + j]).sum();
        entries[i * n + i] = T::one() - off;
    }
    entries
}

fn ring_neighbors(n: usize) -> Vec<BTreeSet<usize>> {
    (0..n).map(|i| BTreeSet::from([(i + 1) % n, (i + n - 1) % n])).collect()
}

fn line_neighbors(n: usize) -> Vec<BTreeSet<usize>> {
    (0..n)
        .map(|i| {
            let mut s = BTreeSet::new();
            if i > 0 {
                s.insert(i - 1);
            }
            if i + 1 < n {
                s.insert(i + 1);
            }
            s
        })
        .collect()
}

/// Neighbors at offsets `±(2^j − 1) mod n`, `j = 1..=4`. Offsets that wrap
/// onto the agent itself are dropped.
fn exponential_neighbors(n: usize) -> Vec<BTreeSet<usize>> {
    (0..n)
        .map(|i| {
            let mut s = BTreeSet::new();
            for j in 1..=4u32 {
                let off = ((1usize << j) - 1) % n;
                for m in [(i + off) % n, (i + n - off) % n] {
                    if m != i {
                        s.insert(m);
                    }
                }
            }
            s
        })
        .collect()
}

/// Ring with self-weight `a` and `(1−a)/2` to each side.
pub fn build_ring<T: Scalar>(n: usize, a: T) -> Result<WeightMatrix<T>> {
    if n < 3 {
        return Err(DsboError::InvalidTopology(format!("ring needs n >= 3, got {n}")));
    }
    if !(a > T::zero() && a < T::one()) {
        return Err(DsboError::InvalidParameter(format!("ring self-weight must lie in (0,1), got {a}")));
    }
    let side = (T::one() - a) / T::of(2.0);
    let neighbors = ring_neighbors(n);
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        entries[i * n + i] = a;
        for &j in &neighbors[i] {
            entries[i * n + j] += side;
        }
    }
    // n = 3: both sides are distinct agents, so no double counting above
    Ok(assemble(n, entries, TopologyKind::Ring, neighbors))
}

pub fn build_line<T: Scalar>(n: usize, mode: BuildMode) -> Result<WeightMatrix<T>> {
    if n < 2 {
        return Err(DsboError::InvalidTopology(format!("line needs n >= 2, got {n}")));
    }
    let neighbors = line_neighbors(n);
    let entries = match mode {
        BuildMode::Normalized => metropolis_weights(&neighbors),
        BuildMode::AsWritten => {
            let mut e = vec![T::zero(); n * n];
            e[1] = T::one();
            e[(n - 1) * n + (n - 2)] = T::one();
            for i in 1..n.saturating_sub(1) {
                e[i * n + i - 1] = T::of(0.5);
                e[i * n + i + 1] = T::of(0.5);
            }
            e
        }
    };
    Ok(assemble(n, entries, TopologyKind::Line, neighbors))
}

pub fn build_exponential<T: Scalar>(n: usize, mode: BuildMode) -> Result<WeightMatrix<T>> {
    if n < 2 {
        return Err(DsboError::InvalidTopology(format!("exponential graph needs n >= 2, got {n}")));
    }
    let neighbors = exponential_neighbors(n);
    let entries = match mode {
        BuildMode::Normalized => metropolis_weights(&neighbors),
        BuildMode::AsWritten => {
            let mut e = vec![T::zero(); n * n];
            for i in 0..n {
                e[i * n + i] = T::of(0.25);
                for &j in &neighbors[i] {
                    e[i * n + j] = T::of(0.125);
                }
            }
            e
        }
    };
    Ok(assemble(n, entries, TopologyKind::Exponential, neighbors))
}

/// Random graph where every agent links to `m` random others
/// (`m ~ U[m_min, m_max]`), weighted by Metropolis–Hastings. Deterministic in
/// `round_seed`.
pub fn build_dynamic_mh<T: Scalar>(n: usize, m_min: usize, m_max: usize, round_seed: u64) -> Result<WeightMatrix<T>> {
    if n < 2 || m_min < 1 || m_min > m_max || m_max > n - 1 {
        return Err(DsboError::InvalidParameter(format!(
            "dynamic topology needs 1 <= m_min <= m_max <= n-1 (n={n}, m_min={m_min}, m_max={m_max})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let m = if m_min == m_max { m_min } else { rng.random_range(m_min..=m_max) };
        let mut neighbors = vec![BTreeSet::new(); n];
        for i in 0..n {
            for pick in sample(&mut rng, n - 1, m).iter() {
                let j = if pick >= i { pick + 1 } else { pick };
                neighbors[i].insert(j);
                neighbors[j].insert(i);
            }
        }
        let entries = metropolis_weights(&neighbors);
        let w = assemble(n, entries, TopologyKind::DynamicMh, neighbors);
        if w.is_connected() {
            return Ok(w);
        }
    }
    Err(DsboError::TopologyGenerationFailed {
        attempts: MAX_GRAPH_ATTEMPTS,
    })
}

/// Topology section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Agent count; defaults to the problem's agent count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Ring self-weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default)]
    pub mode: BuildMode,
    /// Seed for dynamic graphs; defaults to the run's base seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Explicit row-major weights for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

impl TopologySpec {
    pub fn ring(n: usize, a: f64) -> Self {
        Self {
            kind: TopologyKind::Ring,
            n: Some(n),
            a: Some(a),
            m_min: None,
            m_max: None,
            mode: BuildMode::Normalized,
            seed: None,
            weights: None,
        }
    }

    pub fn of_kind(kind: TopologyKind, n: usize) -> Self {
        Self {
            kind,
            n: Some(n),
            a: None,
            m_min: None,
            m_max: None,
            mode: BuildMode::Normalized,
            seed: None,
            weights: None,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.kind == TopologyKind::DynamicMh
    }

    /// Build the matrix for agent count `n` and (for dynamic graphs) the given
    /// per-round seed.
    pub fn build<T: Scalar>(&self, n: usize, round_seed: u64) -> Result<WeightMatrix<T>> {
        if let Some(declared) = self.n {
            if declared != n {
                return Err(DsboError::Config(format!("topology.n = {declared} but the problem has {n} agents")));
            }
        }
        match self.kind {
            TopologyKind::Ring => {
                let a = self
                    .a
                    .ok_or_else(|| DsboError::Config("topology.a is required for a ring".into()))?;
                build_ring(n, T::of(a))
            }
            TopologyKind::Line => build_line(n, self.mode),
            TopologyKind::Exponential => build_exponential(n, self.mode),
            TopologyKind::DynamicMh => {
                let m_min = self.m_min.unwrap_or(2);
                let m_max = self.m_max.unwrap_or(m_min);
                build_dynamic_mh(n, m_min, m_max, round_seed)
            }
            TopologyKind::Custom => {
                let rows = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| DsboError::Config("topology.weights is required for custom".into()))?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(DsboError::Config(format!("topology.weights must be {n}x{n}")));
                }
                WeightMatrix::custom(n, rows.iter().flatten().map(|&v| T::of(v)).collect())
            }
        }
    }
}

//! Network coefficient matrices `W_i`.
//!
//! Each autocorrelation regime of the model is described by a dense, non-negative
//! `n x n` matrix with a zero diagonal. This module builds those matrices from
//! adjacency graphs (direct ties, structural equivalence, finite mixtures) and
//! scans the `(rho_1, rho_2)` plane for the region where `I - rho_1 W_1 - rho_2 W_2`
//! stays invertible.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lu_log_abs_det, singular_log_threshold, SINGULAR_DET_FACTOR};

/// A graph on nodes `0..n` without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    n: usize,
    directed: bool,
    // Undirected edges are stored once with i < j.
    edges: BTreeMap<(usize, usize), f64>,
}

impl AdjacencyGraph {
    pub fn new(n: usize, directed: bool) -> Self {
        Self {
            n,
            directed,
            edges: BTreeMap::new(),
        }
    }

    /// Unit-weight graph from an edge iterator.
    pub fn from_edges<I>(n: usize, directed: bool, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::new(n, directed);
        for (i, j) in edges {
            g.add_edge(i, j, 1.0)?;
        }
        Ok(g)
    }

    /// Adds (or re-weights) the edge `i -> j`; for undirected graphs also `j -> i`.
    pub fn add_edge(&mut self, i: usize, j: usize, weight: f64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::InvalidInput(format!(
                "edge ({i}, {j}) out of range for {} nodes",
                self.n
            )));
        }
        if i == j {
            return Err(Error::InvalidInput(format!("self-loop at node {i}")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "edge ({i}, {j}) has invalid weight {weight}"
            )));
        }
        let key = if self.directed { (i, j) } else { (i.min(j), i.max(j)) };
        self.edges.insert(key, weight);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = if self.directed { (i, j) } else { (i.min(j), i.max(j)) };
        self.edges.contains_key(&key)
    }

    /// Weighted adjacency matrix (symmetric for undirected graphs).
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &w) in &self.edges {
            a[(i, j)] = w;
            if !self.directed {
                a[(j, i)] = w;
            }
        }
        a
    }

    /// 0/1 adjacency matrix; zero-weight edges still count as ties.
    pub fn binary_adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in self.edges.keys() {
            a[(i, j)] = 1.0;
            if !self.directed {
                a[(j, i)] = 1.0;
            }
        }
        a
    }
}

/// How a cohesion matrix is scaled row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RowScaling {
    None,
    /// Each non-zero row sums to one.
    #[default]
    RowSum,
    /// Each row is divided by the number of tied nodes with a positive outcome.
    PositiveOutcomes,
}

/// Normalization argument of [`build_cohesion`].
#[derive(Debug, Clone, Copy)]
pub enum Normalization<'a> {
    None,
    RowSum,
    /// Outcomes `y` used to count adopters per row.
    PositiveOutcomes(&'a [bool]),
}

impl Normalization<'_> {
    fn scaling(&self) -> RowScaling {
        match self {
            Normalization::None => RowScaling::None,
            Normalization::RowSum => RowScaling::RowSum,
            Normalization::PositiveOutcomes(_) => RowScaling::PositiveOutcomes,
        }
    }
}

/// Where a network matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "scaling")]
pub enum NetworkKind {
    Raw,
    Cohesion(RowScaling),
    StructuralEquivalence,
    Mixture,
}

/// Dense `n x n` network coefficient matrix: finite, non-negative, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrix {
    values: DMatrix<f64>,
    kind: NetworkKind,
}

impl NetworkMatrix {
    pub fn new(values: DMatrix<f64>, kind: NetworkKind) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension(format!(
                "network matrix is {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "network entry ({i}, {j}) = {v} is not a finite non-negative number"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "network diagonal entry ({i}, {i}) = {v} must be 0"
                    )));
                }
            }
        }
        Ok(Self { values, kind })
    }

    /// The all-zero network on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            values: DMatrix::zeros(n, n),
            kind: NetworkKind::Raw,
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Rescales every non-zero row to sum to one. Zero rows stay zero.
    pub fn row_normalized(&self) -> NetworkMatrix {
        let mut values = self.values.clone();
        for mut row in values.row_iter_mut() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row /= s;
            }
        }
        let kind = match self.kind {
            NetworkKind::Cohesion(_) => NetworkKind::Cohesion(RowScaling::RowSum),
            other => other,
        };
        NetworkMatrix { values, kind }
    }

    /// True when every non-zero row sums to one (within `tol`).
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.values.row_iter().all(|row| {
            let s: f64 = row.iter().sum();
            s == 0.0 || (s - 1.0).abs() <= tol
        })
    }
}

/// Direct-tie (cohesion) network: entry `(i, j)` is positive iff `g` has the edge `i -> j`.
pub fn build_cohesion(g: &AdjacencyGraph, normalize: Normalization<'_>) -> Result<NetworkMatrix> {
    if g.n() < 2 {
        return Err(Error::InvalidInput(format!(
            "cohesion network needs at least 2 nodes, got {}",
            g.n()
        )));
    }
    let mut w = g.adjacency();
    match normalize {
        Normalization::None => {}
        Normalization::RowSum => {
            for mut row in w.row_iter_mut() {
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row /= s;
                }
            }
        }
        Normalization::PositiveOutcomes(y) => {
            if y.len() != g.n() {
                return Err(Error::Dimension(format!(
                    "{} outcomes for a {}-node graph",
                    y.len(),
                    g.n()
                )));
            }
            for i in 0..g.n() {
                let adopters = (0..g.n()).filter(|&j| w[(i, j)] > 0.0 && y[j]).count();
                // Rows without adopting neighbours keep their raw ties.
                let divisor = adopters.max(1) as f64;
                for j in 0..g.n() {
                    w[(i, j)] /= divisor;
                }
            }
        }
    }
    NetworkMatrix::new(w, NetworkKind::Cohesion(normalize.scaling()))
}

/// Adjacency distance `d_ij = sqrt(sum_{k != i, j} (A_ik - A_jk)^2)` over a 0/1 adjacency matrix.
fn adjacency_distance_sq(a: &DMatrix<f64>, degree: &[f64], i: usize, j: usize) -> f64 {
    // Over all k the sum is deg_i + deg_j - 2 * common; the k = i and k = j terms
    // each contribute A_ij.
    let n = a.nrows();
    let mut common = 0.0;
    for k in 0..n {
        common += a[(i, k)] * a[(j, k)];
    }
    degree[i] + degree[j] - 2.0 * common - 2.0 * a[(i, j)]
}

/// Structural-equivalence network `s_ij = 1 / (d_ij + 1)` with a zero diagonal.
///
/// Edge weights are ignored; any tie counts as 1.
pub fn build_structural_equivalence(g: &AdjacencyGraph) -> Result<NetworkMatrix> {
    if g.is_directed() {
        return Err(Error::InvalidInput(
            "structural equivalence needs an undirected graph".into(),
        ));
    }
    let n = g.n();
    let a = g.binary_adjacency();
    let degree: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = adjacency_distance_sq(&a, &degree, i, j).sqrt();
            let v = 1.0 / (d + 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    NetworkMatrix::new(s, NetworkKind::StructuralEquivalence)
}

/// Convex combination `sum phi_i W_i` with the weights rescaled to sum to one.
pub fn build_mixture(components: &[NetworkMatrix], weights: &[f64]) -> Result<NetworkMatrix> {
    if components.is_empty() {
        return Err(Error::InvalidInput("mixture needs at least one component".into()));
    }
    if components.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} components but {} weights",
            components.len(),
            weights.len()
        )));
    }
    let n = components[0].n();
    if let Some(bad) = components.iter().find(|c| c.n() != n) {
        return Err(Error::Dimension(format!(
            "mixture components are {n}x{n} and {0}x{0}",
            bad.n()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(format!(
            "mixture weights must be finite and non-negative: {weights:?}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("mixture weights are all zero".into()));
    }
    let mut w = DMatrix::zeros(n, n);
    for (c, &phi) in components.iter().zip(weights) {
        w += c.values() * (phi / total);
    }
    NetworkMatrix::new(w, NetworkKind::Mixture)
}

/// Rectangle in the `(rho_1, rho_2)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub rho1: (f64, f64),
    pub rho2: (f64, f64),
}

impl Default for RegionBounds {
    fn default() -> Self {
        Self {
            rho1: (-1.0, 1.0),
            rho2: (-1.0, 1.0),
        }
    }
}

/// Invertibility of `B = I - rho_1 W_1 - rho_2 W_2` on a rectangular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityRegion {
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    /// Row-major over `rho1`: `flags[i * rho2.len() + j]` is the point `(rho1[i], rho2[j])`.
    pub flags: Vec<bool>,
    /// `B` is flagged singular when `|det B| < tolerance * n`.
    pub tolerance: f64,
}

impl ValidityRegion {
    pub fn is_invertible(&self, i: usize, j: usize) -> bool {
        self.flags[i * self.rho2.len() + j]
    }

    /// `(rho_1, rho_2, invertible)` triples in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, bool)> + '_ {
        self.rho1.iter().enumerate().flat_map(move |(i, &r1)| {
            self.rho2
                .iter()
                .enumerate()
                .map(move |(j, &r2)| (r1, r2, self.is_invertible(i, j)))
        })
    }

    pub fn invertible_fraction(&self) -> f64 {
        self.flags.iter().filter(|&&f| f).count() as f64 / self.flags.len() as f64
    }
}

fn lattice(range: (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![range.0];
    }
    let h = (range.1 - range.0) / (steps - 1) as f64;
    (0..steps)
        .map(|s| if s + 1 == steps { range.1 } else { range.0 + h * s as f64 })
        .collect()
}

/// True when `I - rho_1 w1 - rho_2 w2` has `|det| >= 1e-10 * n`.
pub fn pair_invertible(w1: &DMatrix<f64>, w2: &DMatrix<f64>, rho1: f64, rho2: f64) -> bool {
    let n = w1.nrows();
    // Entrywise and commutative in the two terms, so swapping (W1, rho1) with
    // (W2, rho2) produces the same matrix bit for bit.
    let b = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - (rho1 * w1[(i, j)] + rho2 * w2[(i, j)])
    });
    let (log_abs, _) = lu_log_abs_det(&b.lu());
    log_abs >= singular_log_threshold(n)
}

/// Flags every lattice point of `bounds` by invertibility of `B`.
///
/// `resolution` is the number of lattice points along `(rho_1, rho_2)`; both
/// ends of each range are included.
pub fn scan_validity_region(
    w1: &NetworkMatrix,
    w2: &NetworkMatrix,
    bounds: RegionBounds,
    resolution: (usize, usize),
) -> Result<ValidityRegion> {
    if w1.n() != w2.n() {
        return Err(Error::Dimension(format!(
            "networks are {0}x{0} and {1}x{1}",
            w1.n(),
            w2.n()
        )));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::InvalidInput("resolution must be positive".into()));
    }
    let rho1 = lattice(bounds.rho1, resolution.0);
    let rho2 = lattice(bounds.rho2, resolution.1);
    let flags: Vec<bool> = rho1
        .par_iter()
        .flat_map_iter(|&r1| {
            rho2
                .iter()
                .map(move |&r2| pair_invertible(w1.values(), w2.values(), r1, r2))
        })
        .collect();
    Ok(ValidityRegion {
        rho1,
        rho2,
        flags,
        tolerance: SINGULAR_DET_FACTOR,
    })
}

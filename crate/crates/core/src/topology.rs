//! Communication topology of the ER and its ICUs.
//!
//! Edge direction convention: `a_ij > 0` means **ICU `j` can send to ICU `i`**
//! (`j` is a parent of `i`). Row `i` of the adjacency matrix therefore lists the
//! in-neighbours of `i`, and the Laplacian is built from in-degrees. This is the
//! reverse of the `from -> to` row layout used by many graph libraries.
//!
//! The ER (node 0) is kept out of the ICU adjacency matrix. Its links are two 0/1
//! vectors: `er_to_icu[i] = a_i0` (the ER sends to ICU `i`) and
//! `icu_to_er[i] = a_0i` (ICU `i` sends to the ER).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Margin separating `rho < 1` from the marginally stable `rho = 1` case.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Absolute tolerance used when deciding whether the ICU adjacency is symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("graph must contain at least one ICU")]
    Empty,
    #[error("adjacency matrix is {rows}x{cols}, expected {n}x{n}")]
    Shape { rows: usize, cols: usize, n: usize },
    #[error("ER link vector `{name}` has length {len}, expected {n}")]
    LinkLength { name: &'static str, len: usize, n: usize },
    #[error("invalid weight a[{row}][{col}] = {weight}: weights must be finite and non-negative")]
    InvalidWeight { row: usize, col: usize, weight: f64 },
    #[error("self-loop at ICU {0}")]
    SelfLoop(usize),
    #[error("ER link `{name}`[{index}] = {value} must be exactly 0 or 1")]
    NonBinaryErLink { name: &'static str, index: usize, value: f64 },
    #[error("ICU adjacency is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("step size mu = {mu} outside the open interval (0, {mu_max})")]
    MuOutOfRange { mu: f64, mu_max: f64 },
    #[error("edge ({from}, {to}) references an ICU outside 0..{n}")]
    EdgeOutOfRange { from: usize, to: usize, n: usize },
}

/// Weighted digraph over the ER and `n` ICUs.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    icu_adjacency: DMatrix<f64>,
    er_to_icu: Vec<f64>,
    icu_to_er: Vec<f64>,
}

/// Whether the caller treats the ICU subgraph as undirected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSemantics {
    Directed,
    Undirected,
}

/// Which diagonal absorption matrix the mismatch iteration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Absorption {
    /// `C = diag(a_0i)`, used by the grid-connected protocol.
    SendToEr,
    /// `C' = diag(a_i0 * a_0i)`, used by the integrated protocol.
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedMatrices {
    pub laplacian: DMatrix<f64>,
    /// `L_G + diag(a_i0)`: the price iteration matrix of the leader-following step.
    pub leader_matrix: DMatrix<f64>,
    pub absorption_c: DMatrix<f64>,
    pub absorption_c_prime: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeBounds {
    /// Per-ICU supremum for `eps_i`; `f64::INFINITY` when the ICU has no in-links.
    pub eps_max: Vec<f64>,
    /// Supremum for `mu`; `f64::INFINITY` when the ICU subgraph has no edges.
    pub mu_max: f64,
}

impl StepSizeBounds {
    pub fn eps_unconstrained(&self, i: usize) -> bool {
        self.eps_max[i].is_infinite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub radius: f64,
    pub stable: bool,
}

impl GridGraph {
    pub fn new(
        icu_adjacency: DMatrix<f64>,
        er_to_icu: Vec<f64>,
        icu_to_er: Vec<f64>,
    ) -> Result<Self, TopologyError> {
        let n = icu_adjacency.nrows();
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if icu_adjacency.ncols() != n {
            return Err(TopologyError::Shape {
                rows: n,
                cols: icu_adjacency.ncols(),
                n,
            });
        }
        for (name, v) in [("er_to_icu", &er_to_icu), ("icu_to_er", &icu_to_er)] {
            if v.len() != n {
                return Err(TopologyError::LinkLength { name, len: v.len(), n });
            }
            for (index, &value) in v.iter().enumerate() {
                if value != 0.0 && value != 1.0 {
                    return Err(TopologyError::NonBinaryErLink { name, index, value });
                }
            }
        }
        for row in 0..n {
            for col in 0..n {
                let weight = icu_adjacency[(row, col)];
                if !weight.is_finite() || weight < 0.0 {
                    return Err(TopologyError::InvalidWeight { row, col, weight });
                }
                if row == col && weight != 0.0 {
                    return Err(TopologyError::SelfLoop(row));
                }
            }
        }
        Ok(Self {
            icu_adjacency,
            er_to_icu,
            icu_to_er,
        })
    }

    /// Builds a graph from undirected edges `(i, j, w)`; each edge sets both
    /// `a_ij` and `a_ji`. ER links are given as index lists.
    pub fn from_undirected_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
        er_to: &[usize],
        er_from: &[usize],
    ) -> Result<Self, TopologyError> {
        let mut adj = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(TopologyError::EdgeOutOfRange { from: i, to: j, n });
            }
            adj[(i, j)] = w;
            adj[(j, i)] = w;
        }
        Self::new(adj, indicator(n, er_to)?, indicator(n, er_from)?)
    }

    pub fn n_icus(&self) -> usize {
        self.icu_adjacency.nrows()
    }

    pub fn icu_adjacency(&self) -> &DMatrix<f64> {
        &self.icu_adjacency
    }

    /// `a_ij`: weight with which ICU `i` hears ICU `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.icu_adjacency[(i, j)]
    }

    /// `a_i0`.
    pub fn er_to_icu(&self, i: usize) -> f64 {
        self.er_to_icu[i]
    }

    /// `a_0i`.
    pub fn icu_to_er(&self, i: usize) -> f64 {
        self.icu_to_er[i]
    }

    pub fn er_to_icu_links(&self) -> &[f64] {
        &self.er_to_icu
    }

    pub fn icu_to_er_links(&self) -> &[f64] {
        &self.icu_to_er
    }

    /// In-neighbours of ICU `i` with their weights.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n_icus())
            .map(move |j| (j, self.icu_adjacency[(i, j)]))
            .filter(|&(_, w)| w > 0.0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.first_asymmetry().is_none()
    }

    fn first_asymmetry(&self) -> Option<(usize, usize)> {
        let n = self.n_icus();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.icu_adjacency[(i, j)] - self.icu_adjacency[(j, i)]).abs() > SYMMETRY_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_icus();
        let mut l = -self.icu_adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.icu_adjacency.row(i).sum();
        }
        l
    }

    pub fn build_derived(&self, semantics: EdgeSemantics) -> Result<DerivedMatrices, TopologyError> {
        if semantics == EdgeSemantics::Undirected {
            if let Some((row, col)) = self.first_asymmetry() {
                return Err(TopologyError::Asymmetric { row, col });
            }
        }
        let laplacian = self.laplacian();
        let leader_matrix = &laplacian + DMatrix::from_diagonal(&DVector::from_vec(self.er_to_icu.clone()));
        Ok(DerivedMatrices {
            laplacian,
            leader_matrix,
            absorption_c: self.absorption(Absorption::SendToEr),
            absorption_c_prime: self.absorption(Absorption::Bidirectional),
        })
    }

    pub fn absorption(&self, which: Absorption) -> DMatrix<f64> {
        let diag: Vec<f64> = match which {
            Absorption::SendToEr => self.icu_to_er.clone(),
            Absorption::Bidirectional => self
                .er_to_icu
                .iter()
                .zip(&self.icu_to_er)
                .map(|(a, b)| a * b)
                .collect(),
        };
        DMatrix::from_diagonal(&DVector::from_vec(diag))
    }

    /// Every ICU is reachable from the ER along directed edges.
    pub fn check_spanning_tree_from_er(&self) -> bool {
        let n = self.n_icus();
        let seeds: Vec<usize> = (0..n).filter(|&i| self.er_to_icu[i] > 0.0).collect();
        // j -> i exists when a_ij > 0, so successors of j are the rows with a positive column j.
        let reached = self.bfs(&seeds, |j, i| self.icu_adjacency[(i, j)] > 0.0);
        reached.iter().all(|&r| r)
    }

    /// Every ICU has a directed path to the ER.
    pub fn check_paths_to_er(&self) -> bool {
        let n = self.n_icus();
        let seeds: Vec<usize> = (0..n).filter(|&i| self.icu_to_er[i] > 0.0).collect();
        // Walk edges backwards: from j we may step to any i with i -> j, i.e. a_ji > 0.
        let reached = self.bfs(&seeds, |j, i| self.icu_adjacency[(j, i)] > 0.0);
        reached.iter().all(|&r| r)
    }

    /// Some ICU is linked to the ER in both directions and the ICU subgraph is
    /// connected when edge directions are ignored.
    pub fn check_bidirectional_er_neighbor(&self) -> bool {
        let has_bidirectional = self
            .er_to_icu
            .iter()
            .zip(&self.icu_to_er)
            .any(|(a, b)| a * b > 0.0);
        has_bidirectional && self.is_weakly_connected()
    }

    pub fn is_weakly_connected(&self) -> bool {
        let reached = self.bfs(&[0], |j, i| {
            self.icu_adjacency[(i, j)] > 0.0 || self.icu_adjacency[(j, i)] > 0.0
        });
        reached.iter().all(|&r| r)
    }

    /// ICUs reachable from `sources` along edges `j -> i` (`a_ij > 0`).
    pub fn reachable_from(&self, sources: &[usize]) -> Vec<bool> {
        self.bfs(sources, |j, i| self.icu_adjacency[(i, j)] > 0.0)
    }

    fn bfs(&self, seeds: &[usize], step: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let n = self.n_icus();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(j) = queue.pop_front() {
            for (i, s) in seen.iter_mut().enumerate() {
                if !*s && step(j, i) {
                    *s = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }

    pub fn step_size_bounds(&self) -> StepSizeBounds {
        let n = self.n_icus();
        let in_weight: Vec<f64> = (0..n).map(|i| self.icu_adjacency.row(i).sum()).collect();
        let eps_max = in_weight
            .iter()
            .zip(&self.er_to_icu)
            .map(|(w, a)| recip_or_inf(w + a))
            .collect();
        let max_in = in_weight.iter().cloned().fold(0.0, f64::max);
        StepSizeBounds {
            eps_max,
            mu_max: recip_or_inf(max_in),
        }
    }

    /// `(I - C_sel)(I - mu L_G)`, the homogeneous part of the mismatch iteration.
    pub fn mismatch_iteration_matrix(&self, mu: f64, absorption: Absorption) -> DMatrix<f64> {
        let n = self.n_icus();
        let id = DMatrix::<f64>::identity(n, n);
        (&id - self.absorption(absorption)) * (&id - self.laplacian() * mu)
    }

    /// Spectral radius of `(I - C_sel)(I - mu L_G)`; stable when it lies inside
    /// the unit disk by more than [`STABILITY_MARGIN`].
    pub fn lemma1_spectral_check(
        &self,
        mu: f64,
        absorption: Absorption,
    ) -> Result<SpectralReport, TopologyError> {
        let mu_max = self.step_size_bounds().mu_max;
        if !(mu > 0.0 && mu < mu_max) {
            return Err(TopologyError::MuOutOfRange { mu, mu_max });
        }
        let radius = spectral_radius(&self.mismatch_iteration_matrix(mu, absorption));
        Ok(SpectralReport {
            radius,
            stable: radius < 1.0 - STABILITY_MARGIN,
        })
    }
}

/// Largest eigenvalue modulus of a square real matrix (dense Schur decomposition).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn recip_or_inf(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        f64::INFINITY
    }
}

fn indicator(n: usize, idx: &[usize]) -> Result<Vec<f64>, TopologyError> {
    let mut v = vec![0.0; n];
    for &i in idx {
        if i >= n {
            return Err(TopologyError::EdgeOutOfRange { from: i, to: i, n });
        }
        v[i] = 1.0;
    }
    Ok(v)
}

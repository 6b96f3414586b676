//! Two-level graph structure: a bipartite predictor/edge graph on top of a
//! region-level connectome, tied together by the region-pair index.
//!
//! Externally, region and flat-edge indices are 1-based and edges are listed
//! lexicographically over `(i, j)` with `i < j`. Everything inside the crate
//! works with 0-based indices; [`RegionPairIndex::pair_to_flat`] and
//! [`RegionPairIndex::flat_to_pair`] are the only places that speak 1-based.

use std::collections::BTreeSet;
use std::sync::Arc;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::AssociationMatrix;
use crate::error::{MoatError, Result};

/// Number of unordered pairs among `n` items.
#[inline]
pub fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Lexicographic bijection between region pairs `(i, j)`, `i < j`, and flat
/// edge indices.
#[derive(Debug, Clone)]
pub struct RegionPairIndex {
    n_regions: usize,
    endpoints: Arc<[(u32, u32)]>,
}

impl PartialEq for RegionPairIndex {
    fn eq(&self, other: &Self) -> bool {
        self.n_regions == other.n_regions
    }
}

impl RegionPairIndex {
    pub fn new(n_regions: usize) -> Result<Self> {
        if n_regions < 2 {
            return Err(MoatError::domain(format!(
                "a connectome needs at least 2 regions, got {n_regions}"
            )));
        }
        if n_regions > u32::MAX as usize {
            return Err(MoatError::domain("region count exceeds u32 range"));
        }
        let mut endpoints = Vec::with_capacity(pairs(n_regions));
        for i in 0..n_regions {
            for j in (i + 1)..n_regions {
                endpoints.push((i as u32, j as u32));
            }
        }
        Ok(Self {
            n_regions,
            endpoints: endpoints.into(),
        })
    }

    /// Recovers the region count from an edge count `n(n-1)/2`.
    pub fn from_edge_count(f_count: usize) -> Result<Self> {
        let n = ((1.0 + (1.0 + 8.0 * f_count as f64).sqrt()) / 2.0).round() as usize;
        if pairs(n) != f_count {
            return Err(MoatError::DimensionMismatch(format!(
                "{f_count} outcome columns is not n(n-1)/2 for any region count n"
            )));
        }
        Self::new(n)
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    /// Number of flat edges, `n(n-1)/2`.
    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    /// 1-based `(i, j)` to 1-based flat index.
    pub fn pair_to_flat(&self, i: usize, j: usize) -> Result<usize> {
        pair_to_flat(i, j, self.n_regions)
    }

    /// 1-based flat index to 1-based `(i, j)`.
    pub fn flat_to_pair(&self, idx: usize) -> Result<(usize, usize)> {
        if idx == 0 || idx > self.len() {
            return Err(MoatError::domain(format!(
                "flat index {idx} outside [1, {}]",
                self.len()
            )));
        }
        let (i, j) = self.endpoints[idx - 1];
        Ok((i as usize + 1, j as usize + 1))
    }

    /// 0-based edge index of 0-based regions; `i != j` required.
    #[inline]
    pub(crate) fn edge(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n_regions - i - 1) / 2 + (j - i - 1)
    }

    /// 0-based endpoints of a 0-based edge.
    #[inline]
    pub(crate) fn endpoints(&self, e: usize) -> (usize, usize) {
        let (i, j) = self.endpoints[e];
        (i as usize, j as usize)
    }
}

/// 1-based lexicographic flat index of region pair `(i, j)` among `n` regions.
pub fn pair_to_flat(i: usize, j: usize, n: usize) -> Result<usize> {
    if i == 0 || i >= j || j > n {
        return Err(MoatError::domain(format!(
            "region pair ({i}, {j}) invalid for n = {n}; need 1 <= i < j <= n"
        )));
    }
    Ok((i - 1) * (2 * n - i) / 2 + (j - i))
}

/// Inverse of [`pair_to_flat`].
pub fn flat_to_pair(idx: usize, n: usize) -> Result<(usize, usize)> {
    let total = pairs(n);
    if idx == 0 || idx > total {
        return Err(MoatError::domain(format!(
            "flat index {idx} outside [1, {total}] for n = {n}"
        )));
    }
    // Row i (1-based) starts after (i-1)(2n-i)/2 entries. Estimate from the
    // quadratic, then correct the rounding.
    let nf = n as f64;
    let k = (idx - 1) as f64;
    let est = ((2.0 * nf - 1.0) - ((2.0 * nf - 1.0).powi(2) - 8.0 * k).max(0.0).sqrt()) / 2.0;
    let mut i = (est.floor() as usize).clamp(0, n - 2) + 1;
    let start = |i: usize| (i - 1) * (2 * n - i) / 2;
    while i > 1 && start(i) >= idx {
        i -= 1;
    }
    while i < n - 1 && start(i + 1) < idx {
        i += 1;
    }
    Ok((i, i + (idx - start(i))))
}

/// Binary incidence `H` between predictors `S` and flat edges `F`, packed
/// row-major by predictor.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    s_count: usize,
    f_count: usize,
    bits: BitVec<u64, Lsb0>,
    row_degree: Vec<u32>,
    col_degree: Vec<u32>,
    n_edges: usize,
}

impl BipartiteGraph {
    /// Edges are the scores strictly above `cutoff`.
    pub fn from_scores(scores: &AssociationMatrix, cutoff: f64) -> Self {
        let (m, f) = (scores.n_predictors(), scores.n_edges());
        let mut bits = bitvec![u64, Lsb0; 0; m * f];
        let mut row_degree = vec![0u32; m];
        let mut col_degree = vec![0u32; f];
        let mut n_edges = 0;
        for (k, deg) in row_degree.iter_mut().enumerate() {
            for (e, &a) in scores.row(k).iter().enumerate() {
                if a > cutoff {
                    bits.set(k * f + e, true);
                    *deg += 1;
                    col_degree[e] += 1;
                    n_edges += 1;
                }
            }
        }
        Self {
            s_count: m,
            f_count: f,
            bits,
            row_degree,
            col_degree,
            n_edges,
        }
    }

    pub fn s_count(&self) -> usize {
        self.s_count
    }

    pub fn f_count(&self) -> usize {
        self.f_count
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    #[inline]
    pub fn has_edge(&self, k: usize, e: usize) -> bool {
        self.bits[k * self.f_count + e]
    }

    pub fn row_degree(&self, k: usize) -> usize {
        self.row_degree[k] as usize
    }

    pub fn col_degree(&self, e: usize) -> usize {
        self.col_degree[e] as usize
    }

    /// `p1 = |H| / (|S||F|)`.
    pub fn density(&self) -> f64 {
        self.n_edges as f64 / (self.s_count * self.f_count) as f64
    }

    /// Number of edges inside the `s_nodes x f_nodes` block.
    pub fn block_edges(&self, s_nodes: &[usize], f_nodes: &[usize]) -> usize {
        s_nodes
            .iter()
            .map(|&k| {
                let row = &self.bits[k * self.f_count..(k + 1) * self.f_count];
                f_nodes.iter().filter(|&&e| row[e]).count()
            })
            .sum()
    }
}

/// Binary graph over (a subset of) the regions. The full connectome uses all
/// regions; an induced clique uses only the endpoints of its edges.
#[derive(Debug, Clone)]
pub struct ConnectomeGraph {
    index: RegionPairIndex,
    vertices: Vec<usize>,
    active: BitVec<u64, Lsb0>,
    n_active: usize,
}

impl ConnectomeGraph {
    /// Graph on all regions with the given 0-based flat edges present.
    pub fn from_edges(
        index: &RegionPairIndex,
        edges: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut active = bitvec![u64, Lsb0; 0; index.len()];
        for e in edges {
            if e >= index.len() {
                return Err(MoatError::domain(format!(
                    "edge {e} out of range for {} regions",
                    index.n_regions()
                )));
            }
            active.set(e, true);
        }
        let n_active = active.count_ones();
        Ok(Self {
            index: index.clone(),
            vertices: (0..index.n_regions()).collect(),
            active,
            n_active,
        })
    }

    /// Complete graph on all regions.
    pub fn complete(index: &RegionPairIndex) -> Self {
        Self {
            index: index.clone(),
            vertices: (0..index.n_regions()).collect(),
            active: bitvec![u64, Lsb0; 1; index.len()],
            n_active: index.len(),
        }
    }

    /// Connectome implied by the bipartite level: an edge is present when its
    /// bipartite degree reaches the count expected under the overall
    /// bipartite density, and is at least one.
    pub fn from_bipartite(index: &RegionPairIndex, bipartite: &BipartiteGraph) -> Self {
        let expected = (bipartite.density() * bipartite.s_count() as f64).max(1.0);
        let edges =
            (0..bipartite.f_count()).filter(|&e| bipartite.col_degree(e) as f64 >= expected);
        Self::from_edges(index, edges).expect("bipartite columns match the index")
    }

    pub fn index(&self) -> &RegionPairIndex {
        &self.index
    }

    /// Regions this graph is defined on (0-based, ascending).
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn v_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_active
    }

    #[inline]
    pub fn has_edge(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter_ones()
    }

    /// `|F_active| / C(|V|, 2)`; zero for fewer than two vertices.
    pub fn density(&self) -> f64 {
        let p = pairs(self.vertices.len());
        if p == 0 {
            0.0
        } else {
            self.n_active as f64 / p as f64
        }
    }
}

/// Edge-induced sub-clique: the graph on the union of the endpoints of
/// `f_nodes` (0-based flat edges) with exactly those edges present.
pub fn induced_clique(index: &RegionPairIndex, f_nodes: &[usize]) -> Result<ConnectomeGraph> {
    let mut g = ConnectomeGraph::from_edges(index, f_nodes.iter().copied())?;
    let regions: BTreeSet<usize> = f_nodes
        .iter()
        .flat_map(|&e| {
            let (i, j) = index.endpoints(e);
            [i, j]
        })
        .collect();
    g.vertices = regions.into_iter().collect();
    Ok(g)
}

/// One extracted block `B_c = (S_c, F_c; H_c)` with its clique `G_c = (V_c; F_c)`.
///
/// Indices are 0-based and sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subnetwork {
    pub s_nodes: Vec<usize>,
    pub f_nodes: Vec<usize>,
    pub v_nodes: Vec<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub objective_value: f64,
}

impl Subnetwork {
    /// Builds a subnetwork whose regions are the endpoints of `f_nodes`, with
    /// densities taken from `bipartite`.
    pub fn new(
        mut s_nodes: Vec<usize>,
        mut f_nodes: Vec<usize>,
        index: &RegionPairIndex,
        bipartite: &BipartiteGraph,
        objective_value: f64,
    ) -> Result<Self> {
        s_nodes.sort_unstable();
        s_nodes.dedup();
        f_nodes.sort_unstable();
        f_nodes.dedup();
        if s_nodes.is_empty() || f_nodes.is_empty() {
            return Err(MoatError::domain("subnetwork needs nonempty S_c and F_c"));
        }
        if let Some(&k) = s_nodes.iter().find(|&&k| k >= bipartite.s_count()) {
            return Err(MoatError::domain(format!("predictor {k} out of range")));
        }
        if let Some(&e) = f_nodes.iter().find(|&&e| e >= index.len()) {
            return Err(MoatError::domain(format!("edge {e} out of range")));
        }
        let v_nodes = induced_clique(index, &f_nodes)?.vertices;
        let h = bipartite.block_edges(&s_nodes, &f_nodes);
        let gamma1 = h as f64 / (s_nodes.len() * f_nodes.len()) as f64;
        let gamma2 = f_nodes.len() as f64 / pairs(v_nodes.len()) as f64;
        Ok(Self {
            s_nodes,
            f_nodes,
            v_nodes,
            gamma1,
            gamma2,
            objective_value,
        })
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.s_nodes.len(), self.f_nodes.len(), self.v_nodes.len())
    }

    /// Whether the `S_c x F_c` blocks of two subnetworks share a cell.
    pub fn overlaps(&self, other: &Subnetwork) -> bool {
        intersects(&self.s_nodes, &other.s_nodes) && intersects(&self.f_nodes, &other.f_nodes)
    }
}

/// Intersection test for two ascending slices.
pub(crate) fn intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// The bipartite level and the connectome level built from one score matrix.
#[derive(Debug, Clone)]
pub struct MultiLevelGraph {
    pub bipartite: BipartiteGraph,
    pub connectome: ConnectomeGraph,
}

impl MultiLevelGraph {
    pub fn from_scores(scores: &AssociationMatrix, cutoff: f64) -> Self {
        let bipartite = BipartiteGraph::from_scores(scores, cutoff);
        let connectome = ConnectomeGraph::from_bipartite(scores.index(), &bipartite);
        Self {
            bipartite,
            connectome,
        }
    }

    pub fn index(&self) -> &RegionPairIndex {
        self.connectome.index()
    }
}

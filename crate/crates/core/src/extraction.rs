//! Multi-level dense subnetwork extraction by greedy peeling.
//!
//! The objective for a list of subnetworks is
//!
//! ```text
//! sum_c  sum_{k in S_c, e in F_c} a_(e),k / (|S_c| * C(|V_c|, 2))^(l1/2)
//!      + |F_c| / |V_c|^l2
//! ```
//!
//! [`greedy_peel`] approximates its maximizer for one subnetwork: predictors
//! and edges are removed one at a time by minimum weighted degree, and after
//! every edge removal the connectome level is re-peeled by vertex degree and
//! the edge set is cut back to the densest region subset found.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::AssociationMatrix;
use crate::error::{MoatError, Result};
use crate::graph::{
    intersects, pairs, ConnectomeGraph, MultiLevelGraph, RegionPairIndex, Subnetwork,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Scores strictly above this value are bipartite edges. The default of
    /// zero takes every score that survived thresholding.
    pub binarize_cutoff: f64,
    pub max_subnetworks: usize,
    pub lambda_grid: Vec<(f64, f64)>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.25,
            lambda2: 1.5,
            binarize_cutoff: 0.0,
            max_subnetworks: 10,
            lambda_grid: default_lambda_grid(),
        }
    }
}

/// `{1.05, 1.15, ..., 1.95}` on both axes.
pub fn default_lambda_grid() -> Vec<(f64, f64)> {
    let axis: Vec<f64> = (0..10).map(|i| (105 + 10 * i) as f64 / 100.0).collect();
    axis.iter()
        .flat_map(|&l1| axis.iter().map(move |&l2| (l1, l2)))
        .collect()
}

fn check_lambda(name: &str, v: f64) -> Result<()> {
    if v > 1.0 && v <= 2.0 {
        Ok(())
    } else {
        Err(MoatError::Config(format!(
            "{name} = {v} must lie in (1, 2]"
        )))
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda("lambda1", self.lambda1)?;
        check_lambda("lambda2", self.lambda2)?;
        for &(l1, l2) in &self.lambda_grid {
            check_lambda("grid lambda1", l1)?;
            check_lambda("grid lambda2", l2)?;
        }
        if !(self.binarize_cutoff >= 0.0) || !self.binarize_cutoff.is_finite() {
            return Err(MoatError::Config(format!(
                "binarize_cutoff = {} must be finite and >= 0",
                self.binarize_cutoff
            )));
        }
        if self.max_subnetworks == 0 {
            return Err(MoatError::Config("max_subnetworks must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_lambdas(&self, lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..self.clone()
        }
    }
}

/// One term of the objective.
pub fn block_objective(
    mass: f64,
    s_count: usize,
    f_count: usize,
    v_count: usize,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let v = v_count as f64;
    mass / (s_count as f64 * pairs(v_count) as f64).powf(lambda1 / 2.0)
        + f_count as f64 / v.powf(lambda2)
}

/// Total score inside the `S_c x F_c` block.
pub fn block_mass(a: &AssociationMatrix, s_nodes: &[usize], f_nodes: &[usize]) -> f64 {
    s_nodes
        .iter()
        .map(|&k| {
            let row = a.row(k);
            f_nodes.iter().map(|&e| row[e]).sum::<f64>()
        })
        .sum()
}

/// The objective summed over `subnets`; zero for an empty list.
pub fn objective(
    a: &AssociationMatrix,
    subnets: &[Subnetwork],
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (c, sub) in subnets.iter().enumerate() {
        if sub.s_nodes.is_empty() || sub.f_nodes.is_empty() || sub.v_nodes.len() < 2 {
            return Err(MoatError::domain(format!(
                "subnetwork {c} has an empty predictor, edge or region set"
            )));
        }
        if sub.s_nodes.iter().any(|&k| k >= a.n_predictors())
            || sub.f_nodes.iter().any(|&e| e >= a.n_edges())
            || sub.v_nodes.iter().any(|&v| v >= a.n_regions())
        {
            return Err(MoatError::domain(format!(
                "subnetwork {c} indexes outside the {} x {} score matrix",
                a.n_predictors(),
                a.n_edges()
            )));
        }
        let (s, f, v) = sub.sizes();
        total += block_objective(
            block_mass(a, &sub.s_nodes, &sub.f_nodes),
            s,
            f,
            v,
            lambda1,
            lambda2,
        );
    }
    Ok(total)
}

/// What a single peeling iteration removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "side", rename_all = "snake_case")]
pub enum Removal {
    /// A predictor with minimum weighted degree.
    Predictor { node: usize, degree: f64 },
    /// An edge with minimum weighted degree (`node`, absent for the initial
    /// connectome step) plus the edges dropped by the connectome re-peel.
    Edge {
        node: Option<usize>,
        degree: f64,
        cascade: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeelStep {
    pub removal: Removal,
    /// Objective of the remaining block, `None` once a side is empty.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeelOutcome {
    pub subnetwork: Subnetwork,
    pub steps: Vec<PeelStep>,
    /// Index into `steps` of the iterate that was returned.
    pub best_step: usize,
}

impl PeelOutcome {
    /// Objective values of every iterate with both sides nonempty.
    pub fn objective_trace(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.objective).collect()
    }
}

/// Sparse copy of the nonzero scores, by row and by column.
struct SparseScores {
    rows: Vec<Vec<(u32, f64)>>,
    cols: Vec<Vec<(u32, f64)>>,
}

impl SparseScores {
    fn new(a: &AssociationMatrix) -> Self {
        let (m, f) = (a.n_predictors(), a.n_edges());
        let mut rows = vec![Vec::new(); m];
        let mut cols = vec![Vec::new(); f];
        for (k, row) in rows.iter_mut().enumerate() {
            for (e, &v) in a.row(k).iter().enumerate() {
                if v != 0.0 {
                    row.push((e as u32, v));
                    cols[e].push((k as u32, v));
                }
            }
        }
        Self { rows, cols }
    }
}

type MinHeap = BinaryHeap<Reverse<(OrderedFloat<f64>, usize)>>;

fn pop_min(heap: &mut MinHeap, alive: &[bool], degree: &[f64]) -> Option<usize> {
    while let Some(&Reverse((d, i))) = heap.peek() {
        if alive[i] && degree[i] == d.0 {
            return Some(i);
        }
        heap.pop();
    }
    None
}

/// Vertex peel of the connectome level restricted to `edges`, starting from
/// every region of `g`. Vertices go in order of edge count, ties broken by
/// the summed `weight` of their edges and then by index. Returns the edges
/// among the region subset that maximizes `|edges| / |V|^lambda2` (the
/// earliest, i.e. largest, subset on ties).
fn connectome_peel(
    index: &RegionPairIndex,
    g: &ConnectomeGraph,
    edges: &[usize],
    weight: &[f64],
    lambda2: f64,
) -> Vec<usize> {
    let n = index.n_regions();
    let mut in_v = vec![false; n];
    for &v in g.vertices() {
        in_v[v] = true;
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut live_edges = 0usize;
    for &e in edges {
        let (i, j) = index.endpoints(e);
        if in_v[i] && in_v[j] {
            adj[i].push((j, weight[e]));
            adj[j].push((i, weight[e]));
            live_edges += 1;
        }
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut wdeg: Vec<f64> = adj.iter().map(|a| a.iter().map(|x| x.1).sum()).collect();
    let mut heap: BinaryHeap<Reverse<(usize, OrderedFloat<f64>, usize)>> = g
        .vertices()
        .iter()
        .map(|&v| Reverse((degree[v], OrderedFloat(wdeg[v]), v)))
        .collect();
    let mut v_count = g.v_count();
    let ratio = |f: usize, v: usize| f as f64 / (v as f64).powf(lambda2);
    let mut best = (ratio(live_edges, v_count), 0usize);
    let mut order = Vec::with_capacity(v_count);
    while v_count > 2 {
        let Some(Reverse((d, w, v))) = heap.pop() else {
            break;
        };
        if !in_v[v] || degree[v] != d || wdeg[v] != w.0 {
            continue;
        }
        in_v[v] = false;
        order.push(v);
        v_count -= 1;
        live_edges -= d;
        for &(u, x) in &adj[v] {
            if in_v[u] {
                degree[u] -= 1;
                wdeg[u] -= x;
                heap.push(Reverse((degree[u], OrderedFloat(wdeg[u]), u)));
            }
        }
        let r = ratio(live_edges, v_count);
        if r > best.0 {
            best = (r, order.len());
        }
    }
    let mut keep = vec![false; n];
    for &v in g.vertices() {
        keep[v] = true;
    }
    for &v in &order[..best.1] {
        keep[v] = false;
    }
    edges
        .iter()
        .copied()
        .filter(|&e| {
            let (i, j) = index.endpoints(e);
            keep[i] && keep[j]
        })
        .collect()
}

/// One subnetwork by two-level greedy peeling of `a` against the levels in
/// `graph` (the bipartite level supplies the reported density, the
/// connectome level restricts which edges can form cliques).
pub fn greedy_peel(
    a: &AssociationMatrix,
    graph: &MultiLevelGraph,
    lambda1: f64,
    lambda2: f64,
) -> Result<PeelOutcome> {
    let index = a.index().clone();
    let g = &graph.connectome;
    if g.index().len() != a.n_edges() || graph.bipartite.s_count() != a.n_predictors() {
        return Err(MoatError::DimensionMismatch(
            "graph levels do not match the score matrix".into(),
        ));
    }
    if a.as_slice().iter().all(|&v| v == 0.0) {
        return Err(MoatError::EmptyScores);
    }
    let (m, f) = (a.n_predictors(), a.n_edges());
    let sparse = SparseScores::new(a);
    let mut alive_s = vec![true; m];
    let mut alive_f = vec![true; f];
    let mut deg_s: Vec<f64> = sparse
        .rows
        .iter()
        .map(|r| r.iter().map(|x| x.1).sum())
        .collect();
    let mut deg_f: Vec<f64> = sparse
        .cols
        .iter()
        .map(|c| c.iter().map(|x| x.1).sum())
        .collect();
    let mut mass: f64 = deg_s.iter().sum();
    let mut n_s = m;
    let mut n_f = f;
    let mut v_edges = vec![0usize; index.n_regions()];
    for e in 0..f {
        let (i, j) = index.endpoints(e);
        v_edges[i] += 1;
        v_edges[j] += 1;
    }
    let mut n_v = v_edges.iter().filter(|&&c| c > 0).count();

    let mut heap_s: MinHeap = (0..m)
        .map(|k| Reverse((OrderedFloat(deg_s[k]), k)))
        .collect();
    let mut heap_f: MinHeap = BinaryHeap::new();

    // Drops edge `e` from the block, updating masses and degrees.
    macro_rules! drop_edge {
        ($e:expr) => {{
            let e = $e;
            alive_f[e] = false;
            n_f -= 1;
            mass -= deg_f[e];
            for &(k, v) in &sparse.cols[e] {
                let k = k as usize;
                if alive_s[k] {
                    deg_s[k] -= v;
                    heap_s.push(Reverse((OrderedFloat(deg_s[k]), k)));
                }
            }
            let (i, j) = index.endpoints(e);
            for x in [i, j] {
                v_edges[x] -= 1;
                if v_edges[x] == 0 {
                    n_v -= 1;
                }
            }
        }};
    }

    let current_objective = |mass: f64, n_s: usize, n_f: usize, n_v: usize| {
        (n_s > 0 && n_f > 0).then(|| block_objective(mass, n_s, n_f, n_v, lambda1, lambda2))
    };

    // Initial connectome step on the full edge set.
    let mut steps = Vec::new();
    {
        let candidates: Vec<usize> = (0..f).filter(|&e| g.has_edge(e)).collect();
        let kept = connectome_peel(&index, g, &candidates, &deg_f, lambda2);
        let mut keep = vec![false; f];
        for &e in &kept {
            keep[e] = true;
        }
        let cascade: Vec<usize> = (0..f).filter(|&e| !keep[e]).collect();
        for &e in &cascade {
            drop_edge!(e);
        }
        steps.push(PeelStep {
            removal: Removal::Edge {
                node: None,
                degree: 0.0,
                cascade,
            },
            objective: current_objective(mass, n_s, n_f, n_v),
        });
    }
    for e in 0..f {
        if alive_f[e] {
            heap_f.push(Reverse((OrderedFloat(deg_f[e]), e)));
        }
    }
    let d = n_s as f64 / n_f.max(1) as f64;

    while n_s > 0 && n_f > 0 {
        let tau = pop_min(&mut heap_s, &alive_s, &deg_s).expect("live predictor");
        let phi = pop_min(&mut heap_f, &alive_f, &deg_f).expect("live edge");
        let removal = if d * deg_s[tau] <= deg_f[phi] {
            let degree = deg_s[tau];
            alive_s[tau] = false;
            n_s -= 1;
            mass -= degree;
            for &(e, v) in &sparse.rows[tau] {
                let e = e as usize;
                if alive_f[e] {
                    deg_f[e] -= v;
                    heap_f.push(Reverse((OrderedFloat(deg_f[e]), e)));
                }
            }
            Removal::Predictor { node: tau, degree }
        } else {
            let degree = deg_f[phi];
            drop_edge!(phi);
            let live: Vec<usize> = (0..f).filter(|&e| alive_f[e]).collect();
            let kept = connectome_peel(&index, g, &live, &deg_f, lambda2);
            let mut cascade = Vec::new();
            if kept.len() < live.len() {
                let mut keep = vec![false; f];
                for &e in &kept {
                    keep[e] = true;
                }
                for e in live {
                    if !keep[e] {
                        drop_edge!(e);
                        cascade.push(e);
                    }
                }
            }
            Removal::Edge {
                node: Some(phi),
                degree,
                cascade,
            }
        };
        steps.push(PeelStep {
            removal,
            objective: current_objective(mass, n_s, n_f, n_v),
        });
    }

    let mut best: Option<(f64, usize)> = None;
    for (q, s) in steps.iter().enumerate() {
        if let Some(v) = s.objective {
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, q));
            }
        }
    }
    let (_, best_step) = best.ok_or(MoatError::EmptyScores)?;
    let (s_nodes, f_nodes) = replay(m, f, &steps[..=best_step]);
    let mut sub = Subnetwork::new(s_nodes, f_nodes, &index, &graph.bipartite, 0.0)?;
    sub.objective_value = objective(a, std::slice::from_ref(&sub), lambda1, lambda2)?;
    Ok(PeelOutcome {
        subnetwork: sub,
        steps,
        best_step,
    })
}

/// Surviving predictors and edges after applying `steps` to the full block.
pub fn replay(m: usize, f: usize, steps: &[PeelStep]) -> (Vec<usize>, Vec<usize>) {
    let mut alive_s = vec![true; m];
    let mut alive_f = vec![true; f];
    for s in steps {
        match &s.removal {
            Removal::Predictor { node, .. } => alive_s[*node] = false,
            Removal::Edge { node, cascade, .. } => {
                if let Some(e) = node {
                    alive_f[*e] = false;
                }
                for &e in cascade {
                    alive_f[e] = false;
                }
            }
        }
    }
    (
        (0..m).filter(|&k| alive_s[k]).collect(),
        (0..f).filter(|&e| alive_f[e]).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// Subnetworks in extraction order.
    pub subnetworks: Vec<Subnetwork>,
    /// Per subnetwork, the objective value of every peeling iterate.
    pub objective_traces: Vec<Vec<f64>>,
    pub selected_lambdas: (f64, f64),
    /// Bipartite density `p1` of the unmasked score matrix.
    pub background_p1: f64,
    /// Connectome density `p2` of the unmasked score matrix.
    pub background_p2: f64,
    /// Value written over extracted blocks.
    pub mask_value: f64,
}

/// Repeated peeling with masking: after each extraction the block is
/// overwritten with the median of the original scores, the graph levels are
/// rebuilt, and peeling continues while the new block's bipartite density
/// exceeds the background density and fewer than `max_subnetworks` have been
/// found.
pub fn extract_all(a: &AssociationMatrix, cfg: &ExtractionConfig) -> Result<ExtractionResult> {
    cfg.validate()?;
    let original = MultiLevelGraph::from_scores(a, cfg.binarize_cutoff);
    let p1 = original.bipartite.density();
    let p2 = original.connectome.density();
    let median = a.median();
    let f = a.n_edges();
    let mut working = a.clone();
    let mut graph = original;
    let mut out = ExtractionResult {
        subnetworks: Vec::new(),
        objective_traces: Vec::new(),
        selected_lambdas: (cfg.lambda1, cfg.lambda2),
        background_p1: p1,
        background_p2: p2,
        mask_value: median,
    };
    while out.subnetworks.len() < cfg.max_subnetworks {
        let peel = match greedy_peel(&working, &graph, cfg.lambda1, cfg.lambda2) {
            Ok(p) => p,
            Err(MoatError::EmptyScores) => break,
            Err(e) => return Err(e),
        };
        let trace = peel.objective_trace();
        let mut sub = peel.subnetwork;
        // Keep blocks disjoint: predictors already used with any of these
        // edges are dropped from the new block.
        let taken: Vec<usize> = out
            .subnetworks
            .iter()
            .filter(|prev| intersects(&prev.f_nodes, &sub.f_nodes))
            .flat_map(|prev| prev.s_nodes.iter().copied())
            .collect();
        if !taken.is_empty() {
            let s: Vec<usize> = sub
                .s_nodes
                .iter()
                .copied()
                .filter(|k| !taken.contains(k))
                .collect();
            if s.is_empty() {
                break;
            }
            sub = Subnetwork::new(s, sub.f_nodes, a.index(), &graph.bipartite, 0.0)?;
            sub.objective_value = objective(
                &working,
                std::slice::from_ref(&sub),
                cfg.lambda1,
                cfg.lambda2,
            )?;
        }
        if !(sub.gamma1 > p1) {
            break;
        }
        let scores = working.as_mut_slice();
        for &k in &sub.s_nodes {
            for &e in &sub.f_nodes {
                scores[k * f + e] = median;
            }
        }
        graph = MultiLevelGraph::from_scores(&working, cfg.binarize_cutoff);
        out.subnetworks.push(sub);
        out.objective_traces.push(trace);
    }
    Ok(out)
}

/// Symmetrized Kullback-Leibler divergence between Bernoulli(`g`) and
/// Bernoulli(`p`).
pub fn bernoulli_symmetric_kl(g: f64, p: f64) -> f64 {
    let logit = |x: f64| (x / (1.0 - x)).ln();
    (g - p) * (logit(g) - logit(p))
}

/// Divergence score of one extraction on a binary score matrix: within-block
/// versus background edge densities at both levels, each smoothed by half a
/// count so that complete blocks stay finite.
pub fn extraction_divergence(
    a_binary: &AssociationMatrix,
    graph: &MultiLevelGraph,
    result: &ExtractionResult,
) -> f64 {
    if result.subnetworks.is_empty() {
        return f64::NEG_INFINITY;
    }
    let smooth = |k: usize, n: usize| (k as f64 + 0.5) / (n as f64 + 1.0);
    let b = &graph.bipartite;
    let g = &graph.connectome;
    let (mut k1, mut n1, mut k2, mut n2) = (0usize, 0usize, 0usize, 0usize);
    for sub in &result.subnetworks {
        k1 += b.block_edges(&sub.s_nodes, &sub.f_nodes);
        n1 += sub.s_nodes.len() * sub.f_nodes.len();
        k2 += sub.f_nodes.iter().filter(|&&e| g.has_edge(e)).count();
        n2 += pairs(sub.v_nodes.len());
    }
    let total1 = a_binary.n_predictors() * a_binary.n_edges();
    let total2 = a_binary.n_edges();
    if n1 >= total1 || n2 >= total2 {
        return f64::NEG_INFINITY;
    }
    let (g1, p1) = (smooth(k1, n1), smooth(b.n_edges() - k1, total1 - n1));
    let (g2, p2) = (
        smooth(k2, n2),
        smooth(g.n_edges().saturating_sub(k2), total2 - n2),
    );
    if g1 == p1 || g2 == p2 {
        return f64::NEG_INFINITY;
    }
    bernoulli_symmetric_kl(g1, p1) + bernoulli_symmetric_kl(g2, p2)
}

/// Scores of every grid point, in grid order.
pub fn lambda_scores(a: &AssociationMatrix, cfg: &ExtractionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.lambda_grid.is_empty() {
        return Err(MoatError::Config("lambda grid is empty".into()));
    }
    let binary = binarize(a, cfg.binarize_cutoff)?;
    let graph = MultiLevelGraph::from_scores(&binary, 0.5);
    let bin_cfg = ExtractionConfig {
        binarize_cutoff: 0.5,
        ..cfg.clone()
    };
    cfg.lambda_grid
        .par_iter()
        .map(|&(l1, l2)| {
            let result = extract_all(&binary, &bin_cfg.with_lambdas(l1, l2))?;
            Ok(extraction_divergence(&binary, &graph, &result))
        })
        .collect()
}

/// Grid point maximizing the two-level divergence (first one on ties).
/// Returns `None` when every grid point is degenerate.
pub fn select_lambdas(a: &AssociationMatrix, cfg: &ExtractionConfig) -> Result<Option<(f64, f64)>> {
    let scores = lambda_scores(a, cfg)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|(b, _)| s > b) {
            best = Some((s, i));
        }
    }
    Ok(best.map(|(_, i)| cfg.lambda_grid[i]))
}

/// 0/1 matrix of entries strictly above `cutoff`.
pub fn binarize(a: &AssociationMatrix, cutoff: f64) -> Result<AssociationMatrix> {
    let scores = a
        .as_slice()
        .iter()
        .map(|&v| if v > cutoff { 1.0 } else { 0.0 })
        .collect();
    AssociationMatrix::from_scores(
        crate::ScoreKind::AbsT,
        a.index().clone(),
        a.n_predictors(),
        scores,
    )
}

/// JSON view of one subnetwork with names and 1-based region/edge indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubnetworkReport {
    pub predictors: Vec<String>,
    pub predictor_indices: Vec<usize>,
    pub regions: Vec<usize>,
    pub edges: Vec<usize>,
    pub edge_pairs: Vec<(usize, usize)>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub objective_value: f64,
    pub lambdas: (f64, f64),
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub selected_lambdas: (f64, f64),
    pub background_p1: f64,
    pub background_p2: f64,
    pub mask_value: f64,
    pub subnetworks: Vec<SubnetworkReport>,
}

impl ExtractionReport {
    pub fn new(result: &ExtractionResult, a: &AssociationMatrix) -> Self {
        let idx = a.index();
        let subnetworks = result
            .subnetworks
            .iter()
            .zip(&result.objective_traces)
            .map(|(sub, trace)| SubnetworkReport {
                predictors: sub
                    .s_nodes
                    .iter()
                    .map(|&k| a.predictor_names[k].clone())
                    .collect(),
                predictor_indices: sub.s_nodes.iter().map(|k| k + 1).collect(),
                regions: sub.v_nodes.iter().map(|v| v + 1).collect(),
                edges: sub.f_nodes.iter().map(|e| e + 1).collect(),
                edge_pairs: sub
                    .f_nodes
                    .iter()
                    .map(|&e| idx.flat_to_pair(e + 1).expect("valid edge"))
                    .collect(),
                gamma1: sub.gamma1,
                gamma2: sub.gamma2,
                objective_value: sub.objective_value,
                lambdas: result.selected_lambdas,
                objective_trace: trace.clone(),
            })
            .collect();
        Self {
            selected_lambdas: result.selected_lambdas,
            background_p1: result.background_p1,
            background_p2: result.background_p2,
            mask_value: result.mask_value,
            subnetworks,
        }
    }
}

//! Undirected simple graphs, random generators and degree statistics.
//!
//! Degrees are 1-based everywhere a [`DegreeDistribution`] is involved:
//! `probs[0]` is the mass on degree 1. Isolated nodes never enter a degree
//! distribution; [`degree_distribution`] reports them separately.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng_from_seed;

/// Rounds of reshuffling leftover stubs before falling back to edge swaps.
const STUB_ROUNDS: usize = 32;
const SWAP_ATTEMPTS: usize = 200;

/// Undirected simple graph on nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    edge_count: usize,
}

impl Graph {
    /// Graph with `node_count` nodes and no edges.
    pub fn empty(node_count: usize) -> Self {
        Self {
            adj: vec![Vec::new(); node_count],
            edge_count: 0,
        }
    }

    /// Builds a graph from unordered pairs. Self-loops and repeated pairs are rejected.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if node_count == 0 {
            return Err(param("node_count", "graph needs at least one node"));
        }
        let mut g = Self::empty(node_count);
        let mut seen = HashSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(param(
                    "edges",
                    format!("edge ({u},{v}) references a node outside 0..{node_count}"),
                ));
            }
            if u == v {
                return Err(param("edges", format!("self-loop at node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(param("edges", format!("repeated edge ({u},{v})")));
            }
            g.adj[u].push(v);
            g.adj[v].push(u);
            g.edge_count += 1;
        }
        for list in &mut g.adj {
            list.sort_unstable();
        }
        Ok(g)
    }

    pub fn path(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i))).expect("path is simple")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least 3 nodes");
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle is simple")
    }

    /// Star with node 0 at the centre and `n - 1` leaves.
    pub fn star(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|i| (0, i))).expect("star is simple")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
        Self::from_edges(n, edges).expect("complete graph is simple")
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    /// Sorted neighbour list.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Each edge once, as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count() {
            return Err(Error::Dimension {
                context: "permutation",
                expected: self.node_count(),
                actual: perm.len(),
            });
        }
        Self::from_edges(self.node_count(), self.edges().map(|(u, v)| (perm[u], perm[v])))
    }

    /// Checks the structural invariants: symmetric adjacency, no loops, no duplicates.
    pub fn check_invariants(&self) -> bool {
        let mut count = 0usize;
        for (u, list) in self.adj.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            for &v in list {
                if v == u || v >= self.node_count() || !self.has_edge(v, u) {
                    return false;
                }
                count += 1;
            }
        }
        count == 2 * self.edge_count
    }

    /// Writes the edge-list format: `# nodes=M` header, then one `u v` per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# nodes={}", self.node_count())?;
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut s = format!("# nodes={}\n", self.node_count());
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    /// Parses the edge-list format written by [`Graph::write_edge_list`].
    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut node_count = None;
        let mut edges = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some(n) = rest.trim().strip_prefix("nodes=") {
                    let n = n.trim().parse::<usize>().map_err(|e| Error::Parse {
                        line: lineno,
                        reason: format!("bad node count: {e}"),
                    })?;
                    node_count = Some(n);
                }
                continue;
            }
            let mut it = trimmed.split_whitespace();
            let mut next = || -> Result<usize> {
                it.next()
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        reason: "expected `u v`".into(),
                    })?
                    .parse::<usize>()
                    .map_err(|e| Error::Parse {
                        line: lineno,
                        reason: e.to_string(),
                    })
            };
            let u = next()?;
            let v = next()?;
            edges.push((u, v));
        }
        let n = node_count.ok_or_else(|| Error::Parse {
            line: 1,
            reason: "missing `# nodes=M` header".into(),
        })?;
        Self::from_edges(n, edges)
    }
}

/// Probability vector over degrees `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeDistribution {
    probs: Vec<f64>,
}

impl DegreeDistribution {
    /// Validates a probability vector (entries in [0,1], sum 1 within 1e-12).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(param("rho", "degree distribution is empty"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(param("rho", "entries must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(param("rho", format!("entries sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalises nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(param("weights", "weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(param("weights", "weights sum to zero"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    /// Poisson(`mean`) restricted to degrees `1..=max_degree` and renormalised.
    pub fn poisson(mean: f64, max_degree: usize) -> Result<Self> {
        if !(mean > 0.0) {
            return Err(param("lambda", "Poisson mean must be positive"));
        }
        if max_degree == 0 {
            return Err(param("max_degree", "must be at least 1"));
        }
        let mut w = Vec::with_capacity(max_degree);
        let mut term = (-mean).exp();
        for l in 1..=max_degree {
            term *= mean / l as f64;
            w.push(term);
        }
        Self::from_weights(&w)
    }

    /// Power law `l^-gamma` on `1..=max_degree`.
    pub fn power_law(gamma: f64, max_degree: usize) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(param("gamma", "exponent must exceed 1"));
        }
        if max_degree == 0 {
            return Err(param("max_degree", "must be at least 1"));
        }
        let w: Vec<f64> = (1..=max_degree).map(|l| (l as f64).powf(-gamma)).collect();
        Self::from_weights(&w)
    }

    pub fn uniform(max_degree: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; max_degree])
    }

    pub fn max_degree(&self) -> usize {
        self.probs.len()
    }

    /// Mass on degree `l` (1-based); zero outside `1..=L`.
    pub fn prob(&self, degree: usize) -> f64 {
        if degree == 0 {
            0.0
        } else {
            self.probs.get(degree - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn mean_degree(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| ((i + 1) as f64).powi(2) * p)
            .sum()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// CSV with header `degree,prob`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("degree,prob\n");
        for (i, p) in self.probs.iter().enumerate() {
            let _ = writeln!(s, "{},{}", i + 1, p);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut probs: Vec<f64> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if idx == 0 || line.is_empty() {
                continue;
            }
            let (d, p) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: idx + 1,
                reason: "expected `degree,prob`".into(),
            })?;
            let d: usize = d.trim().parse().map_err(|e| Error::Parse {
                line: idx + 1,
                reason: format!("degree: {e}"),
            })?;
            let p: f64 = p.trim().parse().map_err(|e| Error::Parse {
                line: idx + 1,
                reason: format!("prob: {e}"),
            })?;
            if d == 0 {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: "degrees start at 1".into(),
                });
            }
            if probs.len() < d {
                probs.resize(d, 0.0);
            }
            probs[d - 1] = p;
        }
        Self::new(probs)
    }
}

/// Degree statistics of a concrete graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeProfile {
    pub distribution: DegreeDistribution,
    /// `counts[l - 1]` is the number of nodes with degree `l`.
    pub counts: Vec<usize>,
    /// Nodes with degree 0, excluded from the distribution.
    pub isolated: usize,
}

impl DegreeProfile {
    /// Number of non-isolated nodes.
    pub fn active_nodes(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Empirical degree distribution `rho(l) = M(l) / M` over non-isolated nodes.
pub fn degree_distribution(g: &Graph) -> Result<DegreeProfile> {
    let max = g.max_degree();
    if max == 0 {
        return Err(param("graph", "every node is isolated; no degree distribution"));
    }
    let mut counts = vec![0usize; max];
    let mut isolated = 0;
    for d in g.degrees() {
        if d == 0 {
            isolated += 1;
        } else {
            counts[d - 1] += 1;
        }
    }
    let active: usize = counts.iter().sum();
    let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / active as f64).collect();
    // Push any rounding residue onto the largest entry so the sum is 1 to the last ulp.
    let residue = 1.0 - probs.iter().sum::<f64>();
    if let Some((imax, _)) = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    {
        probs[imax] += residue;
    }
    Ok(DegreeProfile {
        distribution: DegreeDistribution::new(probs)?,
        counts,
        isolated,
    })
}

/// Configuration model with self-loop and multi-edge rejection.
///
/// Stubs are paired uniformly at random; rejected pairs are reshuffled for a
/// few rounds and then placed by degree-preserving edge swaps. Stubs that
/// still cannot be placed are dropped, so a handful of hub degrees may come
/// out slightly below their target on very heavy-tailed sequences.
pub fn configuration_model(degrees: &[usize], seed: u64) -> Result<Graph> {
    let n = degrees.len();
    if n == 0 {
        return Err(param("degrees", "empty degree sequence"));
    }
    let total: usize = degrees.iter().sum();
    if total % 2 == 1 {
        return Err(param("degrees", "stub count is odd"));
    }
    let mut rng = rng_from_seed(seed);
    let mut stubs: Vec<usize> = degrees
        .iter()
        .enumerate()
        .flat_map(|(v, &d)| std::iter::repeat_n(v, d))
        .collect();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(total / 2);
    let mut present: HashSet<(usize, usize)> = HashSet::with_capacity(total / 2);
    let key = |u: usize, v: usize| (u.min(v), u.max(v));

    for _ in 0..STUB_ROUNDS {
        if stubs.is_empty() {
            break;
        }
        stubs.shuffle(&mut rng);
        let mut leftover = Vec::new();
        for pair in stubs.chunks_exact(2) {
            let (u, v) = (pair[0], pair[1]);
            if u != v && present.insert(key(u, v)) {
                edges.push((u, v));
            } else {
                leftover.extend_from_slice(pair);
            }
        }
        if leftover.len() == stubs.len() {
            stubs = leftover;
            break;
        }
        stubs = leftover;
    }

    // Degree-preserving swaps: (u,v) stubs + existing (x,y) -> (u,x), (v,y).
    stubs.shuffle(&mut rng);
    for pair in stubs.chunks_exact(2) {
        let (u, v) = (pair[0], pair[1]);
        if edges.is_empty() {
            break;
        }
        for _ in 0..SWAP_ATTEMPTS {
            let idx = rng.random_range(0..edges.len());
            let (mut x, mut y) = edges[idx];
            if rng.random::<bool>() {
                std::mem::swap(&mut x, &mut y);
            }
            if u == x || v == y || present.contains(&key(u, x)) || present.contains(&key(v, y))
            {
                continue;
            }
            if key(u, x) == key(v, y) {
                continue;
            }
            present.remove(&key(x, y));
            present.insert(key(u, x));
            present.insert(key(v, y));
            edges[idx] = (u, x);
            edges.push((v, y));
            break;
        }
    }
    Graph::from_edges(n, edges)
}

fn fix_parity<F>(degrees: &mut [usize], rng: &mut impl Rng, mut draw: F)
where
    F: FnMut(&mut dyn RngCore) -> usize,
{
    while degrees.iter().sum::<usize>() % 2 == 1 {
        let i = rng.random_range(0..degrees.len());
        degrees[i] = draw(rng);
    }
}

/// Erdős–Rényi-like graph via the configuration model with Poisson(`lambda`)
/// degrees (capped at `n_nodes - 1`).
///
/// An odd stub total is repaired by redrawing one uniformly chosen node's degree.
pub fn generate_erdos_renyi(n_nodes: usize, lambda: f64, seed: u64) -> Result<Graph> {
    generate_erdos_renyi_capped(n_nodes, lambda, n_nodes.saturating_sub(1), seed)
}

/// As [`generate_erdos_renyi`] but with the Poisson law truncated at `max_degree`.
pub fn generate_erdos_renyi_capped(
    n_nodes: usize,
    lambda: f64,
    max_degree: usize,
    seed: u64,
) -> Result<Graph> {
    if n_nodes < 2 {
        return Err(param("n_nodes", "need at least 2 nodes"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(param("lambda", "must be positive"));
    }
    let cap = max_degree.min(n_nodes - 1);
    let poisson = Poisson::new(lambda).map_err(|e| param("lambda", e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut draw = |rng: &mut dyn RngCore| loop {
        let d = poisson.sample(rng) as usize;
        if d <= cap {
            break d;
        }
    };
    let mut degrees: Vec<usize> = (0..n_nodes).map(|_| draw(&mut rng)).collect();
    fix_parity(&mut degrees, &mut rng, &mut draw);
    configuration_model(&degrees, rng.random())
}

/// Configuration-model graph with degrees drawn from `l^-gamma`, `l = 1..=max_degree`.
pub fn generate_scale_free(
    n_nodes: usize,
    gamma: f64,
    max_degree: usize,
    seed: u64,
) -> Result<Graph> {
    if n_nodes < 2 {
        return Err(param("n_nodes", "need at least 2 nodes"));
    }
    if max_degree < 2 {
        return Err(param("max_degree", "must be at least 2"));
    }
    let rho = DegreeDistribution::power_law(gamma, max_degree.min(n_nodes - 1).max(1))?;
    sample_configuration_graph(n_nodes, &rho, seed)
}

/// Configuration-model graph with i.i.d. degrees drawn from `rho`.
pub fn sample_configuration_graph(
    n_nodes: usize,
    rho: &DegreeDistribution,
    seed: u64,
) -> Result<Graph> {
    let table =
        WeightedIndex::new(rho.probs()).map_err(|e| param("rho", e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut draw = |rng: &mut dyn RngCore| table.sample(rng) + 1;
    let mut degrees: Vec<usize> = (0..n_nodes).map(|_| draw(&mut rng)).collect();
    fix_parity(&mut degrees, &mut rng, &mut draw);
    configuration_model(&degrees, rng.random())
}

/// Multigraph grown by preferential attachment. Repeated edges and loops are
/// kept; [`MultiGraph::to_simple`] gives the projection used for SIS runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl MultiGraph {
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= node_count || *v >= node_count) {
            return Err(param("edges", format!("edge ({u},{v}) out of range")));
        }
        Ok(Self { node_count, edges })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edge count including repeats and loops.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Degrees counting multiplicity; a loop adds 2.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Simple-graph projection: loops dropped, parallel edges merged.
    pub fn to_simple(&self) -> Graph {
        let set: HashSet<(usize, usize)> = self
            .edges
            .iter()
            .filter(|(u, v)| u != v)
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        let mut edges: Vec<_> = set.into_iter().collect();
        edges.sort_unstable();
        Graph::from_edges(self.node_count.max(1), edges).expect("projection is simple")
    }
}

impl From<&Graph> for MultiGraph {
    fn from(g: &Graph) -> Self {
        Self {
            node_count: g.node_count(),
            edges: g.edges().collect(),
        }
    }
}

/// Preferential attachment growth.
///
/// Each step performs a vertex step with probability `p` (a new node attached
/// to a degree-proportional endpoint) and otherwise an edge step (two
/// endpoints drawn independently in proportion to degree).
pub fn generate_preferential_attachment(
    p: f64,
    g0: &MultiGraph,
    steps: usize,
    seed: u64,
) -> Result<MultiGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(param("p", "must lie in [0, 1]"));
    }
    if g0.edge_count() == 0 {
        return Err(param("g0", "initial graph needs at least one edge"));
    }
    let mut rng = rng_from_seed(seed);
    let mut node_count = g0.node_count;
    let mut edges = g0.edges.clone();
    // Every edge contributes both endpoints, so a uniform pick is degree-proportional.
    let mut endpoints: Vec<usize> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    for _ in 0..steps {
        if rng.random::<f64>() < p {
            let target = endpoints[rng.random_range(0..endpoints.len())];
            let new = node_count;
            node_count += 1;
            edges.push((new, target));
            endpoints.extend([new, target]);
        } else {
            let a = endpoints[rng.random_range(0..endpoints.len())];
            let b = endpoints[rng.random_range(0..endpoints.len())];
            edges.push((a, b));
            endpoints.extend([a, b]);
        }
    }
    Ok(MultiGraph { node_count, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_has_all_mass_on_two() {
        let prof = degree_distribution(&Graph::complete(3)).unwrap();
        assert_eq!(prof.distribution.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn path_and_star_counts() {
        let p = degree_distribution(&Graph::path(3)).unwrap();
        assert!((p.distribution.prob(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.distribution.prob(2) - 1.0 / 3.0).abs() < 1e-15);
        let s = degree_distribution(&Graph::star(5)).unwrap();
        assert!((s.distribution.prob(1) - 0.8).abs() < 1e-15);
        assert!((s.distribution.prob(4) - 0.2).abs() < 1e-15);
        assert_eq!(s.distribution.prob(2), 0.0);
    }

    #[test]
    fn isolated_nodes_excluded() {
        let g = Graph::from_edges(4, [(0, 1)]).unwrap();
        let p = degree_distribution(&g).unwrap();
        assert_eq!(p.isolated, 2);
        assert_eq!(p.distribution.probs(), &[1.0]);
        assert!(degree_distribution(&Graph::empty(3)).is_err());
    }

    #[test]
    fn rejects_loops_and_duplicates() {
        assert!(Graph::from_edges(3, [(1, 1)]).is_err());
        assert!(Graph::from_edges(3, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_edges(3, [(0, 3)]).is_err());
    }

    #[test]
    fn two_unit_degrees_give_single_edge() {
        let g = configuration_model(&[1, 1], 7).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn odd_stub_sum_rejected_by_raw_model() {
        assert!(configuration_model(&[1, 1, 1], 0).is_err());
    }

    #[test]
    fn parameter_errors() {
        assert!(generate_erdos_renyi(10, 0.0, 1).is_err());
        assert!(generate_erdos_renyi(1, 1.0, 1).is_err());
        assert!(generate_scale_free(10, 1.0, 5, 1).is_err());
        assert!(generate_scale_free(10, 2.5, 1, 1).is_err());
        let g0 = MultiGraph::new(2, vec![]).unwrap();
        assert!(generate_preferential_attachment(0.5, &g0, 3, 1).is_err());
        let g1 = MultiGraph::new(2, vec![(0, 1)]).unwrap();
        assert!(generate_preferential_attachment(1.5, &g1, 3, 1).is_err());
    }

    #[test]
    fn pa_vertex_step_adds_node_and_edge() {
        let g0 = MultiGraph::new(2, vec![(0, 1)]).unwrap();
        let g = generate_preferential_attachment(1.0, &g0, 1, 3).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (3, 2));
    }

    #[test]
    fn pa_edge_steps_keep_node_count() {
        let g0 = MultiGraph::new(2, vec![(0, 1)]).unwrap();
        let g = generate_preferential_attachment(0.0, &g0, 5, 3).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 6));
        assert_eq!(g.degrees().iter().sum::<usize>(), 12);
    }

    #[test]
    fn gamma_fifty_collapses_on_degree_one() {
        let g = generate_scale_free(2000, 50.0, 10, 11).unwrap();
        let p = degree_distribution(&g).unwrap();
        assert!(p.distribution.prob(1) > 0.999);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = generate_erdos_renyi(200, 3.0, 5).unwrap();
        let text = g.to_edge_list_string();
        let back = Graph::read_edge_list(text.as_bytes()).unwrap();
        assert_eq!(g, back);
        assert!(Graph::read_edge_list("0 1\n".as_bytes()).is_err());
        assert!(Graph::read_edge_list("# nodes=2\n0 x\n".as_bytes()).is_err());
    }

    #[test]
    fn degree_csv_round_trip() {
        let rho = DegreeDistribution::power_law(2.7, 6).unwrap();
        let back = DegreeDistribution::from_csv(&rho.to_csv()).unwrap();
        for (a, b) in rho.probs().iter().zip(back.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(DegreeDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(DegreeDistribution::new(vec![1.2, -0.2]).is_err());
        assert!(DegreeDistribution::new(vec![]).is_err());
        let u = DegreeDistribution::uniform(4).unwrap();
        assert!((u.mean_degree() - 2.5).abs() < 1e-15);
    }
}

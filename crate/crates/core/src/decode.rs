//! Graph decoding: turn linkage and density estimates into subgraphs.
//!
//! For every node the candidate set is
//! `Z(i) = { j in knn(i) : p_ij >= p_tau and d_i <= d_j }`. Nodes are visited
//! in ascending index order and each node with a non-empty `Z(i)` keeps the
//! single edge to its highest-`e_ij` candidate (ties go to the lowest `j`).
//! Subgraphs are the connected components of the kept edges viewed as
//! undirected. The peak of a subgraph is its highest-density member, ties
//! going to the lowest index; with distinct densities this is the member
//! whose candidate set is empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::LineErr;
use crate::error::Result;

use crate::knn::AffinityGraph;
use crate::scorer::LinkageDensity;

#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphPartition {
    /// Subgraph index of every node.
    pub assignment: Vec<usize>,
    /// Kept directed edges `(i, j)`, at most one per source.
    pub selected_edges: Vec<(usize, usize)>,
    /// Peak node of every subgraph.
    pub peaks: Vec<usize>,
    pub num_subgraphs: usize,
}

impl SubgraphPartition {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_subgraphs];
        for (node, &s) in self.assignment.iter().enumerate() {
            out[s].push(node);
        }
        out
    }

    pub fn is_peak(&self, node: usize) -> bool {
        self.peaks[self.assignment[node]] == node
    }

    /// `node_id,subgraph,is_peak`
    pub fn to_csv(&self, ids: Option<&[u64]>) -> String {
        let mut out = String::from("node_id,subgraph,is_peak\n");
        for (node, &s) in self.assignment.iter().enumerate() {
            let id = ids.map_or(node as u64, |ids| ids[node]);
            let _ = writeln!(out, "{id},{s},{}", u8::from(self.is_peak(node)));
        }
        out
    }
}

/// Parse `node_id,subgraph,is_peak` into node id to subgraph.
pub fn assignment_from_csv(text: &str, source: &str) -> Result<BTreeMap<u64, usize>> {
    let err = LineErr { path: source };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    if lines.next().map(|(_, h)| h) != Some("node_id,subgraph,is_peak") {
        return Err(err.at(1, "header must be `node_id,subgraph,is_peak`"));
    }
    let mut out = BTreeMap::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(err.at(ln, format!("expected 3 columns, found {}", f.len())));
        }
        let id: u64 = f[0].parse().map_err(|_| err.at(ln, format!("bad id `{}`", f[0])))?;
        let s: usize = f[1].parse().map_err(|_| err.at(ln, format!("bad subgraph `{}`", f[1])))?;
        if out.insert(id, s).is_some() {
            return Err(err.at(ln, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

/// Positions (into `graph.neighbors[i]`) of the candidate neighbors of `i`.
pub fn candidate_positions(i: usize, graph: &AffinityGraph, ld: &LinkageDensity, p_tau: f64) -> Vec<usize> {
    graph.neighbors[i]
        .iter()
        .enumerate()
        .filter(|&(pos, &(j, _))| ld.p[i][pos] >= p_tau && ld.d[i] <= ld.d[j])
        .map(|(pos, _)| pos)
        .collect()
}

/// Neighbor indices in the candidate set of node `i`.
pub fn candidate_set(i: usize, graph: &AffinityGraph, ld: &LinkageDensity, p_tau: f64) -> Vec<usize> {
    candidate_positions(i, graph, ld, p_tau)
        .into_iter()
        .map(|pos| graph.neighbors[i][pos].0)
        .collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the lowest index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Label the undirected components of `edges`, numbering components by
/// their lowest node index.
pub fn components(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut ds = DisjointSet::new(n);
    for &(i, j) in edges {
        ds.union(i, j);
    }
    let mut index = vec![usize::MAX; n];
    let mut assignment = vec![0; n];
    let mut count = 0;
    for v in 0..n {
        let r = ds.find(v);
        if index[r] == usize::MAX {
            index[r] = count;
            count += 1;
        }
        assignment[v] = index[r];
    }
    (assignment, count)
}

/// Single-level graph cut.
pub fn decode_graph(graph: &AffinityGraph, ld: &LinkageDensity, p_tau: f64) -> SubgraphPartition {
    let n = graph.n;
    let mut selected = Vec::new();
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for pos in candidate_positions(i, graph, ld, p_tau) {
            let (j, e) = (graph.neighbors[i][pos].0, ld.e[i][pos]);
            best = match best {
                Some((bj, be)) if be > e || (be == e && bj < j) => Some((bj, be)),
                _ => Some((j, e)),
            };
        }
        if let Some((j, _)) = best {
            selected.push((i, j));
        }
    }
    let (assignment, num_subgraphs) = components(n, &selected);

    // Edges never lead to a lower density, so with distinct densities the
    // maximum is the node without an outgoing edge.
    let mut peaks: Vec<Option<usize>> = vec![None; num_subgraphs];
    for (v, &s) in assignment.iter().enumerate() {
        if peaks[s].is_none_or(|b| ld.d[v] > ld.d[b]) {
            peaks[s] = Some(v);
        }
    }
    let peaks = peaks.into_iter().map(|p| p.expect("every component has a node")).collect();

    SubgraphPartition {
        assignment,
        selected_edges: selected,
        peaks,
        num_subgraphs,
    }
}

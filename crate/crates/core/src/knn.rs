//! Exact cosine k-nearest-neighbor affinity graph.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::data::LineErr;
use crate::error::{AhgcError, Result};

/// Directed k-NN graph. `neighbors[i]` holds `(j, a_ij)` sorted by
/// descending affinity, ties broken by ascending `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityGraph {
    pub n: usize,
    pub k: usize,
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub level: usize,
}

impl AffinityGraph {
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Directed edges `(i, j, a_ij)` in node order, then list order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&(j, a)| (i, j, a)))
    }

    /// `src,dst,affinity`, plus a `linkage` column when `p` is given.
    pub fn to_csv(&self, p: Option<&[Vec<f64>]>) -> String {
        let mut out = String::from(if p.is_some() { "src,dst,affinity,linkage\n" } else { "src,dst,affinity\n" });
        for (i, list) in self.neighbors.iter().enumerate() {
            for (pos, &(j, a)) in list.iter().enumerate() {
                match p {
                    Some(p) => {
                        let _ = writeln!(out, "{i},{j},{a:.16e},{:.16e}", p[i][pos]);
                    }
                    None => {
                        let _ = writeln!(out, "{i},{j},{a:.16e}");
                    }
                }
            }
        }
        out
    }

    /// Parse the output of [`AffinityGraph::to_csv`]. Nodes are numbered
    /// `0..n` with `n` one past the largest index seen; edge order within a
    /// source is kept as written.
    pub fn from_csv(text: &str, source: &str) -> Result<(AffinityGraph, Option<Vec<Vec<f64>>>)> {
        let err = LineErr { path: source };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let scored = match lines.next() {
            Some((_, "src,dst,affinity")) => false,
            Some((_, "src,dst,affinity,linkage")) => true,
            _ => return Err(err.at(1, "header must be `src,dst,affinity[,linkage]`")),
        };
        let width = if scored { 4 } else { 3 };
        let mut edges = Vec::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != width {
                return Err(err.at(ln, format!("expected {width} columns, found {}", f.len())));
            }
            let node = |s: &str| s.parse::<usize>().map_err(|_| err.at(ln, format!("bad node index `{s}`")));
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err.at(ln, format!("bad number `{s}`")))
            };
            let (i, j, a) = (node(f[0])?, node(f[1])?, num(f[2])?);
            if i == j {
                return Err(err.at(ln, "self edge"));
            }
            let p = if scored {
                let p = num(f[3])?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(err.at(ln, format!("linkage {p} outside [0, 1]")));
                }
                p
            } else {
                0.0
            };
            edges.push((i, j, a, p));
        }
        let n = edges.iter().map(|&(i, j, ..)| i.max(j) + 1).max().unwrap_or(0);
        let mut neighbors = vec![Vec::new(); n];
        let mut linkage = vec![Vec::new(); n];
        for (i, j, a, p) in edges {
            neighbors[i].push((j, a));
            linkage[i].push(p);
        }
        let k = neighbors.iter().map(Vec::len).max().unwrap_or(0);
        let graph = AffinityGraph { n, k, neighbors, level: 0 };
        Ok((graph, scored.then_some(linkage)))
    }
}

fn dot(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// Cosine similarity of two nonzero vectors of equal length, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(AhgcError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>();
    let nv = v.iter().map(|x| x * x).sum::<f64>();
    if nu == 0.0 || nv == 0.0 {
        return Err(AhgcError::Precondition(
            "cosine similarity of a zero vector".into(),
        ));
    }
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((d / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Descending affinity, then ascending index.
pub(crate) fn neighbor_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Brute-force exact k-NN under cosine similarity. Rows of `features` are nodes.
pub fn build_knn_graph(features: &Array2<f64>, k: usize) -> Result<AffinityGraph> {
    let n = features.nrows();
    if n < 2 {
        return Err(AhgcError::Precondition(format!(
            "k-NN graph needs at least 2 nodes, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(AhgcError::validation(
            "k",
            format!("must satisfy 1 <= k <= n-1 = {}, got {k}", n - 1),
        ));
    }
    let sq_norms: Vec<f64> = features.rows().into_iter().map(|r| dot(r, r)).collect();
    if let Some(i) = sq_norms.iter().position(|&x| x == 0.0 || !x.is_finite()) {
        return Err(AhgcError::Precondition(format!(
            "node {i} has a zero or non-finite feature vector"
        )));
    }

    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = features.row(i);
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let a = dot(fi, features.row(j)) / (sq_norms[i] * sq_norms[j]).sqrt();
                    // + 0.0 folds -0.0 into +0.0 so total_cmp ties behave
                    (j, a.clamp(-1.0, 1.0) + 0.0)
                })
                .collect();
            // Partial selection, then exact order on the kept prefix.
            cand.select_nth_unstable_by(k - 1, neighbor_order);
            cand.truncate(k);
            cand.sort_by(neighbor_order);
            cand
        })
        .collect();

    Ok(AffinityGraph {
        n,
        k,
        neighbors,
        level: 0,
    })
}

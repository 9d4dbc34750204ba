//! Pseudo-label assignment inside subgraphs.
//!
//! For subgraph `k` and class `y`, `r_{k,y}` is the number of members
//! currently labeled `y` (original or pseudo) divided by the subgraph size.
//! When the largest ratio is unique and strictly above `rho`, every unlabeled
//! member takes that class and joins the labeled split.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Dataset, Split};
use crate::error::{AhgcError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubgraphLabeling {
    pub subgraph: usize,
    pub size: usize,
    pub best_class: Option<usize>,
    pub ratio: f64,
    pub assigned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewLabel {
    pub id: u64,
    pub class: usize,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelAssignmentReport {
    pub epoch: usize,
    pub subgraphs: Vec<SubgraphLabeling>,
    pub newly_labeled: Vec<NewLabel>,
}

/// Class ratios of one subgraph. Unlabeled members count in the denominator.
pub fn labeled_percentage(members: &[usize], labels: &[Option<usize>]) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in members {
        if let Some(y) = labels[v] {
            *counts.entry(y).or_default() += 1;
        }
    }
    let size = members.len() as f64;
    counts.into_iter().map(|(y, c)| (y, c as f64 / size)).collect()
}

/// Unique argmax of the ratios; `None` when empty or tied.
fn majority(ratios: &BTreeMap<usize, f64>) -> (Option<usize>, f64) {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (&y, &r) in ratios {
        match best {
            Some((_, b)) if r < b => {}
            Some((_, b)) if r == b => tied = true,
            _ => {
                best = Some((y, r));
                tied = false;
            }
        }
    }
    match best {
        Some((y, r)) if !tied => (Some(y), r),
        Some((_, r)) => (None, r),
        None => (None, 0.0),
    }
}

/// Assign pseudo-labels from a node → subgraph `assignment` over the
/// dataset's records.
pub fn assign_labels(
    assignment: &[usize],
    dataset: &Dataset,
    rho: f64,
    epoch: usize,
) -> Result<(Dataset, LabelAssignmentReport)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(AhgcError::validation("rho", format!("must lie in (0, 1), got {rho}")));
    }
    if assignment.len() != dataset.len() {
        return Err(AhgcError::DimensionMismatch {
            expected: dataset.len(),
            found: assignment.len(),
        });
    }
    let count = assignment.iter().max().map_or(0, |&m| m + 1);
    let mut members = vec![Vec::new(); count];
    for (v, &s) in assignment.iter().enumerate() {
        members[s].push(v);
    }

    let labels = dataset.labels();
    let mut out = dataset.clone();
    let mut subgraphs = Vec::with_capacity(count);
    let mut newly_labeled = Vec::new();
    for (s, nodes) in members.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        let (best_class, ratio) = majority(&labeled_percentage(nodes, &labels));
        let assigned = best_class.is_some() && ratio > rho;
        if let (true, Some(y)) = (assigned, best_class) {
            for &v in nodes {
                let rec = &mut out.records[v];
                if rec.split == Split::Unlabeled {
                    rec.split = Split::Labeled;
                    rec.label = Some(y);
                    rec.pseudo_epoch = Some(epoch);
                    newly_labeled.push(NewLabel {
                        id: rec.id,
                        class: y,
                        epoch,
                    });
                }
            }
        }
        subgraphs.push(SubgraphLabeling {
            subgraph: s,
            size: nodes.len(),
            best_class,
            ratio,
            assigned,
        });
    }
    Ok((
        out,
        LabelAssignmentReport {
            epoch,
            subgraphs,
            newly_labeled,
        },
    ))
}

//! Multi-level graph cut.
//!
//! Level 0 is the k-NN graph of the input features. Each level is decoded
//! into subgraphs; every subgraph becomes one node of the next level whose
//! feature is `[identity, average]`, where `identity` is the identity feature
//! of the subgraph's peak and `average` is the mean identity feature of its
//! members. The loop ends when a level selects no edge, when the next level
//! would fall below the subgraph budget, or at `max_levels`. Subgraph indices
//! of the top level are then pushed down to the level-0 nodes.

use ndarray::{concatenate, Array2, Axis};
use serde::Serialize;

use crate::decode::{decode_graph, SubgraphPartition};
use crate::error::{AhgcError, Result};
use crate::knn::{build_knn_graph, AffinityGraph};
use crate::scorer::{forward, supervised_edge_count, train_scorer, LinkageDensity, ScorerParams};

/// Source of linkage estimates for one hierarchy level.
pub trait LevelScorer {
    /// `labels` are the lifted labels of the level's nodes.
    fn score(
        &mut self,
        level: usize,
        graph: &AffinityGraph,
        features: &Array2<f64>,
        labels: &[Option<usize>],
    ) -> Result<LinkageDensity>;
}

/// Same linkage probability on every edge.
#[derive(Clone, Copy, Debug)]
pub struct FixedLinkage(pub f64);

impl LevelScorer for FixedLinkage {
    fn score(&mut self, _: usize, graph: &AffinityGraph, _: &Array2<f64>, _: &[Option<usize>]) -> Result<LinkageDensity> {
        let p = graph.neighbors.iter().map(|l| vec![self.0; l.len()]).collect();
        Ok(LinkageDensity::from_linkage(graph, p))
    }
}

/// The two trainable scorers: `base` reads level-0 features (dimension `d`),
/// `lifted` reads aggregated features (dimension `2d`).
///
/// `base` is fitted at level 0 for `base_steps` and `lifted` at level 1 for
/// `lifted_steps` gradient steps, each starting from its current parameters;
/// higher levels reuse `lifted`. A level without a fully labeled edge skips
/// the fit.
#[derive(Clone, Debug)]
pub struct GatScorers {
    pub base: ScorerParams,
    pub lifted: ScorerParams,
    pub lr: f64,
    pub base_steps: usize,
    pub lifted_steps: usize,
    /// Final training loss per level that was fitted.
    pub fit_losses: Vec<(usize, f64)>,
}

impl GatScorers {
    pub fn new(base: ScorerParams, lifted: ScorerParams, lr: f64, base_steps: usize, lifted_steps: usize) -> Self {
        GatScorers {
            base,
            lifted,
            lr,
            base_steps,
            lifted_steps,
            fit_losses: Vec::new(),
        }
    }
}

impl LevelScorer for GatScorers {
    fn score(
        &mut self,
        level: usize,
        graph: &AffinityGraph,
        features: &Array2<f64>,
        labels: &[Option<usize>],
    ) -> Result<LinkageDensity> {
        let (params, steps) = match level {
            0 => (&mut self.base, self.base_steps),
            1 => (&mut self.lifted, self.lifted_steps),
            _ => (&mut self.lifted, 0),
        };
        if steps > 0 && supervised_edge_count(graph, labels) > 0 {
            let (trained, trace) = train_scorer(params, graph, features, labels, self.lr, steps)?;
            *params = trained;
            self.fit_losses.push((level, *trace.last().expect("steps >= 1")));
        }
        forward(params, graph, features)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    pub k: usize,
    pub p_tau: f64,
    pub max_levels: usize,
    /// Stop before a level that would leave fewer subgraphs than this.
    pub k_target: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            k: 10,
            p_tau: 0.3,
            max_levels: 10,
            k_target: 1,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(AhgcError::validation("k", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_tau) {
            return Err(AhgcError::validation("p_tau", format!("must lie in [0, 1], got {}", self.p_tau)));
        }
        if self.max_levels == 0 {
            return Err(AhgcError::validation("max_levels", "must be at least 1"));
        }
        if self.k_target == 0 {
            return Err(AhgcError::validation("k_target", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyLevel {
    pub graph: AffinityGraph,
    pub identity_features: Array2<f64>,
    pub average_features: Array2<f64>,
    pub input_features: Array2<f64>,
    pub linkage: LinkageDensity,
    pub partition: SubgraphPartition,
    /// Level-0 nodes represented by each node of this level, ascending.
    pub member_map: Vec<Vec<usize>>,
    /// `false` when the level's cut was rejected by the subgraph budget.
    pub applied: bool,
    /// Subgraph count of the decoded cut, applied or not.
    pub proposed_subgraphs: usize,
}

impl HierarchyLevel {
    pub fn node_count(&self) -> usize {
        self.member_map.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A level selected no edge.
    Converged,
    /// The next cut would have dropped below the subgraph budget.
    KTargetReached,
    /// Fewer than two nodes remained.
    SingleNode,
    /// `max_levels` reached while edges were still being selected.
    MaxLevels,
}

#[derive(Clone, Debug)]
pub struct HierarchyResult {
    pub levels: Vec<HierarchyLevel>,
    pub final_assignment: Vec<usize>,
    pub num_subgraphs: usize,
    pub stop: StopReason,
}

impl HierarchyResult {
    /// Number of levels run.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn hit_level_cap(&self) -> bool {
        self.stop == StopReason::MaxLevels
    }

    /// Final subgraphs over the level-0 nodes. The peak of a subgraph is
    /// found by following top-level peaks down through the peaks of the
    /// levels below. Selected edges are left empty.
    pub fn final_partition(&self) -> SubgraphPartition {
        let top = self.levels.len() - 1;
        let peaks = self.levels[top]
            .partition
            .peaks
            .iter()
            .map(|&p| (0..top).rev().fold(p, |node, l| self.levels[l].partition.peaks[node]))
            .collect();
        SubgraphPartition {
            assignment: self.final_assignment.clone(),
            selected_edges: Vec::new(),
            peaks,
            num_subgraphs: self.num_subgraphs,
        }
    }

    pub fn trace(&self) -> HierarchyTrace {
        HierarchyTrace {
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(l, lvl)| LevelTrace {
                    level: l,
                    nodes: lvl.node_count(),
                    k: lvl.graph.k,
                    selected_edges: lvl.partition.selected_edges.len(),
                    subgraphs: lvl.partition.num_subgraphs,
                    applied: lvl.applied,
                    proposed_subgraphs: lvl.proposed_subgraphs,
                })
                .collect(),
            depth: self.depth(),
            final_subgraphs: self.num_subgraphs,
            stop: self.stop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelTrace {
    pub level: usize,
    pub nodes: usize,
    pub k: usize,
    pub selected_edges: usize,
    pub subgraphs: usize,
    pub applied: bool,
    pub proposed_subgraphs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierarchyTrace {
    pub levels: Vec<LevelTrace>,
    pub depth: usize,
    pub final_subgraphs: usize,
    pub stop: StopReason,
}

/// Next-level `(identity, average)` features, one row per subgraph.
pub fn aggregate(
    identity: &Array2<f64>,
    partition: &SubgraphPartition,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let m = partition.num_subgraphs;
    let d = identity.ncols();
    let mut next_identity = Array2::zeros((m, d));
    let mut average = Array2::zeros((m, d));
    for (s, members) in partition.members().iter().enumerate() {
        if members.is_empty() {
            return Err(AhgcError::Internal(format!("subgraph {s} has no members")));
        }
        next_identity.row_mut(s).assign(&identity.row(partition.peaks[s]));
        let mut row = average.row_mut(s);
        for &v in members {
            row += &identity.row(v);
        }
        row /= members.len() as f64;
    }
    Ok((next_identity, average))
}

/// A node is labeled `y` when every labeled level-0 member carries `y`.
pub fn lift_labels(member_map: &[Vec<usize>], labels: &[Option<usize>]) -> Vec<Option<usize>> {
    member_map
        .iter()
        .map(|members| {
            let mut found = None;
            for &v in members {
                match (labels[v], found) {
                    (None, _) => {}
                    (Some(y), None) => found = Some(y),
                    (Some(y), Some(f)) if y == f => {}
                    _ => return None,
                }
            }
            found
        })
        .collect()
}

fn identity_partition(n: usize) -> SubgraphPartition {
    SubgraphPartition {
        assignment: (0..n).collect(),
        selected_edges: Vec::new(),
        peaks: (0..n).collect(),
        num_subgraphs: n,
    }
}

/// Run the level loop on level-0 `features` with per-node `labels`.
pub fn run_hierarchy(
    features: &Array2<f64>,
    labels: &[Option<usize>],
    config: &HierarchyConfig,
    scorer: &mut dyn LevelScorer,
) -> Result<HierarchyResult> {
    config.validate()?;
    let n0 = features.nrows();
    if labels.len() != n0 {
        return Err(AhgcError::DimensionMismatch {
            expected: n0,
            found: labels.len(),
        });
    }
    if n0 == 0 {
        return Err(AhgcError::Precondition("hierarchy needs at least one node".into()));
    }

    let mut levels: Vec<HierarchyLevel> = Vec::new();
    let mut identity = features.clone();
    let mut average = features.clone();
    let mut input = features.clone();
    let mut member_map: Vec<Vec<usize>> = (0..n0).map(|v| vec![v]).collect();
    let mut stop = StopReason::MaxLevels;

    for level in 0..config.max_levels {
        let n = input.nrows();
        if n < 2 {
            // A lone node cannot form a graph: record it as its own subgraph.
            levels.push(HierarchyLevel {
                graph: AffinityGraph {
                    n,
                    k: 0,
                    neighbors: vec![Vec::new(); n],
                    level,
                },
                identity_features: identity,
                average_features: average,
                input_features: input,
                linkage: LinkageDensity {
                    p: vec![Vec::new(); n],
                    e: vec![Vec::new(); n],
                    d: vec![0.0; n],
                },
                partition: identity_partition(n),
                member_map,
                applied: true,
                proposed_subgraphs: n,
            });
            stop = StopReason::SingleNode;
            break;
        }
        let k = config.k.min(n - 1);
        let mut graph = build_knn_graph(&input, k)?;
        graph.level = level;
        let level_labels = lift_labels(&member_map, labels);
        let linkage = scorer.score(level, &graph, &input, &level_labels)?;
        let partition = decode_graph(&graph, &linkage, config.p_tau);

        let converged = partition.selected_edges.is_empty();
        let over_budget = !converged && partition.num_subgraphs < config.k_target;
        let applied = !over_budget;
        let next = if converged || over_budget {
            None
        } else {
            let (id, avg) = aggregate(&identity, &partition)?;
            let next_members: Vec<Vec<usize>> = partition
                .members()
                .iter()
                .map(|nodes| {
                    let mut m: Vec<usize> = nodes.iter().flat_map(|&v| member_map[v].iter().copied()).collect();
                    m.sort_unstable();
                    m
                })
                .collect();
            Some((id, avg, next_members))
        };

        let proposed_subgraphs = partition.num_subgraphs;
        levels.push(HierarchyLevel {
            graph,
            identity_features: identity,
            average_features: average,
            input_features: input,
            linkage,
            partition: if applied { partition } else { identity_partition(n) },
            member_map,
            applied,
            proposed_subgraphs,
        });

        if converged {
            stop = StopReason::Converged;
            break;
        }
        if over_budget {
            stop = StopReason::KTargetReached;
            break;
        }
        let (id, avg, next_members) = next.expect("set when continuing");
        input = concatenate(Axis(1), &[id.view(), avg.view()])
            .map_err(|e| AhgcError::Internal(e.to_string()))?;
        identity = id;
        average = avg;
        member_map = next_members;
    }

    let top = levels.last().expect("at least one level runs");
    let mut final_assignment = vec![usize::MAX; n0];
    for (node, members) in top.member_map.iter().enumerate() {
        for &v in members {
            final_assignment[v] = top.partition.assignment[node];
        }
    }
    debug_assert!(final_assignment.iter().all(|&s| s != usize::MAX));
    let num_subgraphs = top.partition.num_subgraphs;
    Ok(HierarchyResult {
        levels,
        final_assignment,
        num_subgraphs,
        stop,
    })
}

//! One check per acceptance criterion. Each returns `Ok(detail)` when the
//! criterion holds and `Err(detail)` otherwise.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use ahgc::data::{Origin, SyntheticSpec};
use ahgc::decode::decode_graph;
use ahgc::knn::build_knn_graph;
use ahgc::metrics::{aupr, auroc, ccr_at_fpr, energy_score, fpr_at_tpr, Positive, CCR_LEVELS};
use ahgc::objectives::{
    infonce_loss, init_classifier, objective, InfoNceForm, LossParts, LossWeights, ObjectiveInputs, Terms,
};
use ahgc::pipeline::{run_pipeline, DataSource, PipelineConfig, PipelineOutcome};
use ahgc::scorer::{attention_logits, forward, init_scorer, scorer_loss, LinkageDensity, ScorerParams};
use ahgc::seed;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::oracles::*;

pub type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed < Duration::from_secs(budget_s)
}

fn normal_matrix(rng: &mut seed::Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut *rng))
}

fn random_scorer(rng: &mut seed::Rng, input: usize, hidden: usize, scale: f64) -> ScorerParams {
    let mut p = init_scorer(input, hidden, rng.gen()).unwrap();
    let flat: Vec<f64> = (0..p.num_params())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect();
    p.set_flat(&flat);
    p
}

/// Random graph size with `2 <= n <= 100` and `1 <= k <= min(10, n - 1)`.
fn random_shape(rng: &mut seed::Rng) -> (usize, usize) {
    let n = rng.gen_range(2..=100);
    (n, rng.gen_range(1..=10.min(n - 1)))
}

pub fn knn_matches_brute_force(instances: usize, seed_: u64) -> Check {
    let mut rng = seed::rng(seed_);
    let mut worst: f64 = 0.0;
    for t in 0..instances {
        let (n, k) = random_shape(&mut rng);
        let d = rng.gen_range(2..=8);
        let f = normal_matrix(&mut rng, n, d);
        let g = build_knn_graph(&f, k).unwrap();
        let oracle = brute_knn(&f, k);
        for i in 0..n {
            let got: Vec<usize> = g.neighbors[i].iter().map(|x| x.0).collect();
            let want: Vec<usize> = oracle[i].iter().map(|x| x.0).collect();
            if got != want {
                return Err(format!("instance {t} node {i}: neighbors {got:?}, brute force {want:?}"));
            }
            for (a, b) in g.neighbors[i].iter().zip(&oracle[i]) {
                worst = worst.max((a.1 - b.1).abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("{instances} graphs, max affinity diff {worst:.1e}"))
}

/// Criterion 1: densities from `forward` against a loop-level recomputation
/// of the whole scorer on a brute-force k-NN graph.
pub fn density_oracle() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let (mut worst_p, mut worst_d): (f64, f64) = (0.0, 0.0);
    for t in 0..1000 {
        let (n, k) = random_shape(&mut rng);
        let d = rng.gen_range(2..=8);
        let hidden = rng.gen_range(2..=8);
        let f = normal_matrix(&mut rng, n, d);
        let params = random_scorer(&mut rng, d, hidden, 0.5);
        let g = build_knn_graph(&f, k).unwrap();
        let knn = brute_knn(&f, k);
        let ld = forward(&params, &g, &f).unwrap();
        let p = naive_linkage(&params, &knn, &f);
        let dens = naive_density(&knn, &p);
        for i in 0..n {
            if g.neighbors[i].iter().map(|x| x.0).ne(knn[i].iter().map(|x| x.0)) {
                return Err(format!("graph {t}: k-NN list of node {i} differs from brute force"));
            }
            for (a, b) in ld.p[i].iter().zip(&p[i]) {
                worst_p = worst_p.max((a - b).abs());
            }
            worst_d = worst_d.max((ld.d[i] - dens[i]).abs());
        }
    }
    let el = start.elapsed();
    verdict(
        worst_d <= 1e-12 && worst_p <= 1e-12 && within(el, 10),
        format!("1000 graphs, max |d diff| {worst_d:.1e}, max |p diff| {worst_p:.1e}, {el:.2?}"),
    )
}

/// Criterion 2: structural properties of the decoded partition.
pub fn decode_invariants() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(202);
    let taus: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut tied = 0;
    for t in 0..1000 {
        let (n, k) = random_shape(&mut rng);
        let f = normal_matrix(&mut rng, n, 3);
        let g = build_knn_graph(&f, k).unwrap();
        // every third instance uses p on the tau grid so boundaries are hit
        let grid = t % 3 == 0;
        let p: Vec<Vec<f64>> = g
            .neighbors
            .iter()
            .map(|list| {
                list.iter()
                    .map(|_| {
                        if grid {
                            rng.gen_range(0..=10) as f64 / 10.0
                        } else {
                            rng.gen::<f64>()
                        }
                    })
                    .collect()
            })
            .collect();
        let ld = LinkageDensity::from_linkage(&g, p);
        let mut prev_count = 0;
        for &tau in &taus {
            let part = decode_graph(&g, &ld, tau);
            let z: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    g.neighbors[i]
                        .iter()
                        .enumerate()
                        .filter(|&(pos, &(j, _))| ld.p[i][pos] >= tau && ld.d[i] <= ld.d[j])
                        .map(|(_, &(j, _))| j)
                        .collect()
                })
                .collect();
            let mut out_deg = vec![0usize; n];
            for &(i, j) in &part.selected_edges {
                out_deg[i] += 1;
                if !z[i].contains(&j) {
                    return Err(format!("instance {t} tau {tau}: edge ({i}, {j}) outside Z({i})"));
                }
                if part.assignment[i] != part.assignment[j] {
                    return Err(format!("instance {t} tau {tau}: edge ({i}, {j}) crosses subgraphs"));
                }
            }
            if let Some(i) = (0..n).find(|&i| out_deg[i] > 1) {
                return Err(format!("instance {t} tau {tau}: node {i} has out-degree {}", out_deg[i]));
            }
            if let Some(i) = (0..n).find(|&i| (out_deg[i] == 1) == z[i].is_empty()) {
                return Err(format!("instance {t} tau {tau}: node {i} edge presence disagrees with Z"));
            }
            // A subgraph whose top density is unique peaks at its empty-Z
            // node; a tied top goes to the lowest index.
            let members = part.members();
            for (s, &peak) in part.peaks.iter().enumerate() {
                let top = members[s].iter().map(|&v| ld.d[v]).fold(f64::NEG_INFINITY, f64::max);
                let at_top: Vec<usize> = members[s].iter().copied().filter(|&v| ld.d[v] == top).collect();
                let sinks: Vec<usize> = members[s].iter().copied().filter(|&v| z[v].is_empty()).collect();
                let want = if at_top.len() == 1 {
                    if sinks != at_top {
                        return Err(format!("instance {t} tau {tau}: subgraph {s} empty-Z nodes {sinks:?}, top {at_top:?}"));
                    }
                    at_top[0]
                } else {
                    tied += 1;
                    at_top[0]
                };
                if peak != want {
                    return Err(format!("instance {t} tau {tau}: subgraph {s} peak {peak}, expected {want}"));
                }
            }
            // out-degree <= 1: a component is a tree with one sink or holds
            // exactly one cycle, and cycles need equal densities
            let cycles = members.iter().filter(|m| m.iter().all(|&v| !z[v].is_empty())).count();
            if part.num_subgraphs + part.selected_edges.len() != n + cycles {
                return Err(format!("instance {t} tau {tau}: components inconsistent with kept edges"));
            }
            if part.num_subgraphs < prev_count {
                return Err(format!(
                    "instance {t}: {} subgraphs at tau {tau} after {prev_count} at a lower tau",
                    part.num_subgraphs
                ));
            }
            prev_count = part.num_subgraphs;
        }
    }
    let el = start.elapsed();
    verdict(
        within(el, 10),
        format!("1000 instances x 11 thresholds, {tied} subgraphs with a tied top density, {el:.2?}"),
    )
}

const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
/// Draws with an attention logit this close to the LeakyReLU kink are
/// redrawn: a central difference that straddles the kink measures neither
/// one-sided derivative.
const KINK_MARGIN: f64 = 1e-4;

/// Relative error with an absolute floor so that gradients at round-off
/// scale are compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Worst relative error over `draws` scorer instances, and how many draws
/// were rejected near a kink.
pub fn scorer_gradient_check(draws: usize, seed_: u64) -> Result<(f64, usize), String> {
    let mut rng = seed::rng(seed_);
    let (n, d, k, hidden) = (20, 4, 4, 5);
    let mut worst: f64 = 0.0;
    let mut draw = 0;
    let mut redrawn = 0;
    while draw < draws {
        let f = normal_matrix(&mut rng, n, d);
        let g = build_knn_graph(&f, k).unwrap();
        let labels: Vec<Option<usize>> = (0..n)
            .map(|_| if rng.gen_bool(0.8) { Some(rng.gen_range(0..2)) } else { None })
            .collect();
        let p = random_scorer(&mut rng, d, hidden, 0.6);
        let near_kink = attention_logits(&p, &g, &f)
            .unwrap()
            .iter()
            .flatten()
            .flatten()
            .any(|s| s.abs() < KINK_MARGIN);
        if near_kink {
            redrawn += 1;
            continue;
        }
        let (_, grad) = scorer_loss(&p, &g, &f, &labels).unwrap();
        let analytic = grad.to_flat();
        let base = p.to_flat();
        let mut q = p.clone();
        for idx in 0..base.len() {
            let mut x = base.clone();
            x[idx] = base[idx] + STEP;
            q.set_flat(&x);
            let lp = scorer_loss(&q, &g, &f, &labels).unwrap().0;
            x[idx] = base[idx] - STEP;
            q.set_flat(&x);
            let lm = scorer_loss(&q, &g, &f, &labels).unwrap().0;
            let numeric = (lp - lm) / (2.0 * STEP);
            let e = rel_err(analytic[idx], numeric);
            if e > GRAD_TOL {
                return Err(format!(
                    "scorer draw {draw} param {idx}: analytic {} numeric {numeric} rel {e:.2e}",
                    analytic[idx]
                ));
            }
            worst = worst.max(e);
        }
        draw += 1;
    }
    Ok((worst, redrawn))
}

struct ClassifierCase {
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    original: Vec<bool>,
    view0: Array2<f64>,
    view1: Array2<f64>,
}

impl ClassifierCase {
    fn random(rng: &mut seed::Rng, n: usize, d: usize, r: usize) -> Self {
        let features = normal_matrix(rng, n, d);
        let view0 = normal_matrix(rng, n, d);
        let view1 = normal_matrix(rng, n, d);
        // the first two samples carry original labels so every set is non-empty
        let mut labels = Vec::with_capacity(n);
        let mut original = Vec::with_capacity(n);
        for i in 0..n {
            let kind = if i < 2 { 0 } else { rng.gen_range(0..3) };
            labels.push(if kind == 2 { None } else { Some(rng.gen_range(0..r)) });
            original.push(kind == 0);
        }
        ClassifierCase {
            features,
            labels,
            original,
            view0,
            view1,
        }
    }

    fn inputs(&self) -> ObjectiveInputs<'_> {
        ObjectiveInputs {
            features: &self.features,
            labels: &self.labels,
            original: &self.original,
            view0: &self.view0,
            view1: &self.view1,
        }
    }
}

fn selected_loss(parts: &LossParts, w: &LossWeights, terms: Terms) -> f64 {
    let mut v = 0.0;
    if terms.supervised {
        v += parts.l0 + w.beta * parts.l1 + w.gamma * parts.l0l;
    }
    if terms.contrastive {
        v += w.alpha * parts.l2;
    }
    v
}

/// Worst relative error of the classifier objective restricted to `terms`.
pub fn classifier_gradient_check(terms: Terms, form: InfoNceForm, draws: usize, seed_: u64) -> Result<f64, String> {
    let mut rng = seed::rng(seed_);
    let (n, d, h, r) = (12, 5, 4, 3);
    // unit weights keep every term visible at the tolerance
    let w = LossWeights {
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
    };
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let case = ClassifierCase::random(&mut rng, n, d, r);
        let mut p = init_classifier(d, h, r, rng.gen()).unwrap();
        let flat: Vec<f64> = (0..p.num_params())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.6 * z
            })
            .collect();
        p.set_flat(&flat);
        let (_, grad) = objective(&p, &case.inputs(), &w, form, terms).unwrap();
        let analytic = grad.to_flat();
        let mut q = p.clone();
        for idx in 0..flat.len() {
            let mut x = flat.clone();
            x[idx] = flat[idx] + STEP;
            q.set_flat(&x);
            let lp = selected_loss(&objective(&q, &case.inputs(), &w, form, terms).unwrap().0, &w, terms);
            x[idx] = flat[idx] - STEP;
            q.set_flat(&x);
            let lm = selected_loss(&objective(&q, &case.inputs(), &w, form, terms).unwrap().0, &w, terms);
            let numeric = (lp - lm) / (2.0 * STEP);
            let e = rel_err(analytic[idx], numeric);
            if e > GRAD_TOL {
                return Err(format!(
                    "classifier {terms:?} {form:?} draw {draw} param {idx}: analytic {} numeric {numeric} rel {e:.2e}",
                    analytic[idx]
                ));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

pub const SUPERVISED: Terms = Terms {
    supervised: true,
    contrastive: false,
};
pub const CONTRASTIVE: Terms = Terms {
    supervised: false,
    contrastive: true,
};

/// Criterion 3.
pub fn gradient_checks() -> Check {
    let start = Instant::now();
    let (scorer, redrawn) = scorer_gradient_check(100, 2024)?;
    let total = classifier_gradient_check(Terms::ALL, InfoNceForm::Printed, 100, 10)?;
    let sup = classifier_gradient_check(SUPERVISED, InfoNceForm::Printed, 100, 7)?;
    let nce = classifier_gradient_check(CONTRASTIVE, InfoNceForm::Printed, 100, 8)?;
    let split = classifier_gradient_check(CONTRASTIVE, InfoNceForm::Split, 100, 9)?;
    let el = start.elapsed();
    verdict(
        within(el, 60),
        format!(
            "worst rel err: scorer {scorer:.1e} ({redrawn} kink redraws), total {total:.1e}, \
             supervised {sup:.1e}, InfoNCE {nce:.1e}, InfoNCE split {split:.1e}; 100 draws each, {el:.2?}"
        ),
    )
}

/// Rows of a random orthonormal `n x dim` matrix (Gram-Schmidt).
fn orthonormal_rows(rng: &mut seed::Rng, n: usize, dim: usize) -> Array2<f64> {
    let mut q = normal_matrix(rng, n, dim);
    for i in 0..n {
        for j in 0..i {
            let dot = q.row(i).dot(&q.row(j));
            let rj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-dot, &rj);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|x| x / norm);
    }
    q
}

/// Criterion 4.
pub fn infonce_closed_form() -> Check {
    let mut rng = seed::rng(404);
    let e = std::f64::consts::E;
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [1usize, 2, 5, 10] {
        let b = orthonormal_rows(&mut rng, n, n + 3);
        // the second view is a rescaled copy: cosine ignores length
        let b1 = b.mapv(|x| 2.5 * x);
        let got = infonce_loss(&b, &b1, InfoNceForm::Printed).unwrap();
        let want = -(n as f64) * (2.0 * e / (e + n as f64 - 1.0)).ln();
        let diff = (got - want).abs();
        ok &= diff <= 1e-9;
        if n == 2 {
            let per_sample = got / 2.0;
            ok &= (per_sample + 0.379885).abs() < 1e-6;
            lines.push(format!("N=2 per sample {per_sample:.6}"));
        }
        lines.push(format!("N={n} diff {diff:.1e}"));
    }
    verdict(ok, lines.join(", "))
}

/// Criterion 5.
pub fn energy_identities() -> Check {
    let mut rng = seed::rng(505);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r = rng.gen_range(1..=10);
        let logits: Vec<f64> = (0..r)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                5.0 * z
            })
            .collect();
        let c = rng.gen_range(-50.0..50.0);
        let t = [0.25, 0.5, 1.0, 2.0, 4.0][rng.gen_range(0..5)];
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let diff = energy_score(&shifted, t).unwrap() - energy_score(&logits, t).unwrap() - c;
        worst = worst.max(diff.abs());
    }
    let ln_e1 = (std::f64::consts::E + 1.0).ln();
    let spots = [
        (vec![0.0, 0.0], 1.0, std::f64::consts::LN_2),
        (vec![1.0, 0.0], 1.0, ln_e1),
        (vec![2.0, 0.0], 2.0, 2.0 * ln_e1),
    ];
    let spot_err = spots
        .iter()
        .map(|(l, t, want)| (energy_score(l, *t).unwrap() - want).abs())
        .fold(0.0, f64::max);
    verdict(
        worst <= 1e-12 && spot_err <= 1e-12,
        format!("shift identity max err {worst:.1e} over 1000 draws, spot values max err {spot_err:.1e}"),
    )
}

fn random_scores(rng: &mut seed::Rng, n: usize, mean: f64, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            let s = mean + z;
            if ties {
                (s * 2.0).round() / 2.0
            } else {
                s
            }
        })
        .collect()
}

/// Criterion 6.
pub fn metric_oracles(instances: usize) -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(606);
    let mut worst_area: f64 = 0.0;
    for t in 0..instances {
        let n = rng.gen_range(2..=1000);
        let n_id = rng.gen_range(1..n);
        let n_ood = n - n_id;
        let ties = t % 2 == 0;
        let gap = rng.gen_range(0.0..3.0);
        let id = random_scores(&mut rng, n_id, gap, ties);
        let ood = random_scores(&mut rng, n_ood, 0.0, ties);
        let correct: Vec<(f64, bool)> = id.iter().map(|&s| (s, rng.gen_bool(0.8))).collect();

        let fpr = fpr_at_tpr(&id, &ood, 0.95).unwrap();
        let want = brute_fpr_at_tpr(&id, &ood, 95, 100);
        if fpr != want {
            return Err(format!("instance {t}: FPR95 {fpr} vs brute force {want}"));
        }
        let a = auroc(&id, &ood).unwrap();
        let want = brute_auroc(&id, &ood);
        if a != want {
            return Err(format!("instance {t}: AUROC {a} vs brute force {want}"));
        }
        let neg_id: Vec<f64> = id.iter().map(|s| -s).collect();
        let neg_ood: Vec<f64> = ood.iter().map(|s| -s).collect();
        let pairs = [
            ("AUPR-In", aupr(&id, &ood, Positive::In).unwrap(), brute_average_precision(&id, &ood)),
            (
                "AUPR-Out",
                aupr(&id, &ood, Positive::Out).unwrap(),
                brute_average_precision(&neg_ood, &neg_id),
            ),
        ];
        for (name, got, want) in pairs {
            let diff = (got - want).abs();
            if diff > 1e-12 {
                return Err(format!("instance {t}: {name} {got} vs brute force {want}"));
            }
            worst_area = worst_area.max(diff);
        }
        for (label, m) in CCR_LEVELS {
            let got = ccr_at_fpr(&correct, &ood, m).unwrap();
            let want = brute_ccr(&correct, &ood, m);
            if got != want {
                return Err(format!("instance {t}: CCR@{label} {got} vs brute force {want}"));
            }
        }
    }
    let el = start.elapsed();
    verdict(
        within(el, 120),
        format!("{instances} instances, rank metrics exact, max AUPR diff {worst_area:.1e}, {el:.2?}"),
    )
}

/// Outcome of one default-benchmark run and the files it wrote.
pub struct BenchmarkRun {
    pub outcome: PipelineOutcome,
    pub files: BTreeMap<String, Vec<u8>>,
    pub elapsed: Duration,
}

pub fn benchmark_config(rho: f64) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.training.rho = rho;
    c
}

pub fn run_benchmark(config: &PipelineConfig, out_dir: &Path) -> BenchmarkRun {
    let start = Instant::now();
    let source = DataSource::Synthetic(SyntheticSpec {
        seed: config.training.seed,
        ..SyntheticSpec::default()
    });
    let outcome = run_pipeline(config, &source, out_dir).expect("pipeline runs");
    let elapsed = start.elapsed();
    let files = std::fs::read_dir(out_dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    BenchmarkRun { outcome, files, elapsed }
}

/// Criterion 7.
pub fn hierarchy_on_benchmark(run: &BenchmarkRun, max_levels: usize) -> Check {
    let trace = &run.outcome.training.hierarchy;
    let nodes: Vec<usize> = trace.levels.iter().map(|l| l.nodes).collect();
    let decreasing = nodes.windows(2).all(|w| w[1] < w[0]);
    let within_cap = trace.depth <= max_levels && trace.stop != ahgc::hierarchy::StopReason::MaxLevels;
    let ds = &run.outcome.training.dataset;
    let mut counts: BTreeMap<usize, BTreeMap<Option<usize>, usize>> = BTreeMap::new();
    for (r, &s) in ds.records.iter().zip(&run.outcome.training.final_assignment) {
        let class = match r.origin {
            Some(Origin::Id) => r.truth,
            _ => None,
        };
        *counts.entry(s).or_default().entry(class).or_default() += 1;
    }
    let majority: usize = counts.values().map(|c| c.values().max().unwrap()).sum();
    let purity = majority as f64 / ds.len() as f64;
    verdict(
        within_cap && decreasing && purity >= 0.95,
        format!(
            "stop {:?} at depth {} (cap {max_levels}), nodes per level {nodes:?}, {} final subgraphs, purity {purity:.4}",
            trace.stop, trace.depth, trace.final_subgraphs
        ),
    )
}

/// Pseudo-labeled records, how many are correct and how many are OOD.
pub fn pseudo_label_stats(run: &BenchmarkRun) -> (usize, usize, usize) {
    let ds = &run.outcome.training.dataset;
    let pseudo: Vec<_> = ds.records.iter().filter(|r| r.pseudo_epoch.is_some()).collect();
    let correct = pseudo.iter().filter(|r| r.origin == Some(Origin::Id) && r.label == r.truth).count();
    let ood = pseudo.iter().filter(|r| r.origin == Some(Origin::Ood)).count();
    (pseudo.len(), correct, ood)
}

/// Criterion 8.
pub fn pseudo_labels_on_benchmark(run: &BenchmarkRun) -> Check {
    let (total, correct, ood) = pseudo_label_stats(run);
    let ds = &run.outcome.training.dataset;
    let unlabeled_id = ds
        .records
        .iter()
        .filter(|r| r.origin == Some(Origin::Id) && !r.is_original_labeled())
        .count();
    let id_pseudo = total - ood;
    let acc = if id_pseudo == 0 { 0.0 } else { correct as f64 / id_pseudo as f64 };
    verdict(
        id_pseudo > 0 && acc >= 0.90 && ood == 0,
        format!("{id_pseudo} of {unlabeled_id} unlabeled ID samples pseudo-labeled, accuracy {acc:.4}, {ood} OOD pseudo-labeled"),
    )
}

/// Criterion 9. `repeat` was produced by a second run of the same config.
pub fn end_to_end(run: &BenchmarkRun, repeat: &BenchmarkRun) -> Check {
    let m = run.outcome.metrics.as_ref().ok_or("no metrics")?;
    let identical = run.files == repeat.files;
    let differing: Vec<&String> = run
        .files
        .iter()
        .filter(|(name, bytes)| repeat.files.get(*name) != Some(bytes))
        .map(|(name, _)| name)
        .collect();
    verdict(
        m.auroc >= 0.95 && m.fpr95 <= 0.20 && identical && within(run.elapsed, 120),
        format!(
            "auroc {:.4}, fpr95 {:.4}, {} artifacts byte-identical across runs{}, runtime {:.2?}",
            m.auroc,
            m.fpr95,
            run.files.len(),
            if differing.is_empty() { String::new() } else { format!(" (differ: {differing:?})") },
            run.elapsed
        ),
    )
}

/// Criterion 10.
pub fn rho_ablation(full: &BenchmarkRun, near_off: &BenchmarkRun) -> Check {
    let (n_full, ..) = pseudo_label_stats(full);
    let (n_off, ..) = pseudo_label_stats(near_off);
    let a_full = full.outcome.metrics.as_ref().ok_or("no metrics")?.auroc;
    let a_off = near_off.outcome.metrics.as_ref().ok_or("no metrics")?.auroc;
    verdict(
        n_off <= n_full && a_off <= a_full + 0.02,
        format!("pseudo-labels rho=0.99: {n_off}, rho=0.5: {n_full}; auroc rho=0.99: {a_off:.4}, rho=0.5: {a_full:.4}"),
    )
}

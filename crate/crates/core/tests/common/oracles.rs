//! Brute-force reference implementations written from the definitions,
//! with plain loops and no shared code paths with the library.

use ahgc::scorer::ScorerParams;
use ndarray::Array2;

/// All-pairs cosine k-NN: every other node, sorted by descending affinity
/// then ascending index, truncated to `k`.
pub fn brute_knn(features: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = features.nrows();
    let norm = |i: usize| features.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..n)
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dot: f64 = features.row(i).iter().zip(features.row(j).iter()).map(|(a, b)| a * b).sum();
                    (j, (dot / (norm(i) * norm(j))).clamp(-1.0, 1.0))
                })
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Linkage probability of every k-NN edge, evaluated node by node.
pub fn naive_linkage(params: &ScorerParams, knn: &[Vec<(usize, f64)>], features: &Array2<f64>) -> Vec<Vec<f64>> {
    let n = features.nrows();
    let h = params.hidden_dim;
    let mut x: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).to_vec()).collect();
    for layer in &params.layers {
        let d_in = x[0].len();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| (0..h).map(|c| (0..d_in).map(|r| xi[r] * layer.weight[[r, c]]).sum()).collect())
            .collect();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut hood = vec![i];
            hood.extend(knn[i].iter().map(|&(j, _)| j));
            let logits: Vec<f64> = hood
                .iter()
                .map(|&j| {
                    let mut s = 0.0;
                    for c in 0..h {
                        s += layer.attention[c] * z[i][c] + layer.attention[h + c] * z[j][c];
                    }
                    leaky(s)
                })
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|t| (t - top).exp()).sum();
            let mut out = vec![0.0; h];
            for c in 0..h {
                let mut v = z[i][c] + layer.bias[c];
                for (pos, &j) in hood.iter().enumerate() {
                    v += (logits[pos] - top).exp() / denom * z[j][c];
                }
                out[c] = elu(v);
            }
            next.push(out);
        }
        x = next;
    }
    (0..n)
        .map(|i| {
            knn[i]
                .iter()
                .map(|&(j, _)| {
                    let hidden: Vec<f64> = (0..h)
                        .map(|c| {
                            let mut v = params.mlp_hidden_b[c];
                            for r in 0..h {
                                v += x[i][r] * params.mlp_hidden_w[[r, c]] + x[j][r] * params.mlp_hidden_w[[h + r, c]];
                            }
                            elu(v)
                        })
                        .collect();
                    let out: Vec<f64> = (0..2)
                        .map(|c| params.mlp_out_b[c] + (0..h).map(|r| hidden[r] * params.mlp_out_w[[r, c]]).sum::<f64>())
                        .collect();
                    1.0 / (1.0 + (out[1] - out[0]).exp())
                })
                .collect()
        })
        .collect()
}

/// `d_i = (1/|knn(i)|) * sum_j (2 p_ij - 1) a_ij`
pub fn naive_density(knn: &[Vec<(usize, f64)>], p: &[Vec<f64>]) -> Vec<f64> {
    knn.iter()
        .zip(p)
        .map(|(list, pi)| {
            if list.is_empty() {
                return 0.0;
            }
            let mut s = 0.0;
            for (&(_, a), &pij) in list.iter().zip(pi) {
                s += (2.0 * pij - 1.0) * a;
            }
            s / list.len() as f64
        })
        .collect()
}

fn count_above(scores: &[f64], t: f64) -> usize {
    scores.iter().filter(|&&s| s > t).count()
}

/// Every threshold that changes a `score > t` count, plus `-inf`.
fn cut_points(scores: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut ts: Vec<f64> = scores.collect();
    ts.push(f64::NEG_INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// FPR at the strictest threshold whose ID acceptance (`score > t`) reaches
/// `tpr_num / tpr_den`.
pub fn brute_fpr_at_tpr(id: &[f64], ood: &[f64], tpr_num: usize, tpr_den: usize) -> f64 {
    let mut best: Option<(f64, usize)> = None;
    for t in cut_points(id.iter().chain(ood).copied()) {
        let tp = count_above(id, t);
        if tp * tpr_den >= tpr_num * id.len() && best.map_or(true, |(bt, _)| t > bt) {
            best = Some((t, count_above(ood, t)));
        }
    }
    best.expect("-inf accepts everything").1 as f64 / ood.len() as f64
}

/// Probability that a random ID score beats a random OOD score, ties
/// counted half, from every pair.
pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut twice: u64 = 0;
    for &a in id {
        for &b in ood {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * id.len() * ood.len()) as f64
}

/// Average precision: sweep the threshold over every distinct score from
/// the top, predicting positive when `score >= t`, and add precision times
/// the recall gained.
pub fn brute_average_precision(pos: &[f64], neg: &[f64]) -> f64 {
    let mut ts: Vec<f64> = pos.iter().chain(neg).copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in ts {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        if tp > 0.0 {
            ap += (recall - prev_recall) * tp / (tp + fp);
        }
        prev_recall = recall;
    }
    ap
}

/// Best correct-classification rate over all thresholds whose OOD
/// acceptance (`score > t`) stays within `m`.
pub fn brute_ccr(id: &[(f64, bool)], ood: &[f64], m: f64) -> f64 {
    let mut best = 0.0f64;
    for t in cut_points(id.iter().map(|x| x.0).chain(ood.iter().copied())) {
        let fp = count_above(ood, t) as f64;
        if fp <= m * ood.len() as f64 + 1e-9 {
            let hits = id.iter().filter(|&&(s, ok)| ok && s > t).count();
            best = best.max(hits as f64 / id.len() as f64);
        }
    }
    best
}

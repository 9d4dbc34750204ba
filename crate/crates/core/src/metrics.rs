//! Energy scoring, threshold detection and OOD evaluation metrics.
//!
//! Higher scores mean "more in-distribution". Conventions:
//!
//! * a sample is OOD when `score <= delta`;
//! * `threshold_at_tpr` returns the largest `delta` that keeps at least
//!   `ceil(tpr * n)` ID scores strictly above it;
//! * AUROC credits ties with one half;
//! * AUPR is step-wise average precision over distinct score thresholds;
//! * CCR at FPR `m` uses the most permissive threshold whose OOD pass rate
//!   is at most `m`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Origin;
use crate::error::{AhgcError, Result};

/// Slack for `tpr * n` style products that should be integers.
const COUNT_EPS: f64 = 1e-9;

/// The FPR levels reported for CCR.
pub const CCR_LEVELS: [(&str, f64); 4] = [("1e-4", 1e-4), ("1e-3", 1e-3), ("1e-2", 1e-2), ("1e-1", 1e-1)];

/// `T * log(sum_c exp(l_c / T))`, evaluated with a max shift.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(AhgcError::validation(
            "temperature",
            format!("must be positive, got {temperature}"),
        ));
    }
    if logits.is_empty() || logits.iter().any(|x| !x.is_finite()) {
        return Err(AhgcError::Precondition("energy score needs finite logits".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let s: f64 = logits.iter().map(|&l| (l / temperature - m).exp()).sum();
    Ok(temperature * (m + s.ln()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Id => "ID",
            Decision::Ood => "OOD",
        }
    }
}

pub fn detect(score: f64, delta: f64) -> Decision {
    if score <= delta {
        Decision::Ood
    } else {
        Decision::Id
    }
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(AhgcError::Precondition(format!("no {what} scores")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AhgcError::Precondition(format!("non-finite {what} score")));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of ID samples that must pass for a true-positive rate of `tpr`.
fn required_passes(tpr: f64, n: usize) -> usize {
    ((tpr * n as f64 - COUNT_EPS).ceil().max(0.0) as usize).min(n)
}

/// Largest `delta` with at least `ceil(tpr * n)` ID scores strictly above it:
/// the float just below the `(n - m + 1)`-th smallest ID score.
pub fn threshold_at_tpr(id_scores: &[f64], tpr: f64) -> Result<f64> {
    check_scores(id_scores, "ID")?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(AhgcError::validation("tpr", format!("must lie in (0, 1], got {tpr}")));
    }
    let s = sorted(id_scores);
    let m = required_passes(tpr, s.len()).max(1);
    Ok(s[s.len() - m].next_down())
}

/// Fraction of OOD scores above the `tpr` threshold.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    check_scores(ood_scores, "OOD")?;
    let delta = threshold_at_tpr(id_scores, tpr)?;
    let fp = ood_scores.iter().filter(|&&s| s > delta).count();
    Ok(fp as f64 / ood_scores.len() as f64)
}

/// Probability that a random ID score exceeds a random OOD score, ties 1/2.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, "ID")?;
    check_scores(ood_scores, "OOD")?;
    let ood = sorted(ood_scores);
    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    for &s in id_scores {
        let below = ood.partition_point(|&o| o < s);
        let not_above = ood.partition_point(|&o| o <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_u as f64 / (2.0 * id_scores.len() as f64 * ood.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positive {
    /// ID samples are positives, ranked by descending score.
    In,
    /// OOD samples are positives, ranked by ascending score.
    Out,
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over distinct thresholds.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64], positive: Positive) -> Result<f64> {
    check_scores(id_scores, "ID")?;
    check_scores(ood_scores, "OOD")?;
    let mut items: Vec<(f64, bool)> = match positive {
        Positive::In => id_scores
            .iter()
            .map(|&s| (s, true))
            .chain(ood_scores.iter().map(|&s| (s, false)))
            .collect(),
        Positive::Out => id_scores
            .iter()
            .map(|&s| (-s, false))
            .chain(ood_scores.iter().map(|&s| (-s, true)))
            .collect(),
    };
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = items.iter().filter(|x| x.1).count() as f64;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        let mut tp_here = 0;
        while j < items.len() && items[j].0 == items[i].0 {
            tp_here += usize::from(items[j].1);
            j += 1;
        }
        tp += tp_here;
        seen = j;
        if tp_here > 0 {
            ap += tp_here as f64 * (tp as f64 / seen as f64);
        }
        i = j;
    }
    debug_assert_eq!(seen, items.len());
    Ok(ap / total_pos)
}

/// Fraction of ID samples that are both admitted at FPR `m` and correctly
/// classified. `id` holds `(score, prediction_correct)`.
pub fn ccr_at_fpr(id: &[(f64, bool)], ood_scores: &[f64], m: f64) -> Result<f64> {
    let id_scores: Vec<f64> = id.iter().map(|x| x.0).collect();
    check_scores(&id_scores, "ID")?;
    check_scores(ood_scores, "OOD")?;
    if !(m > 0.0 && m <= 1.0) {
        return Err(AhgcError::validation("m", format!("must lie in (0, 1], got {m}")));
    }
    let ood = sorted(ood_scores);
    let allowed = ((m * ood.len() as f64 + COUNT_EPS).floor() as usize).min(ood.len());
    // OOD scores above theta number at most `allowed`: theta is the
    // (allowed + 1)-th largest OOD score, or -inf if all may pass.
    let theta = if allowed == ood.len() {
        f64::NEG_INFINITY
    } else {
        ood[ood.len() - 1 - allowed]
    };
    let hits = id.iter().filter(|&&(s, ok)| ok && s > theta).count();
    Ok(hits as f64 / id.len() as f64)
}

pub fn id_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(AhgcError::Precondition(format!(
            "accuracy needs equal non-empty lists, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub id: u64,
    pub logits: Vec<f64>,
    pub score: f64,
    pub predicted_class: usize,
    pub decision: Decision,
}

/// Score every row of `logits` and apply the threshold.
pub fn score_samples(ids: &[u64], logits: &[Vec<f64>], temperature: f64, delta: f64) -> Result<Vec<ScoredSample>> {
    ids.iter()
        .zip(logits)
        .map(|(&id, l)| {
            let score = energy_score(l, temperature)?;
            let predicted_class = l
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0;
            Ok(ScoredSample {
                id,
                logits: l.clone(),
                score,
                predicted_class,
                decision: detect(score, delta),
            })
        })
        .collect()
}

/// `id,score,predicted_class,decision`
pub fn scores_to_csv(samples: &[ScoredSample]) -> String {
    let mut out = String::from("id,score,predicted_class,decision\n");
    for s in samples {
        let _ = writeln!(out, "{},{:.16e},{},{}", s.id, s.score, s.predicted_class, s.decision.as_str());
    }
    out
}

/// Score rows `(id, score, predicted_class)` from a score CSV.
pub fn scores_from_csv(text: &str, source: &str) -> Result<Vec<(u64, f64, usize)>> {
    let parse_err = |line: usize, reason: String| AhgcError::Parse {
        path: source.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,score,predicted_class,decision" => {}
        _ => return Err(parse_err(1, "expected header `id,score,predicted_class,decision`".into())),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(parse_err(idx + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let id = cols[0].parse().map_err(|_| parse_err(idx + 1, format!("bad id `{}`", cols[0])))?;
        let score: f64 = cols[1]
            .parse()
            .map_err(|_| parse_err(idx + 1, format!("bad score `{}`", cols[1])))?;
        if !score.is_finite() {
            return Err(parse_err(idx + 1, "score is not finite".into()));
        }
        let class = cols[2]
            .parse()
            .map_err(|_| parse_err(idx + 1, format!("bad class `{}`", cols[2])))?;
        out.push((id, score, class));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    /// `None` when class ground truth is unavailable.
    pub ccr_at: BTreeMap<String, Option<f64>>,
    pub id_accuracy: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| AhgcError::io(path, e))
    }
}

/// One evaluated sample: score, predicted class, origin and (for ID) class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSample {
    pub score: f64,
    pub predicted_class: usize,
    pub origin: Origin,
    pub truth: Option<usize>,
}

/// Full metric suite. CCR and accuracy need the class of every ID sample.
pub fn evaluate(samples: &[EvalSample]) -> Result<MetricsReport> {
    let id: Vec<&EvalSample> = samples.iter().filter(|s| s.origin == Origin::Id).collect();
    let ood: Vec<f64> = samples.iter().filter(|s| s.origin == Origin::Ood).map(|s| s.score).collect();
    let id_scores: Vec<f64> = id.iter().map(|s| s.score).collect();
    let with_truth = !id.is_empty() && id.iter().all(|s| s.truth.is_some());

    let mut ccr_at = BTreeMap::new();
    let mut accuracy = None;
    if with_truth {
        let correct: Vec<(f64, bool)> = id
            .iter()
            .map(|s| (s.score, Some(s.predicted_class) == s.truth))
            .collect();
        for (key, m) in CCR_LEVELS {
            ccr_at.insert(key.to_string(), Some(ccr_at_fpr(&correct, &ood, m)?));
        }
        let pred: Vec<usize> = id.iter().map(|s| s.predicted_class).collect();
        let truth: Vec<usize> = id.iter().map(|s| s.truth.expect("checked")).collect();
        accuracy = Some(id_accuracy(&pred, &truth)?);
    } else {
        for (key, _) in CCR_LEVELS {
            ccr_at.insert(key.to_string(), None);
        }
    }
    Ok(MetricsReport {
        fpr95: fpr_at_tpr(&id_scores, &ood, 0.95)?,
        auroc: auroc(&id_scores, &ood)?,
        aupr_in: aupr(&id_scores, &ood, Positive::In)?,
        aupr_out: aupr(&id_scores, &ood, Positive::Out)?,
        ccr_at,
        id_accuracy: accuracy,
    })
}

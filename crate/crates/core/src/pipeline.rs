//! End-to-end run: data, training, scoring, evaluation and artifacts.
//!
//! Artifacts written to the output directory:
//!
//! | file                   | content                                        |
//! |------------------------|------------------------------------------------|
//! | `dataset.csv`          | input embeddings (synthetic runs only)         |
//! | `origin.csv`           | ID/OOD sidecar (synthetic runs only)           |
//! | `truth.csv`            | class sidecar for ID records (synthetic only)  |
//! | `epochs.jsonl`         | one loss/label report per epoch                |
//! | `pseudo_labels.csv`    | `id,pseudo_label,epoch_assigned`               |
//! | `labeled.csv`          | dataset with pseudo-label columns              |
//! | `hierarchy_trace.json` | per-level sizes of the last epoch              |
//! | `classifier.ckpt`      | trained classifier head                        |
//! | `scores.csv`           | `id,score,predicted_class,decision` on D^U     |
//! | `metrics.json`         | metric suite, when origins are known           |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    self, gen_synthetic, normalize_features, Dataset, Origin, SyntheticSpec,
};
use crate::error::{AhgcError, Result, StageContext};
use crate::metrics::{evaluate, score_samples, threshold_at_tpr, EvalSample, MetricsReport, ScoredSample};
use crate::objectives::ClassifierParams;
use crate::training::{epochs_to_jsonl, run_training, TrainingConfig, TrainingOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub temperature: f64,
    pub delta: f64,
    /// When set, `delta` is replaced by the threshold that keeps this
    /// fraction of the original labeled samples above it.
    pub delta_tpr: Option<f64>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            temperature: 1.0,
            delta: 0.7,
            delta_tpr: None,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(AhgcError::validation("temperature", "must be positive"));
        }
        if !self.delta.is_finite() {
            return Err(AhgcError::validation("delta", "must be finite"));
        }
        if let Some(t) = self.delta_tpr {
            if !(t > 0.0 && t <= 1.0) {
                return Err(AhgcError::validation("delta_tpr", format!("must lie in (0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub training: TrainingConfig,
    pub scoring: ScoringConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AhgcError::Parse {
            path: source.to_string(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            reason: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AhgcError::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.scoring.validate()
    }
}

#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files {
        data: PathBuf,
        origin: Option<PathBuf>,
        truth: Option<PathBuf>,
    },
}

/// Load or generate the dataset with any ground truth attached.
pub fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(spec) => gen_synthetic(spec),
        DataSource::Files { data, origin, truth } => {
            let mut ds = data::load_dataset(data)?;
            let origin = origin.as_deref().map(data::load_origin).transpose()?;
            let truth = truth.as_deref().map(data::load_truth).transpose()?;
            if let Some(o) = &origin {
                data::attach_ground_truth(&mut ds, o, truth.as_ref());
            }
            Ok(ds)
        }
    }
}

/// Records of the original unlabeled split, in dataset order.
pub fn unlabeled_indices(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).filter(|&i| !ds.records[i].is_original_labeled()).collect()
}

/// Energy scores of the original unlabeled records of a normalized dataset.
pub fn score_dataset(classifier: &ClassifierParams, ds: &Dataset, config: &ScoringConfig) -> Result<Vec<ScoredSample>> {
    config.validate()?;
    let logits = classifier.logits(&ds.feature_matrix())?;
    let rows: Vec<Vec<f64>> = logits.rows().into_iter().map(|r| r.to_vec()).collect();
    let delta = match config.delta_tpr {
        None => config.delta,
        Some(tpr) => {
            let labeled: Vec<(u64, Vec<f64>)> = ds
                .records
                .iter()
                .zip(&rows)
                .filter(|(r, _)| r.is_original_labeled())
                .map(|(r, l)| (r.id, l.clone()))
                .collect();
            let (ids, ls): (Vec<u64>, Vec<Vec<f64>>) = labeled.into_iter().unzip();
            let scores: Vec<f64> = score_samples(&ids, &ls, config.temperature, 0.0)?
                .iter()
                .map(|s| s.score)
                .collect();
            threshold_at_tpr(&scores, tpr)?
        }
    };
    let idx = unlabeled_indices(ds);
    let ids: Vec<u64> = idx.iter().map(|&i| ds.records[i].id).collect();
    let ls: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
    score_samples(&ids, &ls, config.temperature, delta)
}

/// Pair scores with origins and classes. `None` when some origin is unknown.
pub fn eval_samples(
    scores: &[(u64, f64, usize)],
    origin: &BTreeMap<u64, Origin>,
    truth: Option<&BTreeMap<u64, usize>>,
) -> Result<Vec<EvalSample>> {
    scores
        .iter()
        .map(|&(id, score, predicted_class)| {
            let origin = *origin
                .get(&id)
                .ok_or_else(|| AhgcError::Precondition(format!("no origin for scored id {id}")))?;
            Ok(EvalSample {
                score,
                predicted_class,
                origin,
                truth: truth.and_then(|t| t.get(&id).copied()),
            })
        })
        .collect()
}

fn ground_truth(ds: &Dataset) -> Option<(BTreeMap<u64, Origin>, BTreeMap<u64, usize>)> {
    let mut origin = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for r in &ds.records {
        origin.insert(r.id, r.origin?);
        if let Some(t) = r.truth {
            truth.insert(r.id, t);
        }
    }
    Some((origin, truth))
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub training: TrainingOutcome,
    pub scores: Vec<ScoredSample>,
    pub metrics: Option<MetricsReport>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| AhgcError::io(path, e))
}

/// Write the training artifacts shared by `run` and `train`.
pub fn write_training_artifacts(outcome: &TrainingOutcome, out_dir: &Path) -> Result<()> {
    write(&out_dir.join("epochs.jsonl"), &epochs_to_jsonl(&outcome.epochs))?;
    write(&out_dir.join("pseudo_labels.csv"), &data::pseudo_labels_to_csv(&outcome.dataset))?;
    write(&out_dir.join("labeled.csv"), &data::dataset_to_csv(&outcome.dataset))?;
    let mut trace = serde_json::to_string_pretty(&outcome.hierarchy)?;
    trace.push('\n');
    write(&out_dir.join("hierarchy_trace.json"), &trace)?;
    outcome.classifier.to_tensor_file().save(&out_dir.join("classifier.ckpt"))
}

pub fn run_pipeline(config: &PipelineConfig, source: &DataSource, out_dir: &Path) -> Result<PipelineOutcome> {
    config.validate().stage("config")?;
    std::fs::create_dir_all(out_dir).map_err(|e| AhgcError::io(out_dir, e)).stage("output")?;

    let raw = load_source(source).stage("data")?;
    if let DataSource::Synthetic(_) = source {
        data::save_dataset(&raw, &out_dir.join("dataset.csv")).stage("data")?;
        data::save_origin(&raw, &out_dir.join("origin.csv")).stage("data")?;
        data::save_truth(&raw, &out_dir.join("truth.csv")).stage("data")?;
    }
    let ds = normalize_features(&raw).stage("normalize")?;

    let outcome = run_training(&ds, &config.training).stage("train")?;
    write_training_artifacts(&outcome, out_dir).stage("train")?;

    let scores = score_dataset(&outcome.classifier, &ds, &config.scoring).stage("score")?;
    write(&out_dir.join("scores.csv"), &crate::metrics::scores_to_csv(&scores)).stage("score")?;

    let metrics = match ground_truth(&ds) {
        Some((origin, truth)) => {
            let rows: Vec<(u64, f64, usize)> = scores.iter().map(|s| (s.id, s.score, s.predicted_class)).collect();
            let truth = (!truth.is_empty()).then_some(&truth);
            let report = evaluate(&eval_samples(&rows, &origin, truth)?).stage("evaluate")?;
            report.save(&out_dir.join("metrics.json")).stage("evaluate")?;
            Some(report)
        }
        None => None,
    };
    Ok(PipelineOutcome {
        training: outcome,
        scores,
        metrics,
    })
}

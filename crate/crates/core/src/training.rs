//! Epoch loop: graph cut, label assignment and classifier updates.
//!
//! After pretraining the classifier on the original labeled set, every epoch
//! fits the linkage scorers and runs the hierarchy on the current labels,
//! assigns pseudo-labels inside the final subgraphs, draws two augmented
//! views per sample and takes gradient steps on the combined loss. Projected
//! features are recomputed from the current parameters at every evaluation,
//! so they always reflect the latest label split.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AhgcError, Result};
use crate::hierarchy::{run_hierarchy, GatScorers, HierarchyConfig, HierarchyTrace};
use crate::labeling::{assign_labels, LabelAssignmentReport};
use crate::objectives::{
    augment_pair, init_classifier, objective, ClassifierParams, InfoNceForm, LossParts, LossWeights,
    ObjectiveInputs, Terms,
};
use crate::scorer::{init_scorer, ScorerParams};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub k: usize,
    /// Subgraph budget; `None` means one more than the number of classes.
    pub k_target: Option<usize>,
    pub p_tau: f64,
    pub rho: f64,
    pub max_levels: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub infonce_form: InfoNceForm,
    pub max_epochs: usize,
    /// Classifier learning rate.
    pub lr: f64,
    pub classifier_steps: usize,
    pub pretrain_steps: usize,
    pub hidden_dim: usize,
    pub scorer_lr: f64,
    pub scorer_steps: usize,
    pub lifted_scorer_steps: usize,
    pub noise_sigma: f64,
    pub drop_prob: f64,
    pub tol: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainingConfig {
            k: 10,
            k_target: None,
            p_tau: 0.3,
            rho: 0.5,
            max_levels: 10,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            infonce_form: InfoNceForm::Printed,
            max_epochs: 50,
            lr: 0.05,
            classifier_steps: 20,
            pretrain_steps: 100,
            hidden_dim: 64,
            scorer_lr: 0.1,
            scorer_steps: 30,
            lifted_scorer_steps: 200,
            noise_sigma: 0.1,
            drop_prob: 0.1,
            tol: 1e-5,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn hierarchy(&self, num_classes: usize) -> HierarchyConfig {
        HierarchyConfig {
            k: self.k,
            p_tau: self.p_tau,
            max_levels: self.max_levels,
            k_target: self.k_target.unwrap_or(num_classes + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.hierarchy(1).validate()?;
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(AhgcError::validation("rho", format!("must lie in (0, 1), got {}", self.rho)));
        }
        if self.max_epochs == 0 {
            return Err(AhgcError::validation("max_epochs", "must be at least 1"));
        }
        for (field, v) in [("lr", self.lr), ("scorer_lr", self.scorer_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AhgcError::validation(field, format!("must be positive, got {v}")));
            }
        }
        if self.hidden_dim == 0 {
            return Err(AhgcError::validation("hidden_dim", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(AhgcError::validation("noise_sigma", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(AhgcError::validation("drop_prob", "must lie in [0, 1)"));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(AhgcError::validation("tol", "must be non-negative"));
        }
        Ok(())
    }
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    #[serde(rename = "L0")]
    pub l0: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "L0L")]
    pub l0l: f64,
    pub total: f64,
    pub newly_labeled: usize,
    pub subgraphs: usize,
}

impl EpochReport {
    fn new(epoch: usize, parts: LossParts, newly_labeled: usize, subgraphs: usize) -> Self {
        EpochReport {
            epoch,
            l0: parts.l0,
            l1: parts.l1,
            l2: parts.l2,
            l0l: parts.l0l,
            total: parts.total,
            newly_labeled,
            subgraphs,
        }
    }
}

pub fn epochs_to_jsonl(epochs: &[EpochReport]) -> String {
    epochs
        .iter()
        .map(|e| serde_json::to_string(e).expect("report serializes") + "\n")
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub classifier: ClassifierParams,
    pub base_scorer: ScorerParams,
    pub lifted_scorer: ScorerParams,
    /// Input dataset with every pseudo-label assigned during training.
    pub dataset: Dataset,
    pub epochs: Vec<EpochReport>,
    pub assignments: Vec<LabelAssignmentReport>,
    /// Hierarchy of the last epoch.
    pub hierarchy: HierarchyTrace,
    /// Final subgraph of every record in the last epoch.
    pub final_assignment: Vec<usize>,
}

/// Two augmented views of every record for `epoch`.
pub fn augmented_views(dataset: &Dataset, epoch: usize, config: &TrainingConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, d) = (dataset.len(), dataset.dim());
    let aug_seed = seed::substream(config.seed, "augment");
    let mut v0 = Array2::zeros((n, d));
    let mut v1 = Array2::zeros((n, d));
    for (i, r) in dataset.records.iter().enumerate() {
        let (a, b) = augment_pair(&r.feature, r.id, epoch, aug_seed, config.noise_sigma, config.drop_prob)?;
        v0.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
        v1.row_mut(i).assign(&ndarray::ArrayView1::from(&b));
    }
    Ok((v0, v1))
}

fn descend(
    params: &mut ClassifierParams,
    inputs: &ObjectiveInputs,
    weights: &LossWeights,
    form: InfoNceForm,
    terms: Terms,
    lr: f64,
    steps: usize,
) -> Result<()> {
    for step in 0..steps {
        let (parts, grad) = objective(params, inputs, weights, form, terms)?;
        if !parts.total.is_finite() {
            return Err(AhgcError::Divergence { step, loss: parts.total });
        }
        params.add_scaled(&grad, -lr);
        if !params.is_finite() {
            return Err(AhgcError::Divergence { step, loss: f64::NAN });
        }
    }
    Ok(())
}

/// Run the full training loop on a dataset whose features are already
/// normalized.
pub fn run_training(dataset: &Dataset, config: &TrainingConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let r = dataset.num_classes;
    for y in 0..r {
        if !dataset.records.iter().any(|rec| rec.is_original_labeled() && rec.label == Some(y)) {
            return Err(AhgcError::validation("label", format!("class {y} has no labeled sample")));
        }
    }
    let features = dataset.feature_matrix();
    let d = features.ncols();
    let original: Vec<bool> = dataset.records.iter().map(|r| r.is_original_labeled()).collect();
    let weights = config.weights();
    let hier_cfg = config.hierarchy(r);

    let mut classifier = init_classifier(d, config.hidden_dim, r, seed::substream(config.seed, "classifier"))?;
    let mut scorers = GatScorers::new(
        init_scorer(d, config.hidden_dim, seed::substream(config.seed, "scorer"))?,
        init_scorer(2 * d, config.hidden_dim, seed::substream(config.seed, "scorer-lifted"))?,
        config.scorer_lr,
        config.scorer_steps,
        config.lifted_scorer_steps,
    );

    // Pretraining: only the original labels, cross-entropy alone.
    if config.pretrain_steps > 0 {
        let labels: Vec<Option<usize>> = dataset
            .records
            .iter()
            .map(|r| if r.is_original_labeled() { r.label } else { None })
            .collect();
        let ce_only = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let inputs = ObjectiveInputs {
            features: &features,
            labels: &labels,
            original: &original,
            view0: &features,
            view1: &features,
        };
        let terms = Terms {
            supervised: true,
            contrastive: false,
        };
        descend(&mut classifier, &inputs, &ce_only, config.infonce_form, terms, config.lr, config.pretrain_steps)?;
    }

    let mut current = dataset.clone();
    let mut epochs = Vec::new();
    let mut assignments = Vec::new();
    let mut trace = None;
    let mut final_assignment = Vec::new();
    let mut stalled = 0;
    for epoch in 0..config.max_epochs {
        let hierarchy = run_hierarchy(&features, &current.labels(), &hier_cfg, &mut scorers)?;
        let (next, report) = assign_labels(&hierarchy.final_assignment, &current, config.rho, epoch)?;
        current = next;

        let labels = current.labels();
        let (view0, view1) = augmented_views(&current, epoch, config)?;
        let inputs = ObjectiveInputs {
            features: &features,
            labels: &labels,
            original: &original,
            view0: &view0,
            view1: &view1,
        };
        descend(
            &mut classifier,
            &inputs,
            &weights,
            config.infonce_form,
            Terms::ALL,
            config.lr,
            config.classifier_steps,
        )?;
        let (parts, _) = objective(&classifier, &inputs, &weights, config.infonce_form, Terms::ALL)?;
        let line = EpochReport::new(epoch, parts, report.newly_labeled.len(), hierarchy.num_subgraphs);

        if let Some(prev) = epochs.last().map(|e: &EpochReport| e.total) {
            let improvement = (prev - line.total) / f64::max(prev.abs(), f64::MIN_POSITIVE);
            stalled = if improvement < config.tol { stalled + 1 } else { 0 };
        }
        epochs.push(line);
        assignments.push(report);
        trace = Some(hierarchy.trace());
        final_assignment = hierarchy.final_assignment;
        if config.patience > 0 && stalled >= config.patience {
            break;
        }
    }

    Ok(TrainingOutcome {
        classifier,
        base_scorer: scorers.base,
        lifted_scorer: scorers.lifted,
        dataset: current,
        epochs,
        assignments,
        hierarchy: trace.expect("at least one epoch"),
        final_assignment,
    })
}

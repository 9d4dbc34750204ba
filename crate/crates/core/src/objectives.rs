//! Classifier head and training losses.
//!
//! The classifier projects a feature `x` to `b = tanh(x W + c)` and produces
//! class logits `l = b H + e`. Losses:
//!
//! * `L0`: cross-entropy over the current labeled set (original and pseudo).
//! * `L1`: cross-entropy to the uniform distribution over the remaining
//!   unlabeled samples.
//! * `L2`: InfoNCE between the projections of two augmented views.
//! * `L0^L`: cross-entropy over the original labeled set.
//!
//! combined as `L = L0 + beta L1 + alpha L2 + gamma L0^L`. All logs use a
//! probability floor of `1e-12`.

use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Tensor, TensorFile};
use crate::error::{AhgcError, Result};
use crate::seed;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// `d × h`
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// `h × R`
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn scaled_normal(rng: &mut seed::Rng, rows: usize, cols: usize) -> Array2<f64> {
    let scale = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

pub fn init_classifier(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Result<ClassifierParams> {
    if input_dim == 0 {
        return Err(AhgcError::validation("input_dim", "must be at least 1"));
    }
    if hidden_dim == 0 {
        return Err(AhgcError::validation("hidden_dim", "must be at least 1"));
    }
    if num_classes == 0 {
        return Err(AhgcError::validation("num_classes", "must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let proj_w = scaled_normal(&mut rng, input_dim, hidden_dim);
    let head_w = scaled_normal(&mut rng, hidden_dim, num_classes);
    Ok(ClassifierParams {
        input_dim,
        hidden_dim,
        num_classes,
        seed,
        proj_w,
        proj_b: Array1::zeros(hidden_dim),
        head_w,
        head_b: Array1::zeros(num_classes),
    })
}

impl ClassifierParams {
    pub fn zeros_like(&self) -> Self {
        ClassifierParams {
            proj_w: Array2::zeros(self.proj_w.raw_dim()),
            proj_b: Array1::zeros(self.proj_b.raw_dim()),
            head_w: Array2::zeros(self.head_w.raw_dim()),
            head_b: Array1::zeros(self.head_b.raw_dim()),
            ..self.clone()
        }
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.proj_w.as_slice().expect("standard layout"),
            self.proj_b.as_slice().expect("standard layout"),
            self.head_w.as_slice().expect("standard layout"),
            self.head_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.proj_w.as_slice_mut().expect("standard layout"),
            self.proj_b.as_slice_mut().expect("standard layout"),
            self.head_w.as_slice_mut().expect("standard layout"),
            self.head_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut rest = flat;
        for s in self.slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn add_scaled(&mut self, other: &ClassifierParams, scale: f64) {
        self.proj_w.scaled_add(scale, &other.proj_w);
        self.proj_b.scaled_add(scale, &other.proj_b);
        self.head_w.scaled_add(scale, &other.head_w);
        self.head_b.scaled_add(scale, &other.head_b);
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Projected features `b = tanh(x W + c)`.
    pub fn project(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(AhgcError::DimensionMismatch {
                expected: self.input_dim,
                found: x.ncols(),
            });
        }
        Ok((x.dot(&self.proj_w) + &self.proj_b).mapv(f64::tanh))
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.project(x)?.dot(&self.head_w) + &self.head_b)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let t = |name: &str, shape: Vec<usize>, data: &[f64]| Tensor {
            name: name.into(),
            shape,
            data: data.to_vec(),
        };
        let [pw, pb, hw, hb] = self.slices();
        TensorFile {
            kind: "classifier".into(),
            meta: vec![
                ("input_dim".into(), self.input_dim as u64),
                ("hidden_dim".into(), self.hidden_dim as u64),
                ("num_classes".into(), self.num_classes as u64),
                ("seed".into(), self.seed),
            ],
            tensors: vec![
                t("proj_w", vec![self.input_dim, self.hidden_dim], pw),
                t("proj_b", vec![self.hidden_dim], pb),
                t("head_w", vec![self.hidden_dim, self.num_classes], hw),
                t("head_b", vec![self.num_classes], hb),
            ],
        }
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        if file.kind != "classifier" {
            return Err(AhgcError::Precondition(format!(
                "expected a classifier checkpoint, found `{}`",
                file.kind
            )));
        }
        let (d, h, r) = (
            file.meta("input_dim")? as usize,
            file.meta("hidden_dim")? as usize,
            file.meta("num_classes")? as usize,
        );
        let mut p = init_classifier(d, h, r, file.meta("seed")?)?;
        let shapes = [
            ("proj_w", vec![d, h]),
            ("proj_b", vec![h]),
            ("head_w", vec![h, r]),
            ("head_b", vec![r]),
        ];
        for (dst, (name, shape)) in p.slices_mut().into_iter().zip(shapes) {
            dst.copy_from_slice(file.tensor(name, &shape)?);
        }
        Ok(p)
    }
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(AhgcError::Precondition(format!(
            "probability vector sums to {s}"
        )));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn classification_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() == 0 {
        return Err(AhgcError::Precondition("classification loss over an empty set".into()));
    }
    if labels.len() != probs.nrows() {
        return Err(AhgcError::DimensionMismatch {
            expected: probs.nrows(),
            found: labels.len(),
        });
    }
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        let row = row.to_vec();
        check_distribution(&row)?;
        let p = *row.get(y).ok_or_else(|| {
            AhgcError::validation("label", format!("class {y} out of range 0..{}", row.len()))
        })?;
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(total / probs.nrows() as f64)
}

/// Mean cross-entropy to the uniform distribution; 0 for an empty set.
pub fn equalization_loss(probs: &Array2<f64>) -> Result<f64> {
    if probs.nrows() == 0 {
        return Ok(0.0);
    }
    let r = probs.ncols() as f64;
    let mut total = 0.0;
    for row in probs.rows() {
        let row = row.to_vec();
        check_distribution(&row)?;
        total -= row.iter().map(|p| p.max(PROB_FLOOR).ln()).sum::<f64>() / r;
    }
    Ok(total / probs.nrows() as f64)
}

/// Two noisy, partially masked copies of `feature`. Deterministic in
/// `(id, epoch, seed)`.
pub fn augment_pair(
    feature: &[f64],
    id: u64,
    epoch: usize,
    seed: u64,
    noise_sigma: f64,
    drop_prob: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(AhgcError::validation("drop_prob", format!("must lie in [0, 1), got {drop_prob}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(AhgcError::validation("noise_sigma", format!("must be non-negative, got {noise_sigma}")));
    }
    let mut rng = seed::rng(seed::indexed(seed, &[id, epoch as u64]));
    let view = |rng: &mut seed::Rng| -> Vec<f64> {
        feature
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(rng);
                let keep = rng.gen::<f64>() >= drop_prob;
                if keep {
                    x + noise_sigma * z
                } else {
                    0.0
                }
            })
            .collect()
    };
    let v0 = view(&mut rng);
    let v1 = view(&mut rng);
    Ok((v0, v1))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoNceForm {
    /// `-log(A_i + B_i)`: both fractions inside one log.
    #[default]
    Printed,
    /// `-log A_i - log B_i`.
    Split,
}

impl FromStr for InfoNceForm {
    type Err = AhgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(InfoNceForm::Printed),
            "split" => Ok(InfoNceForm::Split),
            _ => Err(AhgcError::validation("infonce_form", format!("expected printed or split, got `{s}`"))),
        }
    }
}

fn row_norms(m: &Array2<f64>) -> Result<Vec<f64>> {
    m.rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let n = r.dot(&r).sqrt();
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(AhgcError::Precondition(format!("view of sample {i} is a zero vector")))
            }
        })
        .collect()
}

/// InfoNCE summed over the batch, with gradients for both view matrices.
///
/// With `S_ij = cos(b0_i, b1_j)`, `A_i = exp(S_ii) / sum_j exp(S_ij)` and
/// `B_i = exp(S_ii) / sum_g exp(S_gi)`.
pub fn infonce_with_grad(
    b0: &Array2<f64>,
    b1: &Array2<f64>,
    form: InfoNceForm,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = b0.nrows();
    if n == 0 || b1.nrows() != n {
        return Err(AhgcError::Precondition(format!(
            "InfoNCE needs two equal non-empty batches, got {} and {}",
            n,
            b1.nrows()
        )));
    }
    if b0.ncols() != b1.ncols() {
        return Err(AhgcError::DimensionMismatch {
            expected: b0.ncols(),
            found: b1.ncols(),
        });
    }
    let n0 = row_norms(b0)?;
    let n1 = row_norms(b1)?;
    let u0 = b0 / &Array1::from(n0.clone()).insert_axis(Axis(1));
    let u1 = b1 / &Array1::from(n1.clone()).insert_axis(Axis(1));
    let s = u0.dot(&u1.t());

    // P: softmax over each row of S, Q: softmax over each column.
    let p = softmax_rows(&s);
    let q = softmax_rows(&s.t().to_owned()).t().to_owned();

    let mut loss = 0.0;
    let mut ds = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let (a, b) = (p[[i, i]], q[[i, i]]);
        let (ca, cb) = match form {
            InfoNceForm::Printed => {
                loss -= (a + b).ln();
                (a / (a + b), b / (a + b))
            }
            InfoNceForm::Split => {
                loss -= a.ln() + b.ln();
                (1.0, 1.0)
            }
        };
        // d(-log A_i)/dS_ij = P_ij - [i = j], d(-log B_i)/dS_gi = Q_gi - [g = i]
        for j in 0..n {
            ds[[i, j]] += ca * p[[i, j]];
            ds[[j, i]] += cb * q[[j, i]];
        }
        ds[[i, i]] -= ca + cb;
    }

    // S = U0 U1^T with U = B / |B| row-wise.
    let du0 = ds.dot(&u1);
    let du1 = ds.t().dot(&u0);
    let back = |u: &Array2<f64>, du: &Array2<f64>, norms: &[f64]| {
        let mut g = du.clone();
        for (i, mut row) in g.rows_mut().into_iter().enumerate() {
            let ui = u.row(i);
            let proj = ui.dot(&du.row(i));
            row.scaled_add(-proj, &ui);
            row /= norms[i];
        }
        g
    };
    let g0 = back(&u0, &du0, &n0);
    let g1 = back(&u1, &du1, &n1);
    Ok((loss, g0, g1))
}

pub fn infonce_loss(b0: &Array2<f64>, b1: &Array2<f64>, form: InfoNceForm) -> Result<f64> {
    Ok(infonce_with_grad(b0, b1, form)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.15,
            beta: 0.5,
            gamma: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AhgcError::validation(field, format!("must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `L0 + beta L1 + alpha L2 + gamma L0^L`
pub fn total_loss(l0: f64, l1: f64, l2: f64, l0l: f64, w: &LossWeights) -> f64 {
    l0 + w.beta * l1 + w.alpha * l2 + w.gamma * l0l
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub l0: f64,
    pub l1: f64,
    /// Per-sample mean InfoNCE over the batch.
    pub l2: f64,
    pub l0l: f64,
    pub total: f64,
}

/// Everything the objective reads for one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveInputs<'a> {
    pub features: &'a Array2<f64>,
    /// Current labels: original and pseudo.
    pub labels: &'a [Option<usize>],
    /// Membership of the original labeled set.
    pub original: &'a [bool],
    pub view0: &'a Array2<f64>,
    pub view1: &'a Array2<f64>,
}

/// Which terms to include; the gradient check exercises them separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terms {
    pub supervised: bool,
    pub contrastive: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        supervised: true,
        contrastive: true,
    };
}

/// Gradient of the floored cross-entropy `-log max(p_y, eps)` w.r.t. logits.
fn ce_logit_grad(p: &[f64], y: usize, scale: f64, out: &mut [f64]) {
    if p[y] < PROB_FLOOR {
        return;
    }
    for (k, g) in out.iter_mut().enumerate() {
        *g += scale * (p[k] - if k == y { 1.0 } else { 0.0 });
    }
}

/// Gradient of `-(1/R) sum_c log max(p_c, eps)` w.r.t. logits.
fn uniform_logit_grad(p: &[f64], scale: f64, out: &mut [f64]) {
    let r = p.len() as f64;
    let live: Vec<bool> = p.iter().map(|&x| x >= PROB_FLOOR).collect();
    let n_live = live.iter().filter(|&&b| b).count() as f64;
    for (k, g) in out.iter_mut().enumerate() {
        let ind = if live[k] { 1.0 } else { 0.0 };
        *g += scale * (p[k] * n_live - ind) / r;
    }
}

/// Loss components and the gradient of the selected part of the total loss.
pub fn objective(
    params: &ClassifierParams,
    inputs: &ObjectiveInputs,
    weights: &LossWeights,
    form: InfoNceForm,
    terms: Terms,
) -> Result<(LossParts, ClassifierParams)> {
    let n = inputs.features.nrows();
    if inputs.labels.len() != n || inputs.original.len() != n {
        return Err(AhgcError::DimensionMismatch {
            expected: n,
            found: inputs.labels.len().min(inputs.original.len()),
        });
    }
    let x = inputs.features;
    let b = params.project(x)?;
    let logits = b.dot(&params.head_w) + &params.head_b;
    let probs = softmax_rows(&logits);
    let r = params.num_classes;

    let labeled: Vec<(usize, usize)> = inputs
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, y)| y.map(|y| (i, y)))
        .collect();
    let unlabeled: Vec<usize> = (0..n).filter(|&i| inputs.labels[i].is_none()).collect();
    let original: Vec<(usize, usize)> = labeled
        .iter()
        .copied()
        .filter(|&(i, _)| inputs.original[i])
        .collect();
    if labeled.is_empty() || original.is_empty() {
        return Err(AhgcError::Precondition("objective needs labeled samples".into()));
    }
    if let Some(&(_, y)) = labeled.iter().find(|&&(_, y)| y >= r) {
        return Err(AhgcError::validation("label", format!("class {y} out of range 0..{r}")));
    }

    let pick = |rows: &[usize]| probs.select(Axis(0), rows);
    let (li, ly): (Vec<usize>, Vec<usize>) = labeled.iter().copied().unzip();
    let (oi, oy): (Vec<usize>, Vec<usize>) = original.iter().copied().unzip();
    let l0 = classification_loss(&pick(&li), &ly)?;
    let l0l = classification_loss(&pick(&oi), &oy)?;
    let l1 = equalization_loss(&pick(&unlabeled))?;

    let mut grad = params.zeros_like();
    if terms.supervised {
        let mut dlogits = Array2::<f64>::zeros((n, r));
        for (&(i, y), scale) in labeled
            .iter()
            .map(|e| (e, 1.0 / labeled.len() as f64))
            .chain(original.iter().map(|e| (e, weights.gamma / original.len() as f64)))
        {
            let p = probs.row(i).to_vec();
            ce_logit_grad(&p, y, scale, dlogits.row_mut(i).as_slice_mut().expect("row"));
        }
        if !unlabeled.is_empty() {
            let scale = weights.beta / unlabeled.len() as f64;
            for &i in &unlabeled {
                let p = probs.row(i).to_vec();
                uniform_logit_grad(&p, scale, dlogits.row_mut(i).as_slice_mut().expect("row"));
            }
        }
        grad.head_w = b.t().dot(&dlogits);
        grad.head_b = dlogits.sum_axis(Axis(0));
        let dpre = dlogits.dot(&params.head_w.t()) * b.mapv(|t| 1.0 - t * t);
        grad.proj_w += &x.t().dot(&dpre);
        grad.proj_b += &dpre.sum_axis(Axis(0));
    }

    let b0 = params.project(inputs.view0)?;
    let b1 = params.project(inputs.view1)?;
    let (l2_sum, g0, g1) = infonce_with_grad(&b0, &b1, form)?;
    let l2 = l2_sum / n as f64;
    if terms.contrastive {
        let scale = weights.alpha / n as f64;
        for (v, bv, gv) in [(inputs.view0, &b0, &g0), (inputs.view1, &b1, &g1)] {
            let dpre = gv * &bv.mapv(|t| 1.0 - t * t) * scale;
            grad.proj_w += &v.t().dot(&dpre);
            grad.proj_b += &dpre.sum_axis(Axis(0));
        }
    }

    let total = total_loss(l0, l1, l2, l0l, weights);
    Ok((LossParts { l0, l1, l2, l0l, total }, grad))
}

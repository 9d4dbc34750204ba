//! Datasets of embedding vectors with labeled/unlabeled splits, the
//! synthetic multi-granularity benchmark generator, and the CSV formats.
//!
//! Embedding CSV: header `id,split,label,f0,...,f{d-1}`. `split` is `L` or
//! `U`, `label` is a class index or `-`. A file may additionally carry the
//! two columns `pseudo_label,epoch_assigned` right after `label`; an
//! Unlabeled row with a pseudo-label there is loaded as a pseudo-labeled
//! member of the labeled set. Features are written with 17 significant
//! digits so save/load round-trips bit-exactly.
//!
//! Sidecars: origin `id,origin` (origin is `ID` or `OOD`) and class truth
//! `id,label` for ID records. Pseudo-label output: `id,pseudo_label,epoch_assigned`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AhgcError, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Id,
    Ood,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Id => "ID",
            Origin::Ood => "OOD",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub feature: Vec<f64>,
    pub split: Split,
    /// Ground-truth label for original labeled records, pseudo-label after assignment.
    pub label: Option<usize>,
    /// Epoch at which a pseudo-label was assigned; `None` for original labels.
    pub pseudo_epoch: Option<usize>,
    /// Evaluation-only ground truth. Training code never reads it.
    pub origin: Option<Origin>,
    /// Evaluation-only class of an ID record.
    pub truth: Option<usize>,
}

impl EmbeddingRecord {
    pub fn is_labeled(&self) -> bool {
        self.split == Split::Labeled
    }

    /// Member of the original labeled set (not pseudo-labeled).
    pub fn is_original_labeled(&self) -> bool {
        self.split == Split::Labeled && self.pseudo_epoch.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<EmbeddingRecord>,
    pub num_classes: usize,
}

impl Dataset {
    /// Build a dataset, checking every record invariant.
    pub fn new(records: Vec<EmbeddingRecord>, num_classes: usize) -> Result<Self> {
        let ds = Dataset {
            records,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.records.first().map(|r| r.feature.len()).unwrap_or(1);
        if dim == 0 {
            return Err(AhgcError::validation("feature", "dimension must be at least 1"));
        }
        let mut ids = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !ids.insert(r.id) {
                return Err(AhgcError::validation("id", format!("duplicate id {}", r.id)));
            }
            if r.feature.len() != dim {
                return Err(AhgcError::DimensionMismatch {
                    expected: dim,
                    found: r.feature.len(),
                });
            }
            match (r.split, r.label) {
                (Split::Labeled, None) => {
                    return Err(AhgcError::validation(
                        "label",
                        format!("labeled record {} has no label", r.id),
                    ))
                }
                (Split::Unlabeled, Some(_)) => {
                    return Err(AhgcError::validation(
                        "label",
                        format!("unlabeled record {} carries a label", r.id),
                    ))
                }
                (_, Some(y)) if y >= self.num_classes => {
                    return Err(AhgcError::validation(
                        "label",
                        format!("record {} label {y} out of range 0..{}", r.id, self.num_classes),
                    ))
                }
                _ => {}
            }
            if r.pseudo_epoch.is_some() && r.split != Split::Labeled {
                return Err(AhgcError::validation(
                    "pseudo_label",
                    format!("record {} has a pseudo-label epoch but is unlabeled", r.id),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map(|r| r.feature.len()).unwrap_or(0)
    }

    /// Row-major `n × d` feature matrix in record order.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let (n, d) = (self.len(), self.dim());
        let mut m = Array2::zeros((n, d));
        for (i, r) in self.records.iter().enumerate() {
            for (j, &v) in r.feature.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }

    /// Current labels (original and pseudo) in record order.
    pub fn labels(&self) -> Vec<Option<usize>> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_labeled()).count()
    }

    pub fn pseudo_labeled(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(|r| r.pseudo_epoch.is_some())
    }
}

/// Parameters of the synthetic multi-granularity benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub coarse_id_classes: usize,
    pub fine_per_class: usize,
    pub ood_clusters: usize,
    pub points_per_cluster: usize,
    pub dim: usize,
    pub cluster_sep: f64,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Two coarse classes of two fine subclusters each plus one OOD cluster.
    fn default() -> Self {
        SyntheticSpec {
            coarse_id_classes: 2,
            fine_per_class: 2,
            ood_clusters: 1,
            points_per_cluster: 40,
            dim: 16,
            cluster_sep: 8.0,
            labeled_fraction: 0.6,
            seed: 0,
        }
    }
}

/// Coarse groups (ID classes and OOD clusters) are placed this many times
/// `cluster_sep` apart; fine subclusters of one class sit `cluster_sep` apart.
pub const COARSE_SPREAD: f64 = 3.0;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("coarse_id_classes", self.coarse_id_classes),
            ("fine_per_class", self.fine_per_class),
            ("ood_clusters", self.ood_clusters),
            ("points_per_cluster", self.points_per_cluster),
            ("dim", self.dim),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(AhgcError::validation(field, "must be at least 1"));
            }
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(AhgcError::validation(
                "labeled_fraction",
                format!("must lie in (0, 1), got {}", self.labeled_fraction),
            ));
        }
        if !(self.cluster_sep > 0.0 && self.cluster_sep.is_finite()) {
            return Err(AhgcError::validation(
                "cluster_sep",
                format!("must be positive, got {}", self.cluster_sep),
            ));
        }
        Ok(())
    }

    /// Labeled points drawn from each ID cluster.
    pub fn labeled_per_cluster(&self) -> usize {
        (self.labeled_fraction * self.points_per_cluster as f64).round() as usize
    }
}

fn min_pairwise_distance(centers: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

fn gaussian_vectors(rng: &mut seed::Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Rescale `vecs` so that their minimum pairwise distance equals `target`.
/// A single vector is scaled to norm `target` instead.
fn rescale_to_separation(vecs: &mut [Vec<f64>], target: f64) {
    let current = if vecs.len() >= 2 {
        min_pairwise_distance(vecs)
    } else {
        vecs.first()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    };
    if current > 0.0 {
        let s = target / current;
        vecs.iter_mut().flatten().for_each(|x| *x *= s);
    }
}

/// Cluster centers in generation order: class 0 fine 0..F, class 1 ..., then OOD.
pub fn synthetic_centers(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = seed::rng(seed::substream(spec.seed, "centers"));
    let groups = spec.coarse_id_classes + spec.ood_clusters;
    let mut coarse = gaussian_vectors(&mut rng, groups, spec.dim);
    rescale_to_separation(&mut coarse, COARSE_SPREAD * spec.cluster_sep);

    let mut centers = Vec::with_capacity(spec.coarse_id_classes * spec.fine_per_class + spec.ood_clusters);
    for base in coarse.iter().take(spec.coarse_id_classes) {
        let mut offsets = if spec.fine_per_class >= 2 {
            let mut o = gaussian_vectors(&mut rng, spec.fine_per_class, spec.dim);
            rescale_to_separation(&mut o, spec.cluster_sep);
            o
        } else {
            vec![vec![0.0; spec.dim]]
        };
        for off in offsets.iter_mut() {
            off.iter_mut().zip(base).for_each(|(o, b)| *o += b);
        }
        centers.extend(offsets);
    }
    centers.extend(coarse.into_iter().skip(spec.coarse_id_classes));

    let min = min_pairwise_distance(&centers);
    if centers.len() >= 2 && min < spec.cluster_sep {
        let s = spec.cluster_sep / min;
        centers.iter_mut().flatten().for_each(|x| *x *= s);
    }
    Ok(centers)
}

/// Deterministic synthetic benchmark. Records are shuffled, then numbered 0..N.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let centers = synthetic_centers(spec)?;
    let mut rng = seed::rng(seed::substream(spec.seed, "points"));
    let n_id_clusters = spec.coarse_id_classes * spec.fine_per_class;
    let n_labeled = spec.labeled_per_cluster();

    let mut records = Vec::with_capacity(centers.len() * spec.points_per_cluster);
    for (c, center) in centers.iter().enumerate() {
        let is_id = c < n_id_clusters;
        let class = c / spec.fine_per_class;
        let mut order: Vec<usize> = (0..spec.points_per_cluster).collect();
        order.shuffle(&mut rng);
        let mut labeled = vec![false; spec.points_per_cluster];
        if is_id {
            order.iter().take(n_labeled).for_each(|&p| labeled[p] = true);
        }
        for &is_labeled in &labeled {
            let feature: Vec<f64> = center
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect();
            records.push(EmbeddingRecord {
                id: 0,
                feature,
                split: if is_labeled { Split::Labeled } else { Split::Unlabeled },
                label: is_labeled.then_some(class),
                pseudo_epoch: None,
                origin: Some(if is_id { Origin::Id } else { Origin::Ood }),
                truth: is_id.then_some(class),
            });
        }
    }
    records.shuffle(&mut rng);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Dataset::new(records, spec.coarse_id_classes)
}

/// Scale every feature to unit L2 norm.
pub fn normalize_features(dataset: &Dataset) -> Result<Dataset> {
    let mut out = dataset.clone();
    for r in out.records.iter_mut() {
        let norm = r.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(AhgcError::ZeroVector { id: r.id });
        }
        r.feature.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn split_code(s: Split) -> &'static str {
    match s {
        Split::Labeled => "L",
        Split::Unlabeled => "U",
    }
}

/// Serialize to the embedding CSV format.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let d = ds.dim();
    let extended = ds.records.iter().any(|r| r.pseudo_epoch.is_some());
    let mut out = String::from("id,split,label");
    if extended {
        out.push_str(",pseudo_label,epoch_assigned");
    }
    for j in 0..d {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for r in &ds.records {
        let (split, label, pseudo) = match r.pseudo_epoch {
            Some(epoch) => ("U", "-".to_string(), Some((r.label.unwrap_or(0), epoch))),
            None => (
                split_code(r.split),
                r.label.map_or("-".to_string(), |y| y.to_string()),
                None,
            ),
        };
        let _ = write!(out, "{},{split},{label}", r.id);
        if extended {
            match pseudo {
                Some((y, e)) => {
                    let _ = write!(out, ",{y},{e}");
                }
                None => out.push_str(",-,-"),
            }
        }
        for &v in &r.feature {
            out.push(',');
            out.push_str(&fmt_float(v));
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| AhgcError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| AhgcError::io(path, e))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &dataset_to_csv(ds))
}

pub(crate) struct LineErr<'a> {
    pub(crate) path: &'a str,
}

impl LineErr<'_> {
    pub(crate) fn at(&self, line: usize, reason: impl Into<String>) -> AhgcError {
        AhgcError::Parse {
            path: self.path.to_string(),
            line,
            reason: reason.into(),
        }
    }
}

fn parse_label(field: &str, line: usize, err: &LineErr) -> Result<Option<usize>> {
    if field == "-" {
        return Ok(None);
    }
    field
        .parse::<usize>()
        .map(Some)
        .map_err(|_| err.at(line, format!("label `{field}` is not a class index")))
}

/// Parse the embedding CSV. `num_classes` bounds labels when given;
/// otherwise the class count is one past the largest label seen.
pub fn dataset_from_csv(text: &str, source: &str, num_classes: Option<usize>) -> Result<Dataset> {
    let err = LineErr { path: source };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err.at(1, "empty file"))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 4 || cols[..3] != ["id", "split", "label"] {
        return Err(err.at(1, "header must start with id,split,label"));
    }
    let extended = cols[3] == "pseudo_label";
    let feat_start = if extended {
        if cols.get(4) != Some(&"epoch_assigned") {
            return Err(err.at(1, "pseudo_label must be followed by epoch_assigned"));
        }
        5
    } else {
        3
    };
    let dim = cols.len() - feat_start;
    if dim == 0 {
        return Err(err.at(1, "no feature columns"));
    }
    for (j, c) in cols[feat_start..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(err.at(1, format!("expected column f{j}, found `{c}`")));
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut max_label: Option<usize> = None;
    for (ln, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err.at(
                ln,
                format!("expected {} columns, found {}", cols.len(), fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| err.at(ln, format!("bad id `{}`", fields[0])))?;
        if !seen.insert(id) {
            return Err(err.at(ln, format!("duplicate id {id}")));
        }
        let split = match fields[1] {
            "L" => Split::Labeled,
            "U" => Split::Unlabeled,
            s => return Err(err.at(ln, format!("split must be L or U, found `{s}`"))),
        };
        let label = parse_label(fields[2], ln, &err)?;
        match (split, label) {
            (Split::Labeled, None) => return Err(err.at(ln, "labeled row without label")),
            (Split::Unlabeled, Some(_)) => return Err(err.at(ln, "unlabeled row with label")),
            _ => {}
        }
        let (mut split, mut label, mut pseudo_epoch) = (split, label, None);
        if extended {
            let pl = parse_label(fields[3], ln, &err)?;
            let ep = match fields[4] {
                "-" => None,
                s => Some(
                    s.parse::<usize>()
                        .map_err(|_| err.at(ln, format!("bad epoch_assigned `{s}`")))?,
                ),
            };
            match (pl, ep) {
                (None, None) => {}
                (Some(y), Some(e)) if split == Split::Unlabeled => {
                    split = Split::Labeled;
                    label = Some(y);
                    pseudo_epoch = Some(e);
                }
                (Some(_), Some(_)) => return Err(err.at(ln, "pseudo-label on a labeled row")),
                _ => return Err(err.at(ln, "pseudo_label and epoch_assigned must both be set")),
            }
        }
        if let Some(y) = label {
            if let Some(r) = num_classes {
                if y >= r {
                    return Err(err.at(ln, format!("label {y} out of range 0..{r}")));
                }
            }
            max_label = Some(max_label.map_or(y, |m| m.max(y)));
        }
        let feature = fields[feat_start..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err.at(ln, format!("bad feature value `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(EmbeddingRecord {
            id,
            feature,
            split,
            label,
            pseudo_epoch,
            origin: None,
            truth: None,
        });
    }
    let r = num_classes.unwrap_or_else(|| max_label.map_or(0, |m| m + 1));
    Dataset::new(records, r)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_csv(&read_file(path)?, &path.display().to_string(), None)
}

pub fn load_dataset_with_classes(path: &Path, num_classes: usize) -> Result<Dataset> {
    dataset_from_csv(&read_file(path)?, &path.display().to_string(), Some(num_classes))
}

pub fn origin_to_csv(ds: &Dataset) -> String {
    let mut out = String::from("id,origin\n");
    for r in &ds.records {
        if let Some(o) = r.origin {
            let _ = writeln!(out, "{},{}", r.id, o.as_str());
        }
    }
    out
}

pub fn truth_to_csv(ds: &Dataset) -> String {
    let mut out = String::from("id,label\n");
    for r in &ds.records {
        if let Some(y) = r.truth {
            let _ = writeln!(out, "{},{y}", r.id);
        }
    }
    out
}

fn parse_pairs<T>(
    text: &str,
    source: &str,
    header: &str,
    mut value: impl FnMut(&str) -> Option<T>,
) -> Result<BTreeMap<u64, T>> {
    let err = LineErr { path: source };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(err.at(1, format!("header must be `{header}`"))),
    }
    let mut out = BTreeMap::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (id, v) = line
            .split_once(',')
            .ok_or_else(|| err.at(ln, "expected 2 columns"))?;
        let id: u64 = id.parse().map_err(|_| err.at(ln, format!("bad id `{id}`")))?;
        let v = value(v).ok_or_else(|| err.at(ln, format!("bad value `{v}`")))?;
        if out.insert(id, v).is_some() {
            return Err(err.at(ln, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

pub fn origin_from_csv(text: &str, source: &str) -> Result<BTreeMap<u64, Origin>> {
    parse_pairs(text, source, "id,origin", |s| match s {
        "ID" => Some(Origin::Id),
        "OOD" => Some(Origin::Ood),
        _ => None,
    })
}

pub fn truth_from_csv(text: &str, source: &str) -> Result<BTreeMap<u64, usize>> {
    parse_pairs(text, source, "id,label", |s| s.parse().ok())
}

pub fn save_origin(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &origin_to_csv(ds))
}

pub fn save_truth(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &truth_to_csv(ds))
}

pub fn load_origin(path: &Path) -> Result<BTreeMap<u64, Origin>> {
    origin_from_csv(&read_file(path)?, &path.display().to_string())
}

pub fn load_truth(path: &Path) -> Result<BTreeMap<u64, usize>> {
    truth_from_csv(&read_file(path)?, &path.display().to_string())
}

/// Attach origin and class truth sidecars to a loaded dataset.
pub fn attach_ground_truth(
    ds: &mut Dataset,
    origin: &BTreeMap<u64, Origin>,
    truth: Option<&BTreeMap<u64, usize>>,
) {
    for r in ds.records.iter_mut() {
        r.origin = origin.get(&r.id).copied();
        r.truth = truth.and_then(|t| t.get(&r.id).copied());
    }
}

pub fn pseudo_labels_to_csv(ds: &Dataset) -> String {
    let mut rows: Vec<(u64, usize, usize)> = ds
        .pseudo_labeled()
        .filter_map(|r| Some((r.id, r.label?, r.pseudo_epoch?)))
        .collect();
    rows.sort_by_key(|&(id, _, e)| (e, id));
    let mut out = String::from("id,pseudo_label,epoch_assigned\n");
    for (id, y, e) in rows {
        let _ = writeln!(out, "{id},{y},{e}");
    }
    out
}

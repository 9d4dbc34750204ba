//! Attention-aware linkage and density estimator.
//!
//! Four single-head graph-attention layers encode node features; an MLP on
//! the concatenated endpoint embeddings `[f'_i, f'_j]` of every directed
//! k-NN edge produces a two-way softmax whose "same label" output is the
//! linkage probability `p_ij`. Edge coefficients are `e_ij = 2 p_ij - 1`
//! and node densities are decoded from them:
//!
//! ```text
//! d_i = (1/k) * sum_j e_ij * a_ij        (a_ij = k-NN cosine affinity)
//! ```
//!
//! Supervision is binary cross-entropy of `p_ij` against `1(y_i = y_j)` on
//! edges whose endpoints are both labeled. Gradients are computed by hand.

use ndarray::{s, Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::{Tensor, TensorFile};
use crate::error::{AhgcError, Result};
use crate::knn::AffinityGraph;
use crate::seed;

pub const GAT_LAYERS: usize = 4;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    /// `d_in × h`
    pub weight: Array2<f64>,
    /// `2h`: first half scores the aggregating node, second half the neighbor.
    pub attention: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub layers: Vec<GatLayer>,
    /// `2h × h`, rows `0..h` act on the source embedding, `h..2h` on the destination.
    pub mlp_hidden_w: Array2<f64>,
    pub mlp_hidden_b: Array1<f64>,
    /// `h × 2`, column 0 is "same label".
    pub mlp_out_w: Array2<f64>,
    pub mlp_out_b: Array1<f64>,
}

fn scaled_normal(rng: &mut seed::Rng, rows: usize, cols: usize) -> Array2<f64> {
    let scale = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Deterministic initialization: weights `N(0, 1/fan_in)`, attention and biases zero.
pub fn init_scorer(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<ScorerParams> {
    if input_dim == 0 {
        return Err(AhgcError::validation("input_dim", "must be at least 1"));
    }
    if hidden_dim == 0 {
        return Err(AhgcError::validation("hidden_dim", "must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let h = hidden_dim;
    let layers = (0..GAT_LAYERS)
        .map(|l| GatLayer {
            weight: scaled_normal(&mut rng, if l == 0 { input_dim } else { h }, h),
            attention: Array1::zeros(2 * h),
            bias: Array1::zeros(h),
        })
        .collect();
    Ok(ScorerParams {
        input_dim,
        hidden_dim,
        seed,
        layers,
        mlp_hidden_w: scaled_normal(&mut rng, 2 * h, h),
        mlp_hidden_b: Array1::zeros(h),
        mlp_out_w: scaled_normal(&mut rng, h, 2),
        mlp_out_b: Array1::zeros(2),
    })
}

impl ScorerParams {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.slices_mut().into_iter().for_each(|s| s.fill(0.0));
        z
    }

    /// Every parameter tensor, in a fixed order, as a flat slice.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * GAT_LAYERS + 4);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.attention.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.mlp_hidden_w.as_slice().expect("standard layout"));
        out.push(self.mlp_hidden_b.as_slice().expect("standard layout"));
        out.push(self.mlp_out_w.as_slice().expect("standard layout"));
        out.push(self.mlp_out_b.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * GAT_LAYERS + 4);
        for l in self.layers.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.attention.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.mlp_hidden_w.as_slice_mut().expect("standard layout"));
        out.push(self.mlp_hidden_b.as_slice_mut().expect("standard layout"));
        out.push(self.mlp_out_w.as_slice_mut().expect("standard layout"));
        out.push(self.mlp_out_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ScorerParams, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("gat{i}.weight"), l.weight.shape().to_vec()));
            out.push((format!("gat{i}.attention"), l.attention.shape().to_vec()));
            out.push((format!("gat{i}.bias"), l.bias.shape().to_vec()));
        }
        out.push(("mlp.hidden.weight".into(), self.mlp_hidden_w.shape().to_vec()));
        out.push(("mlp.hidden.bias".into(), self.mlp_hidden_b.shape().to_vec()));
        out.push(("mlp.out.weight".into(), self.mlp_out_w.shape().to_vec()));
        out.push(("mlp.out.bias".into(), self.mlp_out_b.shape().to_vec()));
        out
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let tensors = self
            .tensor_shapes()
            .into_iter()
            .zip(self.slices())
            .map(|((name, shape), data)| Tensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        TensorFile {
            kind: "scorer".into(),
            meta: vec![
                ("input_dim".into(), self.input_dim as u64),
                ("hidden_dim".into(), self.hidden_dim as u64),
                ("seed".into(), self.seed),
            ],
            tensors,
        }
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        if file.kind != "scorer" {
            return Err(AhgcError::Precondition(format!(
                "expected a scorer checkpoint, found `{}`",
                file.kind
            )));
        }
        let mut p = init_scorer(
            file.meta("input_dim")? as usize,
            file.meta("hidden_dim")? as usize,
            file.meta("seed")?,
        )?;
        let shapes = p.tensor_shapes();
        for ((name, shape), dst) in shapes.iter().zip(p.slices_mut()) {
            dst.copy_from_slice(file.tensor(name, shape)?);
        }
        Ok(p)
    }
}

/// Linkage and density estimates, aligned with `graph.neighbors`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkageDensity {
    pub p: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl LinkageDensity {
    /// Derive `e` and `d` from linkage probabilities and the graph affinities.
    pub fn from_linkage(graph: &AffinityGraph, p: Vec<Vec<f64>>) -> Self {
        let e: Vec<Vec<f64>> = p
            .iter()
            .map(|row| row.iter().map(|&pij| 2.0 * pij - 1.0).collect())
            .collect();
        let d = graph
            .neighbors
            .iter()
            .zip(&e)
            .map(|(list, erow)| density(list, erow))
            .collect();
        LinkageDensity { p, e, d }
    }
}

fn density(list: &[(usize, f64)], coeffs: &[f64]) -> f64 {
    if list.is_empty() {
        return 0.0;
    }
    let sum: f64 = list.iter().zip(coeffs).map(|(&(_, a), &e)| e * a).sum();
    sum / list.len() as f64
}

/// Density with `e_ij = +1` for same-label neighbors and `-1` otherwise.
pub fn ground_truth_density(
    graph: &AffinityGraph,
    labels: &[Option<usize>],
    node: usize,
) -> Result<f64> {
    let yi = labels
        .get(node)
        .copied()
        .flatten()
        .ok_or_else(|| AhgcError::Precondition(format!("node {node} is unlabeled")))?;
    let list = &graph.neighbors[node];
    let coeffs = list
        .iter()
        .map(|&(j, _)| match labels[j] {
            Some(yj) => Ok(if yj == yi { 1.0 } else { -1.0 }),
            None => Err(AhgcError::Precondition(format!(
                "neighbor {j} of node {node} is unlabeled"
            ))),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(density(list, &coeffs))
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Self followed by the node's k-NN list.
fn neighborhoods(graph: &AffinityGraph) -> Vec<Vec<usize>> {
    graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, list)| std::iter::once(i).chain(list.iter().map(|&(j, _)| j)).collect())
        .collect()
}

struct LayerCache {
    input: Array2<f64>,
    z: Array2<f64>,
    raw: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    pre: Array2<f64>,
}

struct EdgeCache {
    pre: Vec<Vec<Array1<f64>>>,
}

struct Forward {
    layers: Vec<LayerCache>,
    embedding: Array2<f64>,
    edges: EdgeCache,
    margins: Vec<Vec<f64>>,
}

fn check_finite(m: &Array2<f64>, layer: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AhgcError::NonFinite { layer: layer() })
    }
}

fn gat_layer_forward(
    layer: &GatLayer,
    input: Array2<f64>,
    hoods: &[Vec<usize>],
) -> (Array2<f64>, LayerCache) {
    let h = layer.bias.len();
    let z = input.dot(&layer.weight);
    let a_src = layer.attention.slice(s![..h]);
    let a_dst = layer.attention.slice(s![h..]);
    let u = z.dot(&a_src);
    let v = z.dot(&a_dst);
    let n = z.nrows();
    let mut pre = Array2::zeros((n, h));
    let mut raw = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for (i, hood) in hoods.iter().enumerate() {
        let s_i: Vec<f64> = hood.iter().map(|&j| u[i] + v[j]).collect();
        let t: Vec<f64> = s_i.iter().map(|&x| leaky(x)).collect();
        let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = t.iter().map(|&x| (x - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let a_i: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut row = pre.row_mut(i);
        row.assign(&z.row(i));
        for (&j, &a) in hood.iter().zip(&a_i) {
            row.scaled_add(a, &z.row(j));
        }
        row += &layer.bias;
        raw.push(s_i);
        alpha.push(a_i);
    }
    let out = pre.mapv(elu);
    (
        out,
        LayerCache {
            input,
            z,
            raw,
            alpha,
            pre,
        },
    )
}

fn run_forward(params: &ScorerParams, graph: &AffinityGraph, features: &Array2<f64>) -> Result<Forward> {
    if features.ncols() != params.input_dim {
        return Err(AhgcError::DimensionMismatch {
            expected: params.input_dim,
            found: features.ncols(),
        });
    }
    if features.nrows() != graph.n {
        return Err(AhgcError::DimensionMismatch {
            expected: graph.n,
            found: features.nrows(),
        });
    }
    let hoods = neighborhoods(graph);
    let mut x = features.clone();
    let mut layers = Vec::with_capacity(GAT_LAYERS);
    for (l, layer) in params.layers.iter().enumerate() {
        let (out, cache) = gat_layer_forward(layer, x, &hoods);
        check_finite(&out, || format!("gat layer {l}"))?;
        layers.push(cache);
        x = out;
    }
    let embedding = x;

    let h = params.hidden_dim;
    let src_part = embedding.dot(&params.mlp_hidden_w.slice(s![..h, ..]));
    let dst_part = embedding.dot(&params.mlp_hidden_w.slice(s![h.., ..]));
    let w_margin: Array1<f64> = &params.mlp_out_w.column(0) - &params.mlp_out_w.column(1);
    let b_margin = params.mlp_out_b[0] - params.mlp_out_b[1];
    let mut pre = Vec::with_capacity(graph.n);
    let mut margins = Vec::with_capacity(graph.n);
    for (i, list) in graph.neighbors.iter().enumerate() {
        let mut pre_i = Vec::with_capacity(list.len());
        let mut m_i = Vec::with_capacity(list.len());
        for &(j, _) in list {
            let p: Array1<f64> = &src_part.row(i) + &dst_part.row(j) + &params.mlp_hidden_b;
            let m = p.iter().zip(w_margin.iter()).map(|(&x, &w)| elu(x) * w).sum::<f64>() + b_margin;
            if !m.is_finite() {
                return Err(AhgcError::NonFinite {
                    layer: "mlp".into(),
                });
            }
            pre_i.push(p);
            m_i.push(m);
        }
        pre.push(pre_i);
        margins.push(m_i);
    }
    Ok(Forward {
        layers,
        embedding,
        edges: EdgeCache { pre },
        margins,
    })
}

/// Bounds that keep a saturated sigmoid strictly inside (0, 1) and
/// `2p - 1` strictly inside (-1, 1).
const P_MIN: f64 = f64::EPSILON / 4.0;
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Linkage probabilities, edge coefficients and densities for every edge of `graph`.
pub fn forward(params: &ScorerParams, graph: &AffinityGraph, features: &Array2<f64>) -> Result<LinkageDensity> {
    let fw = run_forward(params, graph, features)?;
    let p = fw
        .margins
        .iter()
        .map(|row| row.iter().map(|&m| sigmoid(m).clamp(P_MIN, P_MAX)).collect())
        .collect();
    Ok(LinkageDensity::from_linkage(graph, p))
}

/// Pre-activation attention logits per layer, node and neighborhood slot
/// (self first, then the k-NN list).
pub fn attention_logits(
    params: &ScorerParams,
    graph: &AffinityGraph,
    features: &Array2<f64>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(run_forward(params, graph, features)?
        .layers
        .into_iter()
        .map(|c| c.raw)
        .collect())
}

/// Node embeddings after the attention stack.
pub fn embed(params: &ScorerParams, graph: &AffinityGraph, features: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(run_forward(params, graph, features)?.embedding)
}

fn supervised_edges(graph: &AffinityGraph, labels: &[Option<usize>]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (i, list) in graph.neighbors.iter().enumerate() {
        let Some(yi) = labels[i] else { continue };
        for (pos, &(j, _)) in list.iter().enumerate() {
            if let Some(yj) = labels[j] {
                out.push((i, pos, if yi == yj { 1.0 } else { 0.0 }));
            }
        }
    }
    out
}

/// Number of edges whose endpoints are both labeled.
pub fn supervised_edge_count(graph: &AffinityGraph, labels: &[Option<usize>]) -> usize {
    supervised_edges(graph, labels).len()
}

fn gat_layer_backward(
    layer: &GatLayer,
    cache: &LayerCache,
    hoods: &[Vec<usize>],
    grad_out: &Array2<f64>,
    grad: &mut GatLayer,
) -> Array2<f64> {
    let h = layer.bias.len();
    let n = cache.z.nrows();
    let g_pre = grad_out * &cache.pre.mapv(elu_grad);
    grad.bias += &g_pre.sum_axis(Axis(0));

    // skip term
    let mut dz = g_pre.clone();
    let mut d_src = vec![0.0; n];
    let mut d_dst = vec![0.0; n];
    for (i, hood) in hoods.iter().enumerate() {
        let gi = g_pre.row(i);
        let alpha = &cache.alpha[i];
        let d_alpha: Vec<f64> = hood.iter().map(|&j| gi.dot(&cache.z.row(j))).collect();
        for (&j, &a) in hood.iter().zip(alpha) {
            dz.row_mut(j).scaled_add(a, &gi);
        }
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        for (pos, &j) in hood.iter().enumerate() {
            let ds = alpha[pos] * (d_alpha[pos] - mean) * leaky_grad(cache.raw[i][pos]);
            d_src[i] += ds;
            d_dst[j] += ds;
        }
    }
    let a_src = layer.attention.slice(s![..h]);
    let a_dst = layer.attention.slice(s![h..]);
    {
        let (mut g_src, mut g_dst) = grad.attention.view_mut().split_at(Axis(0), h);
        for i in 0..n {
            let zi = cache.z.row(i);
            g_src.scaled_add(d_src[i], &zi);
            g_dst.scaled_add(d_dst[i], &zi);
        }
    }
    for i in 0..n {
        let mut row = dz.row_mut(i);
        row.scaled_add(d_src[i], &a_src);
        row.scaled_add(d_dst[i], &a_dst);
    }
    grad.weight += &cache.input.t().dot(&dz);
    dz.dot(&layer.weight.t())
}

/// Mean binary cross-entropy of the linkage head over fully labeled edges,
/// with exact gradients for every parameter.
pub fn scorer_loss(
    params: &ScorerParams,
    graph: &AffinityGraph,
    features: &Array2<f64>,
    labels: &[Option<usize>],
) -> Result<(f64, ScorerParams)> {
    if labels.len() != graph.n {
        return Err(AhgcError::DimensionMismatch {
            expected: graph.n,
            found: labels.len(),
        });
    }
    let edges = supervised_edges(graph, labels);
    if edges.is_empty() {
        return Err(AhgcError::Precondition(
            "no edge has two labeled endpoints".into(),
        ));
    }
    let fw = run_forward(params, graph, features)?;
    let count = edges.len() as f64;
    let h = params.hidden_dim;
    let n = graph.n;

    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    let mut d_src_part = Array2::<f64>::zeros((n, h));
    let mut d_dst_part = Array2::<f64>::zeros((n, h));
    let w_margin: Array1<f64> = &params.mlp_out_w.column(0) - &params.mlp_out_w.column(1);
    for &(i, pos, y) in &edges {
        let m = fw.margins[i][pos];
        loss += if y > 0.5 { softplus(-m) } else { softplus(m) };
        let g = (sigmoid(m) - y) / count;
        let pre = &fw.edges.pre[i][pos];
        let hidden = pre.mapv(elu);
        grad.mlp_out_w.column_mut(0).scaled_add(g, &hidden);
        grad.mlp_out_w.column_mut(1).scaled_add(-g, &hidden);
        grad.mlp_out_b[0] += g;
        grad.mlp_out_b[1] -= g;
        let d_pre: Array1<f64> = pre
            .iter()
            .zip(w_margin.iter())
            .map(|(&x, &w)| g * w * elu_grad(x))
            .collect();
        grad.mlp_hidden_b += &d_pre;
        let j = graph.neighbors[i][pos].0;
        d_src_part.row_mut(i).scaled_add(1.0, &d_pre);
        d_dst_part.row_mut(j).scaled_add(1.0, &d_pre);
    }
    loss /= count;

    let emb = &fw.embedding;
    grad.mlp_hidden_w
        .slice_mut(s![..h, ..])
        .assign(&emb.t().dot(&d_src_part));
    grad.mlp_hidden_w
        .slice_mut(s![h.., ..])
        .assign(&emb.t().dot(&d_dst_part));
    let mut d_emb = d_src_part.dot(&params.mlp_hidden_w.slice(s![..h, ..]).t())
        + d_dst_part.dot(&params.mlp_hidden_w.slice(s![h.., ..]).t());

    let hoods = neighborhoods(graph);
    for l in (0..GAT_LAYERS).rev() {
        d_emb = gat_layer_backward(&params.layers[l], &fw.layers[l], &hoods, &d_emb, &mut grad.layers[l]);
    }
    Ok((loss, grad))
}

/// Gradients with a larger global norm are rescaled to this norm.
pub const MAX_GRAD_NORM: f64 = 1.0;

/// Full-batch gradient descent with global norm clipping. Returns the trained parameters and the loss
/// evaluated before each step.
pub fn train_scorer(
    params: &ScorerParams,
    graph: &AffinityGraph,
    features: &Array2<f64>,
    labels: &[Option<usize>],
    lr: f64,
    steps: usize,
) -> Result<(ScorerParams, Vec<f64>)> {
    if steps == 0 {
        return Err(AhgcError::validation("steps", "must be at least 1"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(AhgcError::validation("lr", format!("must be positive, got {lr}")));
    }
    let mut p = params.clone();
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = scorer_loss(&p, graph, features, labels)?;
        if !loss.is_finite() {
            return Err(AhgcError::Divergence { step, loss });
        }
        trace.push(loss);
        let norm = grad.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > MAX_GRAD_NORM { MAX_GRAD_NORM / norm } else { 1.0 };
        p.add_scaled(&grad, -lr * scale);
        if !p.is_finite() {
            return Err(AhgcError::Divergence { step, loss: f64::NAN });
        }
    }
    Ok((p, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::build_knn_graph;
    use ndarray::array;

    fn random_instance(n: usize, d: usize, k: usize, seed_: u64) -> (Array2<f64>, AffinityGraph, Vec<Option<usize>>) {
        let mut rng = seed::rng(seed_);
        let f = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        let g = build_knn_graph(&f, k).unwrap();
        let labels = (0..n).map(|i| if i % 5 == 4 { None } else { Some(i % 2) }).collect();
        (f, g, labels)
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        assert_eq!(init_scorer(4, 8, 0).unwrap(), init_scorer(4, 8, 0).unwrap());
        assert_ne!(init_scorer(4, 8, 0).unwrap(), init_scorer(4, 8, 1).unwrap());
        assert!(init_scorer(0, 8, 0).is_err());
        let p = init_scorer(4, 8, 0).unwrap();
        assert!(p.layers.iter().all(|l| l.attention.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn forward_ranges() {
        let (f, g, _) = random_instance(30, 5, 6, 3);
        let p = init_scorer(5, 8, 1).unwrap();
        let ld = forward(&p, &g, &f).unwrap();
        for (prow, erow) in ld.p.iter().zip(&ld.e) {
            for (&pij, &eij) in prow.iter().zip(erow) {
                assert!(pij > 0.0 && pij < 1.0);
                assert_eq!(eij, 2.0 * pij - 1.0);
            }
        }
        assert!(ld.d.iter().all(|d| (-1.0..=1.0).contains(d)));
    }

    #[test]
    fn identical_nodes_have_symmetric_linkage() {
        let f = array![[0.3, 0.4], [0.3, 0.4]];
        let g = build_knn_graph(&f, 1).unwrap();
        let p = init_scorer(2, 6, 9).unwrap();
        let ld = forward(&p, &g, &f).unwrap();
        assert_eq!(ld.p[0][0], ld.p[1][0]);
    }

    #[test]
    fn zeroed_head_gives_zero_density() {
        let (f, g, _) = random_instance(12, 3, 4, 5);
        let mut p = init_scorer(3, 4, 0).unwrap();
        p.mlp_out_w.fill(0.0);
        let ld = forward(&p, &g, &f).unwrap();
        assert!(ld.p.iter().flatten().all(|&x| x == 0.5));
        assert!(ld.d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ground_truth_density_examples() {
        let g = AffinityGraph {
            n: 4,
            k: 3,
            neighbors: vec![vec![(1, 0.9), (2, 0.8), (3, 0.5)], vec![], vec![], vec![]],
            level: 0,
        };
        let labels = [Some(0), Some(0), Some(1), Some(0)];
        assert!((ground_truth_density(&g, &labels, 0).unwrap() - 0.2).abs() < 1e-15);
        let same = [Some(1), Some(1), Some(1), Some(1)];
        let g1 = AffinityGraph {
            neighbors: vec![vec![(1, 1.0), (2, 1.0), (3, 1.0)], vec![], vec![], vec![]],
            ..g.clone()
        };
        assert_eq!(ground_truth_density(&g1, &same, 0).unwrap(), 1.0);
        let diff = [Some(0), Some(1), Some(2), Some(3)];
        let d = ground_truth_density(&g, &diff, 0).unwrap();
        assert!((d + (0.9 + 0.8 + 0.5) / 3.0).abs() < 1e-15);
        let missing = [Some(0), None, Some(1), Some(0)];
        assert!(ground_truth_density(&g, &missing, 0).is_err());
    }

    #[test]
    fn uninformative_loss_is_ln2() {
        let (f, g, labels) = random_instance(15, 3, 4, 2);
        let mut p = init_scorer(3, 4, 0).unwrap();
        p.mlp_out_w.fill(0.0);
        let (loss, _) = scorer_loss(&p, &g, &f, &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_predictions_drive_loss_to_zero() {
        // all labels equal: every supervised edge is positive
        let (f, g, _) = random_instance(15, 3, 4, 2);
        let labels = vec![Some(0); 15];
        let mut p = init_scorer(3, 4, 0).unwrap();
        p.mlp_out_w.fill(0.0);
        p.mlp_out_b[0] = 40.0;
        let (loss, _) = scorer_loss(&p, &g, &f, &labels).unwrap();
        assert!(loss < 1e-15);
    }

    #[test]
    fn loss_needs_labeled_edges() {
        let (f, g, _) = random_instance(10, 3, 3, 2);
        let p = init_scorer(3, 4, 0).unwrap();
        let labels = vec![None; 10];
        assert!(scorer_loss(&p, &g, &f, &labels).is_err());
    }

    #[test]
    fn training_validates_and_is_deterministic() {
        let (f, g, labels) = random_instance(20, 4, 4, 8);
        let p = init_scorer(4, 6, 0).unwrap();
        assert!(train_scorer(&p, &g, &f, &labels, 0.1, 0).is_err());
        assert!(train_scorer(&p, &g, &f, &labels, 0.0, 3).is_err());
        let a = train_scorer(&p, &g, &f, &labels, 0.1, 5).unwrap();
        let b = train_scorer(&p, &g, &f, &labels, 0.1, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_scorer(3, 5, 11).unwrap();
        let file = TensorFile::from_bytes(&p.to_tensor_file().to_bytes()).unwrap();
        assert_eq!(ScorerParams::from_tensor_file(&file).unwrap(), p);
    }
}

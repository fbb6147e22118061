//! Graph-attention pairwise similarity.
//!
//! Each segment pair forms a fully connected graph (self-loops included)
//! whose nodes are the two segments' per-scale embeddings plus a learnable
//! scale indicator. Attention uses two weight vectors: one for node pairs
//! from the same segment, one for cross-segment pairs, so embeddings of
//! different scales are compared directly. After the attention layers a
//! mean readout and a logistic squashing produce a similarity in (0, 1).
//!
//! The graph is an unordered node set: every reduction below accumulates
//! same-segment nodes first and cross-segment nodes second, which makes
//! `gat_similarity(a, b)` equal `gat_similarity(b, a)` bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::affinity::{AffinityMatrix, AffinityMode};
use crate::binio;
use crate::embedding::MultiScaleEmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, matmul_seq};
use crate::scalar::Scalar;

const GATM_MAGIC: &[u8; 4] = b"GATM";

/// Pairs per work unit when building a full affinity matrix.
const PAIR_BATCH: usize = 256;

/// One attention layer: projection plus the two attention weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer<T: Scalar> {
    /// d_in × d_out projection applied after aggregation.
    pub weight: Array2<T>,
    /// Attention vector for same-segment node pairs (w1).
    pub attn_same: Array1<T>,
    /// Attention vector for cross-segment node pairs (w2).
    pub attn_cross: Array1<T>,
}

/// GAT similarity model: scale indicators, attention layers, readout.
#[derive(Debug, Clone, PartialEq)]
pub struct GatModel<T: Scalar> {
    /// One learnable vector per scale, added element-wise to input nodes.
    pub scale_indicators: Vec<Array1<T>>,
    pub layers: Vec<GatLayer<T>>,
    /// Readout vector over the final mean node representation.
    pub readout: Array1<T>,
    pub bias: T,
}

impl<T: Scalar> GatModel<T> {
    /// Fresh model: projections and attention vectors drawn uniformly from
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)], scale indicators zero (an additive
    /// identity at the start of training), readout zero so the initial
    /// similarity is exactly 0.5.
    pub fn init(dims: &[usize], num_scales: usize, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("need at least input and output dims"));
        }
        if num_scales == 0 {
            return Err(Error::config("need at least one scale"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize| -> T {
            let bound = 1.0 / (fan_in as f64).sqrt();
            T::from_f64_lossy(rng.gen_range(-bound..=bound))
        };
        let scale_indicators = (0..num_scales).map(|_| Array1::zeros(dims[0])).collect();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            let weight = Array2::from_shape_fn((d_in, d_out), |_| uniform(d_in));
            let attn_same = Array1::from_shape_fn(d_in, |_| uniform(d_in));
            let attn_cross = Array1::from_shape_fn(d_in, |_| uniform(d_in));
            layers.push(GatLayer { weight, attn_same, attn_cross });
        }
        Ok(Self {
            scale_indicators,
            layers,
            readout: Array1::zeros(*dims.last().expect("non-empty")),
            bias: T::zero(),
        })
    }

    /// Default production shape: 3 scales, widths 256 -> 128 -> 64.
    pub fn default_dims(input_dim: usize) -> Vec<usize> {
        vec![input_dim, input_dim / 2, input_dim / 4]
    }

    pub fn num_scales(&self) -> usize {
        self.scale_indicators.len()
    }

    pub fn input_dim(&self) -> usize {
        self.scale_indicators.first().map(|v| v.len()).unwrap_or(0)
    }

    /// Layer widths including the input dimension.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.ncols()));
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        for ind in &self.scale_indicators {
            if ind.len() != dims[0] {
                return Err(Error::dimension("scale indicator dim differs from input nodes"));
            }
        }
        let mut d_in = dims[0];
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.nrows() != d_in
                || layer.attn_same.len() != d_in
                || layer.attn_cross.len() != d_in
            {
                return Err(Error::dimension(format!("layer {i} expects input dim {d_in}")));
            }
            d_in = layer.weight.ncols();
        }
        if self.readout.len() != d_in {
            return Err(Error::dimension("readout dim differs from final layer"));
        }
        for (name, slice) in self.param_slices() {
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("model parameter {name}")));
            }
        }
        Ok(())
    }

    /// Parameter tensors in serialization order.
    pub fn param_slices(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (s, ind) in self.scale_indicators.iter().enumerate() {
            out.push((format!("indicator_{s}"), ind.as_slice().expect("contiguous")));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), layer.weight.as_slice().expect("contiguous")));
            out.push((format!("layer{i}.attn_same"), layer.attn_same.as_slice().expect("contiguous")));
            out.push((format!("layer{i}.attn_cross"), layer.attn_cross.as_slice().expect("contiguous")));
        }
        out.push(("readout".into(), self.readout.as_slice().expect("contiguous")));
        out.push(("bias".into(), std::slice::from_ref(&self.bias)));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        for (s, ind) in self.scale_indicators.iter_mut().enumerate() {
            out.push((format!("indicator_{s}"), ind.as_slice_mut().expect("contiguous")));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weight"), layer.weight.as_slice_mut().expect("contiguous")));
            out.push((format!("layer{i}.attn_same"), layer.attn_same.as_slice_mut().expect("contiguous")));
            out.push((format!("layer{i}.attn_cross"), layer.attn_cross.as_slice_mut().expect("contiguous")));
        }
        out.push(("readout".into(), self.readout.as_slice_mut().expect("contiguous")));
        out.push(("bias".into(), std::slice::from_mut(&mut self.bias)));
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|(_, s)| s.len()).sum()
    }

    /// Writes the "GATM" binary file plus a JSON manifest of the shapes.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_magic(&mut w, GATM_MAGIC)?;
        let dims = self.dims();
        w.write_u32::<LittleEndian>(self.num_scales() as u32)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for d in &dims {
            w.write_u32::<LittleEndian>(*d as u32)?;
        }
        for (_, slice) in self.param_slices() {
            binio::write_f32s(&mut w, slice)?;
        }

        #[derive(Serialize)]
        struct ParamInfo {
            name: String,
            len: usize,
        }
        #[derive(Serialize)]
        struct Manifest {
            scales: usize,
            dims: Vec<usize>,
            params: Vec<ParamInfo>,
            total_params: usize,
        }
        let manifest = Manifest {
            scales: self.num_scales(),
            dims,
            params: self
                .param_slices()
                .iter()
                .map(|(n, s)| ParamInfo { name: n.clone(), len: s.len() })
                .collect(),
            total_params: self.num_params(),
        };
        let manifest_path = path.with_extension("json");
        std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest).expect("serialize"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        binio::read_magic(&mut r, GATM_MAGIC, &display)?;
        let scales = r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated scales"))? as usize;
        let n_layers = r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated layers"))? as usize;
        let mut dims = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            dims.push(r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated dims"))? as usize);
        }
        let mut scale_indicators = Vec::with_capacity(scales);
        for _ in 0..scales {
            let v: Vec<T> = binio::read_f32s(&mut r, dims[0], &display)?;
            scale_indicators.push(Array1::from_vec(v));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for w in dims.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            let weight: Vec<T> = binio::read_f32s(&mut r, d_in * d_out, &display)?;
            let attn_same: Vec<T> = binio::read_f32s(&mut r, d_in, &display)?;
            let attn_cross: Vec<T> = binio::read_f32s(&mut r, d_in, &display)?;
            layers.push(GatLayer {
                weight: Array2::from_shape_vec((d_in, d_out), weight).expect("shape"),
                attn_same: Array1::from_vec(attn_same),
                attn_cross: Array1::from_vec(attn_cross),
            });
        }
        let readout: Vec<T> = binio::read_f32s(&mut r, *dims.last().expect("dims"), &display)?;
        let bias: Vec<T> = binio::read_f32s(&mut r, 1, &display)?;
        let model = Self {
            scale_indicators,
            layers,
            readout: Array1::from_vec(readout),
            bias: bias[0],
        };
        model.validate()?;
        Ok(model)
    }
}

/// The fully connected graph over one segment pair; `nodes` rows are the
/// per-scale node vectors of segment A then segment B.
#[derive(Debug, Clone)]
pub struct PairGraph<T: Scalar> {
    pub nodes: Array2<T>,
    pub num_scales: usize,
}

impl<T: Scalar> PairGraph<T> {
    pub fn num_nodes(&self) -> usize {
        2 * self.num_scales
    }

    /// Whether nodes u and v come from the same segment (self included).
    pub fn same_segment(&self, u: usize, v: usize) -> bool {
        (u < self.num_scales) == (v < self.num_scales)
    }
}

/// Builds the pair graph: node = embedding + scale indicator, element-wise.
pub fn build_pair_graph<'a, T: Scalar>(
    ms_a: &[ArrayView1<'a, T>],
    ms_b: &[ArrayView1<'a, T>],
    model: &GatModel<T>,
) -> Result<PairGraph<T>> {
    let scales = model.num_scales();
    if ms_a.len() != scales || ms_b.len() != scales {
        return Err(Error::dimension(format!(
            "expected {scales} embeddings per segment, got {} and {}",
            ms_a.len(),
            ms_b.len()
        )));
    }
    let d = model.input_dim();
    let mut nodes = Array2::<T>::zeros((2 * scales, d));
    for (s, emb) in ms_a.iter().chain(ms_b.iter()).enumerate() {
        let scale = s % scales;
        if emb.len() != d {
            return Err(Error::dimension(format!(
                "embedding dim {} differs from scale indicator dim {d}",
                emb.len()
            )));
        }
        let ind = &model.scale_indicators[scale];
        for (k, dst) in nodes.row_mut(s).iter_mut().enumerate() {
            *dst = emb[k] + ind[k];
        }
    }
    Ok(PairGraph { nodes, num_scales: scales })
}

fn half_ranges(u: usize, scales: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    if u < scales {
        (0..scales, scales..2 * scales)
    } else {
        (scales..2 * scales, 0..scales)
    }
}

/// Attention coefficients for `nodes` under one layer's attention vectors.
/// Row-stochastic; softmax is stabilized by subtracting the row maximum.
pub(crate) fn attention_alpha<T: Scalar>(
    nodes: ArrayView2<'_, T>,
    attn_same: &[T],
    attn_cross: &[T],
    scales: usize,
) -> Array2<T> {
    let n = nodes.nrows();
    let d = nodes.ncols();
    debug_assert_eq!(n, 2 * scales);
    let mut alpha = Array2::<T>::zeros((n, n));
    let mut t_same = vec![T::zero(); d];
    let mut t_cross = vec![T::zero(); d];
    let mut row = vec![T::zero(); n];
    for u in 0..n {
        let hu = nodes.row(u);
        let hu = hu.as_slice().expect("contiguous");
        for k in 0..d {
            t_same[k] = hu[k] * attn_same[k];
            t_cross[k] = hu[k] * attn_cross[k];
        }
        let (own, other) = half_ranges(u, scales);
        for v in 0..n {
            let hv = nodes.row(v);
            let hv = hv.as_slice().expect("contiguous");
            let t = if (v < scales) == (u < scales) { &t_same } else { &t_cross };
            row[v] = linalg::dot(hv, t);
        }
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        // Same-segment terms first so the sum is invariant to swapping the
        // two segments.
        let mut denom = T::zero();
        for v in own {
            denom += row[v];
        }
        for v in other {
            denom += row[v];
        }
        for v in 0..n {
            alpha[[u, v]] = row[v] / denom;
        }
    }
    alpha
}

/// `agg[u] = sum_v alpha[u][v] * nodes[v]`, same-segment terms first.
pub(crate) fn aggregate<T: Scalar>(
    alpha: &Array2<T>,
    nodes: ArrayView2<'_, T>,
    scales: usize,
) -> Array2<T> {
    let n = nodes.nrows();
    let d = nodes.ncols();
    let mut agg = Array2::<T>::zeros((n, d));
    let mut own_part = vec![T::zero(); d];
    let mut other_part = vec![T::zero(); d];
    for u in 0..n {
        own_part.iter_mut().for_each(|x| *x = T::zero());
        other_part.iter_mut().for_each(|x| *x = T::zero());
        let (own, other) = half_ranges(u, scales);
        for v in own {
            let a = alpha[[u, v]];
            let hv = nodes.row(v);
            let hv = hv.as_slice().expect("contiguous");
            for (dst, &h) in own_part.iter_mut().zip(hv) {
                *dst += a * h;
            }
        }
        for v in other {
            let a = alpha[[u, v]];
            let hv = nodes.row(v);
            let hv = hv.as_slice().expect("contiguous");
            for (dst, &h) in other_part.iter_mut().zip(hv) {
                *dst += a * h;
            }
        }
        for ((dst, &a), &b) in agg.row_mut(u).iter_mut().zip(&own_part).zip(&other_part) {
            *dst = a + b;
        }
    }
    agg
}

pub(crate) fn relu_inplace<T: Scalar>(m: &mut Array2<T>) {
    m.mapv_inplace(|v| v.max(T::zero()));
}

/// Attention coefficients of `graph` under `layer`. Exposed for
/// inspection and tests.
pub fn attention_coefficients<T: Scalar>(graph: &PairGraph<T>, layer: &GatLayer<T>) -> Array2<T> {
    attention_alpha(
        graph.nodes.view(),
        layer.attn_same.as_slice().expect("contiguous"),
        layer.attn_cross.as_slice().expect("contiguous"),
        graph.num_scales,
    )
}

/// Applies one layer with externally supplied coefficients:
/// `h' = relu((alpha · h) W)`.
pub fn gat_layer_with_alpha<T: Scalar>(
    graph: &PairGraph<T>,
    alpha: &Array2<T>,
    layer: &GatLayer<T>,
) -> PairGraph<T> {
    let agg = aggregate(alpha, graph.nodes.view(), graph.num_scales);
    let mut z = matmul_seq(agg.view(), layer.weight.view());
    relu_inplace(&mut z);
    PairGraph { nodes: z, num_scales: graph.num_scales }
}

/// One full attention layer.
pub fn gat_layer<T: Scalar>(graph: &PairGraph<T>, layer: &GatLayer<T>) -> PairGraph<T> {
    let alpha = attention_coefficients(graph, layer);
    gat_layer_with_alpha(graph, &alpha, layer)
}

/// Mean over final node vectors, segment halves summed separately so the
/// result is bit-identical under segment swap.
pub(crate) fn readout_mean<T: Scalar>(nodes: ArrayView2<'_, T>, scales: usize) -> Array1<T> {
    let d = nodes.ncols();
    let n = nodes.nrows();
    let count = T::from_f64_lossy(n as f64);
    let mut a_part = vec![T::zero(); d];
    let mut b_part = vec![T::zero(); d];
    for u in 0..scales {
        let row = nodes.row(u);
        let row = row.as_slice().expect("contiguous");
        for (dst, &h) in a_part.iter_mut().zip(row) {
            *dst += h;
        }
    }
    for u in scales..n {
        let row = nodes.row(u);
        let row = row.as_slice().expect("contiguous");
        for (dst, &h) in b_part.iter_mut().zip(row) {
            *dst += h;
        }
    }
    Array1::from_iter(a_part.iter().zip(&b_part).map(|(&a, &b)| (a + b) / count))
}

pub(crate) fn logistic<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Full cached forward pass of one pair, for training.
#[derive(Debug, Clone)]
pub(crate) struct PairForward<T: Scalar> {
    /// Node matrices at the input of each layer plus the final one.
    pub nodes: Vec<Array2<T>>,
    pub alphas: Vec<Array2<T>>,
    pub aggs: Vec<Array2<T>>,
    /// Pre-activation projections per layer.
    pub zs: Vec<Array2<T>>,
    pub mean: Array1<T>,
    pub logit: T,
    pub similarity: T,
}

pub(crate) fn forward_cached<T: Scalar>(model: &GatModel<T>, graph: PairGraph<T>) -> PairForward<T> {
    let scales = graph.num_scales;
    let mut nodes = vec![graph.nodes];
    let mut alphas = Vec::with_capacity(model.layers.len());
    let mut aggs = Vec::with_capacity(model.layers.len());
    let mut zs = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let current = nodes.last().expect("at least input nodes");
        let alpha = attention_alpha(
            current.view(),
            layer.attn_same.as_slice().expect("contiguous"),
            layer.attn_cross.as_slice().expect("contiguous"),
            scales,
        );
        let agg = aggregate(&alpha, current.view(), scales);
        let z = matmul_seq(agg.view(), layer.weight.view());
        let mut h = z.clone();
        relu_inplace(&mut h);
        alphas.push(alpha);
        aggs.push(agg);
        zs.push(z);
        nodes.push(h);
    }
    let mean = readout_mean(nodes.last().expect("final nodes").view(), scales);
    let logit = linalg::dot(
        model.readout.as_slice().expect("contiguous"),
        mean.as_slice().expect("contiguous"),
    ) + model.bias;
    PairForward {
        nodes,
        alphas,
        aggs,
        zs,
        mean,
        logit,
        similarity: logistic(logit),
    }
}

/// Similarity of two multi-scale embedding tuples in (0, 1).
pub fn gat_similarity<'a, T: Scalar>(
    model: &GatModel<T>,
    ms_a: &[ArrayView1<'a, T>],
    ms_b: &[ArrayView1<'a, T>],
) -> Result<T> {
    let graph = build_pair_graph(ms_a, ms_b, model)?;
    let scales = graph.num_scales;
    let mut nodes = graph.nodes;
    for layer in &model.layers {
        let alpha = attention_alpha(
            nodes.view(),
            layer.attn_same.as_slice().expect("contiguous"),
            layer.attn_cross.as_slice().expect("contiguous"),
            scales,
        );
        let agg = aggregate(&alpha, nodes.view(), scales);
        nodes = matmul_seq(agg.view(), layer.weight.view());
        relu_inplace(&mut nodes);
    }
    let mean = readout_mean(nodes.view(), scales);
    let logit = linalg::dot(
        model.readout.as_slice().expect("contiguous"),
        mean.as_slice().expect("contiguous"),
    ) + model.bias;
    Ok(logistic(logit))
}

/// Forward passes for a batch of pairs: nodes of all pairs are stacked and
/// each projection runs as one matrix product. Per-pair arithmetic is
/// identical to [`gat_similarity`], so results match it bit-for-bit.
fn batch_forward<T: Scalar>(
    model: &GatModel<T>,
    tuples: &[Vec<ArrayView1<'_, T>>],
    pairs: &[(u32, u32)],
    out: &mut [T],
) {
    let scales = model.num_scales();
    let nodes_per_pair = 2 * scales;
    let d = model.input_dim();
    let b = pairs.len();
    let mut stacked = Array2::<T>::zeros((b * nodes_per_pair, d));
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let base = p * nodes_per_pair;
        for (s, emb) in tuples[i as usize].iter().chain(tuples[j as usize].iter()).enumerate() {
            let ind = &model.scale_indicators[s % scales];
            for (k, dst) in stacked.row_mut(base + s).iter_mut().enumerate() {
                *dst = emb[k] + ind[k];
            }
        }
    }
    for layer in &model.layers {
        let d_in = layer.weight.nrows();
        let mut agg_stacked = Array2::<T>::zeros((b * nodes_per_pair, d_in));
        for p in 0..b {
            let block = stacked.slice(ndarray::s![p * nodes_per_pair..(p + 1) * nodes_per_pair, ..]);
            let alpha = attention_alpha(
                block,
                layer.attn_same.as_slice().expect("contiguous"),
                layer.attn_cross.as_slice().expect("contiguous"),
                scales,
            );
            let agg = aggregate(&alpha, block, scales);
            agg_stacked
                .slice_mut(ndarray::s![p * nodes_per_pair..(p + 1) * nodes_per_pair, ..])
                .assign(&agg);
        }
        stacked = matmul_seq(agg_stacked.view(), layer.weight.view());
        relu_inplace(&mut stacked);
    }
    for (p, slot) in out.iter_mut().enumerate() {
        let block = stacked.slice(ndarray::s![p * nodes_per_pair..(p + 1) * nodes_per_pair, ..]);
        let mean = readout_mean(block, scales);
        let logit = linalg::dot(
            model.readout.as_slice().expect("contiguous"),
            mean.as_slice().expect("contiguous"),
        ) + model.bias;
        *slot = logistic(logit);
    }
}

/// Builds the L×L GAT affinity matrix over all unordered pairs (diagonal
/// included as Sim(i, i)). Pairs are processed in fixed-size batches that
/// parallelize across the rayon pool; output is independent of worker
/// count because every pair's arithmetic is self-contained.
pub fn build_gat_affinity<T: Scalar>(
    set: &MultiScaleEmbeddingSet<T>,
    model: &GatModel<T>,
) -> Result<AffinityMatrix<T>> {
    model.validate()?;
    if set.num_scales() != model.num_scales() {
        return Err(Error::dimension(format!(
            "set has {} scales but model expects {}",
            set.num_scales(),
            model.num_scales()
        )));
    }
    if set.dim() != model.input_dim() {
        return Err(Error::dimension(format!(
            "embedding dim {} but model input dim {}",
            set.dim(),
            model.input_dim()
        )));
    }
    let l = set.num_base_segments();
    let tuples: Vec<Vec<ArrayView1<'_, T>>> = (0..l).map(|i| set.tuple(i)).collect();
    let mut pairs = Vec::with_capacity(l * (l + 1) / 2);
    for i in 0..l as u32 {
        for j in i..l as u32 {
            pairs.push((i, j));
        }
    }
    let mut sims = vec![T::zero(); pairs.len()];
    sims.par_chunks_mut(PAIR_BATCH)
        .zip(pairs.par_chunks(PAIR_BATCH))
        .for_each(|(out, chunk)| batch_forward(model, &tuples, chunk, out));

    let mut values = Array2::<T>::zeros((l, l));
    for (&(i, j), &s) in pairs.iter().zip(&sims) {
        values[[i as usize, j as usize]] = s;
        values[[j as usize, i as usize]] = s;
    }
    AffinityMatrix::new(values, AffinityMode::Gat)
}

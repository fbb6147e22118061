//! Training of the GAT similarity model: pair construction from reference
//! annotations, balanced batch sampling, binary cross-entropy loss, and
//! first-order adaptive-moment optimization with a cosine-annealed step
//! size. Gradients are reverse-mode, derived through the attention,
//! aggregation, projection and readout equations.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::MultiScaleEmbeddingSet;
use crate::error::{Error, Result};
use crate::gat::{build_pair_graph, forward_cached, GatModel, PairForward};
use crate::linalg::matmul_seq;
use crate::rttm::Annotation;
use crate::scalar::Scalar;

/// One training pair: two base segments of one session plus the
/// same-speaker label. Embedding tuples are resolved through the session's
/// multi-scale set (same-midpoint alignment across scales).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub session: usize,
    pub a: usize,
    pub b: usize,
    /// true = same speaker (label 1), false = different speakers (label 0).
    pub positive: bool,
}

/// Pairs across one or more sessions, with the sets that back them.
#[derive(Debug)]
pub struct TrainingData<T: Scalar> {
    pub sessions: Vec<MultiScaleEmbeddingSet<T>>,
    pub pairs: Vec<TrainingPair>,
}

impl<T: Scalar> TrainingData<T> {
    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.positive).collect()
    }

    pub fn dim(&self) -> usize {
        self.sessions.first().map(|s| s.dim()).unwrap_or(0)
    }

    pub fn num_scales(&self) -> usize {
        self.sessions.first().map(|s| s.num_scales()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PairOptions {
    /// Segments whose non-majority speech exceeds this fraction of their
    /// duration are discarded as ambiguous.
    pub ambiguity_threshold: f64,
    /// Optional cap on pairs kept per speaker combination (seeded sample).
    pub cap_per_combination: Option<usize>,
    pub seed: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self { ambiguity_threshold: 0.2, cap_per_combination: None, seed: 0 }
    }
}

/// Majority-overlap speaker index per base segment; `None` marks segments
/// with no speech overlap or with more than the allowed overlap ambiguity.
pub fn label_base_segments<T: Scalar>(
    annotation: &Annotation,
    set: &MultiScaleEmbeddingSet<T>,
    ambiguity_threshold: f64,
) -> Vec<Option<usize>> {
    let speakers: Vec<&str> = annotation.speakers();
    set.base_segments()
        .iter()
        .map(|seg| {
            let mut overlap = vec![0.0f64; speakers.len()];
            for t in &annotation.turns {
                let o = (seg.offset.min(t.offset) - seg.onset.max(t.onset)).max(0.0);
                if o > 0.0 {
                    let idx = speakers.iter().position(|s| *s == t.speaker).expect("known speaker");
                    overlap[idx] += o;
                }
            }
            let total: f64 = overlap.iter().sum();
            let (best, &best_overlap) = overlap
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))?;
            if best_overlap <= 0.0 {
                return None;
            }
            let ambiguity = (total - best_overlap) / seg.duration();
            (ambiguity <= ambiguity_threshold).then_some(best)
        })
        .collect()
}

/// Builds labelled pairs from one session: all within-speaker combinations
/// as positives and all cross-speaker combinations as negatives, drawn from
/// unambiguous single-speaker segments only. A session with fewer than two
/// speakers yields only positives.
pub fn build_pairs<T: Scalar>(
    annotation: &Annotation,
    set: &MultiScaleEmbeddingSet<T>,
    options: &PairOptions,
) -> Result<Vec<TrainingPair>> {
    if annotation.is_empty() {
        return Err(Error::invalid_input("cannot build pairs from an empty annotation"));
    }
    let labels = label_base_segments(annotation, set, options.ambiguity_threshold);
    let num_speakers = annotation.speakers().len();
    let mut by_speaker: Vec<Vec<usize>> = vec![Vec::new(); num_speakers];
    for (i, label) in labels.iter().enumerate() {
        if let Some(s) = label {
            by_speaker[*s].push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut cap_sample = |mut combo: Vec<(usize, usize)>| -> Vec<(usize, usize)> {
        if let Some(cap) = options.cap_per_combination {
            if combo.len() > cap {
                combo.shuffle(&mut rng);
                combo.truncate(cap);
                combo.sort_unstable();
            }
        }
        combo
    };

    let mut pairs = Vec::new();
    for s in 0..num_speakers {
        let segs = &by_speaker[s];
        let mut combo = Vec::with_capacity(segs.len().saturating_sub(1) * segs.len() / 2);
        for i in 0..segs.len() {
            for j in (i + 1)..segs.len() {
                combo.push((segs[i], segs[j]));
            }
        }
        for (a, b) in cap_sample(combo) {
            pairs.push(TrainingPair { session: 0, a, b, positive: true });
        }
    }
    for s in 0..num_speakers {
        for t in (s + 1)..num_speakers {
            let mut combo = Vec::with_capacity(by_speaker[s].len() * by_speaker[t].len());
            for &a in &by_speaker[s] {
                for &b in &by_speaker[t] {
                    combo.push((a, b));
                }
            }
            for (a, b) in cap_sample(combo) {
                pairs.push(TrainingPair { session: 0, a, b, positive: false });
            }
        }
    }
    Ok(pairs)
}

/// Assembles multi-session training data.
pub fn build_training_data<T: Scalar>(
    sessions: Vec<(Annotation, MultiScaleEmbeddingSet<T>)>,
    options: &PairOptions,
) -> Result<TrainingData<T>> {
    let mut sets = Vec::with_capacity(sessions.len());
    let mut pairs = Vec::new();
    for (idx, (annotation, set)) in sessions.into_iter().enumerate() {
        let opts = PairOptions { seed: options.seed.wrapping_add(idx as u64), ..*options };
        for mut p in build_pairs(&annotation, &set, &opts)? {
            p.session = idx;
            pairs.push(p);
        }
        sets.push(set);
    }
    Ok(TrainingData { sessions: sets, pairs })
}

/// One epoch of balanced batches: each batch holds ceil(batch/2) positives
/// and floor(batch/2) negatives as indices into `labels`. The scarcer side
/// is resampled by cycling reshuffled permutations, so within an epoch no
/// pair repeats more often than the ceiling of drawn/available.
pub fn balanced_batches(labels: &[bool], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    balanced_batches_with_rng(labels, batch_size, &mut rng)
}

fn balanced_batches_with_rng(
    labels: &[bool],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::config("batch size must be >= 2"));
    }
    let positives: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i).collect();
    let negatives: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| !l).map(|(i, _)| i).collect();
    if positives.is_empty() {
        return Err(Error::config("no positive pairs to sample"));
    }
    if negatives.is_empty() {
        return Err(Error::config("no negative pairs to sample"));
    }
    let pos_per = batch_size.div_ceil(2);
    let neg_per = batch_size / 2;
    let num_batches = (positives.len().div_ceil(pos_per)).max(negatives.len().div_ceil(neg_per));

    struct Cycler {
        pool: Vec<usize>,
        order: Vec<usize>,
        cursor: usize,
    }
    impl Cycler {
        fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
            if self.cursor == self.order.len() {
                self.order.copy_from_slice(&self.pool);
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            self.cursor += 1;
            self.order[self.cursor - 1]
        }
    }
    let mut make = |pool: &[usize]| {
        let mut order = pool.to_vec();
        order.shuffle(rng);
        Cycler { pool: pool.to_vec(), order, cursor: 0 }
    };
    let mut pos_cycle = make(&positives);
    let mut neg_cycle = make(&negatives);

    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..pos_per {
            batch.push(pos_cycle.next(rng));
        }
        for _ in 0..neg_per {
            batch.push(neg_cycle.next(rng));
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Hidden layer widths after the input dimension.
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 50,
            initial_lr: 1e-4,
            hidden_dims: vec![128, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::config("need at least one hidden layer"));
        }
        Ok(())
    }
}

/// Per-step log record (line-delimited JSON in the CLI).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Gradients with the same layout as the model parameters.
pub(crate) struct GatGradients<T: Scalar> {
    indicators: Vec<Array1<T>>,
    /// (d_weight, d_attn_same, d_attn_cross) per layer.
    layers: Vec<(Array2<T>, Array1<T>, Array1<T>)>,
    readout: Array1<T>,
    bias: T,
}

impl<T: Scalar> GatGradients<T> {
    pub(crate) fn zeros_like(model: &GatModel<T>) -> Self {
        Self {
            indicators: model.scale_indicators.iter().map(|v| Array1::zeros(v.len())).collect(),
            layers: model
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weight.dim()),
                        Array1::zeros(l.attn_same.len()),
                        Array1::zeros(l.attn_cross.len()),
                    )
                })
                .collect(),
            readout: Array1::zeros(model.readout.len()),
            bias: T::zero(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.indicators.iter_mut().zip(&other.indicators) {
            *a += b;
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.0 += &b.0;
            a.1 += &b.1;
            a.2 += &b.2;
        }
        self.readout += &other.readout;
        self.bias += other.bias;
    }

    /// Flattened views in the same order as `GatModel::param_slices`.
    pub(crate) fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for ind in &self.indicators {
            out.push(ind.as_slice().expect("contiguous"));
        }
        for (w, s, c) in &self.layers {
            out.push(w.as_slice().expect("contiguous"));
            out.push(s.as_slice().expect("contiguous"));
            out.push(c.as_slice().expect("contiguous"));
        }
        out.push(self.readout.as_slice().expect("contiguous"));
        out.push(std::slice::from_ref(&self.bias));
        out
    }
}

/// Numerically stable binary cross-entropy from the pre-squash logit.
pub(crate) fn bce_from_logit<T: Scalar>(logit: T, positive: bool) -> T {
    let y = if positive { T::one() } else { T::zero() };
    logit.max(T::zero()) - logit * y + (T::one() + (-logit.abs()).exp()).ln()
}

/// Reverse-mode gradients of one pair's loss with respect to every model
/// parameter. `dlogit` is dLoss/dlogit = sigmoid(logit) - label.
pub(crate) fn backward<T: Scalar>(
    model: &GatModel<T>,
    fwd: &PairForward<T>,
    dlogit: T,
) -> GatGradients<T> {
    let scales = model.num_scales();
    let n = 2 * scales;
    let mut grads = GatGradients::zeros_like(model);

    // Readout: logit = r . mean + b, mean = (1/n) sum_u h_u.
    for (g, &m) in grads.readout.iter_mut().zip(fwd.mean.iter()) {
        *g = dlogit * m;
    }
    grads.bias = dlogit;
    let inv_n = T::one() / T::from_f64_lossy(n as f64);
    let final_dim = model.readout.len();
    let mut dh = Array2::<T>::zeros((n, final_dim));
    for mut row in dh.rows_mut() {
        for (d, &r) in row.iter_mut().zip(model.readout.iter()) {
            *d = dlogit * r * inv_n;
        }
    }

    for (l, layer) in model.layers.iter().enumerate().rev() {
        let h = &fwd.nodes[l];
        let alpha = &fwd.alphas[l];
        let agg = &fwd.aggs[l];
        let z = &fwd.zs[l];

        // Rectifier gate.
        let mut dz = dh;
        dz.zip_mut_with(z, |d, &zv| {
            if zv <= T::zero() {
                *d = T::zero();
            }
        });

        // z = agg W: dW = agg^T dz, dagg = dz W^T.
        grads.layers[l].0 = matmul_seq(agg.t(), dz.view());
        let dagg = matmul_seq(dz.view(), layer.weight.t());

        // agg = alpha h: dalpha = dagg h^T, dh += alpha^T dagg.
        let dalpha = matmul_seq(dagg.view(), h.t());
        let mut dh_prev = matmul_seq(alpha.t(), dagg.view());

        // Softmax rows: dg[u][v] = alpha[u][v] (dalpha[u][v] - sum_w dalpha[u][w] alpha[u][w]).
        let mut dg = Array2::<T>::zeros((n, n));
        for u in 0..n {
            let mut dot = T::zero();
            for v in 0..n {
                dot += dalpha[[u, v]] * alpha[[u, v]];
            }
            for v in 0..n {
                dg[[u, v]] = alpha[[u, v]] * (dalpha[[u, v]] - dot);
            }
        }

        // g[u][v] = sum_k h[u][k] h[v][k] w_sel[k].
        let d_in = layer.weight.nrows();
        let mut d_same = vec![T::zero(); d_in];
        let mut d_cross = vec![T::zero(); d_in];
        for u in 0..n {
            for v in 0..n {
                let d = dg[[u, v]];
                if d == T::zero() {
                    continue;
                }
                let same = (u < scales) == (v < scales);
                let w = if same { &layer.attn_same } else { &layer.attn_cross };
                let acc = if same { &mut d_same } else { &mut d_cross };
                for k in 0..d_in {
                    let hu = h[[u, k]];
                    let hv = h[[v, k]];
                    dh_prev[[u, k]] += d * hv * w[k];
                    dh_prev[[v, k]] += d * hu * w[k];
                    acc[k] += d * hu * hv;
                }
            }
        }
        for (g, v) in grads.layers[l].1.iter_mut().zip(&d_same) {
            *g = *v;
        }
        for (g, v) in grads.layers[l].2.iter_mut().zip(&d_cross) {
            *g = *v;
        }

        dh = dh_prev;
    }

    // Input nodes are embedding + indicator; only indicators are learnable.
    for s in 0..scales {
        for k in 0..model.input_dim() {
            grads.indicators[s][k] = dh[[s, k]] + dh[[scales + s, k]];
        }
    }
    grads
}

/// Adam moments per parameter tensor.
struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: usize,
}

impl<T: Scalar> AdamState<T> {
    fn new(model: &GatModel<T>) -> Self {
        let shapes: Vec<usize> = model.param_slices().iter().map(|(_, s)| s.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut GatModel<T>, grads: &GatGradients<T>, lr: T) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let b1 = T::from_f64_lossy(BETA1);
        let b2 = T::from_f64_lossy(BETA2);
        let eps = T::from_f64_lossy(EPS);
        let bc1 = T::one() - T::from_f64_lossy(BETA1.powi(self.step as i32));
        let bc2 = T::one() - T::from_f64_lossy(BETA2.powi(self.step as i32));
        let grad_slices = grads.param_slices();
        for ((params, grad), (m, v)) in model
            .param_slices_mut()
            .into_iter()
            .map(|(_, s)| s)
            .zip(grad_slices)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn cosine_lr(initial: f64, step: usize, total: usize) -> f64 {
    initial * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

fn pair_views<'a, T: Scalar>(
    data: &'a TrainingData<T>,
    pair: &TrainingPair,
) -> (Vec<ndarray::ArrayView1<'a, T>>, Vec<ndarray::ArrayView1<'a, T>>) {
    let set = &data.sessions[pair.session];
    (set.tuple(pair.a), set.tuple(pair.b))
}

/// Mean BCE of the model over the given pairs.
pub fn evaluate_loss<T: Scalar>(
    model: &GatModel<T>,
    data: &TrainingData<T>,
    pairs: &[TrainingPair],
) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::invalid_input("no pairs to evaluate"));
    }
    let mut total = T::zero();
    for pair in pairs {
        let (a, b) = pair_views(data, pair);
        let graph = build_pair_graph(&a, &b, model)?;
        let fwd = forward_cached(model, graph);
        total += bce_from_logit(fwd.logit, pair.positive);
    }
    Ok(total / T::from_f64_lossy(pairs.len() as f64))
}

/// Rank-based AUC of positive over negative similarity scores.
pub fn pair_auc(positive_scores: &[f64], negative_scores: &[f64]) -> f64 {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0f64;
    for &p in positive_scores {
        for &n in negative_scores {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positive_scores.len() as f64 * negative_scores.len() as f64)
}

/// Trains a fresh model, streaming per-step records to `log`.
///
/// Per-pair gradients inside a batch are computed in parallel and reduced
/// in pair order, so training is bit-reproducible for a fixed seed
/// regardless of worker count.
pub fn train_with_logger<T: Scalar>(
    data: &TrainingData<T>,
    cfg: &TrainConfig,
    mut log: impl FnMut(&StepLog),
) -> Result<GatModel<T>> {
    cfg.validate()?;
    if data.sessions.is_empty() || data.pairs.is_empty() {
        return Err(Error::invalid_input("empty training data"));
    }
    let dim = data.dim();
    let scales = data.num_scales();
    for set in &data.sessions {
        if set.dim() != dim || set.num_scales() != scales {
            return Err(Error::dimension("sessions disagree on embedding dim or scale count"));
        }
    }
    let mut dims = vec![dim];
    dims.extend(cfg.hidden_dims.iter().copied());
    let mut model = GatModel::<T>::init(&dims, scales, cfg.seed)?;

    let labels = data.labels();
    let batches_per_epoch = balanced_batches(&labels, cfg.batch_size, cfg.seed)?.len();
    let total_steps = batches_per_epoch * cfg.epochs;

    let mut adam = AdamState::new(&model);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let batches = balanced_batches_with_rng(&labels, cfg.batch_size, &mut batch_rng)?;
        for batch in batches {
            let lr = cosine_lr(cfg.initial_lr, step, total_steps);
            let scale = T::one() / T::from_f64_lossy(batch.len() as f64);

            let results: Vec<Result<(GatGradients<T>, T)>> = batch
                .par_iter()
                .map(|&idx| {
                    let pair = &data.pairs[idx];
                    let (a, b) = pair_views(data, pair);
                    let graph = build_pair_graph(&a, &b, &model)?;
                    let fwd = forward_cached(&model, graph);
                    let loss = bce_from_logit(fwd.logit, pair.positive);
                    let y = if pair.positive { T::one() } else { T::zero() };
                    let dlogit = (fwd.similarity - y) * scale;
                    Ok((backward(&model, &fwd, dlogit), loss * scale))
                })
                .collect();

            let mut grads = GatGradients::zeros_like(&model);
            let mut loss = T::zero();
            for r in results {
                let (g, l) = r?;
                grads.add_assign(&g);
                loss += l;
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at step {step} (epoch {epoch})"
                )));
            }
            adam.update(&mut model, &grads, T::from_f64_lossy(lr));
            log(&StepLog { step, epoch, lr, loss: loss.to_f64_lossy() });
            step += 1;
        }
    }
    Ok(model)
}

/// Trains a fresh model (no logging).
pub fn train<T: Scalar>(data: &TrainingData<T>, cfg: &TrainConfig) -> Result<GatModel<T>> {
    train_with_logger(data, cfg, |_| {})
}

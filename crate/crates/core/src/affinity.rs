//! Affinity matrices over base-scale segments.
//!
//! The baseline multi-scale affinity is a weighted sum of per-scale cosine
//! similarities; a single-scale affinity is its degenerate case with one
//! nonzero weight.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::binio;
use crate::embedding::MultiScaleEmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

const AFFM_MAGIC: &[u8; 4] = b"AFFM";
const SYMMETRY_TOL: f64 = 1e-9;

/// How an affinity matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    Fusion,
    Gat,
}

/// L×L symmetric similarity matrix over base-scale segments.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T: Scalar> {
    values: Array2<T>,
    mode: AffinityMode,
}

impl<T: Scalar> AffinityMatrix<T> {
    pub fn new(values: Array2<T>, mode: AffinityMode) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows != cols {
            return Err(Error::dimension(format!("affinity matrix is {rows}x{cols}")));
        }
        let tol = T::from_f64_lossy(SYMMETRY_TOL);
        for i in 0..rows {
            for j in 0..i {
                let a = values[[i, j]];
                let b = values[[j, i]];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NonFinite(format!("affinity entry ({i}, {j})")));
                }
                if (a - b).abs() > tol {
                    return Err(Error::invalid_input(format!(
                        "affinity not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
            if !values[[i, i]].is_finite() {
                return Err(Error::NonFinite(format!("affinity diagonal {i}")));
            }
        }
        Ok(Self { values, mode })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn mode(&self) -> AffinityMode {
        self.mode
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    /// Writes the "AFFM" binary format (same layout as embedding files).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_magic(&mut w, AFFM_MAGIC)?;
        w.write_u32::<LittleEndian>(self.values.nrows() as u32)?;
        w.write_u32::<LittleEndian>(self.values.ncols() as u32)?;
        binio::write_f32s(&mut w, self.values.as_slice().expect("standard layout"))?;
        Ok(())
    }

    pub fn load(path: &Path, mode: AffinityMode) -> Result<Self> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        binio::read_magic(&mut r, AFFM_MAGIC, &display)?;
        let rows = r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated rows"))? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated cols"))? as usize;
        let values: Vec<T> = binio::read_f32s(&mut r, rows * cols, &display)?;
        Self::new(Array2::from_shape_vec((rows, cols), values).expect("shape"), mode)
    }
}

/// Per-scale weights of the cosine fusion (Fusion mode baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<T: Scalar>(Vec<T>);

impl<T: Scalar> FusionWeights<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("fusion weights are empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::config("fusion weights must be finite and non-negative"));
        }
        if weights.iter().all(|w| *w == T::zero()) {
            return Err(Error::config("at least one fusion weight must be positive"));
        }
        Ok(Self(weights))
    }

    /// Equal weights 1/n for an n-scale set.
    pub fn uniform(num_scales: usize) -> Self {
        let w = T::one() / T::from_f64_lossy(num_scales as f64);
        Self(vec![w; num_scales])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn sum(&self) -> T {
        self.0.iter().cloned().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn cosine<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<T> {
    let a = a.as_slice().expect("contiguous row");
    let b = b.as_slice().expect("contiguous row");
    let na = linalg::norm2(a);
    let nb = linalg::norm2(b);
    if na <= T::zero() || nb <= T::zero() {
        return Err(Error::invalid_input("cosine of a zero vector is undefined"));
    }
    Ok(linalg::dot(a, b) / (na * nb))
}

/// Weighted sum of per-scale cosine similarities between two multi-scale
/// embedding tuples.
pub fn fusion_similarity<T: Scalar>(
    ms_a: &[ArrayView1<'_, T>],
    ms_b: &[ArrayView1<'_, T>],
    weights: &FusionWeights<T>,
) -> Result<T> {
    if ms_a.len() != weights.len() || ms_b.len() != weights.len() {
        return Err(Error::dimension(format!(
            "tuple sizes {} / {} do not match {} weights",
            ms_a.len(),
            ms_b.len(),
            weights.len()
        )));
    }
    let mut total = T::zero();
    for ((a, b), &w) in ms_a.iter().zip(ms_b).zip(weights.as_slice()) {
        total += w * cosine(*a, *b)?;
    }
    Ok(total)
}

/// Builds the L×L fusion affinity: upper triangle computed and mirrored;
/// the diagonal is set analytically to the weight sum.
pub fn build_fusion_affinity<T: Scalar>(
    set: &MultiScaleEmbeddingSet<T>,
    weights: &FusionWeights<T>,
) -> Result<AffinityMatrix<T>> {
    if weights.len() != set.num_scales() {
        return Err(Error::dimension(format!(
            "{} fusion weights for {} scales",
            weights.len(),
            set.num_scales()
        )));
    }
    let l = set.num_base_segments();
    let mut values = Array2::<T>::zeros((l, l));

    // Rows of the set are unit-normalized at construction, so the cosine is
    // a plain dot product here.
    let tuples: Vec<Vec<ArrayView1<'_, T>>> = (0..l).map(|i| set.tuple(i)).collect();
    let w = weights.as_slice();

    let rows: Vec<Vec<T>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![T::zero(); l];
            for (j, item) in row.iter_mut().enumerate().skip(i + 1) {
                let mut total = T::zero();
                for (s, &ws) in w.iter().enumerate() {
                    if ws == T::zero() {
                        continue;
                    }
                    let a = tuples[i][s].as_slice().expect("contiguous");
                    let b = tuples[j][s].as_slice().expect("contiguous");
                    total += ws * linalg::dot(a, b);
                }
                *item = total;
            }
            row
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate().skip(i + 1) {
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
        values[[i, i]] = weights.sum();
    }
    AffinityMatrix::new(values, AffinityMode::Fusion)
}

/// Pairwise-cosine affinity of the rows of `x` (used after enhancement).
/// Rows need not be unit length; zero rows are an error naming the row.
pub fn cosine_affinity<T: Scalar>(x: ArrayView2<'_, T>) -> Result<AffinityMatrix<T>> {
    let l = x.nrows();
    let mut norms = Vec::with_capacity(l);
    for (i, row) in x.rows().into_iter().enumerate() {
        let n = linalg::norm2(row.as_slice().expect("contiguous"));
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::invalid_input(format!("row {i} has invalid norm")));
        }
        norms.push(n);
    }
    let mut values = Array2::<T>::zeros((l, l));
    for i in 0..l {
        values[[i, i]] = T::one();
        for j in (i + 1)..l {
            let c = linalg::dot(
                x.row(i).as_slice().expect("contiguous"),
                x.row(j).as_slice().expect("contiguous"),
            ) / (norms[i] * norms[j]);
            values[[i, j]] = c;
            values[[j, i]] = c;
        }
    }
    AffinityMatrix::new(values, AffinityMode::Fusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{synthesize_session, SyntheticSessionSpec};
    use crate::segmentation::default_scale_set;
    use ndarray::{array, Array1};

    fn views(rows: &[Array1<f64>]) -> Vec<ArrayView1<'_, f64>> {
        rows.iter().map(|r| r.view()).collect()
    }

    #[test]
    fn identical_tuples_score_weight_sum() {
        let rows = vec![
            Array1::from_vec(vec![1.0, 0.0, 0.0]),
            Array1::from_vec(vec![0.0, 1.0, 0.0]),
            Array1::from_vec(vec![0.0, 0.0, 1.0]),
        ];
        let w = FusionWeights::uniform(3);
        let s = fusion_similarity(&views(&rows), &views(&rows), &w).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_tuples_score_zero() {
        let a = vec![
            Array1::from_vec(vec![1.0, 0.0]),
            Array1::from_vec(vec![1.0, 0.0]),
            Array1::from_vec(vec![1.0, 0.0]),
        ];
        let b = vec![
            Array1::from_vec(vec![0.0, 1.0]),
            Array1::from_vec(vec![0.0, 1.0]),
            Array1::from_vec(vec![0.0, 1.0]),
        ];
        let w = FusionWeights::new(vec![0.5, 0.25, 0.25]).unwrap();
        let s = fusion_similarity(&views(&a), &views(&b), &w).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_matches_hand_computation() {
        // Per-scale cosines 0.9, 0.8, 0.7 built from planar rotations;
        // weights (0.2, 0.3, 0.5) must give 0.2*0.9 + 0.3*0.8 + 0.5*0.7 = 0.77.
        let make = |c: f64| {
            (
                Array1::from_vec(vec![1.0, 0.0]),
                Array1::from_vec(vec![c, (1.0 - c * c).sqrt()]),
            )
        };
        let (a1, b1) = make(0.9);
        let (a2, b2) = make(0.8);
        let (a3, b3) = make(0.7);
        let a = vec![a1, a2, a3];
        let b = vec![b1, b2, b3];
        let w = FusionWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let s = fusion_similarity(&views(&a), &views(&b), &w).unwrap();
        assert!((s - 0.77).abs() < 1e-12, "got {s}");
    }

    #[test]
    fn zero_vector_is_an_input_error() {
        let a = vec![Array1::from_vec(vec![0.0, 0.0])];
        let b = vec![Array1::from_vec(vec![1.0, 0.0])];
        let w = FusionWeights::new(vec![1.0]).unwrap();
        assert!(fusion_similarity(&views(&a), &views(&b), &w).is_err());
    }

    #[test]
    fn affinity_matches_naive_double_loop() {
        let spec = SyntheticSessionSpec { seed: 3, num_turns: 6, ..Default::default() };
        let (set, _, _) = synthesize_session::<f64>(&spec, &default_scale_set()).unwrap();
        let w = FusionWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let m = build_fusion_affinity(&set, &w).unwrap();
        let l = set.num_base_segments();
        assert!(l >= 10);
        for i in 0..l {
            for j in 0..l {
                let expect = if i == j {
                    w.sum()
                } else {
                    fusion_similarity(&set.tuple(i), &set.tuple(j), &w).unwrap()
                };
                assert!(
                    (m.values()[[i, j]] - expect).abs() < 1e-9,
                    "entry ({i},{j}): {} vs {expect}",
                    m.values()[[i, j]]
                );
            }
        }
    }

    #[test]
    fn single_nonzero_weight_equals_single_scale_matrix() {
        let spec = SyntheticSessionSpec { seed: 5, num_turns: 5, ..Default::default() };
        let (set, _, _) = synthesize_session::<f64>(&spec, &default_scale_set()).unwrap();
        let w = FusionWeights::new(vec![0.0, 0.0, 1.0]).unwrap();
        let m = build_fusion_affinity(&set, &w).unwrap();
        let l = set.num_base_segments();
        for i in 0..l {
            for j in 0..l {
                if i == j {
                    continue;
                }
                let a = set.tuple(i)[2];
                let b = set.tuple(j)[2];
                let c: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                assert!((m.values()[[i, j]] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_weights_scales_matrix_and_keeps_argmax() {
        let spec = SyntheticSessionSpec { seed: 11, num_turns: 5, ..Default::default() };
        let (set, _, _) = synthesize_session::<f64>(&spec, &default_scale_set()).unwrap();
        let w1 = FusionWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let w2 = FusionWeights::new(vec![0.4, 0.6, 1.0]).unwrap();
        let m1 = build_fusion_affinity(&set, &w1).unwrap();
        let m2 = build_fusion_affinity(&set, &w2).unwrap();
        let l = set.num_base_segments();
        let mut argmax1 = (0, 0);
        let mut argmax2 = (0, 0);
        let mut best1 = f64::NEG_INFINITY;
        let mut best2 = f64::NEG_INFINITY;
        for i in 0..l {
            for j in 0..l {
                assert!((m2.values()[[i, j]] - 2.0 * m1.values()[[i, j]]).abs() < 1e-9);
                if i != j {
                    if m1.values()[[i, j]] > best1 {
                        best1 = m1.values()[[i, j]];
                        argmax1 = (i, j);
                    }
                    if m2.values()[[i, j]] > best2 {
                        best2 = m2.values()[[i, j]];
                        argmax2 = (i, j);
                    }
                }
            }
        }
        assert_eq!(argmax1, argmax2);
    }

    #[test]
    fn one_segment_set_gives_weight_sum() {
        let scales = vec![crate::segmentation::ScaleConfig { window: 0.5, shift: 0.25, is_base: true }];
        let segs = vec![vec![crate::segmentation::Segment {
            scale_index: 0,
            onset: 0.0,
            offset: 0.5,
            midpoint: 0.25,
        }]];
        let m = Array2::from_shape_vec((1, 4), vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let set = MultiScaleEmbeddingSet::from_matrices("one", scales, segs, vec![m]).unwrap();
        let w = FusionWeights::<f64>::new(vec![0.7]).unwrap();
        let aff = build_fusion_affinity(&set, &w).unwrap();
        assert_eq!(aff.len(), 1);
        assert!((aff.values()[[0, 0]] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn affm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.affm");
        let values = array![[1.0_f32, 0.25], [0.25, 1.0]];
        let m = AffinityMatrix::new(values, AffinityMode::Fusion).unwrap();
        m.save(&path).unwrap();
        let back = AffinityMatrix::<f32>::load(&path, AffinityMode::Fusion).unwrap();
        assert_eq!(back.values(), m.values());
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let values = array![[1.0_f64, 0.2], [0.3, 1.0]];
        assert!(AffinityMatrix::new(values, AffinityMode::Fusion).is_err());
    }
}

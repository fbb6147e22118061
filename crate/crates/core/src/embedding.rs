//! Multi-scale speaker embedding storage, binary IO, and the synthetic
//! session generator used for tests and desk-scale training.
//!
//! Embedding file per scale ("MSEB"): magic, `version: u32`, `rows: u32`,
//! `dim: u32`, then rows×dim little-endian f32, row-major. A JSON sidecar
//! carries the scale parameters and per-row segment times.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::rttm::{Annotation, Turn};
use crate::scalar::Scalar;
use crate::segmentation::{
    build_scale_mapping, merge_into_regions, segment_all_scales, validate_scale_set, ScaleConfig,
    ScaleMapping, Segment, SpeechRegion,
};
use crate::EMBEDDING_DIM;

const MSEB_MAGIC: &[u8; 4] = b"MSEB";

/// One speaker embedding row with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T: Scalar> {
    pub values: Array1<T>,
    pub scale_index: usize,
    pub segment_index: usize,
}

/// Validated, unit-normalized per-scale embedding matrices plus the
/// cross-scale mapping. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MultiScaleEmbeddingSet<T: Scalar> {
    session: String,
    scales: Vec<ScaleConfig>,
    base_scale: usize,
    segments: Vec<Vec<Segment>>,
    matrices: Vec<Array2<T>>,
    mapping: ScaleMapping,
}

impl<T: Scalar> MultiScaleEmbeddingSet<T> {
    /// Builds a set from raw per-scale matrices. Rows are unit-normalized;
    /// zero or non-finite rows are rejected.
    pub fn from_matrices(
        session: impl Into<String>,
        scales: Vec<ScaleConfig>,
        segments: Vec<Vec<Segment>>,
        mut matrices: Vec<Array2<T>>,
    ) -> Result<Self> {
        let base_scale = validate_scale_set(&scales)?;
        if segments.len() != scales.len() || matrices.len() != scales.len() {
            return Err(Error::dimension(format!(
                "expected {} scales, got {} segment lists and {} matrices",
                scales.len(),
                segments.len(),
                matrices.len()
            )));
        }
        let dim = matrices.first().map(|m| m.ncols()).unwrap_or(0);
        for (s, (segs, matrix)) in segments.iter().zip(matrices.iter_mut()).enumerate() {
            if matrix.nrows() != segs.len() {
                return Err(Error::dimension(format!(
                    "scale {:.2}: {} embedding rows but {} segments",
                    scales[s].window,
                    matrix.nrows(),
                    segs.len()
                )));
            }
            if matrix.ncols() != dim {
                return Err(Error::dimension(format!(
                    "scale {:.2}: dim {} differs from {}",
                    scales[s].window,
                    matrix.ncols(),
                    dim
                )));
            }
            for (r, mut row) in matrix.rows_mut().into_iter().enumerate() {
                let mut sq = T::zero();
                for &v in row.iter() {
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "scale {:.2} embedding row {r}",
                            scales[s].window
                        )));
                    }
                    sq += v * v;
                }
                let norm = sq.sqrt();
                if norm <= T::zero() {
                    return Err(Error::invalid_input(format!(
                        "scale {:.2} embedding row {r} is a zero vector",
                        scales[s].window
                    )));
                }
                row.mapv_inplace(|v| v / norm);
            }
        }
        let mapping = build_scale_mapping(&segments, base_scale)?;
        Ok(Self {
            session: session.into(),
            scales,
            base_scale,
            segments,
            matrices,
            mapping,
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn scales(&self) -> &[ScaleConfig] {
        &self.scales
    }

    pub fn base_scale(&self) -> usize {
        self.base_scale
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn num_base_segments(&self) -> usize {
        self.segments[self.base_scale].len()
    }

    pub fn dim(&self) -> usize {
        self.matrices.first().map(|m| m.ncols()).unwrap_or(0)
    }

    pub fn segments(&self, scale: usize) -> &[Segment] {
        &self.segments[scale]
    }

    pub fn base_segments(&self) -> &[Segment] {
        &self.segments[self.base_scale]
    }

    pub fn matrix(&self, scale: usize) -> &Array2<T> {
        &self.matrices[scale]
    }

    pub fn mapping(&self) -> &ScaleMapping {
        &self.mapping
    }

    pub fn embedding(&self, scale: usize, segment: usize) -> ArrayView1<'_, T> {
        self.matrices[scale].row(segment)
    }

    pub fn embedding_owned(&self, scale: usize, segment: usize) -> Embedding<T> {
        Embedding {
            values: self.matrices[scale].row(segment).to_owned(),
            scale_index: scale,
            segment_index: segment,
        }
    }

    /// The multi-scale tuple of base segment `i`: one embedding per scale,
    /// chosen by the closest-midpoint mapping (scale order of the set).
    pub fn tuple(&self, base_segment: usize) -> Vec<ArrayView1<'_, T>> {
        (0..self.scales.len())
            .map(|s| self.embedding(s, self.mapping.mapped_index(base_segment, s)))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentTimes {
    onset: f64,
    offset: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleSidecar {
    window: f64,
    shift: f64,
    is_base: bool,
    segments: Vec<SegmentTimes>,
}

fn scale_stem(index: usize, scale: &ScaleConfig) -> String {
    format!("scale_{index}_{:.2}s", scale.window)
}

/// Writes one `.mseb` + `.json` pair per scale into `dir`.
pub fn save_embeddings<T: Scalar>(dir: &Path, set: &MultiScaleEmbeddingSet<T>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (s, scale) in set.scales().iter().enumerate() {
        let stem = scale_stem(s, scale);
        let bin_path = dir.join(format!("{stem}.mseb"));
        let mut w = BufWriter::new(File::create(&bin_path)?);
        let matrix = set.matrix(s);
        binio::write_magic(&mut w, MSEB_MAGIC)?;
        w.write_u32::<LittleEndian>(matrix.nrows() as u32)?;
        w.write_u32::<LittleEndian>(matrix.ncols() as u32)?;
        binio::write_f32s(&mut w, matrix.as_slice().expect("standard layout"))?;

        let sidecar = ScaleSidecar {
            window: scale.window,
            shift: scale.shift,
            is_base: scale.is_base,
            segments: set
                .segments(s)
                .iter()
                .map(|seg| SegmentTimes { onset: seg.onset, offset: seg.offset })
                .collect(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(json_path, serde_json::to_string_pretty(&sidecar).expect("serialize"))?;
    }
    Ok(())
}

/// Loads and validates a session directory against `scales`.
///
/// Errors on a missing scale file, a dimension other than
/// [`EMBEDDING_DIM`], a row count that disagrees with the sidecar segment
/// list, or non-finite values.
pub fn load_embeddings<T: Scalar>(
    dir: &Path,
    scales: &[ScaleConfig],
    session: impl Into<String>,
) -> Result<MultiScaleEmbeddingSet<T>> {
    validate_scale_set(scales)?;
    let mut segments = Vec::with_capacity(scales.len());
    let mut matrices = Vec::with_capacity(scales.len());
    for (s, scale) in scales.iter().enumerate() {
        let stem = scale_stem(s, scale);
        let bin_path = dir.join(format!("{stem}.mseb"));
        if !bin_path.exists() {
            return Err(Error::invalid_input(format!(
                "scale {:.1} missing: no file {}",
                scale.window,
                bin_path.display()
            )));
        }
        let display = bin_path.display().to_string();
        let mut r = BufReader::new(File::open(&bin_path)?);
        binio::read_magic(&mut r, MSEB_MAGIC, &display)?;
        let rows = r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated rows"))? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(|_| Error::format(&display, "truncated dim"))? as usize;
        if dim != EMBEDDING_DIM {
            return Err(Error::dimension(format!(
                "scale {:.2}: embedding dim {dim}, expected {EMBEDDING_DIM} ({display})",
                scale.window
            )));
        }
        let values: Vec<T> = binio::read_f32s(&mut r, rows * dim, &display)?;
        let matrix = Array2::from_shape_vec((rows, dim), values).expect("shape matches");

        let json_path = dir.join(format!("{stem}.json"));
        let sidecar: ScaleSidecar = serde_json::from_str(
            &std::fs::read_to_string(&json_path)
                .map_err(|_| Error::invalid_input(format!("scale {:.1} missing sidecar {}", scale.window, json_path.display())))?,
        )
        .map_err(|e| Error::format(json_path.display().to_string(), e.to_string()))?;
        if (sidecar.window - scale.window).abs() > 1e-6 || (sidecar.shift - scale.shift).abs() > 1e-6 {
            return Err(Error::invalid_input(format!(
                "scale {:.2}: sidecar declares window {:.2}/shift {:.2}",
                scale.window, sidecar.window, sidecar.shift
            )));
        }
        if sidecar.segments.len() != rows {
            return Err(Error::dimension(format!(
                "scale {:.2}: {} embedding rows but sidecar lists {} segments",
                scale.window,
                rows,
                sidecar.segments.len()
            )));
        }
        let segs: Vec<Segment> = sidecar
            .segments
            .iter()
            .map(|t| Segment {
                scale_index: s,
                onset: t.onset,
                offset: t.offset,
                midpoint: 0.5 * (t.onset + t.offset),
            })
            .collect();
        segments.push(segs);
        matrices.push(matrix);
    }
    MultiScaleEmbeddingSet::from_matrices(session, scales.to_vec(), segments, matrices)
}

/// Parameters of the synthetic session generator.
///
/// Speaker centroids are placed on the unit sphere with identical pairwise
/// cosine `cos²(θ) − sin²(θ)/(k−1)`, θ = separation·π/2: separation 1.0 is
/// a maximally spread simplex (antipodal for two speakers) and
/// [`SyntheticSessionSpec::orthogonal_separation`] gives exactly-orthogonal
/// centroids. Each segment embedding is the speaker centroid plus scaled
/// unit Gaussian noise, re-normalized. Larger scales get strictly lower
/// noise so longer windows are more discriminative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSessionSpec {
    pub num_speakers: usize,
    /// 1.0 = orthogonal centroids; towards 0.0 centroids collapse together.
    pub speaker_centroid_separation: f64,
    /// Multiplier on the per-scale noise levels (0.8 / 0.5 / 0.3 for the
    /// 0.5 s / 1.0 s / 1.5 s windows). 0.0 reproduces centroids exactly.
    pub within_speaker_noise: f64,
    pub turn_min: f64,
    pub turn_max: f64,
    pub num_turns: usize,
    /// Probability that a turn starts before the previous one ends.
    pub overlap_fraction: f64,
    /// Inter-turn silence drawn uniformly from this range (when not overlapping).
    pub gap_min: f64,
    pub gap_max: f64,
    pub seed: u64,
}

impl Default for SyntheticSessionSpec {
    fn default() -> Self {
        Self {
            num_speakers: 2,
            speaker_centroid_separation: 1.0,
            within_speaker_noise: 1.0,
            turn_min: 1.0,
            turn_max: 3.0,
            num_turns: 20,
            overlap_fraction: 0.0,
            gap_min: 0.3,
            gap_max: 0.7,
            seed: 0,
        }
    }
}

impl SyntheticSessionSpec {
    /// Separation value at which the pairwise centroid cosine is exactly
    /// zero (orthogonal centroids) for `num_speakers` speakers.
    pub fn orthogonal_separation(num_speakers: usize) -> f64 {
        if num_speakers < 2 {
            return 1.0;
        }
        ((num_speakers as f64 - 1.0).sqrt()).atan() / std::f64::consts::FRAC_PI_2
    }

    fn validate(&self) -> Result<()> {
        if self.num_speakers < 1 {
            return Err(Error::config("num_speakers must be >= 1"));
        }
        if self.num_speakers + 1 > EMBEDDING_DIM {
            return Err(Error::config(format!(
                "cannot separate {} speaker centroids in dimension {EMBEDDING_DIM}",
                self.num_speakers
            )));
        }
        if !(self.speaker_centroid_separation > 0.0 && self.speaker_centroid_separation <= 1.0) {
            return Err(Error::config("speaker_centroid_separation must be in (0, 1]"));
        }
        if self.within_speaker_noise < 0.0 {
            return Err(Error::config("within_speaker_noise must be >= 0"));
        }
        if !(self.turn_min > 0.0 && self.turn_min <= self.turn_max) {
            return Err(Error::config("need 0 < turn_min <= turn_max"));
        }
        if self.num_turns < 1 {
            return Err(Error::config("num_turns must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::config("overlap_fraction must be in [0, 1)"));
        }
        if self.gap_min < 0.0 || self.gap_min > self.gap_max {
            return Err(Error::config("need 0 <= gap_min <= gap_max"));
        }
        Ok(())
    }
}

/// Per-scale noise level: piecewise-linear through (0.5 s, 0.8),
/// (1.0 s, 0.5), (1.5 s, 0.3), clamped outside.
pub fn scale_noise_level(window: f64) -> f64 {
    let pts = [(0.5, 0.8), (1.0, 0.5), (1.5, 0.3)];
    if window <= pts[0].0 {
        return pts[0].1;
    }
    if window >= pts[2].0 {
        return pts[2].1;
    }
    for w in pts.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if window <= x1 {
            return y0 + (y1 - y0) * (window - x0) / (x1 - x0);
        }
    }
    unreachable!()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return v;
        }
    }
}

fn gram_schmidt_frame(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while frame.len() < count {
        attempts += 1;
        if attempts > count * 32 {
            return Err(Error::config(format!(
                "failed to draw {count} separated directions in dimension {dim}"
            )));
        }
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for u in &frame {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, &ux) in v.iter_mut().zip(u) {
                *x -= proj * ux;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        frame.push(v);
    }
    Ok(frame)
}

/// Generates a full synthetic session: embeddings at every scale, the
/// ground-truth annotation, and the speech regions. Bit-reproducible for a
/// fixed seed.
pub fn synthesize_session<T: Scalar>(
    spec: &SyntheticSessionSpec,
    scales: &[ScaleConfig],
) -> Result<(MultiScaleEmbeddingSet<T>, Annotation, Vec<SpeechRegion>)> {
    spec.validate()?;
    validate_scale_set(scales)?;
    let dim = EMBEDDING_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // A shared direction u plus k unit simplex directions w_i orthogonal to
    // it (pairwise w_i . w_j = -1/(k-1)); the separation angle blends them:
    // c_i = cos(theta) u + sin(theta) w_i, giving identical pairwise cosine
    // cos^2(theta) - sin^2(theta)/(k-1). Separation 1.0 is the maximally
    // spread simplex (antipodal for two speakers).
    let k = spec.num_speakers;
    let frame = gram_schmidt_frame(&mut rng, k + 1, dim)?;
    let theta = spec.speaker_centroid_separation * std::f64::consts::FRAC_PI_2;
    let (cos_t, sin_t) = if spec.speaker_centroid_separation >= 1.0 {
        (0.0, 1.0)
    } else {
        (theta.cos(), theta.sin())
    };
    let simplex: Vec<Vec<f64>> = if k == 1 {
        vec![frame[1].clone()]
    } else {
        let mean: Vec<f64> = (0..dim)
            .map(|d| (0..k).map(|i| frame[i + 1][d]).sum::<f64>() / k as f64)
            .collect();
        let scale = (k as f64 / (k as f64 - 1.0)).sqrt();
        (0..k)
            .map(|i| {
                frame[i + 1]
                    .iter()
                    .zip(&mean)
                    .map(|(&v, &m)| (v - m) * scale)
                    .collect()
            })
            .collect()
    };
    let centroids: Vec<Vec<f64>> = simplex
        .iter()
        .map(|w| {
            let mut c: Vec<f64> = frame[0].iter().zip(w).map(|(&u, &wi)| cos_t * u + sin_t * wi).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in c.iter_mut() {
                *x /= norm;
            }
            c
        })
        .collect();

    // Turn sequence: uniform durations, no immediate self-follow, optional
    // overlap at boundaries, otherwise a silence gap.
    let mut turns: Vec<Turn> = Vec::with_capacity(spec.num_turns);
    let mut t = 0.0f64;
    let mut prev_spk = usize::MAX;
    for _ in 0..spec.num_turns {
        let spk = if k == 1 {
            0
        } else if prev_spk == usize::MAX {
            rng.gen_range(0..k)
        } else {
            // No immediate self-follow.
            let mut s = rng.gen_range(0..k - 1);
            if s >= prev_spk {
                s += 1;
            }
            s
        };
        let dur = rng.gen_range(spec.turn_min..=spec.turn_max);
        if !turns.is_empty() {
            let overlapped = rng.gen_bool(spec.overlap_fraction);
            if overlapped {
                let prev_dur = turns.last().unwrap().duration();
                let max_over = 0.4 * prev_dur.min(dur);
                t -= rng.gen_range(0.1 * max_over..=max_over);
                t = t.max(turns.last().unwrap().onset + 0.05);
            } else if spec.gap_max > 0.0 {
                t += rng.gen_range(spec.gap_min..=spec.gap_max);
            }
        }
        turns.push(Turn::new(format!("spk{spk}"), t, t + dur)?);
        t += dur;
        prev_spk = spk;
    }
    let annotation = Annotation::new(turns);

    let regions = merge_into_regions(annotation.turns.iter().map(|t| (t.onset, t.offset)).collect())?;
    let segments = segment_all_scales(&regions, scales)?;

    // Majority-overlap speaker per segment, then centroid + scaled unit noise.
    let speaker_of = |seg: &Segment| -> usize {
        let mut overlap = vec![0.0f64; k];
        for turn in &annotation.turns {
            let spk: usize = turn.speaker[3..].parse().expect("generated id");
            let o = (seg.offset.min(turn.offset) - seg.onset.max(turn.onset)).max(0.0);
            overlap[spk] += o;
        }
        overlap
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };

    let mut matrices: Vec<Array2<T>> = Vec::with_capacity(scales.len());
    for (s, scale) in scales.iter().enumerate() {
        let noise = spec.within_speaker_noise * scale_noise_level(scale.window);
        let segs = &segments[s];
        let mut matrix = Array2::<T>::zeros((segs.len(), dim));
        for (r, seg) in segs.iter().enumerate() {
            let spk = speaker_of(seg);
            let mut row: Vec<f64> = centroids[spk].clone();
            if noise > 0.0 {
                let g = unit_gaussian(&mut rng, dim);
                for (x, &gx) in row.iter_mut().zip(&g) {
                    *x += noise * gx;
                }
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (dst, &src) in matrix.row_mut(r).iter_mut().zip(&row) {
                *dst = T::from_f64_lossy(src / norm);
            }
        }
        matrices.push(matrix);
    }

    let session = format!("synth-{:016x}", spec.seed);
    let set = MultiScaleEmbeddingSet::from_matrices(session, scales.to_vec(), segments, matrices)?;
    Ok((set, annotation, regions))
}

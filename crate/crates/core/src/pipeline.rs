//! End-to-end diarisation: affinity (fusion or GAT), optional enhancement,
//! spectral clustering, hypothesis turns, optional scoring.
//!
//! Dataset presets pin the eigenvalue threshold, enhancement repetitions
//! and scoring collar. All stage randomness is split from one root seed.

use serde::{Deserialize, Serialize};

use crate::affinity::{
    build_fusion_affinity, cosine_affinity, AffinityMatrix, AffinityMode, FusionWeights,
};
use crate::embedding::MultiScaleEmbeddingSet;
use crate::enhancement::{enhance, substitute_base_embeddings, AAConfig};
use crate::error::{Error, Result};
use crate::gat::{build_gat_affinity, GatModel};
use crate::rttm::Annotation;
use crate::scalar::Scalar;
use crate::scoring::{score, DERReport};
use crate::segmentation::{default_scale_set, validate_scale_set, ScaleConfig};
use crate::spectral::{cluster, labels_to_annotation, ClusterAssignment, ClusteringConfig};

/// How enhanced embeddings feed clustering when enhancement is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AaHandoff {
    /// Cluster the cosine affinity of the refined embeddings (default).
    #[default]
    RefinedCosine,
    /// Average the refined-embedding cosine affinity 50/50 with the
    /// stage-one affinity matrix.
    BlendStageMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scales: Vec<ScaleConfig>,
    pub mode: AffinityMode,
    /// Per-scale cosine fusion weights (fusion mode).
    pub fusion_weights: Vec<f64>,
    /// Enhancement settings; `None` disables the refinement stage.
    pub enhancement: Option<AAConfig>,
    pub aa_handoff: AaHandoff,
    pub clustering: ClusteringConfig,
    /// Scoring collar in seconds.
    pub collar: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scales = default_scale_set();
        let n = scales.len();
        Self {
            scales,
            mode: AffinityMode::Fusion,
            fusion_weights: vec![1.0 / n as f64; n],
            enhancement: None,
            aa_handoff: AaHandoff::RefinedCosine,
            clustering: ClusteringConfig::default(),
            collar: 0.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Dataset preset: eigenvalue threshold, enhancement repetitions and
    /// collar tuned per corpus.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (threshold, aa_iters, collar) = match name {
            "dihard1" => (48, 10, 0.0),
            "dihard2" => (38, 20, 0.0),
            "dihard3" => (48, 10, 0.0),
            "voxconverse" => (80, 15, 0.25),
            other => {
                return Err(Error::config(format!(
                    "unknown preset `{other}` (expected dihard1|dihard2|dihard3|voxconverse)"
                )))
            }
        };
        cfg.clustering.eigen_threshold = threshold;
        cfg.collar = collar;
        cfg.enhancement = Some(AAConfig { iterations: aa_iters, temperature: 0.30 });
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_scale_set(&self.scales)?;
        if self.mode == AffinityMode::Fusion {
            if self.fusion_weights.len() != self.scales.len() {
                return Err(Error::config(format!(
                    "{} fusion weights for {} scales",
                    self.fusion_weights.len(),
                    self.scales.len()
                )));
            }
            FusionWeights::<f64>::new(self.fusion_weights.clone())?;
        }
        if self.collar < 0.0 {
            return Err(Error::config("collar must be >= 0"));
        }
        Ok(())
    }

    /// One-hot weights selecting a single scale in fusion mode.
    pub fn single_scale_weights(&self, scale_index: usize) -> Result<Vec<f64>> {
        if scale_index >= self.scales.len() {
            return Err(Error::config(format!("scale index {scale_index} out of range")));
        }
        let mut w = vec![0.0; self.scales.len()];
        w[scale_index] = 1.0;
        Ok(w)
    }
}

/// Deterministic per-stage seed split from the root seed (FNV-1a).
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ root.rotate_left(17);
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct DiarizeOutcome {
    pub hypothesis: Annotation,
    pub assignment: ClusterAssignment,
    /// Present when a reference annotation was supplied.
    pub report: Option<DERReport>,
}

/// Runs affinity -> (enhancement) -> clustering -> turns -> (scoring) on a
/// loaded embedding set. In GAT mode `model` must be supplied.
pub fn run_diarize<T: Scalar>(
    cfg: &PipelineConfig,
    set: &MultiScaleEmbeddingSet<T>,
    model: Option<&GatModel<T>>,
    reference: Option<&Annotation>,
) -> Result<DiarizeOutcome> {
    cfg.validate()?;
    let session = set.session().to_string();

    let stage1: AffinityMatrix<T> = match cfg.mode {
        AffinityMode::Fusion => {
            let weights = FusionWeights::new(
                cfg.fusion_weights.iter().map(|&w| T::from_f64_lossy(w)).collect(),
            )
            .map_err(|e| e.in_stage("affinity_fusion", &session))?;
            build_fusion_affinity(set, &weights)
                .map_err(|e| e.in_stage("affinity_fusion", &session))?
        }
        AffinityMode::Gat => {
            let model = model.ok_or_else(|| {
                Error::config("GAT mode requires a model").in_stage("gat", &session)
            })?;
            build_gat_affinity(set, model).map_err(|e| e.in_stage("gat", &session))?
        }
    };

    let cluster_input = match &cfg.enhancement {
        None => stage1,
        Some(aa) => {
            let x = substitute_base_embeddings(set);
            let refined =
                enhance(x.view(), &stage1, aa).map_err(|e| e.in_stage("enhancement", &session))?;
            let refined_affinity =
                cosine_affinity(refined.view()).map_err(|e| e.in_stage("enhancement", &session))?;
            match cfg.aa_handoff {
                AaHandoff::RefinedCosine => refined_affinity,
                AaHandoff::BlendStageMatrix => {
                    let half = T::from_f64_lossy(0.5);
                    let mut blended = stage1.values().clone();
                    blended.zip_mut_with(refined_affinity.values(), |a, &b| {
                        *a = (*a + b) * half;
                    });
                    AffinityMatrix::new(blended, stage1.mode())
                        .map_err(|e| e.in_stage("enhancement", &session))?
                }
            }
        }
    };

    let clustering = ClusteringConfig {
        seed: stage_seed(cfg.seed, "spectral_clustering"),
        ..cfg.clustering
    };
    let assignment = cluster(&cluster_input, &clustering)
        .map_err(|e| e.in_stage("spectral_clustering", &session))?;

    let base_shift = cfg.scales[validate_scale_set(&cfg.scales)?].shift;
    let hypothesis = labels_to_annotation(set.base_segments(), &assignment, base_shift)
        .map_err(|e| e.in_stage("spectral_clustering", &session))?;

    let report = match reference {
        Some(reference) => Some(
            score(reference, &hypothesis, cfg.collar)
                .map_err(|e| e.in_stage("scoring", &session))?,
        ),
        None => None,
    };

    Ok(DiarizeOutcome { hypothesis, assignment, report })
}

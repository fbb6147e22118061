// Quick experiment: multiply vs divide temperature semantics on a noisy session.
use msdiar_core::affinity::{build_fusion_affinity, cosine_affinity, FusionWeights};
use msdiar_core::embedding::{synthesize_session, SyntheticSessionSpec};
use msdiar_core::enhancement::substitute_base_embeddings;
use msdiar_core::linalg::{matmul, row_softmax_scaled};
use msdiar_core::pipeline::{run_diarize, PipelineConfig};
use msdiar_core::segmentation::default_scale_set;
use msdiar_core::spectral::{cluster, ClusteringConfig};

fn main() {
    for speakers in [2usize, 4] {
        let spec = SyntheticSessionSpec {
            num_speakers: speakers,
            within_speaker_noise: 1.0,
            num_turns: 18,
            seed: 2024,
            ..Default::default()
        };
        let scales = default_scale_set();
        let (set, reference, _) = synthesize_session::<f64>(&spec, &scales).unwrap();
        let m = build_fusion_affinity(&set, &FusionWeights::uniform(3)).unwrap();
        let cfg = PipelineConfig::default();
        let base = run_diarize(&cfg, &set, None, Some(&reference)).unwrap();
        println!("speakers={speakers} L={} fusion DER={:.2} k={}", set.num_base_segments(), base.report.unwrap().der, base.assignment.num_speakers);

        for (name, factor) in [("mult tau=0.3", 0.30_f64), ("div  tau=0.3", 1.0 / 0.30)] {
            let x0 = substitute_base_embeddings(&set);
            let n = 10usize;
            let a1 = row_softmax_scaled(m.view(), factor);
            let mut x = x0.clone();
            for i in 0..n {
                let c = cosine_affinity(x.view()).unwrap();
                let a2 = row_softmax_scaled(c.view(), factor);
                let mut blend = a1.clone();
                for ((r, s), v) in blend.indexed_iter_mut() {
                    *v = ((n - i) as f64 * *v + i as f64 * a2[[r, s]]) / n as f64;
                }
                x = matmul(blend.view(), x.view());
            }
            let refined = cosine_affinity(x.view()).unwrap();
            let out = cluster(&refined, &ClusteringConfig::default()).unwrap();
            let hyp = msdiar_core::spectral::labels_to_annotation(set.base_segments(), &out, 0.25).unwrap();
            let rep = msdiar_core::scoring::score(&reference, &hyp, 0.0).unwrap();
            println!("  AA {name}: k={} DER={:.2} (sc={:.2})", out.num_speakers, rep.der, rep.sc);
        }
    }
}

mod support;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::properties::{mixup_violations, pooling_violations};
use tsdnet_core::dsp::{FeatureKind, FeatureMatrix};
use tsdnet_core::model::{
    conditional_forward, detection_forward, linear_softmax_pool, Checkpoint, Fusion, ModelConfig, ModelState,
    Supervision,
};

fn cats() -> Vec<String> {
    ["a", "b", "c"].iter().map(|s| s.to_string()).collect()
}

fn features(rng: &mut ChaCha8Rng, frames: usize, dims: usize, kind: FeatureKind, fps: f64) -> FeatureMatrix {
    FeatureMatrix {
        values: Array2::from_shape_fn((frames, dims), |_| rng.random_range(-4.0..0.0)),
        frames_per_second: fps,
        kind,
    }
}

#[test]
fn pooling_invariants_hold() {
    let bad = pooling_violations(2000, 11);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn mixup_identities_hold() {
    let bad = mixup_violations(500, 12);
    assert!(bad.is_empty(), "{bad:#?}");
}

proptest! {
    #[test]
    fn pool_is_between_mean_and_max(p in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
        let y = linear_softmax_pool(&p);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let max = p.iter().copied().fold(0.0, f64::max);
        prop_assert!(y >= mean - 1e-12 && y <= max + 1e-12);
    }
}

#[test]
fn forward_shapes_and_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for fusion in [Fusion::Multiply, Fusion::Concat] {
        let mut cfg = ModelConfig::desk(cats());
        cfg.fusion = fusion;
        let state = ModelState::init(cfg.clone(), 2).unwrap();
        let reference = features(&mut rng, 220, cfg.reference_dims, FeatureKind::LogMelMfcc, 220.5);
        let (emb, probs) = conditional_forward(&reference, &state).unwrap();
        assert_eq!(emb.dim(), cfg.embedding_dim);
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mix = features(&mut rng, 500, cfg.mixture_mels, FeatureKind::LogMel, 50.0);
        for supervision in [Supervision::Strong, Supervision::Weak] {
            let out = detection_forward(&mix, &emb, &state, supervision).unwrap();
            assert_eq!(out.frame_probs.len(), 500, "{fusion:?} {supervision:?}");
            assert!(out.frame_probs.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(out.clip_prob.is_some(), supervision == Supervision::Weak);
        }
    }
}

#[test]
fn wrong_feature_kind_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ModelConfig::desk(cats());
    let state = ModelState::init(cfg.clone(), 1).unwrap();
    let mel = features(&mut rng, 100, cfg.mixture_mels, FeatureKind::LogMel, 50.0);
    assert!(conditional_forward(&mel, &state).is_err());
}

#[test]
fn forward_is_deterministic_and_survives_a_checkpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = ModelConfig::desk(cats());
    let state = ModelState::init(cfg.clone(), 3).unwrap();
    let reference = features(&mut rng, 150, cfg.reference_dims, FeatureKind::LogMelMfcc, 220.5);
    let mix = features(&mut rng, 300, cfg.mixture_mels, FeatureKind::LogMel, 50.0);
    let run = |s: &ModelState| {
        let (emb, _) = conditional_forward(&reference, s).unwrap();
        detection_forward(&mix, &emb, s, Supervision::Strong).unwrap().frame_probs
    };
    let a = run(&state);
    assert_eq!(a, run(&ModelState::init(cfg, 3).unwrap()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(state).save(&path).unwrap();
    let back = Checkpoint::load(&path, None, false).unwrap();
    let b = run(&back.state);
    // Checkpoints store single precision.
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

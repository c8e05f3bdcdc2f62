//! End-to-end behavior of the composed pipeline: gradients through
//! score -> cost -> transport -> soft permutation -> hierarchy -> loss,
//! training progress on a small instance, and agreement between the
//! annealed ordering and a plain sort at scale.

use pointrank_core::backbone::MlpNodes;
use pointrank_core::data::{make_dataset, ShapeClass};
use pointrank_core::gradcheck::check_gradients;
use pointrank_core::graph::EngineError;
use pointrank_core::scorer::ScorerConfig;
use pointrank_core::sorter::{hard_ordering, hard_sort_oracle, SinkhornConfig};
use pointrank_core::tensor::Tensor2;
use pointrank_core::train::{
    build_batch_loss, master_rng, train_epoch, AdamWState, Model, ModelConfig, ModelNodes,
    TrainConfig, TrainError,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        hidden: vec![8],
        feature_dim: 16,
        head_hidden: 16,
        embed_dim: 8,
        share_weights: true,
        normalize_embed: true,
    }
}

/// Rebuild ModelNodes from a flat id list in named-tensor order (pairs of
/// w, b per layer: encoder first, then head).
fn nodes_from_ids(ids: &[pointrank_core::NodeId], encoder_layers: usize) -> ModelNodes {
    let pairs: Vec<(pointrank_core::NodeId, pointrank_core::NodeId)> =
        ids.chunks(2).map(|c| (c[0], c[1])).collect();
    let encoder = MlpNodes { layers: pairs[..encoder_layers].to_vec() };
    let head = MlpNodes { layers: pairs[encoder_layers..].to_vec() };
    ModelNodes {
        scorer_encoder: encoder.clone(),
        loss_encoder: encoder,
        head,
        names: Vec::new(),
    }
}

#[test]
fn composed_pipeline_gradient_matches_finite_differences() {
    let cfg = TrainConfig {
        model: tiny_model_config(),
        // fixed iteration count: perturbed runs must execute the same trace
        sinkhorn: SinkhornConfig { epsilon: 0.1, max_iters: 40, tol: 0.0, anneal_eps: None },
        ..TrainConfig::default()
    };
    let data = make_dataset(&[ShapeClass::Sphere, ShapeClass::Torus], 1, 16, 3).unwrap();
    let clouds: Vec<Tensor2> = data.clouds.iter().map(|c| c.points().clone()).collect();

    let model = Model::init(cfg.model.clone(), &mut master_rng(7));
    let encoder_layers = model.scorer_encoder.layers.len();
    let tensors: Vec<Tensor2> = model
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    let report = check_gradients(&tensors, 1e-6, |g, ids| {
        let nodes = nodes_from_ids(ids, encoder_layers);
        let cloud_refs: Vec<&Tensor2> = clouds.iter().collect();
        build_batch_loss(g, &nodes, &cloud_refs, &cfg).map_err(|e| match e {
            TrainError::Engine(e) => e,
            other => EngineError::InvalidParam { op: "pipeline", detail: format!("{other}") },
        })
    })
    .unwrap();
    assert!(
        report.max_rel_err < 1e-3,
        "composed gradient rel err {} at {:?} (analytic {}, fd {})",
        report.max_rel_err,
        report.worst,
        report.analytic_at_worst,
        report.fd_at_worst
    );
}

#[test]
fn training_reduces_the_loss_on_a_small_instance() {
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 50,
        lr0: 1e-3,
        seed: 5,
        model: tiny_model_config(),
        sinkhorn: SinkhornConfig { max_iters: 60, ..Default::default() },
        ..TrainConfig::default()
    };
    let data = make_dataset(
        &[ShapeClass::Sphere, ShapeClass::Cube, ShapeClass::Torus, ShapeClass::Cone],
        2,
        32,
        9,
    )
    .unwrap();
    assert_eq!(data.len(), 8);

    let mut model = Model::init(cfg.model.clone(), &mut master_rng(cfg.seed));
    let mut opt = AdamWState::new();
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        losses.push(train_epoch(&mut model, &mut opt, &data, &cfg, epoch).unwrap().mean_loss);
    }
    let first = losses[0];
    let last_quarter: f64 =
        losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(
        last_quarter < first,
        "loss did not decrease: first {first}, late mean {last_quarter}, trace {losses:?}"
    );
}

#[test]
fn annealed_ordering_matches_sort_oracle_at_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SinkhornConfig::default();
    for trial in 0..200 {
        let scores: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ord = hard_ordering(&scores, &cfg).unwrap();
        assert!(ord.is_valid_permutation());
        assert_eq!(
            ord.hard_ranks,
            hard_sort_oracle(&scores).hard_ranks,
            "trial {trial}"
        );
    }
}

#[test]
fn ordering_transfers_to_larger_clouds() {
    // a model initialized for small clouds orders big ones; the encoder is
    // size-agnostic so only the transport size changes
    let model = Model::init(tiny_model_config(), &mut master_rng(3));
    let small = make_dataset(&[ShapeClass::Helix], 1, 64, 1).unwrap();
    let big = make_dataset(&[ShapeClass::Helix], 1, 256, 2).unwrap();

    for data in [&small, &big] {
        let ord = pointrank_core::eval::learned_ordering(
            &model,
            &ScorerConfig::default(),
            &SinkhornConfig::default(),
            &data.clouds[0],
        )
        .unwrap();
        assert!(ord.is_valid_permutation());
        assert_eq!(ord.hard_ranks.len(), data.clouds[0].len());
    }
}

use npc_core::data::FeatureStats;
use npc_core::nvformer::train::{evaluate_loss, sample_coordinates};
use npc_core::nvformer::{grad_check, train, NvFormerConfig, NvFormerModel, TrainConfig, TrainingExample};
use npc_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn toy() -> NvFormerConfig {
    NvFormerConfig {
        d_model: 16,
        heads: 2,
        n_s: 1,
        n_i: 1,
        l_h: 8,
        l_f: 6,
        p: 3,
        dropout: 0.0,
        ..NvFormerConfig::default()
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect())
}

fn examples(cfg: &NvFormerConfig, n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| TrainingExample {
            samples: (0..cfg.p).map(|_| random(cfg.l_h, cfg.m, &mut rng)).collect(),
            history: random(cfg.l_h, cfg.m, &mut rng),
            future_known: random(cfg.l_f, cfg.m_f, &mut rng),
            target: random(cfg.l_f, cfg.m_r, &mut rng),
        })
        .collect()
}

#[test]
fn toy_gradients_match_finite_differences() {
    let cfg = toy();
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 11).unwrap();
    let ex = &examples(&cfg, 1, 5)[0];
    let coords = sample_coordinates(model.params().values(), 200, 3);
    assert!(coords.len() >= 200);
    let report = grad_check(&model, ex, &coords, 1e-4).unwrap();
    println!("toy grad check: {report:?}");
    assert!(report.max_relative_error < 1e-3, "{report:?}");
}

#[test]
fn disabled_sample_former_parameters_are_dead_coordinates() {
    let cfg = NvFormerConfig {
        sample_former_enabled: false,
        ..toy()
    };
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 2).unwrap();
    let ex = &examples(&cfg, 1, 6)[0];
    let names = model.params().names();
    let dead: Vec<(usize, usize)> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("sample.") || n.starts_with("reduce.") || n.starts_with("embed.sample"))
        .map(|(i, _)| (i, 0))
        .collect();
    assert!(!dead.is_empty());
    let report = grad_check(&model, ex, &dead, 1e-4).unwrap();
    assert_eq!(report.max_relative_error, 0.0);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let cfg = toy();
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 1).unwrap();
    let data = examples(&cfg, 8, 1);
    let tc = TrainConfig {
        learning_rate: 0.0,
        batch_size: 4,
        warmup_epochs: 0,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(model.clone(), &data, &[], &tc).unwrap();
    assert_eq!(out.steps, 4);
    assert_eq!(out.model.params(), model.params());
}

#[test]
fn toy_model_memorizes_small_dataset() {
    let cfg = toy();
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 21).unwrap();
    let data = examples(&cfg, 32, 2);
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        warmup_epochs: 10,
        max_epochs: 2000,
        max_steps: Some(2000),
        seed: 4,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(model, &data, &[], &tc).unwrap();
    let mse = evaluate_loss(&out.model, &data);
    println!("overfit: mse {mse:.2e} after {} steps in {:?}", out.steps, start.elapsed());
    assert!(out.steps <= 2000);
    assert!(mse < 1e-3, "training mse {mse}");
    assert!(out.best_val_loss < out.initial_val_loss);
}

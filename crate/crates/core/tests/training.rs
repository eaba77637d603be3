//! Optimizer and training-loop contracts.

use tinytherm_core::detect::{AnchorSet, Rect};
use tinytherm_core::graph::{ArchConfig, ModelGraph};
use tinytherm_core::preprocess::ChannelKind;
use tinytherm_core::synth::{synth_sequence, SyntheticSceneConfig};
use tinytherm_core::train::{decay_only_step, evaluate_loss, prepare_sequence, train, LrPolicy, Sample, TrainConfig};
use tinytherm_core::preprocess::InputSpec;
use tinytherm_core::Tensor;

fn tiny() -> ModelGraph {
    let arch = ArchConfig { widths: vec![8, 16, 16], stride2_blocks: vec![0, 1], num_anchors: 5 };
    ModelGraph::from_arch(&arch, 1, AnchorSet::default(), 5).unwrap()
}

#[test]
fn zero_gradient_step_shrinks_every_weight_by_the_decay_factor() {
    let (lr, d) = (0.001, 0.03);
    let before = tiny();
    let mut after = before.clone();
    decay_only_step(&mut after, lr, d);
    let factor = 1.0 - lr * d;
    let mut checked = 0;
    for (a, b) in after.layers.iter().zip(&before.layers) {
        let mut pairs: Vec<(f32, f32)> = a.weights.iter().copied().zip(b.weights.iter().copied()).collect();
        pairs.extend(a.bias.iter().copied().zip(b.bias.iter().copied()));
        if let (Some(x), Some(y)) = (&a.bn, &b.bn) {
            pairs.extend(x.gamma.iter().copied().zip(y.gamma.iter().copied()));
            pairs.extend(x.beta.iter().copied().zip(y.beta.iter().copied()));
        }
        for (new, old) in pairs {
            assert_eq!(new, (old as f64 * factor) as f32);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

fn single_sample() -> Sample {
    let mut input = Tensor::zeros(1, 24, 32);
    for y in 10..16 {
        for x in 12..17 {
            *input.at_mut(0, y, x) = 0.6;
        }
    }
    Sample { input, boxes: vec![Rect { x: 12.0, y: 10.0, w: 5.0, h: 6.0 }], kinds: vec![ChannelKind::Signed], frame_index: 0 }
}

#[test]
fn one_sample_overfits() {
    let s = vec![single_sample()];
    let cfg = TrainConfig {
        max_iters: 2000,
        batch_size: 1,
        val_every: 100,
        weight_decay: 0.0,
        augment: None,
        policy: LrPolicy::Step { drop_at: usize::MAX, factor: 10.0 },
        base_lr: 0.005,
        stop_at_val_loss: Some(0.01),
        ..Default::default()
    };
    let out = train(tiny(), &s, &s, &cfg).unwrap();
    let loss = evaluate_loss(&out.best, &s, &cfg.loss).unwrap();
    assert!(loss < 0.01, "loss {loss} after {} iterations", out.iterations);
    assert!(out.iterations <= 2000);
}

#[test]
fn same_seed_gives_the_same_loss_curve() {
    let spec = InputSpec::default();
    let scene = SyntheticSceneConfig { n_frames: 20, n_imposters: 2, lead_in_frames: 3, seed: 4, ..Default::default() };
    let (f, b) = synth_sequence(&scene).unwrap();
    let set = prepare_sequence(&f, &b, &spec).unwrap();
    let cfg = TrainConfig { max_iters: 40, batch_size: 4, val_every: 10, seed: 9, ..Default::default() };
    let a = train(tiny(), &set, &set, &cfg).unwrap();
    let b = train(tiny(), &set, &set, &cfg).unwrap();
    let bits = |log: &[tinytherm_core::train::LogEntry]| log.iter().map(|e| (e.iter, e.lr.to_bits(), e.train_loss.to_bits(), e.val_loss.map(f64::to_bits))).collect::<Vec<_>>();
    assert_eq!(bits(&a.log), bits(&b.log));
    assert_eq!(a.best, b.best);
    let c = train(tiny(), &set, &set, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(bits(&a.log), bits(&c.log));
}

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::dataset::{augment_episode, AugmentConfig, Demonstration};
use crate::{par, seed};

use super::{offset_chunk, Adam, Mlp, Normalizer, Policy, PolicyConfig, PolicyError};

/// Raw `(input, target)` pairs of one demo. The history before the first
/// step is padded with the first proprioception and the chunk after the last
/// step with the last action. With `pad_terminal`, `history_len` extra pairs
/// continue that padding past the end, so the history also fills up with the
/// final action and the policy learns to stay put once done. With relative
/// actions the targets are offsets from the step's proprioception.
pub fn training_pairs(demo: &Demonstration, cfg: &PolicyConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = demo.len();
    if n == 0 {
        return Vec::new();
    }
    let points = demo.object_state.flat();
    let last = demo.steps[n - 1].action;
    let proprio = |j: usize| if j < n { demo.steps[j].proprio } else { last };
    let extra = if cfg.pad_terminal { cfg.history_len } else { 0 };
    (0..n + extra)
        .map(|i| {
            let mut x = points.clone();
            for k in 0..cfg.history_len {
                let j = (i + k + 1).saturating_sub(cfg.history_len);
                x.extend_from_slice(&proprio(j).to_array());
            }
            let mut y = Vec::with_capacity(cfg.output_dim());
            for k in 0..cfg.chunk_len {
                y.extend_from_slice(&demo.steps[(i + k).min(n - 1)].action.to_array());
            }
            if cfg.relative_actions {
                offset_chunk(&mut y, &proprio(i), -1.0);
            }
            (x, y)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    /// Mean training loss of every epoch, in normalized output units.
    pub loss_curve: Vec<f64>,
}

/// Minibatch Adam on the Gaussian NLL. With `cfg.augment`, every demo gets a
/// fresh random rigid transform each epoch. Normalization statistics come
/// from the un-augmented corpus.
pub fn train(corpus: &[Demonstration], cfg: &PolicyConfig) -> Result<TrainOutcome, PolicyError> {
    train_with(corpus, cfg, |_, _| {})
}

/// [`train`] with a per-epoch `(epoch, loss)` callback.
pub fn train_with(
    corpus: &[Demonstration],
    cfg: &PolicyConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome, PolicyError> {
    cfg.validate()?;
    let demos: Vec<&Demonstration> = corpus.iter().filter(|d| !d.is_empty()).collect();
    if demos.is_empty() {
        return Err(PolicyError::EmptyCorpus);
    }
    let num_points = demos[0].object_state.len();
    if let Some(d) = demos.iter().find(|d| d.object_state.len() != num_points) {
        return Err(PolicyError::ShapeMismatch { expected: 3 * num_points, found: 3 * d.object_state.len() });
    }

    let base: Vec<(Vec<f64>, Vec<f64>)> = demos.iter().flat_map(|d| training_pairs(d, cfg)).collect();
    let (xs, ys): (Vec<_>, Vec<_>) = base.iter().cloned().unzip();
    let normalizer = Normalizer::fit(&xs, &ys);

    let mut sizes = vec![cfg.input_dim(num_points)];
    sizes.extend(&cfg.hidden_sizes);
    sizes.push(cfg.output_dim());
    let mut net = Mlp::random(&sizes, &mut seed::rng(seed::derive_tagged(cfg.seed, "init", 0)));
    let mut opt = Adam::new(net.num_params(), cfg.learning_rate);

    let (in_dim, out_dim) = (cfg.input_dim(num_points), cfg.output_dim());
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = if cfg.augment {
            let indices: Vec<usize> = (0..demos.len()).collect();
            let epoch_seed = seed::derive_tagged(cfg.seed, "augment", epoch as u64);
            par::map(&indices, |&i| {
                let aug = AugmentConfig { seed: seed::derive(epoch_seed, i as u64), ..cfg.augmentation };
                training_pairs(&augment_episode(demos[i], &aug), cfg)
            })
            .into_iter()
            .flatten()
            .collect()
        } else {
            base.clone()
        };

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_tagged(cfg.seed, "shuffle", epoch as u64)));

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = DMatrix::zeros(in_dim, batch.len());
            let mut y = DMatrix::zeros(out_dim, batch.len());
            for (c, &i) in batch.iter().enumerate() {
                let (mut xi, mut yi) = pairs[i].clone();
                normalizer.input(&mut xi);
                normalizer.output(&mut yi);
                x.column_mut(c).copy_from_slice(&xi);
                y.column_mut(c).copy_from_slice(&yi);
            }
            let (loss, grad) = net.loss_and_grad(&x, &y, cfg.sigma);
            opt.step(&mut net, &grad);
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / pairs.len() as f64;
        on_epoch(epoch, mean);
        loss_curve.push(mean);
    }

    Ok(TrainOutcome { policy: Policy::new(cfg.clone(), num_points, net, normalizer)?, loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::hand::UnifiedAction;
    use crate::policy::{ActionChunker, HistoryBuffer};
    use crate::triangulation::ObjectState;
    use crate::dataset::DemoMeta;

    fn act(x: f64, g: f64) -> UnifiedAction {
        UnifiedAction::new(Vec3::new(x, 0.0, 0.4), Vec3::new(x, 0.03, 0.4), g)
    }

    fn toy_demo(offset: f64) -> Demonstration {
        let actions: Vec<_> = (0..12).map(|i| act(offset + 0.02 * i as f64, if i >= 6 { 1.0 } else { -1.0 })).collect();
        Demonstration::from_actions("toy", ObjectState::new(vec![Vec3::new(offset + 0.12, 0.0, 0.5)]), &actions, DemoMeta::default())
    }

    // Absolute targets: with offsets the toy's first two steps share a
    // history but not a target, which caps how far the loss can fall.
    fn toy_config() -> PolicyConfig {
        PolicyConfig {
            history_len: 2,
            chunk_len: 3,
            hidden_sizes: vec![32, 32],
            epochs: 200,
            batch_size: 16,
            augment: false,
            relative_actions: false,
            ..Default::default()
        }
    }

    #[test]
    fn pairs_pad_history_and_chunks() {
        let d = toy_demo(0.0);
        let cfg = PolicyConfig { history_len: 3, chunk_len: 4, relative_actions: false, pad_terminal: false, ..Default::default() };
        let pairs = training_pairs(&d, &cfg);
        assert_eq!(pairs.len(), 12);
        let (x0, _) = &pairs[0];
        assert_eq!(x0.len(), 3 + 21);
        // Three copies of the first proprio.
        assert_eq!(x0[3..10], x0[10..17]);
        assert_eq!(x0[3..10], d.steps[0].proprio.to_array());
        let (x5, _) = &pairs[5];
        assert_eq!(x5[17..24], d.steps[5].proprio.to_array());
        assert_eq!(x5[3..10], d.steps[3].proprio.to_array());
        let (_, y_last) = &pairs[11];
        assert_eq!(y_last[0..7], y_last[21..28]);
        assert_eq!(y_last[21..28], d.steps[11].action.to_array());
        assert_eq!(y_last[3 * UnifiedAction::DIM + 6], 1.0);
    }

    #[test]
    fn terminal_padding_and_offsets() {
        let d = toy_demo(0.0);
        let cfg = PolicyConfig { history_len: 3, chunk_len: 4, ..Default::default() };
        let pairs = training_pairs(&d, &cfg);
        assert_eq!(pairs.len(), 15);
        let last = d.steps[11].action.to_array();
        let (x, y) = &pairs[14];
        for k in 0..3 {
            assert_eq!(x[3 + 7 * k..10 + 7 * k], last);
        }
        assert!(y.iter().enumerate().all(|(i, v)| if i % 7 == 6 { *v == 1.0 } else { v.abs() < 1e-15 }));
        // Offsets are taken from the step's own proprioception.
        let (_, y5) = &pairs[5];
        let a6 = d.steps[5].action.to_array();
        let p5 = d.steps[5].proprio.to_array();
        for c in 0..6 {
            assert!((y5[c] - (a6[c] - p5[c])).abs() < 1e-15);
        }
    }

    #[test]
    fn toy_corpus_converges() {
        let corpus: Vec<_> = (0..10).map(|i| toy_demo(0.01 * i as f64)).collect();
        let out = train(&corpus, &toy_config()).unwrap();
        let first = out.loss_curve[0];
        let last = *out.loss_curve.last().unwrap();
        assert!(last < 0.05 * first, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let corpus: Vec<_> = (0..4).map(|i| toy_demo(0.01 * i as f64)).collect();
        let cfg = PolicyConfig { epochs: 5, augment: true, ..toy_config() };
        let a = train(&corpus, &cfg).unwrap();
        let b = train(&corpus, &cfg).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.loss_curve, b.loss_curve);
        let c = train(&corpus, &PolicyConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.policy, c.policy);
    }

    #[test]
    fn identical_pairs_are_fit() {
        let a = act(0.1, 1.0);
        let demo = Demonstration::from_actions("one", ObjectState::new(vec![Vec3::new(0.0, 0.0, 0.5)]), &[a; 8], DemoMeta::default());
        let cfg = PolicyConfig { epochs: 300, ..toy_config() };
        let out = train(std::slice::from_ref(&demo), &cfg).unwrap();
        let chunk = out.policy.predict(&demo.object_state, &HistoryBuffer::new(2, a)).unwrap();
        for p in chunk {
            for (u, v) in p.to_array().iter().zip(a.to_array()) {
                assert!((u - v).abs() < 1e-3, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(train(&[], &toy_config()), Err(PolicyError::EmptyCorpus)));
    }
}

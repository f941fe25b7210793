//! End-to-end runs through the public API: simulate, extract, process,
//! persist, train and roll out.

use egopoints::dataset::{load_demos, read_demos, save_demos, write_demos};
use egopoints::policy::{ActionChunker, HistoryBuffer, Policy, PolicyConfig};
use egopoints::simulator::{
    evaluate, generate_corpus, generate_episode, CorpusConfig, EpisodeConfig, EvalConfig, HandNoiseModel, ObservationModel, TrackerNoiseModel,
};

fn small_policy() -> PolicyConfig {
    PolicyConfig { hidden_sizes: vec![32, 32], epochs: 10, ..Default::default() }
}

#[test]
fn noiseless_episode_survives_processing_and_disk() {
    let cfg = EpisodeConfig { tracker: TrackerNoiseModel::zero(), hand_noise: HandNoiseModel::zero(), ..Default::default() };
    let corpus_cfg = CorpusConfig { episode: cfg.clone(), num_demos: 6, ..Default::default() };
    let (corpus, report) = generate_corpus(&corpus_cfg, 11).unwrap();
    assert_eq!(report.counts.failed, 0);
    assert!(report.mean_point_error < 1e-6, "{}", report.mean_point_error);

    let ep = generate_episode(&cfg, report.kept_seeds[0]).unwrap();
    let kept = &corpus.demos[0];
    for (a, b) in kept.object_state.points.iter().zip(&ep.truth_points.points) {
        assert!((a - b).norm() < 1e-6);
    }
    // Every processed action is one of the true actions.
    for s in &kept.steps {
        assert!(ep.truth_actions.iter().any(|t| (t.thumb_tip - s.action.thumb_tip).norm() < 1e-6 && t.gripper == s.action.gripper));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.egd");
    save_demos(&path, &corpus).unwrap();
    assert_eq!(load_demos(&path).unwrap(), corpus);

    let mut bytes = Vec::new();
    write_demos(&mut bytes, &corpus, "memory").unwrap();
    assert_eq!(read_demos(bytes.as_slice(), "memory").unwrap(), corpus);
}

#[test]
fn trained_policy_round_trips_and_rolls_out() {
    let (corpus, _) = generate_corpus(&CorpusConfig { num_demos: 6, ..Default::default() }, 4).unwrap();
    let outcome = egopoints::policy::train(&corpus.demos, &small_policy()).unwrap();
    assert_eq!(outcome.loss_curve.len(), 10);
    assert!(outcome.loss_curve.iter().all(|l| l.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    outcome.policy.save(&path).unwrap();
    let loaded = Policy::load(&path).unwrap();
    let demo = &corpus.demos[0];
    let history = HistoryBuffer::new(loaded.history_len(), demo.steps[0].proprio);
    assert_eq!(outcome.policy.predict(&demo.object_state, &history).unwrap(), loaded.predict(&demo.object_state, &history).unwrap());

    let eval = EvalConfig { num_episodes: 4, observation: ObservationModel::Exact, keep_traces: true, ..Default::default() };
    let a = evaluate(&loaded, &eval, 9).unwrap();
    let b = evaluate(&loaded, &eval, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.episodes.len(), 4);
    for e in &a.episodes {
        let steps = e.executed.as_ref().unwrap();
        assert!(!steps.is_empty() && steps.len() <= eval.env.horizon);
        assert!(steps.iter().all(|s| s.gripper == 1.0 || s.gripper == -1.0));
    }
}

#[test]
fn training_is_reproducible() {
    let (corpus, _) = generate_corpus(&CorpusConfig { num_demos: 4, ..Default::default() }, 8).unwrap();
    let cfg = PolicyConfig { epochs: 3, ..small_policy() };
    let a = egopoints::policy::train(&corpus.demos, &cfg).unwrap();
    let b = egopoints::policy::train(&corpus.demos, &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.policy, b.policy);
}

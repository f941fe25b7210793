//! Closed-loop behavior cloning over unified states: a chunked-output
//! network, its training loop, temporal aggregation and the rollout loop.

pub mod network;
mod rollout;
mod train;

pub use network::{Adam, Layer, Mlp};
pub use rollout::{aggregate, binarize_gripper, rollout, Environment, RolloutTrace};
pub use train::{train, train_with, training_pairs, TrainOutcome};

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AugmentConfig;
use crate::hand::UnifiedAction;
use crate::triangulation::ObjectState;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{path}: policy format version {found} is not supported (expected {expected})")]
    VersionMismatch { path: String, found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub history_len: usize,
    pub chunk_len: usize,
    pub sigma: f64,
    pub hidden_sizes: Vec<usize>,
    /// Rate of the exponential age weighting used by temporal aggregation.
    pub aggregation_m: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Resample a random rigid transform per demo and epoch.
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Predict fingertip positions as offsets from the current proprioception
    /// instead of absolute coordinates. The gripper channel stays absolute.
    pub relative_actions: bool,
    /// Add samples past the demo end whose history is the final action.
    pub pad_terminal: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            history_len: 6,
            chunk_len: 10,
            sigma: 0.1,
            hidden_sizes: vec![256, 256],
            aggregation_m: 0.1,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 500,
            seed: 0,
            augment: true,
            augmentation: AugmentConfig::default(),
            relative_actions: true,
            pad_terminal: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.into()));
        if self.history_len < 1 || self.chunk_len < 1 {
            return bad("history_len and chunk_len must be at least 1");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.aggregation_m >= 0.0) || !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("aggregation_m must be non-negative, learning_rate positive and batch_size non-zero");
        }
        if !self.augmentation.is_valid() {
            return bad("augmentation ranges out of bounds");
        }
        Ok(())
    }

    pub fn input_dim(&self, num_points: usize) -> usize {
        3 * num_points + UnifiedAction::DIM * self.history_len
    }

    pub fn output_dim(&self) -> usize {
        UnifiedAction::DIM * self.chunk_len
    }
}

/// The last `h` executed actions, oldest first. The newest entry is the
/// proprioceptive part of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    items: VecDeque<UnifiedAction>,
}

impl HistoryBuffer {
    /// `h` copies of the initial robot state.
    pub fn new(h: usize, initial: UnifiedAction) -> Self {
        assert!(h >= 1, "history length must be at least 1");
        Self { items: std::iter::repeat_n(initial, h).collect() }
    }

    /// Builds a buffer from an explicit oldest-first sequence.
    pub fn from_actions(actions: &[UnifiedAction]) -> Self {
        assert!(!actions.is_empty(), "history length must be at least 1");
        Self { items: actions.iter().copied().collect() }
    }

    pub fn push(&mut self, a: UnifiedAction) {
        self.items.pop_front();
        self.items.push_back(a);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn latest(&self) -> &UnifiedAction {
        self.items.back().unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UnifiedAction> {
        self.items.iter()
    }
}

/// Anything that maps object points and a history to an action chunk.
pub trait ActionChunker {
    fn history_len(&self) -> usize;
    fn chunk_len(&self) -> usize;
    fn predict(&self, points: &ObjectState, history: &HistoryBuffer) -> Result<Vec<UnifiedAction>, PolicyError>;
}

/// Per-dimension affine whitening of network inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

fn mean_std(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        var.iter_mut().zip(r).zip(&mean).for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
    }
    // Constant dimensions are centred but not scaled.
    let std = var.into_iter().map(|v| if v.sqrt() > 1e-6 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            output_mean: vec![0.0; output_dim],
            output_std: vec![1.0; output_dim],
        }
    }

    pub fn fit(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Self {
        let (input_mean, input_std) = mean_std(inputs, inputs[0].len());
        let (output_mean, output_std) = mean_std(outputs, outputs[0].len());
        Self { input_mean, input_std, output_mean, output_std }
    }

    pub fn input(&self, x: &mut [f64]) {
        x.iter_mut().zip(self.input_mean.iter().zip(&self.input_std)).for_each(|(v, (m, s))| *v = (*v - m) / s);
    }

    pub fn output(&self, y: &mut [f64]) {
        y.iter_mut().zip(self.output_mean.iter().zip(&self.output_std)).for_each(|(v, (m, s))| *v = (*v - m) / s);
    }

    pub fn output_inverse(&self, y: &mut [f64]) {
        y.iter_mut().zip(self.output_mean.iter().zip(&self.output_std)).for_each(|(v, (m, s))| *v = *v * s + m);
    }
}

/// Flat network input: object points, then the history oldest first.
pub fn policy_input(points: &ObjectState, history: &HistoryBuffer) -> Vec<f64> {
    let mut x = points.flat();
    for a in history.iter() {
        x.extend_from_slice(&a.to_array());
    }
    x
}

/// Adds `sign ×` the fingertips of `proprio` to every action of a flat chunk.
pub fn offset_chunk(y: &mut [f64], proprio: &UnifiedAction, sign: f64) {
    let p = proprio.to_array();
    for a in y.chunks_exact_mut(UnifiedAction::DIM) {
        a[..6].iter_mut().zip(&p[..6]).for_each(|(v, o)| *v += sign * o);
    }
}

pub const POLICY_FORMAT_VERSION: u32 = 1;

/// A trained network together with everything needed to run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub config: PolicyConfig,
    pub num_points: usize,
    pub net: Mlp,
    pub normalizer: Normalizer,
}

impl Policy {
    pub fn new(config: PolicyConfig, num_points: usize, net: Mlp, normalizer: Normalizer) -> Result<Self, PolicyError> {
        config.validate()?;
        let expected_in = config.input_dim(num_points);
        if net.input_dim() != expected_in {
            return Err(PolicyError::ShapeMismatch { expected: expected_in, found: net.input_dim() });
        }
        if net.output_dim() != config.output_dim() {
            return Err(PolicyError::ShapeMismatch { expected: config.output_dim(), found: net.output_dim() });
        }
        Ok(Self { config, num_points, net, normalizer })
    }

    /// Mean action chunk with an unbinarized gripper channel.
    pub fn forward(&self, points: &ObjectState, history: &HistoryBuffer) -> Result<Vec<UnifiedAction>, PolicyError> {
        if points.len() != self.num_points {
            return Err(PolicyError::ShapeMismatch { expected: 3 * self.num_points, found: 3 * points.len() });
        }
        if history.len() != self.config.history_len {
            return Err(PolicyError::ShapeMismatch {
                expected: UnifiedAction::DIM * self.config.history_len,
                found: UnifiedAction::DIM * history.len(),
            });
        }
        let mut x = policy_input(points, history);
        self.normalizer.input(&mut x);
        let mut y = self.net.forward_one(&x);
        self.normalizer.output_inverse(&mut y);
        if self.config.relative_actions {
            offset_chunk(&mut y, history.latest(), 1.0);
        }
        Ok(y.chunks_exact(UnifiedAction::DIM).map(UnifiedAction::from_slice).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let path = path.as_ref();
        let err = |message: String| PolicyError::File { path: path.display().to_string(), message };
        let file = PolicyFile { format: "egp".into(), version: POLICY_FORMAT_VERSION, policy: self.clone() };
        let text = serde_json::to_string(&file).map_err(|e| err(e.to_string()))?;
        fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let err = |message: String| PolicyError::File { path: name.clone(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let header: FileHeader = serde_json::from_str(&text).map_err(|e| err(format!("not a policy file: {e}")))?;
        if header.format != "egp" {
            return Err(err(format!("not a policy file (format tag {:?})", header.format)));
        }
        if header.version != POLICY_FORMAT_VERSION {
            return Err(PolicyError::VersionMismatch { path: name, found: header.version, expected: POLICY_FORMAT_VERSION });
        }
        let file: PolicyFile = serde_json::from_str(&text).map_err(|e| err(format!("malformed policy: {e}")))?;
        let p = file.policy;
        Policy::new(p.config, p.num_points, p.net, p.normalizer)
    }
}

#[derive(Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    policy: Policy,
}

impl ActionChunker for Policy {
    fn history_len(&self) -> usize {
        self.config.history_len
    }

    fn chunk_len(&self) -> usize {
        self.config.chunk_len
    }

    fn predict(&self, points: &ObjectState, history: &HistoryBuffer) -> Result<Vec<UnifiedAction>, PolicyError> {
        self.forward(points, history)
    }
}

//! Demonstrations in the unified point space and the processing applied to
//! them before training: building from frames and tracks, stationary-step
//! removal, subsampling, MAD-based rejection and per-episode augmentation.

mod augment;
mod build;
mod io;
mod process;

pub use augment::{augment_episode, sample_augmentation, AugmentConfig};
pub use build::{build_demonstration, BuildOptions, BuiltDemonstration};
pub use io::{load_demos, read_demos, save_demos, write_demos, Corpus, FORMAT_VERSION};
pub use process::{fingertip_distance, mad_filter, mad_stats, remove_stationary, subsample, MadFilterOutcome, MadStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{HandError, UnifiedAction};
use crate::triangulation::{ObjectState, TriangulationError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("demonstration has no steps left")]
    EmptyDemo,
    #[error("no frames to build a demonstration from")]
    NoFrames,
    #[error("object triangulation failed: {0}")]
    Triangulation(#[from] TriangulationError),
    #[error("frame {frame}: {source}")]
    Hand {
        frame: usize,
        #[source]
        source: HandError,
    },
    #[error("inputs are misaligned: {0}")]
    Misaligned(String),
    #[error("{path}: line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch { path: String, found: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    #[default]
    Synthetic,
    Imported,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub seed: u64,
    pub frame_rate: f64,
    pub source: DemoSource,
}

impl Default for DemoMeta {
    fn default() -> Self {
        Self { seed: 0, frame_rate: 30.0, source: DemoSource::Synthetic }
    }
}

/// Object points plus the previously executed action.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedState {
    pub object_points: ObjectState,
    pub proprio: UnifiedAction,
}

impl UnifiedState {
    /// Flat `3P + 7` vector: object points, then proprioception.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.object_points.flat();
        v.extend_from_slice(&self.proprio.to_array());
        v
    }

    pub fn dim(&self) -> usize {
        3 * self.object_points.len() + UnifiedAction::DIM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub proprio: UnifiedAction,
    pub action: UnifiedAction,
}

/// One processed episode. The object state is shared by every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub task_name: String,
    pub object_state: ObjectState,
    pub steps: Vec<Step>,
    pub meta: DemoMeta,
}

impl Demonstration {
    /// Chains proprioception from an action sequence; the first step's
    /// proprioception is its own action.
    pub fn from_actions(task_name: impl Into<String>, object_state: ObjectState, actions: &[UnifiedAction], meta: DemoMeta) -> Self {
        let steps = actions
            .iter()
            .enumerate()
            .map(|(i, a)| Step { proprio: if i == 0 { *a } else { actions[i - 1] }, action: *a })
            .collect();
        Self { task_name: task_name.into(), object_state, steps, meta }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<UnifiedAction> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn state(&self, i: usize) -> UnifiedState {
        UnifiedState { object_points: self.object_state.clone(), proprio: self.steps[i].proprio }
    }

    /// Keeps the steps at `indices` (increasing) and re-chains proprioception.
    pub(crate) fn retain_indices(&self, indices: &[usize]) -> Demonstration {
        let mut steps: Vec<Step> = indices.iter().map(|&i| self.steps[i]).collect();
        for i in 1..steps.len() {
            steps[i].proprio = steps[i - 1].action;
        }
        Demonstration { steps, ..self.clone() }
    }

    /// Whether each step's proprioception equals the previous action.
    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[1].proprio == w[0].action)
    }

    /// Steps whose gripper differs from the step before.
    pub fn grasp_transitions(&self) -> Vec<usize> {
        (1..self.steps.len())
            .filter(|&i| self.steps[i].action.gripper != self.steps[i - 1].action.gripper)
            .collect()
    }
}

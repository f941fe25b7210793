use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::hand::{UnifiedAction, GRIPPER_CLOSED, GRIPPER_OPEN};
use crate::triangulation::ObjectState;

use super::{ActionChunker, HistoryBuffer, PolicyError};

/// What the rollout loop needs from the world it acts in.
pub trait Environment {
    /// Object points as observed once at the start of the episode.
    fn observe(&self) -> ObjectState;
    /// Initial robot state.
    fn initial_action(&self) -> UnifiedAction;
    fn execute(&mut self, action: &UnifiedAction);
    fn horizon(&self) -> usize;
    fn success(&self) -> bool;
}

/// `+1` iff `g > 0`; zero counts as open.
pub fn binarize_gripper(g: f64) -> f64 {
    if g > 0.0 {
        GRIPPER_CLOSED
    } else {
        GRIPPER_OPEN
    }
}

/// Weighted mean of the current-step predictions of live chunks, given as
/// `(age, prediction)`, with weights `exp(−m·age)`. The gripper channel is
/// averaged like the others.
pub fn aggregate(predictions: &[(usize, UnifiedAction)], m: f64) -> UnifiedAction {
    assert!(!predictions.is_empty(), "nothing to aggregate");
    // Ages are shifted so the youngest weight is exactly one.
    let youngest = predictions.iter().map(|(age, _)| *age).min().unwrap();
    let mut acc = [0.0; UnifiedAction::DIM];
    let mut total = 0.0;
    for (age, a) in predictions {
        let w = (-m * (age - youngest) as f64).exp();
        total += w;
        acc.iter_mut().zip(a.to_array()).for_each(|(s, v)| *s += w * v);
    }
    acc.iter_mut().for_each(|s| *s /= total);
    UnifiedAction::from_slice(&acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub observed_points: ObjectState,
    pub initial_action: UnifiedAction,
    /// Aggregated actions before gripper binarization.
    pub aggregated: Vec<UnifiedAction>,
    /// Actions sent to the environment.
    pub executed: Vec<UnifiedAction>,
    pub success: bool,
}

/// Runs the chunked policy in closed loop until the environment horizon.
///
/// The object points are read once. Every step predicts a chunk, blends the
/// live chunks' predictions for the current step, binarizes the gripper,
/// executes, and appends the executed action to the history.
pub fn rollout(policy: &impl ActionChunker, env: &mut impl Environment, aggregation_m: f64) -> Result<RolloutTrace, PolicyError> {
    let points = env.observe();
    let a0 = env.initial_action();
    let mut history = HistoryBuffer::new(policy.history_len(), a0);
    let mut live: VecDeque<(usize, Vec<UnifiedAction>)> = VecDeque::new();
    let horizon = env.horizon();
    let (mut aggregated, mut executed) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));

    for t in 0..horizon {
        let chunk = policy.predict(&points, &history)?;
        if chunk.is_empty() {
            return Err(PolicyError::ShapeMismatch { expected: UnifiedAction::DIM * policy.chunk_len(), found: 0 });
        }
        live.push_back((t, chunk));
        while live.front().is_some_and(|(born, c)| t - born >= c.len()) {
            live.pop_front();
        }
        let preds: Vec<(usize, UnifiedAction)> = live.iter().map(|(born, c)| (t - born, c[t - born])).collect();
        let a = aggregate(&preds, aggregation_m);
        let exec = UnifiedAction { gripper: binarize_gripper(a.gripper), ..a };
        env.execute(&exec);
        history.push(exec);
        aggregated.push(a);
        executed.push(exec);
    }

    Ok(RolloutTrace { observed_points: points, initial_action: a0, aggregated, executed, success: env.success() })
}

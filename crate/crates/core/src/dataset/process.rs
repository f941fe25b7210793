use serde::{Deserialize, Serialize};

use super::{DatasetError, Demonstration};

/// Drops steps whose fingertip midpoint moved less than `min_dist` since the
/// last kept step. The first step and every grasp transition are kept.
pub fn remove_stationary(demo: &Demonstration, min_dist: f64) -> Result<Demonstration, DatasetError> {
    if demo.is_empty() {
        return Err(DatasetError::EmptyDemo);
    }
    let mut keep = vec![0usize];
    for i in 1..demo.len() {
        let last = &demo.steps[*keep.last().unwrap()].action;
        let cur = &demo.steps[i].action;
        let transition = cur.gripper != demo.steps[i - 1].action.gripper;
        if transition || (cur.midpoint() - last.midpoint()).norm() >= min_dist {
            keep.push(i);
        }
    }
    Ok(demo.retain_indices(&keep))
}

/// Keeps every `factor`-th step plus all grasp transitions.
pub fn subsample(demo: &Demonstration, factor: usize) -> Demonstration {
    let factor = factor.max(1);
    let transitions = demo.grasp_transitions();
    let keep: Vec<usize> = (0..demo.len())
        .filter(|i| i % factor == 0 || transitions.binary_search(i).is_ok())
        .collect();
    demo.retain_indices(&keep)
}

/// Smallest distance between any object point and the nearer fingertip over
/// the whole episode.
pub fn fingertip_distance(demo: &Demonstration) -> f64 {
    demo.steps
        .iter()
        .flat_map(|s| {
            demo.object_state
                .points
                .iter()
                .map(move |p| (p - s.action.thumb_tip).norm().min((p - s.action.index_tip).norm()))
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadStats {
    pub median: f64,
    pub mad: f64,
}

impl MadStats {
    pub fn cutoff(&self) -> f64 {
        self.median + self.mad
    }
}

/// Lower median: the element at rank `(n − 1) / 2` after sorting.
fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Median and median absolute deviation, using the lower median for even
/// counts so both are always attained sample values.
pub fn mad_stats(values: &[f64]) -> MadStats {
    assert!(!values.is_empty(), "mad_stats needs at least one value");
    let mut v = values.to_vec();
    let median = lower_median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - median).abs()).collect();
    MadStats { median, mad: lower_median(&mut dev) }
}

#[derive(Debug, Clone)]
pub struct MadFilterOutcome {
    pub kept: Vec<Demonstration>,
    pub discarded: Vec<Demonstration>,
    /// Per-demo fingertip distance, in input order.
    pub distances: Vec<f64>,
    pub stats: Option<MadStats>,
}

/// Discards demos whose object points stay farther than one MAD above the
/// corpus median from the fingertips. Corpora smaller than three demos are
/// passed through untouched.
pub fn mad_filter(demos: Vec<Demonstration>) -> MadFilterOutcome {
    let distances: Vec<f64> = demos.iter().map(fingertip_distance).collect();
    if demos.len() < 3 {
        return MadFilterOutcome { kept: demos, discarded: Vec::new(), distances, stats: None };
    }
    let stats = mad_stats(&distances);
    let cutoff = stats.cutoff();
    let (mut kept, mut discarded) = (Vec::new(), Vec::new());
    for (demo, d) in demos.into_iter().zip(&distances) {
        if *d > cutoff {
            discarded.push(demo);
        } else {
            kept.push(demo);
        }
    }
    MadFilterOutcome { kept, discarded, distances, stats: Some(stats) }
}

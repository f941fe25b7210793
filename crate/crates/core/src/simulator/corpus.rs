use serde::{Deserialize, Serialize};

use crate::dataset::{mad_filter, remove_stationary, subsample, Corpus, Demonstration, MadStats};
use crate::par;
use crate::seed;

use super::{generate_episode, EpisodeConfig, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub episode: EpisodeConfig,
    pub num_demos: usize,
    /// Minimum midpoint motion (meters) for a step to be kept.
    pub stationary_threshold: f64,
    pub subsample_factor: usize,
    pub mad_filter: bool,
    /// Move the first demo's object points 0.5 m away before MAD filtering.
    pub plant_far_object: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { episode: EpisodeConfig::default(), num_demos: 100, stationary_threshold: 0.01, subsample_factor: 1, mad_filter: true, plant_far_object: false }
    }
}

/// Demo counts after each processing stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub generated: usize,
    /// Episodes whose extraction failed (for example triangulation).
    pub failed: usize,
    pub after_stationary: usize,
    pub after_mad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub counts: StageCounts,
    pub mad: Option<MadStats>,
    /// Seeds of the episodes that ended up in the corpus.
    pub kept_seeds: Vec<u64>,
    pub discarded_seeds: Vec<u64>,
    /// Mean triangulation error against ground truth, per kept-or-not
    /// successfully built episode (meters).
    pub mean_point_error: f64,
    /// Mean step count of the kept demos.
    pub mean_length: f64,
}

/// Generates `cfg.num_demos` episodes, extracts demonstrations and runs the
/// processing chain. Episode `i` uses `derive(seed, i)`.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<(Corpus, CorpusReport), SimError> {
    if cfg.num_demos == 0 || cfg.subsample_factor == 0 || !(cfg.stationary_threshold >= 0.0) {
        return Err(SimError::InvalidConfig("corpus needs demos, a positive subsample factor and a non-negative threshold".into()));
    }
    let built: Vec<Result<(Demonstration, f64), SimError>> = par::map_range(cfg.num_demos, |i| {
        let ep_seed = seed::derive(seed, i as u64);
        let ep = generate_episode(&cfg.episode, ep_seed)?;
        let b = ep.build(&cfg.episode)?;
        let err = b
            .demo
            .object_state
            .points
            .iter()
            .zip(&ep.truth_points.points)
            .map(|(p, q)| (p - q).norm())
            .sum::<f64>()
            / ep.truth_points.len() as f64;
        let demo = remove_stationary(&b.demo, cfg.stationary_threshold)?;
        Ok((subsample(&demo, cfg.subsample_factor), err))
    });

    let mut counts = StageCounts { generated: cfg.num_demos, ..Default::default() };
    let (mut demos, mut errors) = (Vec::new(), Vec::new());
    for r in built {
        match r {
            Ok((d, e)) => {
                demos.push(d);
                errors.push(e);
            }
            Err(SimError::Triangulation(_)) | Err(SimError::Dataset(_)) => counts.failed += 1,
            Err(e) => return Err(e),
        }
    }
    counts.after_stationary = demos.len();
    if cfg.plant_far_object {
        if let Some(d) = demos.first_mut() {
            d.object_state.points.iter_mut().for_each(|p| p.x += 0.5);
        }
    }
    let (kept, discarded, mad) = if cfg.mad_filter {
        let out = mad_filter(demos);
        (out.kept, out.discarded, out.stats)
    } else {
        (demos, Vec::new(), None)
    };
    counts.after_mad = kept.len();
    if kept.is_empty() {
        return Err(SimError::InvalidConfig("every episode was rejected".into()));
    }
    let report = CorpusReport {
        counts,
        mad,
        kept_seeds: kept.iter().map(|d| d.meta.seed).collect(),
        discarded_seeds: discarded.iter().map(|d| d.meta.seed).collect(),
        mean_point_error: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
        mean_length: kept.iter().map(|d| d.len() as f64).sum::<f64>() / kept.len() as f64,
    };
    Ok((Corpus::new(cfg.episode.task_name.clone(), kept), report))
}

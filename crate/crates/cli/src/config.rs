use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use egopoints::geometry::CameraIntrinsics;
use egopoints::policy::PolicyConfig;
use egopoints::simulator::{default_intrinsics, CorpusConfig, DepthWarp, EpisodeConfig, EvalConfig, SceneDistribution, SceneLayout, TaskFamily};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub bench: BenchConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rollout: RolloutConfig,
    pub calib: CalibConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub episode: EpisodeConfig,
    /// Synthetic scenes to triangulate when no corpus is given.
    pub num_scenes: usize,
    /// Synthetic `.egd` corpus whose episodes are regenerated from their seeds.
    pub corpus: Option<PathBuf>,
    /// Also run every scene through the warped-depth oracle.
    pub warp_arm: bool,
    pub warp: DepthWarp,
    pub gate_reproj_px: [f64; 2],
    pub gate_max_median_error: f64,
    pub gate_min_warp_residual: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            num_scenes: 100,
            corpus: None,
            warp_arm: false,
            warp: DepthWarp::default(),
            gate_reproj_px: [0.5, 4.0],
            gate_max_median_error: 0.01,
            gate_min_warp_residual: 0.03,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub policy: Option<PathBuf>,
    /// Roll out the scripted point oracle instead of a trained policy.
    pub oracle: bool,
    pub distributions: Vec<SceneDistribution>,
    pub gate_min_success_rate: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            policy: None,
            oracle: false,
            distributions: vec![SceneDistribution::InVolume, SceneDistribution::OutOfVolume],
            gate_min_success_rate: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub warp: DepthWarp,
    pub family: TaskFamily,
    pub layout: SceneLayout,
    pub intrinsics: CameraIntrinsics,
    pub num_scenes: usize,
    pub gate_min_residual: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            warp: DepthWarp::default(),
            family: TaskFamily::PickPlace,
            layout: SceneLayout::default(),
            intrinsics: default_intrinsics(),
            num_scenes: 50,
            gate_min_residual: 0.03,
        }
    }
}

/// Dotted config keys with their values, applied in order.
pub type Overrides = Vec<(String, Value)>;

/// Parses a flag value as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) in `root`, creating intermediate tables.
pub fn set_path(root: &mut Table, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("malformed key `{path}`");
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = root;
    for k in parents {
        let entry = table.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| anyhow!("`{path}`: `{k}` is not a section"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn leaf_paths(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => leaf_paths(t, &path, out),
            _ => out.push(path),
        }
    }
}

fn has_path(table: &Table, path: &str) -> bool {
    let mut cur = table;
    let mut keys = path.split('.').peekable();
    while let Some(k) = keys.next() {
        match (cur.get(k), keys.peek()) {
            (Some(_), None) => return true,
            (Some(Value::Table(t)), Some(_)) => cur = t,
            _ => return false,
        }
    }
    false
}

/// Loads the config file (if any), applies `overrides` in order and checks
/// that every key given by the user maps onto a config field.
pub fn resolve(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str::<Table>(&text).with_context(|| format!("{} is not valid TOML", p.display()))?
        }
        None => Table::new(),
    };
    for (key, value) in overrides {
        set_path(&mut table, key, value.clone())?;
    }
    let cfg: RunConfig = Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| anyhow!("invalid config: {}", e.message()))?;

    // `deny_unknown_fields` does not reach into library types, so compare
    // against what the parsed config serializes back to.
    let echoed = to_table(&cfg)?;
    let mut given = Vec::new();
    leaf_paths(&table, "", &mut given);
    if let Some(unknown) = given.iter().find(|p| !has_path(&echoed, p)) {
        bail!("unknown config key `{unknown}`");
    }
    Ok(cfg)
}

pub fn to_table(cfg: &RunConfig) -> Result<Table> {
    match Value::try_from(cfg).context("config cannot be serialized")? {
        Value::Table(t) => Ok(t),
        _ => bail!("config did not serialize to a table"),
    }
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(&to_table(cfg)?).context("config cannot be serialized")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(k: &str, v: &str) -> (String, Value) {
        (k.to_string(), parse_value(v))
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = resolve(None, &[set("policy.epochs", "7"), set("corpus.episode.tracker.lag_alpha", "0.3"), set("eval.family", "reach")]).unwrap();
        assert_eq!(cfg.policy.epochs, 7);
        assert_eq!(cfg.corpus.episode.tracker.lag_alpha, 0.3);
        assert_eq!(cfg.eval.family, TaskFamily::Reach);
    }

    #[test]
    fn integers_coerce_to_floats() {
        let cfg = resolve(None, &[set("policy.sigma", "1")]).unwrap();
        assert_eq!(cfg.policy.sigma, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(None, &[set("policy.epoch", "7")]).is_err());
        assert!(resolve(None, &[set("corpus.episode.tracker.lag", "0.1")]).is_err());
        assert!(resolve(None, &[set("nope", "1")]).is_err());
    }

    #[test]
    fn optional_paths_are_accepted() {
        let cfg = resolve(None, &[set("train.corpus", "a/b.egd")]).unwrap();
        assert_eq!(cfg.train.corpus, Some(PathBuf::from("a/b.egd")));
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = to_toml(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};

use egopoints::dataset::{load_demos, save_demos, DemoSource, MadStats};
use egopoints::par;
use egopoints::policy::{train_with, Policy};
use egopoints::seed;
use egopoints::simulator::{
    evaluate, generate_corpus, generate_episode, observe_warped, EvalConfig, EvalReport, PointOracle, SceneDistribution, SimError,
    StageCounts,
};
use egopoints::triangulation::ObjectState;

use crate::config::{to_toml, RunConfig};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Gate(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Gate(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "error: {e:#}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e:#}"),
            Failure::Gate(m) => write!(f, "threshold not met: {m}"),
        }
    }
}

pub type Outcome = Result<(), Failure>;

type Evaluator = Box<dyn Fn(&EvalConfig) -> Result<EvalReport, SimError>>;

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Config problems exit with 1, everything else with 2.
fn sim(e: SimError) -> Failure {
    match e {
        SimError::InvalidConfig(_) => usage(e),
        _ => runtime(e),
    }
}

pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub gate: bool,
}

impl Run {
    fn prepare(&self) -> Outcome {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display())).map_err(runtime)?;
        let text = to_toml(&self.cfg).map_err(runtime)?;
        self.write("config.toml", text.as_bytes())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Outcome {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("cannot write {}", p.display())).map_err(runtime)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Outcome {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display())).map_err(runtime)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn require_file(path: Option<&PathBuf>, what: &str, flag: &str) -> Result<PathBuf, Failure> {
    let p = path.ok_or_else(|| usage(anyhow!("no {what} given (use {flag})")))?;
    if !p.is_file() {
        return Err(usage(anyhow!("{what} {} does not exist", p.display())));
    }
    Ok(p.clone())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_distance(a: &ObjectState, b: &ObjectState) -> f64 {
    mean(&a.points.iter().zip(&b.points).map(|(p, q)| (p - q).norm()).collect::<Vec<_>>())
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    task: String,
    num_points: usize,
    corpus_file: String,
    corpus_sha256: String,
    counts: StageCounts,
    discarded_by_mad: usize,
    mad: Option<MadStats>,
    kept_seeds: Vec<u64>,
    discarded_seeds: Vec<u64>,
    mean_point_error_m: f64,
    mean_length: f64,
}

pub fn gen_data(ctx: &Run) -> Outcome {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let (corpus, report) = generate_corpus(&cfg.corpus, cfg.seed).map_err(sim)?;
    let file = ctx.path("corpus.egd");
    save_demos(&file, &corpus).map_err(runtime)?;
    let manifest = Manifest {
        seed: cfg.seed,
        task: corpus.task.clone(),
        num_points: corpus.num_points,
        corpus_file: "corpus.egd".into(),
        corpus_sha256: sha256_file(&file)?,
        counts: report.counts,
        discarded_by_mad: report.counts.after_stationary - report.counts.after_mad,
        mad: report.mad,
        kept_seeds: report.kept_seeds,
        discarded_seeds: report.discarded_seeds,
        mean_point_error_m: report.mean_point_error,
        mean_length: report.mean_length,
    };
    ctx.write_json("manifest.json", &manifest)?;
    eprintln!(
        "gen-data: {} generated, {} failed, {} after stationary removal, {} kept",
        report.counts.generated, report.counts.failed, report.counts.after_stationary, report.counts.after_mad
    );
    Ok(())
}

#[derive(Serialize)]
struct PointReport {
    point_id: u32,
    error_3d_m: f64,
    signed_depth_error_m: f64,
    reproj_px: f64,
    inlier_fraction: f64,
    converged: bool,
}

#[derive(Serialize)]
struct SceneReport {
    seed: u64,
    error: Option<String>,
    points: Vec<PointReport>,
    warp_residual_m: Option<f64>,
}

#[derive(Serialize)]
struct BenchSummary {
    scenes: usize,
    failed: usize,
    mean_error_3d_m: f64,
    median_error_3d_m: f64,
    mean_signed_depth_error_m: f64,
    mean_inlier_reproj_px: f64,
    mean_inlier_fraction: f64,
    mean_warp_residual_m: Option<f64>,
}

#[derive(Serialize)]
struct BenchReport {
    seed: u64,
    source: String,
    summary: BenchSummary,
    scenes: Vec<SceneReport>,
}

pub fn triangulate_bench(ctx: &Run) -> Outcome {
    let cfg = &ctx.cfg;
    let bench = &cfg.bench;
    bench.episode.tracker.validate().map_err(sim)?;
    bench.episode.triangulation.validate().map_err(usage)?;
    let (seeds, source) = match &bench.corpus {
        Some(p) => {
            let p = require_file(Some(p), "corpus", "--corpus")?;
            let corpus = load_demos(&p).map_err(usage)?;
            if let Some(d) = corpus.demos.iter().find(|d| d.meta.source != DemoSource::Synthetic) {
                return Err(usage(anyhow!("demo with seed {} is not synthetic; only simulator corpora carry ground truth", d.meta.seed)));
            }
            (corpus.demos.iter().map(|d| d.meta.seed).collect::<Vec<_>>(), p.display().to_string())
        }
        None => {
            if bench.num_scenes == 0 {
                return Err(usage(anyhow!("bench.num_scenes must be positive")));
            }
            ((0..bench.num_scenes as u64).map(|i| seed::derive(cfg.seed, i)).collect(), "synthetic".to_string())
        }
    };
    ctx.prepare()?;

    let start = Instant::now();
    let runs: Vec<(SceneReport, f64)> = par::map(&seeds, |&s| {
        let t = Instant::now();
        let report = bench_scene(cfg, s);
        (report, t.elapsed().as_secs_f64())
    });
    let total = start.elapsed().as_secs_f64();
    let (scenes, times): (Vec<_>, Vec<_>) = runs.into_iter().unzip();

    let points: Vec<&PointReport> = scenes.iter().flat_map(|s| &s.points).collect();
    let errors: Vec<f64> = points.iter().map(|p| p.error_3d_m).collect();
    let warp: Vec<f64> = scenes.iter().filter_map(|s| s.warp_residual_m).collect();
    let summary = BenchSummary {
        scenes: scenes.len(),
        failed: scenes.iter().filter(|s| s.error.is_some()).count(),
        mean_error_3d_m: mean(&errors),
        median_error_3d_m: median(errors.clone()),
        mean_signed_depth_error_m: mean(&points.iter().map(|p| p.signed_depth_error_m).collect::<Vec<_>>()),
        mean_inlier_reproj_px: mean(&points.iter().map(|p| p.reproj_px).collect::<Vec<_>>()),
        mean_inlier_fraction: mean(&points.iter().map(|p| p.inlier_fraction).collect::<Vec<_>>()),
        mean_warp_residual_m: bench.warp_arm.then(|| mean(&warp)),
    };
    eprintln!(
        "triangulate-bench: {} scenes ({} failed), median 3D error {:.2} mm, mean inlier reprojection {:.2} px",
        summary.scenes,
        summary.failed,
        summary.median_error_3d_m * 1e3,
        summary.mean_inlier_reproj_px
    );

    let mut gate = Vec::new();
    if ctx.gate {
        let [lo, hi] = bench.gate_reproj_px;
        if !(lo..=hi).contains(&summary.mean_inlier_reproj_px) {
            gate.push(format!("mean inlier reprojection {:.3} px outside [{lo}, {hi}]", summary.mean_inlier_reproj_px));
        }
        if !(summary.median_error_3d_m < bench.gate_max_median_error) {
            gate.push(format!("median 3D error {:.4} m not below {}", summary.median_error_3d_m, bench.gate_max_median_error));
        }
        if let Some(w) = summary.mean_warp_residual_m.filter(|w| !(*w >= bench.gate_min_warp_residual)) {
            gate.push(format!("warped-depth residual {w:.4} m below {}", bench.gate_min_warp_residual));
        }
    }
    ctx.write_json("bench.json", &BenchReport { seed: cfg.seed, source, summary, scenes })?;
    ctx.write_json("timing.json", &serde_json::json!({ "total_s": total, "per_scene_s": times }))?;
    if gate.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gate(gate.join("; ")))
    }
}

fn bench_scene(cfg: &RunConfig, s: u64) -> SceneReport {
    let bench = &cfg.bench;
    let mut report = SceneReport { seed: s, error: None, points: Vec::new(), warp_residual_m: None };
    let built = generate_episode(&bench.episode, s).and_then(|ep| {
        let b = ep.build(&bench.episode)?;
        Ok((ep, b))
    });
    let (ep, built) = match built {
        Ok(x) => x,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    let tri = &built.triangulation;
    report.points = tri
        .per_point
        .iter()
        .zip(&tri.point_ids)
        .zip(&ep.tracks)
        .zip(&ep.truth_points.points)
        .map(|(((r, &id), track), truth)| PointReport {
            point_id: id,
            error_3d_m: (r.point - truth).norm(),
            signed_depth_error_m: r.point.z - truth.z,
            reproj_px: r.mean_inlier_reproj_error,
            inlier_fraction: r.inlier_frames.len() as f64 / track.len().max(1) as f64,
            converged: r.converged,
        })
        .collect();
    if bench.warp_arm {
        let layout = &bench.episode.layout;
        match observe_warped(&ep.scene, layout, &bench.warp, &bench.episode.intrinsics) {
            Ok(w) => report.warp_residual_m = Some(mean_distance(&w.state, &ep.scene.state_in(&layout.egocentric_camera()))),
            Err(e) => report.error = Some(format!("warped depth: {e}")),
        }
    }
    report
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    corpus_sha256: String,
    num_demos: usize,
    augment: bool,
    epochs: usize,
    initial_loss: f64,
    final_loss: f64,
    policy_file: String,
    policy_sha256: String,
}

pub fn train(ctx: &Run) -> Outcome {
    let cfg = &ctx.cfg;
    let corpus_path = require_file(cfg.train.corpus.as_ref(), "corpus", "--corpus")?;
    cfg.policy.validate().map_err(usage)?;
    if cfg.policy.epochs == 0 {
        return Err(usage(anyhow!("policy.epochs must be positive")));
    }
    let corpus = load_demos(&corpus_path).map_err(usage)?;
    ctx.prepare()?;

    let every = (cfg.policy.epochs / 10).max(1);
    let outcome = train_with(&corpus.demos, &cfg.policy, |epoch, loss| {
        if epoch % every == 0 || epoch + 1 == cfg.policy.epochs {
            eprintln!("epoch {epoch:>5}  loss {loss:.6}");
        }
    })
    .map_err(runtime)?;

    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        writeln!(csv, "{i},{l}").expect("writing to a String");
    }
    ctx.write("loss.csv", csv.as_bytes())?;
    let policy_file = ctx.path("policy.json");
    outcome.policy.save(&policy_file).map_err(runtime)?;

    let (initial, last) = (outcome.loss_curve[0], *outcome.loss_curve.last().expect("epochs > 0"));
    ctx.write_json(
        "train.json",
        &TrainReport {
            seed: cfg.policy.seed,
            corpus_sha256: sha256_file(&corpus_path)?,
            num_demos: corpus.demos.len(),
            augment: cfg.policy.augment,
            epochs: cfg.policy.epochs,
            initial_loss: initial,
            final_loss: last,
            policy_file: "policy.json".into(),
            policy_sha256: sha256_file(&policy_file)?,
        },
    )?;
    if !(last <= initial) {
        return Err(Failure::Gate(format!("training diverged: final loss {last} exceeds initial loss {initial}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct DistributionReport {
    distribution: SceneDistribution,
    #[serde(flatten)]
    report: EvalReport,
}

#[derive(Serialize)]
struct RolloutReport {
    seed: u64,
    policy: String,
    policy_sha256: Option<String>,
    results: Vec<DistributionReport>,
}

pub fn rollout(ctx: &Run) -> Outcome {
    let cfg = &ctx.cfg;
    if cfg.eval.num_episodes == 0 {
        return Err(usage(anyhow!("eval.num_episodes must be positive")));
    }
    if cfg.rollout.distributions.is_empty() {
        return Err(usage(anyhow!("rollout.distributions is empty")));
    }
    let (name, hash, policy): (String, Option<String>, Evaluator) = if cfg.rollout.oracle {
        let oracle = PointOracle::new(cfg.eval.family, &cfg.eval.layout);
        let seed = cfg.seed;
        ("oracle".into(), None, Box::new(move |e| evaluate(&oracle, e, seed)))
    } else {
        let path = require_file(cfg.rollout.policy.as_ref(), "policy file", "--policy")?;
        let policy = Policy::load(&path).map_err(usage)?;
        let expected = cfg.eval.layout.generate_scene(cfg.eval.family, 0).num_points();
        if policy.num_points != expected {
            return Err(usage(anyhow!("policy expects {} object points but {:?} scenes have {expected}", policy.num_points, cfg.eval.family)));
        }
        let seed = cfg.seed;
        (path.display().to_string(), Some(sha256_file(&path)?), Box::new(move |e| evaluate(&policy, e, seed)))
    };
    ctx.prepare()?;

    let mut results = Vec::new();
    for &distribution in &cfg.rollout.distributions {
        let eval = EvalConfig { distribution, keep_traces: true, ..cfg.eval.clone() };
        let report = policy(&eval).map_err(sim)?;
        eprintln!("rollout {distribution:?}: {}/{} succeeded", report.successes, report.episodes.len());
        results.push(DistributionReport { distribution, report });
    }
    let gate: Vec<String> = results
        .iter()
        .filter(|r| ctx.gate && r.report.success_rate < cfg.rollout.gate_min_success_rate)
        .map(|r| format!("{:?} success rate {:.2} below {}", r.distribution, r.report.success_rate, cfg.rollout.gate_min_success_rate))
        .collect();
    ctx.write_json("rollout.json", &RolloutReport { seed: cfg.seed, policy: name, policy_sha256: hash, results })?;
    if gate.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gate(gate.join("; ")))
    }
}

#[derive(Serialize)]
struct CalibScene {
    seed: u64,
    residual_m: f64,
    max_point_error_m: f64,
}

#[derive(Serialize)]
struct CalibReport {
    seed: u64,
    fit_scale: f64,
    fit_shift: f64,
    tag_residual_rms_m: f64,
    mean_residual_m: f64,
    scenes: Vec<CalibScene>,
}

pub fn calib_depth(ctx: &Run) -> Outcome {
    let cfg = &ctx.cfg;
    let c = &cfg.calib;
    if c.num_scenes == 0 {
        return Err(usage(anyhow!("calib.num_scenes must be positive")));
    }
    if c.warp.tags.len() < 2 {
        return Err(usage(anyhow!("calib.warp.tags needs at least two calibration points")));
    }
    ctx.prepare()?;
    let seeds: Vec<u64> = (0..c.num_scenes as u64).map(|i| seed::derive_tagged(cfg.seed, "calib", i)).collect();
    let runs = par::map(&seeds, |&s| {
        let scene = c.layout.generate_scene(c.family, s);
        let obs = observe_warped(&scene, &c.layout, &c.warp, &c.intrinsics)?;
        let truth = scene.state_in(&c.layout.egocentric_camera());
        let errs: Vec<f64> = obs.state.points.iter().zip(&truth.points).map(|(p, q)| (p - q).norm()).collect();
        Ok::<_, SimError>((obs.fit, CalibScene { seed: s, residual_m: mean(&errs), max_point_error_m: errs.iter().cloned().fold(0.0, f64::max) }))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>().map_err(sim)?;
    let fit = runs[0].0;
    let scenes: Vec<CalibScene> = runs.into_iter().map(|r| r.1).collect();
    let mean_residual = mean(&scenes.iter().map(|s| s.residual_m).collect::<Vec<_>>());
    eprintln!("calib-depth: scale {:.4}, shift {:.4} m, mean residual after calibration {:.1} mm", fit.scale, fit.shift, mean_residual * 1e3);
    ctx.write_json(
        "calib.json",
        &CalibReport {
            seed: cfg.seed,
            fit_scale: fit.scale,
            fit_shift: fit.shift,
            tag_residual_rms_m: fit.residual_rms,
            mean_residual_m: mean_residual,
            scenes,
        },
    )?;
    if ctx.gate && !(mean_residual >= c.gate_min_residual) {
        return Err(Failure::Gate(format!("mean residual {mean_residual:.4} m below {}", c.gate_min_residual)));
    }
    Ok(())
}

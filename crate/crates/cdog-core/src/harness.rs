//! Batch evaluation harness: runs associators over a generated dataset,
//! aggregates scores per (count, sigma, method) and emits CSV tables.
//!
//! Scenes fan out to a worker pool; output ordering is fixed by
//! (count, batch, sigma, method) so results are byte-identical regardless
//! of worker count, apart from the `time_ms` column.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig, BaselineMethod};
use crate::benchmark::{
    self, drop_views, entry_path, BenchmarkError, Manifest, SceneEntry,
};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::pipeline::{self, CdogConfig, PipelineError};
use crate::rng::derive_seed;
use crate::scene::{Scene, SceneError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown method `{0}` (expected cdog, greedy or cca)")]
    UnknownMethod(String),
    #[error("no scene could be evaluated")]
    NothingSucceeded,
}

/// Association method under evaluation. Ordering fixes the method column
/// order in emitted tables.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cdog,
    Greedy,
    Cca,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cdog, Method::Greedy, Method::Cca];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cdog => "cdog",
            Method::Greedy => "greedy",
            Method::Cca => "cca",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cdog" => Ok(Method::Cdog),
            "greedy" => Ok(Method::Greedy),
            "cca" => Ok(Method::Cca),
            other => Err(HarnessError::UnknownMethod(other.to_string())),
        }
    }
}

/// Runs one method on one scene and scores it against the ground truth.
pub fn run_scene(
    scene: &Scene,
    method: Method,
    cfg: &CdogConfig,
) -> Result<MetricsReport, HarnessError> {
    let result = match method {
        Method::Cdog => pipeline::associate(scene, cfg)?,
        Method::Greedy | Method::Cca => {
            let bcfg = BaselineConfig {
                method: match method {
                    Method::Greedy => BaselineMethod::Greedy,
                    _ => BaselineMethod::Cca,
                },
                tau: pipeline::resolve_threshold(scene, cfg),
            };
            baselines::baseline_associate(scene, &bcfg)
                .map_err(PipelineError::from)?
        }
    };
    let time_ms = result.timings.total();
    Ok(metrics::evaluate(&result, scene, time_ms)?)
}

/// One scored (scene, method) pair.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub entry: SceneEntry,
    pub views: u32,
    pub method: Method,
    pub report: MetricsReport,
}

/// Harness run options.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub methods: Vec<Method>,
    pub threads: usize,
    pub config: CdogConfig,
    /// Randomly retain this many views per scene before association.
    pub keep_views: Option<u32>,
    pub view_seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Cdog],
            threads: 1,
            config: CdogConfig::default(),
            keep_views: None,
            view_seed: 0,
        }
    }
}

/// Runs every (scene, method) pair of a dataset. Scenes that fail to load
/// or associate are logged and skipped; errors out only when nothing
/// succeeds. Records come back sorted by (count, batch, sigma, method).
pub fn run_dataset(
    root: &Path,
    manifest: &Manifest,
    opts: &RunOptions,
) -> Result<Vec<SceneRecord>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .expect("thread pool");

    let jobs: Vec<(&SceneEntry, Method)> = manifest
        .scenes
        .iter()
        .flat_map(|e| opts.methods.iter().map(move |&m| (e, m)))
        .collect();

    let mut records: Vec<SceneRecord> = pool.install(|| {
        jobs.par_iter()
            .filter_map(|(entry, method)| {
                match run_entry(root, entry, *method, opts) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        log::warn!("skipping {} ({method}): {e}", entry.file);
                        None
                    }
                }
            })
            .collect()
    });
    if records.is_empty() {
        return Err(HarnessError::NothingSucceeded);
    }
    records.sort_by(|a, b| {
        (a.entry.count, a.entry.batch, a.entry.sigma.to_bits(), a.method).cmp(&(
            b.entry.count,
            b.entry.batch,
            b.entry.sigma.to_bits(),
            b.method,
        ))
    });
    Ok(records)
}

fn run_entry(
    root: &Path,
    entry: &SceneEntry,
    method: Method,
    opts: &RunOptions,
) -> Result<SceneRecord, HarnessError> {
    let mut scene = Scene::load(&entry_path(root, entry))?;
    if let Some(keep) = opts.keep_views {
        scene = drop_views(&scene, keep, derive_seed(opts.view_seed, &[entry.seed]));
    }
    let views = scene.view_ids().len() as u32;
    let report = run_scene(&scene, method, &opts.config)?;
    Ok(SceneRecord {
        entry: entry.clone(),
        views,
        method,
        report,
    })
}

/// Mean of the finite values; NaN when none are.
fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0u32);
    for v in values {
        if v.is_finite() {
            sum += v;
            n += 1;
        }
    }
    if n > 0 {
        sum / f64::from(n)
    } else {
        f64::NAN
    }
}

/// Per-(count, sigma, method) score averages — one cell of the score map.
#[derive(Debug, Clone, Copy)]
pub struct AggregateRow {
    pub count: u32,
    pub sigma: f64,
    pub method: Method,
    pub scenes: u32,
    pub g_f1: f64,
    pub g_iou: f64,
    pub mp_f1: f64,
    pub mp_iou: f64,
    pub pg_p: f64,
    pub pg_r: f64,
    pub pg_f1: f64,
    pub err3d: f64,
    pub bpe: f64,
    pub time_ms: f64,
}

/// Averages the per-scene reports over batches. Rows are ordered by
/// (count, sigma, method).
pub fn aggregate(records: &[SceneRecord]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(u32, u64, Method), Vec<&SceneRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.entry.count, r.entry.sigma.to_bits(), r.method))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((count, sigma_bits, method), rs)| AggregateRow {
            count,
            sigma: f64::from_bits(sigma_bits),
            method,
            scenes: rs.len() as u32,
            g_f1: finite_mean(rs.iter().map(|r| r.report.g.f1)),
            g_iou: finite_mean(rs.iter().map(|r| r.report.g.iou)),
            mp_f1: finite_mean(rs.iter().map(|r| r.report.mp_f1)),
            mp_iou: finite_mean(rs.iter().map(|r| r.report.mp_iou)),
            pg_p: finite_mean(rs.iter().map(|r| r.report.pg.p)),
            pg_r: finite_mean(rs.iter().map(|r| r.report.pg.r)),
            pg_f1: finite_mean(rs.iter().map(|r| r.report.pg.f1)),
            err3d: finite_mean(rs.iter().map(|r| r.report.err3d)),
            bpe: finite_mean(rs.iter().map(|r| r.report.bpe)),
            time_ms: finite_mean(rs.iter().map(|r| r.report.time_ms)),
        })
        .collect()
}

/// Fixed-width decimal for CSV cells; NaN spelled out.
fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "nan".to_string()
    }
}

pub const SCENE_CSV_HEADER: &str = "scene,count,sigma,views,method,g_p,g_r,g_f1,g_iou,\
mp_p,mp_r,mp_f1,mp_iou,pg_p,pg_r,pg_f1,err3d,bpe,bpe_rms,time_ms";

pub fn scene_csv_row(
    scene_name: &str,
    count: u32,
    sigma: f64,
    views: u32,
    method: &str,
    r: &MetricsReport,
) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        scene_name,
        count,
        csv_num(sigma),
        views,
        method,
        csv_num(r.g.p),
        csv_num(r.g.r),
        csv_num(r.g.f1),
        csv_num(r.g.iou),
        csv_num(r.mp_p),
        csv_num(r.mp_r),
        csv_num(r.mp_f1),
        csv_num(r.mp_iou),
        csv_num(r.pg.p),
        csv_num(r.pg.r),
        csv_num(r.pg.f1),
        csv_num(r.err3d),
        csv_num(r.bpe),
        csv_num(r.bpe_rms),
        csv_num(r.time_ms),
    )
}

fn open(path: &Path) -> Result<std::fs::File, HarnessError> {
    std::fs::File::create(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One row per (scene, method).
pub fn write_scene_csv(records: &[SceneRecord], path: &Path) -> Result<(), HarnessError> {
    let mut f = open(path)?;
    let mut text = String::from(SCENE_CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&scene_csv_row(
            &r.entry.file,
            r.entry.count,
            r.entry.sigma,
            r.views,
            r.method.name(),
            &r.report,
        ));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// The score-map grid: one row per (count, sigma, method) cell.
pub fn write_grid_csv(rows: &[AggregateRow], path: &Path) -> Result<(), HarnessError> {
    let mut f = open(path)?;
    let mut text = String::from(
        "count,sigma,method,scenes,g_f1,g_iou,mp_f1,mp_iou,pg_p,pg_r,pg_f1,err3d,bpe,time_ms\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.count,
            csv_num(r.sigma),
            r.method,
            r.scenes,
            csv_num(r.g_f1),
            csv_num(r.g_iou),
            csv_num(r.mp_f1),
            csv_num(r.mp_iou),
            csv_num(r.pg_p),
            csv_num(r.pg_r),
            csv_num(r.pg_f1),
            csv_num(r.err3d),
            csv_num(r.bpe),
            csv_num(r.time_ms),
        ));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Mean runtime per point count and method, over all sigmas and batches.
pub fn write_timing_csv(records: &[SceneRecord], path: &Path) -> Result<(), HarnessError> {
    let mut cells: BTreeMap<(u32, Method), Vec<f64>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.entry.count, r.method))
            .or_default()
            .push(r.report.time_ms);
    }
    let mut f = open(path)?;
    let mut text = String::from("count,method,scenes,time_ms\n");
    for ((count, method), times) in cells {
        text.push_str(&format!(
            "{},{},{},{}\n",
            count,
            method,
            times.len(),
            csv_num(finite_mean(times.iter().copied())),
        ));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// One view-count ablation row: scores at a fixed retained-view count.
#[derive(Debug, Clone, Copy)]
pub struct AblationRow {
    pub keep_views: u32,
    pub scenes: u32,
    pub g_f1: f64,
    pub mp_f1: f64,
    pub pg_f1: f64,
    pub err3d: f64,
    pub time_ms: f64,
}

/// Sweeps the retained view count at a fixed noise level: for each
/// keep_views value, every (count, batch) scene is generated, reduced with
/// a seeded view subset, associated and scored.
pub fn view_ablation(
    counts: &[u32],
    batches: u32,
    sigma: f64,
    keep_range: std::ops::RangeInclusive<u32>,
    seed: u64,
    cfg: &CdogConfig,
) -> Result<Vec<AblationRow>, HarnessError> {
    let rig_spec = benchmark::RigSpec::default();
    let rig = benchmark::make_rig(&rig_spec, seed)?;
    let bounds = benchmark::default_bounds();

    let mut rows = Vec::new();
    for keep in keep_range {
        let mut reports = Vec::new();
        for &count in counts {
            for batch in 0..batches {
                let scene_seed =
                    derive_seed(seed, &[u64::from(count), u64::from(batch), sigma.to_bits()]);
                let scene =
                    benchmark::generate_scene(count, &rig, &bounds, sigma, scene_seed, None)?;
                let scene = drop_views(&scene, keep, derive_seed(scene_seed, &[u64::from(keep)]));
                reports.push(run_scene(&scene, Method::Cdog, cfg)?);
            }
        }
        rows.push(AblationRow {
            keep_views: keep,
            scenes: reports.len() as u32,
            g_f1: finite_mean(reports.iter().map(|r| r.g.f1)),
            mp_f1: finite_mean(reports.iter().map(|r| r.mp_f1)),
            pg_f1: finite_mean(reports.iter().map(|r| r.pg.f1)),
            err3d: finite_mean(reports.iter().map(|r| r.err3d)),
            time_ms: finite_mean(reports.iter().map(|r| r.time_ms)),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<(), HarnessError> {
    let mut f = open(path)?;
    let mut text = String::from("keep_views,scenes,g_f1,mp_f1,pg_f1,err3d,time_ms\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.keep_views,
            r.scenes,
            csv_num(r.g_f1),
            csv_num(r.mp_f1),
            csv_num(r.pg_f1),
            csv_num(r.err3d),
            csv_num(r.time_ms),
        ));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Strips the `time_ms` column (always last) from a CSV, for determinism
/// comparisons across worker counts.
pub fn strip_time_column(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(i) => &line[..i],
            None => line,
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{generate_benchmark, BenchmarkSpec, RigSpec};

    fn tiny_dataset(dir: &Path) -> Manifest {
        let spec = BenchmarkSpec {
            point_counts: vec![3, 6],
            sigmas: vec![0.0, 1.0],
            batches: 2,
            seed: 42,
            keep_views: None,
            min_separation_px: None,
        };
        generate_benchmark(&spec, &RigSpec::default(), dir).unwrap()
    }

    #[test]
    fn dataset_run_is_ordered_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let opts = RunOptions {
            methods: vec![Method::Cdog, Method::Greedy],
            ..RunOptions::default()
        };
        let records = run_dataset(dir.path(), &manifest, &opts).unwrap();
        assert_eq!(records.len(), manifest.scenes.len() * 2);
        let keys: Vec<_> = records
            .iter()
            .map(|r| (r.entry.count, r.entry.batch, r.entry.sigma.to_bits(), r.method))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(records.iter().all(|r| r.views == 10));
    }

    #[test]
    fn worker_count_does_not_change_scores() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let serial = RunOptions::default();
        let parallel = RunOptions {
            threads: 8,
            ..RunOptions::default()
        };
        let a = run_dataset(dir.path(), &manifest, &serial).unwrap();
        let b = run_dataset(dir.path(), &manifest, &parallel).unwrap();
        let out_a = dir.path().join("a.csv");
        let out_b = dir.path().join("b.csv");
        write_scene_csv(&a, &out_a).unwrap();
        write_scene_csv(&b, &out_b).unwrap();
        let text_a = std::fs::read_to_string(&out_a).unwrap();
        let text_b = std::fs::read_to_string(&out_b).unwrap();
        assert_eq!(strip_time_column(&text_a), strip_time_column(&text_b));
    }

    #[test]
    fn aggregate_groups_batches() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let records = run_dataset(dir.path(), &manifest, &RunOptions::default()).unwrap();
        let rows = aggregate(&records);
        // 2 counts x 2 sigmas x 1 method
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.scenes == 2));
        // noise-free cells are perfect
        for r in rows.iter().filter(|r| r.sigma == 0.0) {
            assert_eq!(r.pg_f1, 1.0, "count {}", r.count);
            assert!(r.err3d < 1e-6);
        }
    }

    #[test]
    fn keep_views_option_reduces_views() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let opts = RunOptions {
            keep_views: Some(3),
            ..RunOptions::default()
        };
        let records = run_dataset(dir.path(), &manifest, &opts).unwrap();
        assert!(records.iter().all(|r| r.views == 3));
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!(
            "nope".parse::<Method>(),
            Err(HarnessError::UnknownMethod(_))
        ));
    }

    #[test]
    fn strip_time_column_drops_last_field() {
        let csv = "a,b,time_ms\n1,2,3.5\n";
        assert_eq!(strip_time_column(csv), "a,b\n1,2\n");
    }

    #[test]
    fn ablation_emits_requested_rows() {
        let rows = view_ablation(&[5], 1, 3.0, 2..=4, 7, &CdogConfig::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows.iter().map(|r| r.keep_views).collect::<Vec<_>>(),
            vec![2, 3, 4]
        );
        assert!(rows.iter().all(|r| r.scenes == 1));
        assert!(rows.iter().all(|r| r.time_ms >= 0.0));
    }

    #[test]
    fn csv_numbers_use_plain_decimal() {
        assert_eq!(csv_num(1.0), "1.000000");
        assert_eq!(csv_num(f64::NAN), "nan");
        assert_eq!(csv_num(0.25), "0.250000");
    }
}

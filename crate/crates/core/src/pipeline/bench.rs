//! Batch runs over a directory of bundles and a line-delimited query file.
//!
//! Input lines: `{"scene_id", "query", "gt_box": {"min", "max"}, "gt_category"}`.
//! Outputs: `predictions.jsonl` (one line per successful query, input order)
//! and `report.json` (metrics, per-line errors, the sample list).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ground, scene_table, GroundingResult, PipelineConfig, Services};
use crate::eval::{
    classify_split, evaluate, iou3d, GroundingRecord, MetricsReport, DEFAULT_THRESHOLDS,
};
use crate::proposal::{EmbeddingProvider, GroundingQuery, ObjectProfileTable, QueryParser};
use crate::reasoning::JudgeClient;
use crate::scene::{load_scene_bundle, Box3D, SceneBundle};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLine {
    pub scene_id: String,
    pub query: String,
    pub gt_box: Box3D,
    pub gt_category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub scene_id: String,
    pub query: String,
    pub pred_box: Box3D,
    pub instance_id: Option<u32>,
    pub fallback: bool,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryError {
    /// 1-based line number in the queries file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub line: usize,
    pub scene_id: String,
    pub query: String,
}

/// What the judge factory sees for each query.
pub struct QueryContext<'a> {
    pub line: &'a QueryLine,
    pub bundle: &'a SceneBundle,
    pub table: &'a ObjectProfileTable,
}

/// Builds the judge for one query (oracle judges need the ground truth).
pub type JudgeFactory<'a> = dyn Fn(&QueryContext<'_>) -> Result<Arc<dyn JudgeClient>> + Sync + 'a;

pub struct BenchServices<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub parser: &'a dyn QueryParser,
    pub judge: &'a JudgeFactory<'a>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub predictions: Vec<PredictionLine>,
    #[serde(skip)]
    pub records: Vec<GroundingRecord>,
    pub report: Option<MetricsReport>,
    pub errors: Vec<QueryError>,
    pub samples: Vec<Sample>,
}

impl BenchOutcome {
    pub fn predictions_jsonl(&self) -> String {
        self.predictions
            .iter()
            .map(|p| serde_json::to_string(p).expect("serializable") + "\n")
            .collect()
    }

    pub fn write(&self, out_dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<()> {
        let out = out_dir.as_ref();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let p = out.join("predictions.jsonl");
        fs::write(&p, self.predictions_jsonl()).map_err(|e| Error::io(&p, e))?;
        let report = serde_json::json!({
            "metrics": self.report,
            "errors": self.errors,
            "samples": self.samples,
            "config": config,
        });
        let p = out.join("report.json");
        fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }
}

/// The table row whose box best overlaps `gt_box`; the target for oracle judges.
pub fn oracle_target(table: &ObjectProfileTable, gt_box: &Box3D) -> Option<u32> {
    table
        .rows
        .iter()
        .map(|r| (iou3d(&r.bbox, gt_box), r))
        .filter(|(iou, _)| *iou > 0.0)
        .max_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(b.1.instance_id.cmp(&a.1.instance_id))
        })
        .map(|(_, r)| r.instance_id)
}

/// Maps `scene_id` (from each bundle's `scene.json`) to its directory.
pub fn discover_bundles(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    #[derive(Deserialize)]
    struct Head {
        scene_id: String,
    }
    let mut found = BTreeMap::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let dir = entry.map_err(|e| Error::io(root, e))?.path();
        let manifest = dir.join("scene.json");
        if !manifest.is_file() {
            continue;
        }
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let head: Head = serde_json::from_str(&text)
            .map_err(|e| Error::bundle(&manifest, "scene_id", e.to_string()))?;
        found.insert(head.scene_id, dir);
    }
    Ok(found)
}

fn parse_lines(text: &str) -> (Vec<(usize, QueryLine)>, Vec<QueryError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<QueryLine>(l) {
            Ok(q) if q.query.trim().is_empty() => errors.push(QueryError {
                line: i + 1,
                message: "empty query text".into(),
            }),
            Ok(q) => ok.push((i + 1, q)),
            Err(e) => errors.push(QueryError {
                line: i + 1,
                message: format!("malformed query line: {e}"),
            }),
        }
    }
    (ok, errors)
}

pub fn run_benchmark(
    bundles_dir: impl AsRef<Path>,
    queries_path: impl AsRef<Path>,
    config: &PipelineConfig,
    services: &BenchServices<'_>,
) -> Result<BenchOutcome> {
    config.validate()?;
    let queries_path = queries_path.as_ref();
    let text = fs::read_to_string(queries_path).map_err(|e| Error::io(queries_path, e))?;
    let (lines, mut errors) = parse_lines(&text);

    let index = discover_bundles(bundles_dir.as_ref())?;
    let wanted: BTreeSet<&str> = lines.iter().map(|(_, q)| q.scene_id.as_str()).collect();
    let bundles: BTreeMap<&str, std::result::Result<(SceneBundle, ObjectProfileTable), String>> =
        wanted
            .into_par_iter()
            .map(|id| {
                let loaded = match index.get(id) {
                    None => Err(format!("no bundle with scene_id `{id}`")),
                    Some(dir) => load_scene_bundle(dir)
                        .map(|b| {
                            let t = scene_table(&b, config);
                            (b, t)
                        })
                        .map_err(|e| e.to_string()),
                };
                (id, loaded)
            })
            .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let outcomes: Vec<(usize, QueryOutcome)> = pool.install(|| {
        lines
            .par_iter()
            .map(|(n, q)| {
                (
                    *n,
                    run_one(q, &bundles[q.scene_id.as_str()], config, services),
                )
            })
            .collect()
    });

    let mut predictions = Vec::new();
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for ((n, q), (_, outcome)) in lines.iter().zip(outcomes) {
        samples.push(Sample {
            line: *n,
            scene_id: q.scene_id.clone(),
            query: q.query.clone(),
        });
        match outcome {
            Ok((p, r)) => {
                predictions.push(p);
                records.push(r);
            }
            Err(message) => errors.push(QueryError { line: *n, message }),
        }
    }
    errors.sort_by_key(|e| e.line);
    let report = if records.is_empty() {
        None
    } else {
        Some(evaluate(&records, &DEFAULT_THRESHOLDS, config.scoring)?)
    };
    Ok(BenchOutcome {
        predictions,
        records,
        report,
        errors,
        samples,
    })
}

type QueryOutcome = std::result::Result<(PredictionLine, GroundingRecord), String>;

fn run_one(
    q: &QueryLine,
    loaded: &std::result::Result<(SceneBundle, ObjectProfileTable), String>,
    config: &PipelineConfig,
    services: &BenchServices<'_>,
) -> QueryOutcome {
    let t0 = Instant::now();
    let (bundle, table) = loaded.as_ref().map_err(Clone::clone)?;
    let judge = (services.judge)(&QueryContext {
        line: q,
        bundle,
        table,
    })
    .map_err(|e| e.to_string())?;
    let query = GroundingQuery::new(q.query.clone()).map_err(|e| e.to_string())?;
    let result: GroundingResult = ground(
        bundle,
        &query,
        config,
        Services {
            embedder: services.embedder,
            parser: services.parser,
            judge: judge.as_ref(),
        },
    )
    .map_err(|e| e.to_string())?;
    let (split, _) = classify_split(table, &q.gt_category);
    let calls = result.judge_calls();
    Ok((
        PredictionLine {
            scene_id: q.scene_id.clone(),
            query: q.query.clone(),
            pred_box: result.bbox,
            instance_id: result.instance_id,
            fallback: result.fallback,
            calls,
        },
        GroundingRecord {
            scene_id: q.scene_id.clone(),
            query: q.query.clone(),
            predicted: result.bbox,
            ground_truth: q.gt_box,
            split,
            fallback: result.fallback,
            judge_calls: calls,
            wall_time: t0.elapsed(),
        },
    ))
}

/// Parses `name=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>)> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep `{spec}` must look like name=v1,v2")))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::Config(format!("sweep `{spec}` has no values")));
    }
    PipelineConfig::default().set(name.trim(), &values[0])?;
    Ok((name.trim().to_string(), values))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: String,
    pub metrics: Option<MetricsReport>,
    pub errors: usize,
}

/// One benchmark per sweep value, each written to `<out>/<name>=<value>/`,
/// with a `sweep.json` summary.
pub fn run_sweep(
    bundles_dir: &Path,
    queries_path: &Path,
    out_dir: &Path,
    base: &PipelineConfig,
    spec: &str,
    services: &BenchServices<'_>,
) -> Result<Vec<SweepPoint>> {
    let (name, values) = parse_sweep(spec)?;
    let mut points = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        cfg.set(&name, &value)?;
        let outcome = run_benchmark(bundles_dir, queries_path, &cfg, services)?;
        outcome.write(out_dir.join(format!("{name}={value}")), &cfg)?;
        points.push(SweepPoint {
            parameter: name.clone(),
            value,
            metrics: outcome.report,
            errors: outcome.errors.len(),
        });
    }
    let p = out_dir.join("sweep.json");
    fs::write(&p, serde_json::to_vec_pretty(&points)?).map_err(|e| Error::io(&p, e))?;
    Ok(points)
}

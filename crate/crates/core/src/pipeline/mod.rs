//! End-to-end grounding of one query against one scene bundle.

pub mod bench;
mod config;

use std::fs;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::projection::{project_all, rank_views, sample_frames};
use crate::proposal::{
    build_opt, filter_instances, parse_target_category, select_proposals, EmbeddingProvider,
    GroundingQuery, ObjectProfileTable, ProfileRow, QueryParser, TargetCategory,
};
use crate::reasoning::{predict, JudgeClient, Prompt, ReasoningState};
use crate::scene::{Box3D, SceneBundle};
use crate::sequence::build_sequence;
use crate::{Error, Result};

pub use config::{PipelineConfig, EMBEDDING_TOKEN_VAR, JUDGE_TOKEN_VAR, PARSER_TOKEN_VAR};

/// External services used by [`ground`].
#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub parser: &'a dyn QueryParser,
    pub judge: &'a dyn JudgeClient,
}

/// Wall time per stage, serialized in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    #[serde(serialize_with = "crate::eval::secs::serialize")]
    pub select: Duration,
    #[serde(serialize_with = "crate::eval::secs::serialize")]
    pub project: Duration,
    #[serde(serialize_with = "crate::eval::secs::serialize")]
    pub stitch: Duration,
    #[serde(serialize_with = "crate::eval::secs::serialize")]
    pub reason: Duration,
    #[serde(serialize_with = "crate::eval::secs::serialize")]
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingResult {
    /// Instance chosen by the judge tournament.
    pub instance_id: Option<u32>,
    /// Instance whose box is returned; differs from `instance_id` only on fallback.
    pub box_instance_id: u32,
    pub bbox: Box3D,
    pub fallback: bool,
    pub fallback_reason: Option<String>,
    pub target: TargetCategory,
    pub selected_category: String,
    pub near_tie: bool,
    pub proposals: usize,
    /// Proposals with at least one visible view.
    pub candidates: usize,
    pub timings: StageTimings,
    pub reasoning: ReasoningState,
}

impl GroundingResult {
    pub fn judge_calls(&self) -> usize {
        self.reasoning.calls()
    }
}

/// The proposal table a bundle yields under `config`.
pub fn scene_table(bundle: &SceneBundle, config: &PipelineConfig) -> ObjectProfileTable {
    build_opt(
        &filter_instances(&bundle.masks, config.confidence_threshold),
        &bundle.cloud,
    )
}

/// Highest confidence, ties to the smaller instance id.
fn fallback_row(rows: &[ProfileRow]) -> &ProfileRow {
    rows.iter()
        .min_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.instance_id.cmp(&b.instance_id))
        })
        .expect("non-empty proposal set")
}

pub fn ground(
    bundle: &SceneBundle,
    query: &GroundingQuery,
    config: &PipelineConfig,
    services: Services<'_>,
) -> Result<GroundingResult> {
    config.validate()?;
    let t_start = Instant::now();
    let mut timings = StageTimings::default();

    let opt = scene_table(bundle, config);
    if opt.is_empty() {
        return Err(Error::NoProposals);
    }
    let target = parse_target_category(query, services.parser, &config.parser_retry())?;
    let selection = select_proposals(&opt, &target.category, services.embedder)?;
    timings.select = t_start.elapsed();

    let t = Instant::now();
    let frames = sample_frames(&bundle.frames, config.frame_interval)?;
    let sets: Vec<(u32, &[u32])> = selection
        .proposals
        .iter()
        .map(|r| (r.instance_id, r.point_indices.as_slice()))
        .collect();
    let projections = project_all(&sets, &bundle.cloud, &frames, config.visibility_threshold);
    let ranked: Vec<_> = projections
        .into_iter()
        .map(|views| rank_views(views, config.n_frame))
        .collect();
    timings.project = t.elapsed();

    if let Some(dir) = &config.export_projections {
        let dir = dir.join(&bundle.scene_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for view in ranked.iter().flatten() {
            let path = dir.join(format!("{}_{}.rle", view.instance_id, view.frame_id));
            fs::write(&path, view.to_rle_text()).map_err(|e| Error::io(&path, e))?;
        }
    }

    let t = Instant::now();
    let frame_of = |id: u32| frames.iter().copied().find(|f| f.frame_id == id);
    let sequences = selection
        .proposals
        .iter()
        .zip(&ranked)
        .filter(|(_, views)| !views.is_empty())
        .map(|(row, views)| build_sequence(row.instance_id, views, frame_of, config.expansion))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &config.export_sequences {
        let dir = dir.join(&bundle.scene_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in &sequences {
            s.save_png(dir.join(format!("{}.png", s.instance_id)))?;
        }
    }
    timings.stitch = t.elapsed();

    let t = Instant::now();
    let prediction = predict(
        &sequences,
        query,
        config.batch_limit,
        services.judge,
        &config.judge_retry(),
    )?;
    timings.reason = t.elapsed();

    let chosen = prediction
        .instance_id
        .and_then(|id| selection.proposals.iter().find(|r| r.instance_id == id));
    let (row, fallback_reason) = match chosen {
        Some(row) => (row, None),
        None => {
            let reason = if sequences.is_empty() {
                "no proposal has a visible view"
            } else {
                "judge declined every remaining candidate"
            };
            (fallback_row(&selection.proposals), Some(reason.to_string()))
        }
    };
    timings.total = t_start.elapsed();

    Ok(GroundingResult {
        instance_id: prediction.instance_id,
        box_instance_id: row.instance_id,
        bbox: row.bbox,
        fallback: fallback_reason.is_some(),
        fallback_reason,
        target,
        selected_category: selection.target_category,
        near_tie: selection.near_tie,
        proposals: selection.proposals.len(),
        candidates: sequences.len(),
        timings,
        reasoning: prediction.state,
    })
}

/// Wraps a judge that cannot take concurrent requests so that calls from
/// several threads are issued one at a time.
pub struct SerialJudge<J> {
    inner: J,
    gate: Mutex<()>,
}

impl<J: JudgeClient> SerialJudge<J> {
    pub fn new(inner: J) -> Self {
        Self {
            inner,
            gate: Mutex::new(()),
        }
    }
}

impl<J: JudgeClient> JudgeClient for SerialJudge<J> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn supports_concurrency(&self) -> bool {
        false
    }

    fn complete(&self, prompt: &Prompt<'_>) -> Result<String> {
        let _g = self.gate.lock().unwrap();
        self.inner.complete(prompt)
    }
}

/// Embedding counterpart of [`SerialJudge`].
pub struct SerialEmbedder<P> {
    inner: P,
    gate: Mutex<()>,
}

impl<P: EmbeddingProvider> SerialEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            gate: Mutex::new(()),
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for SerialEmbedder<P> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn supports_concurrency(&self) -> bool {
        false
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<crate::proposal::Embedding>> {
        let _g = self.gate.lock().unwrap();
        self.inner.embed_batch(texts)
    }
}

//! Iterative batched tournament over a judge.
//!
//! The candidate queue is cut into batches of at most `L` sequences. Each
//! batch goes to the judge together with the query; a batch either yields
//! one survivor or is discarded. Survivors form the next round's queue, and
//! rounds repeat until at most one candidate remains.

pub mod answer;
pub mod judge;

use std::time::{Duration, Instant};

use image::RgbImage;
use serde::Serialize;

use crate::proposal::GroundingQuery;
use crate::remote::RetryPolicy;
use crate::sequence::ImageSequence;
use crate::{Error, Result};

pub use answer::parse_choice;
pub use judge::{
    prompt_digest, FnJudge, JudgeClient, OracleJudge, RecordingJudge, RemoteJudge, ReplayJudge,
    Transcript,
};

/// Consecutive chunks of at most `limit` items, order preserved.
pub fn slice_batches<T: Clone>(queue: &[T], limit: usize) -> Result<Vec<Vec<T>>> {
    if limit < 2 {
        return Err(Error::Config(format!(
            "batch limit must be at least 2 (got {limit})"
        )));
    }
    Ok(queue.chunks(limit).map(<[T]>::to_vec).collect())
}

/// Candidate `k` (1-based) is labelled `Candidate k`.
pub fn candidate_label(k: usize) -> String {
    format!("Candidate {k}")
}

pub const ANSWER_SCHEMA: &str = r#"{"choice": <integer or null>}"#;

/// One judge request: instruction text plus one stitched image per candidate.
#[derive(Debug, Clone)]
pub struct Prompt<'a> {
    pub text: String,
    pub images: Vec<&'a RgbImage>,
    /// Instance ids behind `Candidate 1..k`; never shown to the judge.
    pub candidates: Vec<u32>,
}

pub fn construct_prompt<'a>(
    query: &GroundingQuery,
    batch: &[&'a ImageSequence],
) -> Result<Prompt<'a>> {
    if query.text.trim().is_empty() {
        return Err(Error::InvalidInput("query text is empty".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput("batch is empty".into()));
    }
    let k = batch.len();
    let mut text = format!(
        "You are shown {k} candidate image sequences from an indoor 3D scene. Each candidate \
         is one object seen from several camera viewpoints, stacked vertically, with the object \
         outlined by a red rectangle in every view.\n\nDescription: {}\n\n",
        query.text.trim()
    );
    for i in 1..=k {
        text.push_str(&format!("{}: image {i}\n", candidate_label(i)));
    }
    text.push_str(&format!(
        "\nWhich candidate is the object described above? Consider the object's appearance \
         and its spatial relations to the surroundings across all views. If none of the \
         candidates matches the description, answer null.\nRespond with exactly one JSON \
         object of the form {ANSWER_SCHEMA}, where the integer is the candidate number \
         (1 to {k})."
    ));
    Ok(Prompt {
        text,
        images: batch.iter().map(|s| &s.stitched).collect(),
        candidates: batch.iter().map(|s| s.instance_id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeAnswer {
    /// 1-based position within the batch.
    pub choice: Option<usize>,
    pub raw: String,
    pub attempts: u32,
    /// Last failure when every attempt failed; `choice` is then `None`.
    pub error: Option<String>,
}

/// Asks the judge, retrying on transport errors and unparseable answers.
pub fn vlm_select(
    client: &dyn JudgeClient,
    prompt: &Prompt<'_>,
    retry: &RetryPolicy,
) -> JudgeAnswer {
    let mut raw = String::new();
    let (result, attempts) = retry.run(|_| {
        let text = client.complete(prompt).map_err(|e| e.to_string())?;
        raw = text;
        parse_choice(&raw, prompt.candidates.len())
    });
    match result {
        Ok(choice) => JudgeAnswer {
            choice,
            raw,
            attempts,
            error: None,
        },
        Err(e) => {
            log::warn!("judge {} gave no usable answer: {e}", client.identity());
            JudgeAnswer {
                choice: None,
                raw,
                attempts,
                error: Some(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    /// 1-based round number.
    pub round: u32,
    /// Batch position within its round.
    pub batch: usize,
    pub candidates: Vec<u32>,
    pub answer: JudgeAnswer,
    pub selected: Option<u32>,
    #[serde(serialize_with = "ser_millis")]
    pub latency: Duration,
}

fn ser_millis<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReasoningState {
    /// Instance ids still in contention.
    pub queue: Vec<u32>,
    /// Completed rounds.
    pub round: u32,
    pub ledger: Vec<LedgerEntry>,
}

impl ReasoningState {
    pub fn calls(&self) -> usize {
        self.ledger.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub instance_id: Option<u32>,
    pub state: ReasoningState,
}

/// Runs the tournament. Returns the surviving instance id, or `None` when
/// every batch of some round was declined.
pub fn predict(
    sequences: &[ImageSequence],
    query: &GroundingQuery,
    batch_limit: usize,
    client: &dyn JudgeClient,
    retry: &RetryPolicy,
) -> Result<Prediction> {
    if batch_limit < 2 {
        return Err(Error::Config(format!(
            "batch limit must be at least 2 (got {batch_limit})"
        )));
    }
    let mut queue: Vec<&ImageSequence> = sequences.iter().collect();
    {
        let mut ids: Vec<u32> = queue.iter().map(|s| s.instance_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "duplicate candidate instance ids".into(),
            ));
        }
    }
    let mut state = ReasoningState::default();

    while queue.len() > 1 {
        state.round += 1;
        let batches = slice_batches(&queue, batch_limit)?;
        let prompts = batches
            .iter()
            .map(|b| construct_prompt(query, b))
            .collect::<Result<Vec<_>>>()?;

        let judge = |p: &Prompt<'_>| {
            let t0 = Instant::now();
            let a = vlm_select(client, p, retry);
            (a, t0.elapsed())
        };
        let answers: Vec<(JudgeAnswer, Duration)> = if client.supports_concurrency()
            && prompts.len() > 1
        {
            std::thread::scope(|s| {
                let handles: Vec<_> = prompts.iter().map(|p| s.spawn(move || judge(p))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("judge thread"))
                    .collect()
            })
        } else {
            prompts.iter().map(judge).collect()
        };

        let mut next = Vec::new();
        for (i, ((answer, latency), batch)) in answers.into_iter().zip(&batches).enumerate() {
            let winner = answer.choice.map(|k| batch[k - 1]);
            if let Some(w) = winner {
                next.push(w);
            }
            state.ledger.push(LedgerEntry {
                round: state.round,
                batch: i,
                candidates: batch.iter().map(|s| s.instance_id).collect(),
                answer,
                selected: winner.map(|w| w.instance_id),
                latency,
            });
        }
        queue = next;
    }

    state.queue = queue.iter().map(|s| s.instance_id).collect();
    Ok(Prediction {
        instance_id: state.queue.first().copied(),
        state,
    })
}

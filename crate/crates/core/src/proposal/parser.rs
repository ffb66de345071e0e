use serde::{Deserialize, Serialize};

use super::lexicon::{INDOOR_CLASSES, STOPWORDS};
use crate::remote::{Endpoint, JsonClient, RetryPolicy};
use crate::{Error, Result};

/// A referring expression, optionally with the dataset-annotated target class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_category: Option<String>,
}

impl GroundingQuery {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("query text is empty".into()));
        }
        Ok(Self {
            text,
            target_category: None,
        })
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.target_category = Some(category.into());
        self
    }
}

/// Extracts the target object class from a referring expression.
pub trait QueryParser: Send + Sync {
    fn identity(&self) -> String;
    fn parse(&self, query: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TargetCategory {
    pub category: String,
    /// Set when the configured parser failed and the heuristic answered instead.
    pub fallback: bool,
}

pub fn parse_target_category(
    query: &GroundingQuery,
    parser: &dyn QueryParser,
    retry: &RetryPolicy,
) -> Result<TargetCategory> {
    if query.text.trim().is_empty() {
        return Err(Error::InvalidInput("query text is empty".into()));
    }
    if let Some(c) = &query.target_category {
        return Ok(TargetCategory {
            category: c.clone(),
            fallback: false,
        });
    }
    let (result, attempts) = retry.run(|_| {
        parser.parse(&query.text).and_then(|c| match c.trim() {
            "" => Err(Error::Service {
                service: "query parser",
                identity: parser.identity(),
                message: "empty category".into(),
            }),
            c => Ok(c.to_lowercase()),
        })
    });
    match result {
        Ok(category) => Ok(TargetCategory {
            category,
            fallback: false,
        }),
        Err(e) => {
            log::warn!("query parser failed after {attempts} attempts ({e}); using heuristic");
            Ok(TargetCategory {
                category: HeuristicParser.parse(&query.text)?,
                fallback: true,
            })
        }
    }
}

/// Offline head-noun extraction against the indoor class lexicon.
///
/// Lowercases, keeps the first sentence, and scans left to right for the
/// longest lexicon entry starting at each token (plural `-s`/`-es` forms
/// accepted). The first hit's last word is the category. Without a hit the
/// first non-stopword token is returned.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicParser;

impl HeuristicParser {
    fn tokens(query: &str) -> Vec<String> {
        let lower = query.to_lowercase();
        let first = lower
            .split(['.', '!', '?', ';'])
            .find(|s| s.chars().any(char::is_alphanumeric))
            .unwrap_or("");
        first
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    fn word_matches(token: &str, word: &str) -> bool {
        token == word
            || token.strip_suffix('s') == Some(word)
            || token.strip_suffix("es") == Some(word)
    }

    fn match_at(tokens: &[String]) -> Option<&'static str> {
        INDOOR_CLASSES
            .iter()
            .filter(|class| {
                let words: Vec<&str> = class.split(' ').collect();
                words.len() <= tokens.len()
                    && words
                        .iter()
                        .zip(tokens)
                        .all(|(w, t)| Self::word_matches(t, w))
            })
            .max_by_key(|class| class.split(' ').count())
            .copied()
    }
}

impl QueryParser for HeuristicParser {
    fn identity(&self) -> String {
        "heuristic".into()
    }

    fn parse(&self, query: &str) -> Result<String> {
        let tokens = Self::tokens(query);
        for i in 0..tokens.len() {
            if let Some(class) = Self::match_at(&tokens[i..]) {
                return Ok(class.rsplit(' ').next().unwrap().to_string());
            }
        }
        tokens
            .into_iter()
            .find(|t| !STOPWORDS.contains(&t.as_str()))
            .ok_or_else(|| Error::InvalidInput(format!("no content words in query `{query}`")))
    }
}

pub const DEFAULT_PARSER_INSTRUCTION: &str = "Identify the category of the single target object \
described by the query. Answer with a short lowercase noun phrase naming an indoor object class.";

#[derive(Serialize)]
struct ParseRequest<'a> {
    query: &'a str,
    instruction: &'a str,
}

#[derive(Deserialize)]
struct ParseResponse {
    category: String,
}

/// `POST {"query", "instruction"}` returning `{"category"}`.
#[derive(Debug)]
pub struct RemoteParser {
    client: JsonClient,
    pub instruction: String,
}

impl RemoteParser {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            client: JsonClient::new(endpoint),
            instruction: DEFAULT_PARSER_INSTRUCTION.to_string(),
        }
    }
}

impl QueryParser for RemoteParser {
    fn identity(&self) -> String {
        format!("remote({})", self.client.url())
    }

    fn parse(&self, query: &str) -> Result<String> {
        let resp: ParseResponse = self
            .client
            .post(&ParseRequest {
                query,
                instruction: &self.instruction,
            })
            .map_err(|message| Error::Service {
                service: "query parser",
                identity: self.identity(),
                message,
            })?;
        Ok(resp.category)
    }
}

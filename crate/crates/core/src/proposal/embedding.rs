use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::remote::{Endpoint, JsonClient};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "embedding must be non-empty with finite components".into(),
            ));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|c| c * factor).collect())
    }
}

/// Text encoder used to compare the query target against scene categories.
pub trait EmbeddingProvider: Send + Sync {
    fn identity(&self) -> String;

    /// Whether `embed_batch` may be called from several threads at once.
    fn supports_concurrency(&self) -> bool {
        true
    }

    /// Must be deterministic: the same text always yields the same vector.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<Embedding> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("cannot embed empty text".into()));
    }
    let mut out = provider.embed_batch(&[text])?;
    out.pop().ok_or_else(|| Error::Service {
        service: "embedding provider",
        identity: provider.identity(),
        message: "returned no vectors".into(),
    })
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let d: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Offline provider: SHA-256 of `seed || text` seeds a ChaCha stream that is
/// expanded to `dim` uniform components and normalized to unit length.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 16, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn embed_one(&self, text: &str) -> Embedding {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(h.finalize().into());
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-12 {
                return Embedding(v.into_iter().map(|c| c / n).collect());
            }
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn identity(&self) -> String {
        format!("hash(d={}, seed={})", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Fixed text-to-vector table. Unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct LookupEmbedder {
    table: HashMap<String, Embedding>,
}

impl LookupEmbedder {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let table = entries
            .into_iter()
            .map(|(k, v)| Ok((k.into(), Embedding::new(v)?)))
            .collect::<Result<_>>()?;
        Ok(Self { table })
    }
}

impl EmbeddingProvider for LookupEmbedder {
    fn identity(&self) -> String {
        format!("lookup({} entries)", self.table.len())
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts
            .iter()
            .map(|t| {
                self.table.get(*t).cloned().ok_or_else(|| Error::Service {
                    service: "embedding provider",
                    identity: self.identity(),
                    message: format!("no vector for `{t}`"),
                })
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
    dim: usize,
}

/// `POST {"texts": [...]}` returning `{"embeddings": [[...]], "dim": d}`.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            client: JsonClient::new(endpoint),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn identity(&self) -> String {
        format!("remote({})", self.client.url())
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let fail = |message: String| Error::Service {
            service: "embedding provider",
            identity: self.identity(),
            message,
        };
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts }).map_err(fail)?;
        if resp.embeddings.len() != texts.len() {
            return Err(fail(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                resp.embeddings.len()
            )));
        }
        resp.embeddings
            .into_iter()
            .map(|v| {
                if v.len() != resp.dim {
                    return Err(fail(format!(
                        "vector of length {} but dim {}",
                        v.len(),
                        resp.dim
                    )));
                }
                Embedding::new(v).map_err(|e| fail(e.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_closed_forms() {
        assert_abs_diff_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(),
            1.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            cosine_similarity(&e(&[1.0, 1.0]), &e(&[1.0, 0.0])).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn cosine_rejects_degenerate() {
        assert!(matches!(
            cosine_similarity(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(Error::DegenerateEmbedding)
        ));
        assert!(matches!(
            cosine_similarity(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(Error::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn hash_embedder_is_deterministic_unit_norm() {
        let p = HashEmbedder::default();
        let a = embed_text(&p, "chair").unwrap();
        let b = embed_text(&p, "chair").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 16);
        assert_abs_diff_eq!(a.norm(), 1.0, epsilon = 1e-12);
        assert_ne!(a, embed_text(&p, "table").unwrap());
    }

    #[test]
    fn empty_text_is_rejected() {
        let p = HashEmbedder::default();
        assert!(matches!(embed_text(&p, "  "), Err(Error::InvalidInput(_))));
        let remote = RemoteEmbedder::new(Endpoint::new("http://127.0.0.1:9/"));
        assert!(matches!(
            embed_text(&remote, ""),
            Err(Error::InvalidInput(_))
        ));
    }
}

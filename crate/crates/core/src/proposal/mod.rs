//! Proposal selection: confidence filtering, the object profile table, and
//! picking the candidate set whose category best matches the query target.

pub mod embedding;
pub mod lexicon;
pub mod parser;

use std::collections::BTreeSet;

use serde::Serialize;

use crate::scene::{mask_to_box3d, Box3D, InstanceMask, PointCloud};
use crate::{Error, Result};

pub use embedding::{
    cosine_similarity, embed_text, Embedding, EmbeddingProvider, HashEmbedder, LookupEmbedder,
    RemoteEmbedder,
};
pub use parser::{
    parse_target_category, GroundingQuery, HeuristicParser, QueryParser, RemoteParser,
    TargetCategory,
};

/// Similarity gap under which the best category is reported as a near tie.
pub const NEAR_TIE_GAP: f64 = 1e-6;

/// Masks with `confidence >= threshold`, in input order.
pub fn filter_instances(masks: &[InstanceMask], threshold: f64) -> Vec<InstanceMask> {
    masks
        .iter()
        .filter(|m| m.confidence >= threshold)
        .cloned()
        .collect()
}

/// One row of the object profile table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    /// Table id, `0..m` in filtered order.
    pub id: u32,
    /// Id carried by the source mask in the bundle.
    pub instance_id: u32,
    pub category: String,
    pub confidence: f64,
    pub bbox: Box3D,
    #[serde(skip)]
    pub point_indices: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ObjectProfileTable {
    pub rows: Vec<ProfileRow>,
}

impl ObjectProfileTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&ProfileRow> {
        self.rows.get(id as usize)
    }

    /// Distinct categories in lexicographic order.
    pub fn categories(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.category.as_str()).collect()
    }

    pub fn count_category(&self, category: &str) -> usize {
        self.rows.iter().filter(|r| r.category == category).count()
    }
}

pub fn build_opt(masks: &[InstanceMask], cloud: &PointCloud) -> ObjectProfileTable {
    let rows = masks
        .iter()
        .enumerate()
        .map(|(i, m)| ProfileRow {
            id: i as u32,
            instance_id: m.instance_id,
            category: m.category.clone(),
            confidence: m.confidence,
            bbox: mask_to_box3d(m, cloud),
            point_indices: m.point_indices.clone(),
        })
        .collect();
    ObjectProfileTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalSet {
    pub target_category: String,
    /// Rows whose category equals `target_category`, in id order.
    pub proposals: Vec<ProfileRow>,
    /// Similarity of each distinct table category to the target text.
    pub similarities: Vec<(String, f64)>,
    /// The best and runner-up categories differ by less than [`NEAR_TIE_GAP`].
    pub near_tie: bool,
}

pub fn select_proposals(
    opt: &ObjectProfileTable,
    target: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<ProposalSet> {
    if opt.is_empty() {
        return Err(Error::NoProposals);
    }
    if target.trim().is_empty() {
        return Err(Error::InvalidInput("target category is empty".into()));
    }
    let categories: Vec<&str> = opt.categories().into_iter().collect();
    let mut texts = Vec::with_capacity(categories.len() + 1);
    texts.push(target);
    texts.extend(&categories);
    let vectors = provider.embed_batch(&texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Service {
            service: "embedding provider",
            identity: provider.identity(),
            message: format!("asked for {} vectors, got {}", texts.len(), vectors.len()),
        });
    }

    let similarities = categories
        .iter()
        .zip(&vectors[1..])
        .map(|(c, v)| Ok((c.to_string(), cosine_similarity(&vectors[0], v)?)))
        .collect::<Result<Vec<_>>>()?;

    // Strict comparison keeps the lexicographically smallest category on ties.
    let mut best = 0;
    for (i, (_, z)) in similarities.iter().enumerate().skip(1) {
        if *z > similarities[best].1 {
            best = i;
        }
    }
    let near_tie = similarities
        .iter()
        .enumerate()
        .any(|(i, (_, z))| i != best && similarities[best].1 - z < NEAR_TIE_GAP);

    let target_category = similarities[best].0.clone();
    let proposals = opt
        .rows
        .iter()
        .filter(|r| r.category == target_category)
        .cloned()
        .collect();
    Ok(ProposalSet {
        target_category,
        proposals,
        similarities,
        near_tie,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mask(id: u32, category: &str, confidence: f64, idx: Vec<u32>) -> InstanceMask {
        InstanceMask {
            instance_id: id,
            category: category.into(),
            confidence,
            point_indices: idx,
        }
    }

    fn cloud() -> PointCloud {
        let pts = (0..6)
            .map(|i| Point {
                xyz: [i as f64, (i * i) as f64, -(i as f64)],
                rgb: [0; 3],
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn filter_examples() {
        let ms: Vec<_> = [0.1, 0.2, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &c)| mask(i as u32, "chair", c, vec![0]))
            .collect();
        let kept: Vec<f64> = filter_instances(&ms, 0.2)
            .iter()
            .map(|m| m.confidence)
            .collect();
        assert_eq!(kept, vec![0.2, 0.9]);
        assert_eq!(filter_instances(&ms, 0.0), ms);
        assert!(filter_instances(&ms, 1.0).is_empty());
    }

    #[test]
    fn opt_rows_and_boxes() {
        let c = cloud();
        let ms = vec![
            mask(10, "chair", 0.9, vec![0, 1]),
            mask(11, "table", 0.8, vec![2, 5]),
            mask(12, "chair", 0.7, vec![3]),
        ];
        let opt = build_opt(&ms, &c);
        assert_eq!(
            opt.rows.iter().map(|r| r.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        // boxes from a direct scan over the listed indices
        for (row, m) in opt.rows.iter().zip(&ms) {
            for k in 0..3 {
                let vals: Vec<f64> = m
                    .point_indices
                    .iter()
                    .map(|&i| c.xyz(i as usize)[k])
                    .collect();
                assert_eq!(
                    row.bbox.min[k],
                    vals.iter().cloned().fold(f64::MAX, f64::min)
                );
                assert_eq!(
                    row.bbox.max[k],
                    vals.iter().cloned().fold(f64::MIN, f64::max)
                );
            }
        }
        assert!(build_opt(&[], &c).is_empty());
    }

    fn toy_table() -> ObjectProfileTable {
        let c = cloud();
        build_opt(
            &[
                mask(0, "chair", 0.9, vec![0]),
                mask(1, "table", 0.9, vec![1]),
                mask(2, "chair", 0.9, vec![2]),
            ],
            &c,
        )
    }

    #[test]
    fn toy_selection() {
        let p =
            LookupEmbedder::new([("chair", vec![1.0, 0.0]), ("table", vec![0.0, 1.0])]).unwrap();
        let set = select_proposals(&toy_table(), "chair", &p).unwrap();
        assert_eq!(set.target_category, "chair");
        assert_eq!(
            set.proposals.iter().map(|r| r.id).collect::<Vec<_>>(),
            vec![0, 2]
        );
        assert!(!set.near_tie);
    }

    #[test]
    fn singleton_category_always_selected() {
        let c = cloud();
        let opt = build_opt(
            &[mask(0, "sofa", 0.9, vec![0]), mask(1, "sofa", 0.5, vec![1])],
            &c,
        );
        let set = select_proposals(&opt, "whiteboard", &HashEmbedder::default()).unwrap();
        assert_eq!(set.target_category, "sofa");
        assert_eq!(set.proposals.len(), 2);
    }

    #[test]
    fn ties_go_to_smallest_category_and_are_flagged() {
        let c = cloud();
        let opt = build_opt(
            &[
                mask(0, "zebra", 0.9, vec![0]),
                mask(1, "apple", 0.9, vec![1]),
            ],
            &c,
        );
        let p = LookupEmbedder::new([
            ("q", vec![1.0, 0.0]),
            ("zebra", vec![1.0, 1.0]),
            ("apple", vec![1.0, -1.0]),
        ])
        .unwrap();
        let set = select_proposals(&opt, "q", &p).unwrap();
        assert_eq!(set.target_category, "apple");
        assert!(set.near_tie);
    }

    #[test]
    fn empty_table_errors() {
        let err = select_proposals(
            &ObjectProfileTable::default(),
            "chair",
            &HashEmbedder::default(),
        );
        assert!(matches!(err, Err(Error::NoProposals)));
        assert_eq!(Error::NoProposals.to_string(), "no proposals in scene");
    }

    #[test]
    fn random_categories_match_exhaustive_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let provider = HashEmbedder::default();
        let c = cloud();
        for trial in 0..20 {
            let names: Vec<String> = (0..5).map(|k| format!("cat{trial}_{k}")).collect();
            let ms: Vec<_> = (0..8)
                .map(|i| mask(i, &names[rng.gen_range(0..5)], 0.9, vec![0]))
                .collect();
            let opt = build_opt(&ms, &c);
            let target = format!("target{trial}");
            let set = select_proposals(&opt, &target, &provider).unwrap();

            // oracle: every row's similarity computed independently, argmax
            // with lexicographic tie-break
            let t = provider.embed_one(&target);
            let mut best: Option<(f64, String)> = None;
            for r in &opt.rows {
                let e = provider.embed_one(&r.category);
                let dot: f64 = t
                    .as_slice()
                    .iter()
                    .zip(e.as_slice())
                    .map(|(a, b)| a * b)
                    .sum();
                let z = dot / (t.norm() * e.norm());
                best = match best {
                    Some((bz, bc)) if bz > z || (bz == z && bc <= r.category) => Some((bz, bc)),
                    _ => Some((z, r.category.clone())),
                };
            }
            assert_eq!(set.target_category, best.unwrap().1);
        }
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(confs in prop::collection::vec(0.0f64..=1.0, 0..30), theta in 0.0f64..=1.0) {
            let ms: Vec<_> = confs.iter().enumerate().map(|(i, &c)| mask(i as u32, "x", c, vec![0])).collect();
            let once = filter_instances(&ms, theta);
            prop_assert_eq!(filter_instances(&once, theta), once.clone());
            prop_assert!(once.iter().all(|m| m.confidence >= theta));
        }

        #[test]
        fn proposals_are_exactly_the_selected_category(picks in prop::collection::vec(0usize..4, 1..12)) {
            let names = ["bed", "chair", "desk", "lamp"];
            let c = cloud();
            let ms: Vec<_> = picks.iter().enumerate().map(|(i, &k)| mask(i as u32, names[k], 0.5, vec![0])).collect();
            let opt = build_opt(&ms, &c);
            let set = select_proposals(&opt, "chair", &HashEmbedder::default()).unwrap();
            let expected: Vec<_> = opt.rows.iter().filter(|r| r.category == set.target_category).cloned().collect();
            prop_assert_eq!(set.proposals, expected);
        }
    }
}

//! Semantic entropy over clusters of equivalent sampled answers.
//!
//! Answers are grouped by a greedy single pass against cluster
//! representatives; entropy (nats) is taken over cluster mass fractions.
//! High entropy means the samples disagree in meaning.

use std::sync::Arc;

use serde::Serialize;

use crate::client::{ClientError, ModelClient, PromptPayload};
use crate::error::{Error, Result};
use crate::util::pairwise_sum;

/// Canonical answer form: lowercased, whitespace-collapsed, one leading
/// article and trailing punctuation stripped.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    let mut words = collapsed.as_slice();
    if let Some((first, rest)) = words.split_first() {
        if matches!(*first, "a" | "an" | "the") && !rest.is_empty() {
            words = rest;
        }
    }
    let joined = words.join(" ");
    joined.trim_end_matches(['.', ',', '!', '?', ';', ':']).to_string()
}

/// How two answers are judged equivalent.
#[derive(Clone)]
pub enum EquivalenceJudge {
    /// Equality of [`normalize_answer`] outputs.
    NormalizedExact,
    /// Ask a model whether the two answers mean the same thing.
    ClientJudged(Arc<dyn ModelClient>),
}

impl EquivalenceJudge {
    pub fn parse(kind: &str, client: Option<Arc<dyn ModelClient>>) -> Result<Self> {
        match kind {
            "exact" | "normalized_exact" => Ok(EquivalenceJudge::NormalizedExact),
            "client" | "client_judged" => client.map(EquivalenceJudge::ClientJudged).ok_or_else(|| {
                Error::validation("judge", "client_judged requires a live client")
            }),
            other => Err(Error::validation("judge", format!("unknown judge `{other}`"))),
        }
    }

    fn equivalent(&self, a: &str, b: &str) -> std::result::Result<bool, ClientError> {
        match self {
            EquivalenceJudge::NormalizedExact => Ok(normalize_answer(a) == normalize_answer(b)),
            EquivalenceJudge::ClientJudged(client) => {
                let prompt = PromptPayload::text(format!(
                    "Do these two answers mean the same thing?\nAnswer 1: {a}\nAnswer 2: {b}"
                ));
                let options = vec!["yes".to_string(), "no".to_string()];
                let logits = client.query_options(&prompt, &options)?;
                Ok(crate::util::argmax(&logits) == 0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub representative: String,
    pub member_indices: Vec<usize>,
}

/// A partition of sample indices into semantic-equivalence clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterPartition {
    pub clusters: Vec<Cluster>,
    pub total: usize,
}

/// Greedy single-pass clustering: each sample joins the first cluster whose
/// representative it matches, else founds a new one (representative = first
/// member). Transitivity is imposed by construction.
pub fn cluster_samples(samples: &[String], judge: &EquivalenceJudge) -> Result<ClusterPartition> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("cluster_samples"));
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    for (index, sample) in samples.iter().enumerate() {
        let mut placed = false;
        for cluster in clusters.iter_mut() {
            let same = judge
                .equivalent(&cluster.representative, sample)
                .map_err(|source| Error::Judge { index, source })?;
            if same {
                cluster.member_indices.push(index);
                placed = true;
                break;
            }
        }
        if !placed {
            clusters.push(Cluster { representative: sample.clone(), member_indices: vec![index] });
        }
    }
    Ok(ClusterPartition { clusters, total: samples.len() })
}

/// Entropy (nats) over cluster mass fractions: −Σ (n_c/N)·ln(n_c/N).
pub fn semantic_entropy(partition: &ClusterPartition) -> f64 {
    if partition.total == 0 {
        return 0.0;
    }
    let total = partition.total as f64;
    let terms: Vec<f64> = partition
        .clusters
        .iter()
        .filter(|c| !c.member_indices.is_empty())
        .map(|c| {
            let p = c.member_indices.len() as f64 / total;
            -p * p.ln()
        })
        .collect();
    pairwise_sum(&terms).max(0.0) // a lone cluster yields -0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalizes_article_and_punctuation() {
        assert_eq!(normalize_answer("The  Eiffel Tower."), "eiffel tower");
        assert_eq!(normalize_answer("PARIS"), "paris");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("a cat!!"), "cat");
        // a lone article is kept, not erased
        assert_eq!(normalize_answer("The"), "the");
    }

    #[test]
    fn identical_samples_form_one_cluster() {
        let samples = strings(&["Paris"; 10]);
        let partition = cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap();
        assert_eq!(partition.clusters.len(), 1);
        assert_eq!(partition.clusters[0].member_indices.len(), 10);
    }

    #[test]
    fn normalized_variants_cluster_together() {
        let samples = strings(&["Paris", "paris.", "The Paris", "London"]);
        let partition = cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap();
        let mut sizes: Vec<usize> = partition.clusters.iter().map(|c| c.member_indices.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 3]);
    }

    #[test]
    fn distinct_samples_stay_singletons() {
        let samples = strings(&["a1", "b2", "c3", "d4"]);
        let partition = cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap();
        assert_eq!(partition.clusters.len(), 4);
    }

    #[test]
    fn member_indices_partition_the_input() {
        let samples = strings(&["x", "y", "x", "z", "Y."]);
        let partition = cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap();
        let mut all: Vec<usize> = partition
            .clusters
            .iter()
            .flat_map(|c| c.member_indices.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn entropy_closed_forms() {
        let single = cluster_samples(&strings(&["a", "a"]), &EquivalenceJudge::NormalizedExact).unwrap();
        assert_eq!(semantic_entropy(&single), 0.0);

        let four = cluster_samples(&strings(&["a", "b", "c", "d"]), &EquivalenceJudge::NormalizedExact).unwrap();
        assert!((semantic_entropy(&four) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_five_three_two() {
        let mut samples = Vec::new();
        samples.extend(strings(&["a"; 5]));
        samples.extend(strings(&["b"; 3]));
        samples.extend(strings(&["c"; 2]));
        let partition = cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap();
        let h = semantic_entropy(&partition);
        assert!((h - 1.0297).abs() < 5e-5, "H = {h}");
    }

    #[test]
    fn entropy_permutation_invariant() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut samples = strings(&["p", "q", "p", "r", "p", "q", "s", "s", "s", "t"]);
        let base = semantic_entropy(&cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap());
        for _ in 0..20 {
            samples.shuffle(&mut rng);
            let h = semantic_entropy(&cluster_samples(&samples, &EquivalenceJudge::NormalizedExact).unwrap());
            assert!((h - base).abs() < 1e-12);
        }
    }

    #[test]
    fn merging_clusters_never_increases_entropy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n_clusters = rng.random_range(2..8);
            let mut next = 0usize;
            let clusters: Vec<Cluster> = (0..n_clusters)
                .map(|i| {
                    let size = rng.random_range(1..6);
                    let member_indices: Vec<usize> = (next..next + size).collect();
                    next += size;
                    Cluster { representative: format!("c{i}"), member_indices }
                })
                .collect();
            let partition = ClusterPartition { clusters: clusters.clone(), total: next };
            let before = semantic_entropy(&partition);

            let mut merged = clusters;
            let absorbed = merged.remove(1);
            merged[0].member_indices.extend(absorbed.member_indices);
            let after = semantic_entropy(&ClusterPartition { clusters: merged, total: next });
            assert!(after <= before + 1e-12, "merge raised H: {before} -> {after}");
        }
    }

    #[test]
    fn client_judge_consults_model() {
        use crate::client::mock::FnClient;
        // judge that calls everything equivalent
        let always_yes = FnClient::options_only("yes-judge", |_, options| {
            let mut logits = vec![0.0; options.len()];
            logits[0] = 5.0;
            Ok(logits)
        });
        let judge = EquivalenceJudge::ClientJudged(Arc::new(always_yes));
        let partition = cluster_samples(&strings(&["cat", "dog", "bird"]), &judge).unwrap();
        assert_eq!(partition.clusters.len(), 1);
    }

    #[test]
    fn client_judge_failure_carries_index() {
        use crate::client::mock::FailingClient;
        let judge = EquivalenceJudge::ClientJudged(Arc::new(FailingClient));
        match cluster_samples(&strings(&["a", "b"]), &judge) {
            Err(Error::Judge { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected judge error, got {other:?}"),
        }
    }
}

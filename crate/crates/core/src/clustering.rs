//! Semantic deduplication, single-linkage clustering and posterior coverage.
//!
//! Similarity comes from a [`SimilarityJudge`]; the default judge compares
//! unit-normalized mean token embeddings. Any judge returning a symmetric
//! matrix with values in `[-1, 1]` can stand in for it.

use serde::{Deserialize, Serialize};

use crate::candidate::Candidate;
use crate::error::{Error, Result};
use crate::vector::{dot, mean_pool, unit};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.85;
pub const DEFAULT_DELTA: f64 = 0.05;

/// Dense symmetric similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub trait SimilarityJudge {
    fn similarity_matrix(&self, candidates: &[Candidate]) -> Result<SimilarityMatrix>;
}

/// Cosine of unit-normalized mean token embeddings.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddingJudge;

/// Unit-normalized mean of a candidate's token embeddings.
pub fn answer_embedding(c: &Candidate) -> Result<Vec<f64>> {
    let mean = mean_pool(&c.token_embeddings).ok_or(Error::EmptySequence("token_embeddings"))?;
    unit(&mean, "mean answer embedding")
}

impl SimilarityJudge for EmbeddingJudge {
    fn similarity_matrix(&self, candidates: &[Candidate]) -> Result<SimilarityMatrix> {
        let embeddings = candidates
            .iter()
            .map(answer_embedding)
            .collect::<Result<Vec<_>>>()?;
        embedding_matrix(&embeddings)
    }
}

/// Similarity matrix over precomputed unit answer embeddings.
pub fn embedding_matrix(embeddings: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    if let Some(first) = embeddings.first() {
        if let Some(bad) = embeddings.iter().find(|e| e.len() != first.len()) {
            return Err(Error::Shape {
                what: "answer embedding dimension",
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    Ok(SimilarityMatrix::from_fn(embeddings.len(), |i, j| {
        dot(&embeddings[i], &embeddings[j]).clamp(-1.0, 1.0)
    }))
}

pub fn pairwise_similarity(a: &Candidate, b: &Candidate) -> Result<f64> {
    let (ea, eb) = (answer_embedding(a)?, answer_embedding(b)?);
    if ea.len() != eb.len() {
        return Err(Error::Shape {
            what: "answer embedding dimension",
            expected: ea.len(),
            got: eb.len(),
        });
    }
    Ok(dot(&ea, &eb).clamp(-1.0, 1.0))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "similarity threshold must lie in (0, 1), got {threshold}"
        )))
    }
}

/// Greedy arrival-order scan: an item is dropped iff its similarity to some
/// already retained item exceeds `threshold`. Returns retained indices.
pub fn deduplicate(sim: &SimilarityMatrix, threshold: f64) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    let mut retained: Vec<usize> = Vec::new();
    for i in 0..sim.len() {
        if retained.iter().all(|&r| sim.get(r, i) <= threshold) {
            retained.push(i);
        }
    }
    Ok(retained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub representative: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub similarity_threshold: f64,
    pub round: u32,
    pub p_star: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Index of the highest-weight cluster, ties to the lowest index.
    pub fn leader(&self) -> usize {
        let mut best = 0;
        for (k, c) in self.clusters.iter().enumerate().skip(1) {
            if c.weight > self.clusters[best].weight {
                best = k;
            }
        }
        best
    }

    pub fn cluster_of(&self, item: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.members.contains(&item))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.weight).collect()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so component ids are order independent
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage clustering of `items` (indices into `sim` and `scores`):
/// `i` and `j` are linked when `Sim_ij > threshold`, clusters are connected
/// components ordered by smallest member. The representative is the member
/// with the highest combined score. Weights are filled in by
/// [`posterior_weights`].
pub fn cluster_items(
    sim: &SimilarityMatrix,
    items: &[usize],
    scores: &[f64],
    threshold: f64,
) -> Result<ClusterSet> {
    check_threshold(threshold)?;
    if items.is_empty() {
        return Err(Error::EmptyInput("cluster candidates"));
    }
    if scores.len() != sim.len() {
        return Err(Error::Shape {
            what: "scores vs candidates",
            expected: sim.len(),
            got: scores.len(),
        });
    }
    let m = items.len();
    let mut sets = DisjointSet::new(m);
    for a in 0..m {
        for b in (a + 1)..m {
            if sim.get(items[a], items[b]) > threshold {
                sets.union(a, b);
            }
        }
    }
    let mut by_root: Vec<(usize, Vec<usize>)> = Vec::new();
    for (a, &item) in items.iter().enumerate() {
        let root = sets.find(a);
        match by_root.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(item),
            None => by_root.push((root, vec![item])),
        }
    }
    let clusters = by_root
        .into_iter()
        .map(|(_, members)| {
            let mut representative = members[0];
            for &i in &members[1..] {
                if scores[i] > scores[representative] {
                    representative = i;
                }
            }
            Cluster {
                members,
                representative,
                weight: 0.0,
            }
        })
        .collect();
    let mut set = ClusterSet {
        clusters,
        similarity_threshold: threshold,
        round: 0,
        p_star: 0.0,
    };
    posterior_weights(&mut set, scores)?;
    Ok(set)
}

/// Clusters a candidate list with the default embedding judge.
pub fn cluster(candidates: &[Candidate], scores: &[f64], threshold: f64) -> Result<ClusterSet> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("cluster candidates"));
    }
    let sim = EmbeddingJudge.similarity_matrix(candidates)?;
    let items: Vec<usize> = (0..candidates.len()).collect();
    cluster_items(&sim, &items, scores, threshold)
}

/// `p̂_k = Σ_{i∈C_k} exp(S_i) / Σ_j exp(S_j)` over clustered items, with
/// log-sum-exp stabilization; sets `p_star = max_k p̂_k`.
pub fn posterior_weights(set: &mut ClusterSet, scores: &[f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for c in &set.clusters {
        for &i in &c.members {
            let s = *scores.get(i).ok_or(Error::Shape {
                what: "scores vs cluster members",
                expected: i + 1,
                got: scores.len(),
            })?;
            max = max.max(s);
        }
    }
    let masses: Vec<f64> = set
        .clusters
        .iter()
        .map(|c| c.members.iter().map(|&i| (scores[i] - max).exp()).sum())
        .collect();
    let total: f64 = masses.iter().sum();
    for (c, m) in set.clusters.iter_mut().zip(masses) {
        c.weight = m / total;
    }
    set.p_star = set.clusters[set.leader()].weight;
    Ok(())
}

/// Stop once `p̂* >= 1 - δ`.
pub fn should_stop(p_star: f64, delta: f64) -> bool {
    p_star >= 1.0 - delta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, pairs: &[(usize, usize, f64)], default: f64) -> SimilarityMatrix {
        SimilarityMatrix::from_fn(n, |i, j| {
            pairs
                .iter()
                .find(|(a, b, _)| (*a, *b) == (i, j) || (*a, *b) == (j, i))
                .map_or(default, |p| p.2)
        })
    }

    fn emb(v: Vec<f64>) -> Candidate {
        Candidate {
            answer_text: "x".into(),
            token_logprobs: vec![-1.0],
            token_embeddings: vec![v],
            hidden_states: None,
        }
    }

    #[test]
    fn pairwise_similarity_examples() {
        let a = emb(vec![1.0, 0.0]);
        assert!((pairwise_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(pairwise_similarity(&a, &emb(vec![0.0, 2.0])).unwrap().abs() < 1e-15);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let b = emb(vec![r, r]);
        assert!((pairwise_similarity(&a, &b).unwrap() - r).abs() < 1e-12);
        assert_eq!(pairwise_similarity(&a, &b).unwrap(), pairwise_similarity(&b, &a).unwrap());
        let zero_mean = Candidate {
            token_logprobs: vec![-1.0, -1.0],
            token_embeddings: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            ..emb(vec![1.0, 0.0])
        };
        assert!(matches!(
            pairwise_similarity(&a, &zero_mean),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn dedup_examples() {
        let same = matrix(2, &[], 1.0);
        assert_eq!(deduplicate(&same, 0.9).unwrap(), vec![0]);
        let apart = matrix(3, &[], 0.5);
        assert_eq!(deduplicate(&apart, 0.9).unwrap(), vec![0, 1, 2]);
        let chain = matrix(3, &[(0, 1, 0.95), (1, 2, 0.95), (0, 2, 0.5)], 0.0);
        assert_eq!(deduplicate(&chain, 0.9).unwrap(), vec![0, 2]);
        assert!(deduplicate(&chain, 1.0).is_err());
    }

    #[test]
    fn cluster_examples() {
        let scores = [0.0; 3];
        let all = [0, 1, 2];
        let m = matrix(3, &[(0, 1, 0.95)], 0.2);
        let set = cluster_items(&m, &all, &scores, 0.85).unwrap();
        let members: Vec<_> = set.clusters.iter().map(|c| c.members.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![2]]);

        let m = matrix(3, &[], 1.0);
        assert_eq!(cluster_items(&m, &all, &scores, 0.85).unwrap().len(), 1);

        let m = matrix(3, &[(0, 1, 0.9), (1, 2, 0.9), (0, 2, 0.1)], 0.0);
        let set = cluster_items(&m, &all, &scores, 0.85).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.clusters[0].members, vec![0, 1, 2]);

        assert!(matches!(cluster(&[], &[], 0.85), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn representative_is_highest_scoring_member() {
        let m = matrix(3, &[], 1.0);
        let set = cluster_items(&m, &[0, 1, 2], &[0.1, 0.7, 0.3], 0.85).unwrap();
        assert_eq!(set.clusters[0].representative, 1);
    }

    #[test]
    fn posterior_weight_examples() {
        let e = std::f64::consts::E;
        let m = matrix(3, &[(0, 1, 0.99)], 0.0);
        let set = cluster_items(&m, &[0, 1, 2], &[1.0, 1.0, 0.0], 0.85).unwrap();
        assert!((set.clusters[0].weight - 2.0 * e / (2.0 * e + 1.0)).abs() < 1e-12);
        assert!((set.clusters[1].weight - 1.0 / (2.0 * e + 1.0)).abs() < 1e-12);
        assert!((set.clusters[0].weight - 0.8446).abs() < 1e-4);

        let m = matrix(4, &[(0, 1, 0.99), (0, 2, 0.99), (1, 2, 0.99)], 0.0);
        let set = cluster_items(&m, &[0, 1, 2, 3], &[0.4; 4], 0.85).unwrap();
        assert_eq!(set.weights(), vec![0.75, 0.25]);
        assert_eq!(set.p_star, 0.75);

        let one = cluster_items(&matrix(2, &[], 1.0), &[0, 1], &[3.0, -2.0], 0.85).unwrap();
        assert_eq!(one.p_star, 1.0);
    }

    #[test]
    fn ties_break_to_lowest_cluster_index() {
        let set = cluster_items(&matrix(2, &[], 0.0), &[0, 1], &[0.0, 0.0], 0.85).unwrap();
        assert_eq!(set.leader(), 0);
    }

    #[test]
    fn stop_rule_boundary() {
        assert!(should_stop(0.96, 0.05));
        assert!(!should_stop(0.94, 0.05));
        assert!(should_stop(0.95, 0.05));
    }

    #[test]
    fn subset_clustering_keeps_original_indices() {
        let m = matrix(4, &[(1, 3, 0.99)], 0.0);
        let set = cluster_items(&m, &[1, 2, 3], &[0.0, 0.0, 0.0, 5.0], 0.85).unwrap();
        assert_eq!(set.clusters[0].members, vec![1, 3]);
        assert_eq!(set.clusters[0].representative, 3);
        assert_eq!(set.cluster_of(2), Some(1));
        assert_eq!(set.cluster_of(0), None);
    }
}

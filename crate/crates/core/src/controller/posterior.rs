//! Dirichlet posterior over cluster success probabilities and the mixture
//! token distribution it induces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::candidate::Candidate;
use crate::clustering::ClusterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CoverageReached,
    BudgetExhausted,
    NoImprovement,
    EiBelowCost,
    /// Threshold rule: a candidate reached the configured score target.
    ScoreTargetReached,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::CoverageReached => "coverage_reached",
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::NoImprovement => "no_improvement",
            StopReason::EiBelowCost => "ei_below_cost",
            StopReason::ScoreTargetReached => "score_target_reached",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Dirichlet concentrations, one per cluster.
    pub alpha: Vec<f64>,
    /// Accumulated soft counts `n_k`.
    pub soft_counts: Vec<f64>,
    /// Pool index of each cluster's representative, once clusters are known.
    pub representatives: Vec<usize>,
    pub prior_concentration: f64,
    pub round: u32,
    pub samples_used: u64,
    pub tokens_used: u64,
    /// Latest maximal posterior coverage estimate `p̂*`.
    pub p_star: f64,
    pub stopped: Option<StopReason>,
}

pub fn init_state(num_clusters: usize, prior_concentration: f64) -> Result<ControllerState> {
    if num_clusters == 0 {
        return Err(Error::domain("need at least one cluster"));
    }
    if !(prior_concentration.is_finite() && prior_concentration > 0.0) {
        return Err(Error::domain(format!(
            "prior concentration must be > 0, got {prior_concentration}"
        )));
    }
    Ok(ControllerState {
        alpha: vec![prior_concentration; num_clusters],
        soft_counts: vec![0.0; num_clusters],
        representatives: Vec::new(),
        prior_concentration,
        round: 0,
        samples_used: 0,
        tokens_used: 0,
        p_star: 0.0,
        stopped: None,
    })
}

impl ControllerState {
    /// `π̄_k = (α_k + n_k) / Σ_j (α_j + n_j)`.
    pub fn posterior_mean(&self) -> Vec<f64> {
        let total: f64 = self
            .alpha
            .iter()
            .zip(&self.soft_counts)
            .map(|(a, n)| a + n)
            .sum();
        self.alpha
            .iter()
            .zip(&self.soft_counts)
            .map(|(a, n)| (a + n) / total)
            .collect()
    }

    pub fn num_clusters(&self) -> usize {
        self.alpha.len()
    }

    fn is_pristine(&self) -> bool {
        self.representatives.is_empty()
            && self.soft_counts.iter().all(|&n| n == 0.0)
            && self.alpha.iter().all(|&a| a == self.prior_concentration)
    }

    /// Moves each old cluster's evidence `(α_k - α₀) + n_k` onto the new cluster
    /// holding its representative; new clusters start at `α₀`.
    fn remap(&self, clusters: &ClusterSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = clusters.len();
        let alpha = vec![self.prior_concentration; m];
        let mut counts = vec![0.0; m];
        for (k, &rep) in self.representatives.iter().enumerate() {
            let target = clusters.cluster_of(rep).ok_or(Error::Shape {
                what: "previous representative missing from new clusters",
                expected: rep,
                got: m,
            })?;
            counts[target] += (self.alpha[k] - self.prior_concentration) + self.soft_counts[k];
        }
        Ok((alpha, counts))
    }
}

/// Accumulates soft counts `n_k = Σ_{i∈C_k} s̃_i` into the posterior.
/// `weights` is indexed by candidate (pool) index.
pub fn update_posterior(
    state: &ControllerState,
    clusters: &ClusterSet,
    weights: &[f64],
) -> Result<ControllerState> {
    let m = clusters.len();
    if m == 0 {
        return Err(Error::EmptyInput("cluster set"));
    }
    let (alpha, mut counts) = if !state.representatives.is_empty() {
        state.remap(clusters)?
    } else if state.num_clusters() == m {
        (state.alpha.clone(), state.soft_counts.clone())
    } else if state.is_pristine() {
        (vec![state.prior_concentration; m], vec![0.0; m])
    } else {
        return Err(Error::Shape {
            what: "cluster count vs posterior dimension",
            expected: state.num_clusters(),
            got: m,
        });
    };
    for (k, c) in clusters.clusters.iter().enumerate() {
        for &i in &c.members {
            let w = *weights.get(i).ok_or(Error::Shape {
                what: "weights vs cluster members",
                expected: i + 1,
                got: weights.len(),
            })?;
            if !(w >= 0.0) {
                return Err(Error::domain(format!("soft count weight must be >= 0, got {w}")));
            }
            counts[k] += w;
        }
    }
    Ok(ControllerState {
        alpha,
        soft_counts: counts,
        representatives: clusters.clusters.iter().map(|c| c.representative).collect(),
        p_star: clusters.p_star,
        ..state.clone()
    })
}

/// `p'(y) = Σ_k π̄_k q_k(y)`.
pub fn mixture_token_distribution(
    state: &ControllerState,
    cluster_dists: &[Vec<f64>],
) -> Result<Vec<f64>> {
    mixture_from_weights(&state.posterior_mean(), cluster_dists)
}

pub fn mixture_from_weights(weights: &[f64], cluster_dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != cluster_dists.len() {
        return Err(Error::Shape {
            what: "cluster token distributions vs posterior dimension",
            expected: weights.len(),
            got: cluster_dists.len(),
        });
    }
    let vocab = cluster_dists.first().map_or(0, Vec::len);
    let mut out = vec![0.0; vocab];
    for (w, q) in weights.iter().zip(cluster_dists) {
        if q.len() != vocab {
            return Err(Error::Shape {
                what: "token distribution vocabulary",
                expected: vocab,
                got: q.len(),
            });
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || q.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Normalization { sum });
        }
        for (o, p) in out.iter_mut().zip(q) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Token distribution over a shared vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub vocabulary: Vec<String>,
    pub probabilities: Vec<f64>,
}

/// Per-cluster token frequency distributions `q_k` over whitespace tokens of
/// the members' answers, add-`eps` smoothed over the pooled vocabulary.
pub fn cluster_token_distributions(
    pool: &[Candidate],
    clusters: &ClusterSet,
    eps: f64,
) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clusters.clusters.iter() {
        for &i in &c.members {
            for tok in pool[i].answer_text.split_whitespace() {
                index.entry(tok).or_insert(0);
            }
        }
    }
    for (slot, value) in index.values_mut().enumerate() {
        *value = slot;
    }
    let vocab: Vec<String> = index.keys().map(|s| s.to_string()).collect();
    let dists = clusters
        .clusters
        .iter()
        .map(|c| {
            let mut counts = vec![eps; vocab.len()];
            for &i in &c.members {
                for tok in pool[i].answer_text.split_whitespace() {
                    counts[index[tok]] += 1.0;
                }
            }
            let total: f64 = counts.iter().sum();
            counts.into_iter().map(|x| x / total).collect()
        })
        .collect();
    (vocab, dists)
}

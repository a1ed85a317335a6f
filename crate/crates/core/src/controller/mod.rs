//! The sequential sampling controller.
//!
//! Each round the controller scores the new candidates, re-clusters the whole
//! pool from scratch, updates the Dirichlet posterior with the round's soft
//! counts and then asks its [`StoppingPolicy`] whether to continue. All
//! policies run through the same scoring and clustering path, so they differ
//! only in the stopping decision.

mod policy;
mod posterior;

pub use policy::{ei_estimate, StoppingPolicy};
pub use posterior::{
    cluster_token_distributions, init_state, mixture_from_weights, mixture_token_distribution,
    update_posterior, ControllerState, StopReason, TokenDistribution,
};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest};
use crate::candidate::{Candidate, EvidenceContext};
use crate::clustering::{
    answer_embedding, cluster_items, deduplicate, embedding_matrix, should_stop, ClusterSet,
    SimilarityMatrix, DEFAULT_CLUSTER_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::scoring::{
    combine_scores, normalize_weights, score_components, PreparedContext, ScoreComponents,
    ScoringConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub scoring: ScoringConfig,
    pub cluster_threshold: f64,
    /// Greedy semantic deduplication before clustering; off when `None`.
    pub dedup_threshold: Option<f64>,
    /// New samples requested per `Continue`.
    pub batch_size: usize,
    /// Hard ceiling on samples per instance.
    pub max_samples: u64,
    pub prior_concentration: f64,
    /// Add-ε smoothing of per-cluster token distributions.
    pub token_smoothing: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            scoring: ScoringConfig::default(),
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            dedup_threshold: None,
            batch_size: 2,
            max_samples: 64,
            prior_concentration: 1.0,
            token_smoothing: 1e-6,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.scoring.validate()?;
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("cluster_threshold", self.cluster_threshold)?;
        if let Some(t) = self.dedup_threshold {
            unit("dedup_threshold", t)?;
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be >= 1"));
        }
        if !(self.prior_concentration > 0.0) {
            return Err(Error::domain("prior_concentration must be > 0"));
        }
        if !(self.token_smoothing > 0.0) {
            return Err(Error::domain("token_smoothing must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    /// Pool index of the chosen candidate.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Continue { batch: usize },
    Stop { reason: StopReason, answer: FinalAnswer },
}

/// One line of the per-round decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub p_star: f64,
    pub posterior_mean: Vec<f64>,
    pub samples_used: u64,
    pub tokens_used: u64,
    pub decision: String,
    pub reason: Option<StopReason>,
    pub batch: Option<usize>,
}

pub struct Controller {
    config: ControllerConfig,
    policy: StoppingPolicy,
    context: PreparedContext,
    pool: Vec<Candidate>,
    components: Vec<ScoreComponents>,
    embeddings: Vec<Vec<f64>>,
    state: ControllerState,
    clusters: Option<ClusterSet>,
    guidance: Option<TokenDistribution>,
    best_generation: f64,
    stale_samples: u32,
    beta_params: (f64, f64),
    batches: Vec<usize>,
    log: Vec<RoundLog>,
}

impl Controller {
    pub fn new(
        config: ControllerConfig,
        policy: StoppingPolicy,
        context: &EvidenceContext,
    ) -> Result<Self> {
        config.validate()?;
        policy.validate()?;
        let beta_params = match policy {
            StoppingPolicy::BetaBernoulli { a0, b0, .. } => (a0, b0),
            _ => (1.0, 1.0),
        };
        Ok(Self {
            context: PreparedContext::new(context)?,
            state: init_state(1, config.prior_concentration)?,
            config,
            policy,
            pool: Vec::new(),
            components: Vec::new(),
            embeddings: Vec::new(),
            clusters: None,
            guidance: None,
            best_generation: f64::NEG_INFINITY,
            stale_samples: 0,
            beta_params,
            batches: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn pool(&self) -> &[Candidate] {
        &self.pool
    }

    pub fn clusters(&self) -> Option<&ClusterSet> {
        self.clusters.as_ref()
    }

    /// Mixture token distribution for the next round, once one exists.
    pub fn guidance(&self) -> Option<&TokenDistribution> {
        self.guidance.as_ref()
    }

    pub fn log(&self) -> &[RoundLog] {
        &self.log
    }

    /// Sizes of the batches consumed so far.
    pub fn batches(&self) -> &[usize] {
        &self.batches
    }

    fn sample_ceiling(&self) -> u64 {
        match self.policy {
            StoppingPolicy::FixedN { n } => n.min(self.config.max_samples),
            _ => self.config.max_samples,
        }
    }

    /// Size of the next batch; `0` once the budget is spent.
    pub fn next_batch(&self) -> usize {
        let remaining = self.sample_ceiling().saturating_sub(self.state.samples_used);
        remaining.min(self.config.batch_size as u64) as usize
    }

    /// Consumes a batch of new candidates and decides whether to continue.
    pub fn step(&mut self, new_candidates: Vec<Candidate>) -> Result<Decision> {
        if self.state.stopped.is_some() {
            return Err(Error::AlreadyStopped);
        }
        let first_new = self.pool.len();
        for c in &new_candidates {
            c.validate()?;
            self.components.push(score_components(c, &self.context)?);
            self.embeddings.push(answer_embedding(c)?);
        }
        self.state.samples_used += new_candidates.len() as u64;
        self.state.tokens_used += new_candidates
            .iter()
            .map(|c| c.token_count() as u64)
            .sum::<u64>();
        self.state.round += 1;
        if !new_candidates.is_empty() {
            self.batches.push(new_candidates.len());
        }
        self.pool.extend(new_candidates);
        if self.pool.is_empty() {
            return Err(Error::Budget { best_effort: None });
        }

        let sim = embedding_matrix(&self.embeddings)?;
        let active = match self.config.dedup_threshold {
            Some(t) => deduplicate(&sim, t)?,
            None => (0..self.pool.len()).collect(),
        };
        let n = self.pool.len();
        let mut scores = vec![f64::NEG_INFINITY; n];
        let mut weights = vec![0.0; n];
        let active_parts: Vec<ScoreComponents> = active.iter().map(|&i| self.components[i]).collect();
        let active_scores = combine_scores(&active_parts, &self.config.scoring);
        let active_weights = normalize_weights(&active_scores)?;
        for (k, &i) in active.iter().enumerate() {
            scores[i] = active_scores[k];
            weights[i] = active_weights[k];
        }

        let mut clusters = cluster_items(&sim, &active, &scores, self.config.cluster_threshold)?;
        clusters.round = self.state.round;
        let round = self.state.round;
        self.state = update_posterior(&self.state, &clusters, &weights)?;
        self.state.round = round;

        let (vocabulary, dists) =
            cluster_token_distributions(&self.pool, &clusters, self.config.token_smoothing);
        let probabilities = mixture_token_distribution(&self.state, &dists)?;
        self.guidance = Some(TokenDistribution {
            vocabulary,
            probabilities,
        });

        let policy_stop = self.policy_decision(&clusters, &sim, first_new);
        let reason = policy_stop.or_else(|| {
            (self.state.samples_used >= self.sample_ceiling()).then_some(StopReason::BudgetExhausted)
        });
        let decision = match reason {
            Some(reason) => {
                self.state.stopped = Some(reason);
                let rep = clusters.clusters[clusters.leader()].representative;
                Decision::Stop {
                    reason,
                    answer: FinalAnswer {
                        index: rep,
                        text: self.pool[rep].answer_text.clone(),
                    },
                }
            }
            None => Decision::Continue {
                batch: self.next_batch(),
            },
        };
        self.log.push(RoundLog {
            round: self.state.round,
            p_star: self.state.p_star,
            posterior_mean: self.state.posterior_mean(),
            samples_used: self.state.samples_used,
            tokens_used: self.state.tokens_used,
            decision: match decision {
                Decision::Continue { .. } => "continue".into(),
                Decision::Stop { .. } => "stop".into(),
            },
            reason,
            batch: match decision {
                Decision::Continue { batch } => Some(batch),
                Decision::Stop { .. } => None,
            },
        });
        self.clusters = Some(clusters);
        Ok(decision)
    }

    fn policy_decision(
        &mut self,
        clusters: &ClusterSet,
        sim: &SimilarityMatrix,
        first_new: usize,
    ) -> Option<StopReason> {
        let new = first_new..self.pool.len();
        match self.policy {
            StoppingPolicy::Camd { delta } => {
                should_stop(clusters.p_star, delta).then_some(StopReason::CoverageReached)
            }
            StoppingPolicy::FixedN { n } => {
                (self.state.samples_used >= n).then_some(StopReason::BudgetExhausted)
            }
            StoppingPolicy::Threshold {
                score_target,
                patience,
            } => {
                for i in new {
                    let g = self.components[i].s_gen;
                    if score_target.is_some_and(|t| g >= t) {
                        return Some(StopReason::ScoreTargetReached);
                    }
                    if g > self.best_generation {
                        self.best_generation = g;
                        self.stale_samples = 0;
                    } else {
                        self.stale_samples += 1;
                    }
                }
                (self.stale_samples >= patience).then_some(StopReason::NoImprovement)
            }
            StoppingPolicy::BetaBernoulli { gain_floor, .. } => {
                let leader = &clusters.clusters[clusters.leader()].members;
                let dedup = self.config.dedup_threshold;
                let (mut a, mut b) = self.beta_params;
                let before = a / (a + b);
                for i in new {
                    let joined = leader.contains(&i)
                        || dedup.is_some_and(|t| {
                            clusters.cluster_of(i).is_none()
                                && leader.iter().any(|&j| sim.get(i, j) > t)
                        });
                    if joined {
                        a += 1.0;
                    } else {
                        b += 1.0;
                    }
                }
                self.beta_params = (a, b);
                let gain = (a / (a + b) - before).abs();
                (gain < gain_floor).then_some(StopReason::NoImprovement)
            }
            StoppingPolicy::ExpectedImprovement { cost_per_token } => {
                let expected_tokens =
                    self.state.tokens_used as f64 / self.state.samples_used.max(1) as f64;
                let (_, stop) = ei_estimate(&self.state, cost_per_token, expected_tokens);
                stop.then_some(StopReason::EiBelowCost)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub instance_id: u64,
    pub samples_used: u64,
    pub tokens_used: u64,
    pub rounds: u32,
    pub p_star: f64,
    pub reason: StopReason,
    pub answer: FinalAnswer,
    /// Answer text of every sampled candidate, in arrival order.
    pub pool_answers: Vec<String>,
    pub batches: Vec<usize>,
    pub log: Vec<RoundLog>,
}

/// Drives one instance to a stop decision against `backend`.
pub fn run_instance<B: Backend + ?Sized>(
    backend: &mut B,
    instance_id: u64,
    seed: u64,
    config: ControllerConfig,
    policy: StoppingPolicy,
) -> Result<InstanceOutcome> {
    config.validate()?;
    policy.validate()?;
    let first_batch = match policy {
        StoppingPolicy::FixedN { n } => n.min(config.max_samples),
        _ => config.max_samples,
    }
    .min(config.batch_size as u64) as usize;
    if first_batch == 0 {
        return Err(Error::Budget { best_effort: None });
    }
    let mut request = GenerationRequest {
        instance_id,
        batch: first_batch,
        seed,
        offset: 0,
        guidance: None,
    };
    let first = backend.generate(&request)?;
    let mut controller = Controller::new(config, policy, &first.context)?;
    let mut candidates = first.candidates;
    loop {
        if candidates.is_empty() {
            return Err(Error::Backend(format!(
                "backend returned no candidates for instance {instance_id}"
            )));
        }
        match controller.step(candidates)? {
            Decision::Stop { reason, answer } => {
                let state = controller.state();
                return Ok(InstanceOutcome {
                    instance_id,
                    samples_used: state.samples_used,
                    tokens_used: state.tokens_used,
                    rounds: state.round,
                    p_star: state.p_star,
                    reason,
                    answer,
                    pool_answers: controller.pool().iter().map(|c| c.answer_text.clone()).collect(),
                    batches: controller.batches().to_vec(),
                    log: controller.log().to_vec(),
                });
            }
            Decision::Continue { batch } => {
                request.batch = batch;
                request.offset = controller.state().samples_used;
                request.guidance = controller.guidance().cloned();
                candidates = backend.generate(&request)?.candidates;
            }
        }
    }
}

//! Evidence-weighted candidate scoring.
//!
//! Three signals are combined per candidate:
//!
//! * generation confidence: mean token log-probability,
//! * cross-modal alignment: token embeddings against visual features, plus the
//!   token-independent text-to-visual grounding term,
//! * reasoning coherence: mean cosine between consecutive hidden states
//!   (token embeddings when hidden states are absent).
//!
//! The combined score is `S = S_gen + λ_g S_align + λ_c S_coh`, optionally after
//! min–max rescaling each component across the current candidate set. A
//! softmax over the set turns scores into per-candidate weights.

use serde::{Deserialize, Serialize};

use crate::candidate::{Candidate, EvidenceContext};
use crate::error::{Error, Result};
use crate::vector::{cosine, dot, unit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub lambda_g: f64,
    pub lambda_c: f64,
    /// Min–max rescale each component to `[0, 1]` across the candidate set.
    pub normalize_components: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_c: 0.3,
            normalize_components: true,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_g >= 0.0 && self.lambda_c >= 0.0) {
            return Err(Error::domain(format!(
                "scoring weights must be >= 0, got lambda_g={} lambda_c={}",
                self.lambda_g, self.lambda_c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub s_gen: f64,
    pub s_align: f64,
    pub s_coh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScore {
    pub components: ScoreComponents,
    pub combined: f64,
    pub normalized_weight: f64,
}

/// Mean token log-probability.
pub fn score_generation(c: &Candidate) -> Result<f64> {
    if c.token_logprobs.is_empty() {
        return Err(Error::EmptySequence("candidate token_logprobs"));
    }
    Ok(c.token_logprobs.iter().sum::<f64>() / c.token_logprobs.len() as f64)
}

/// Evidence features reduced to what alignment scoring needs: unit visual
/// vectors and the token-independent text grounding term.
#[derive(Debug, Clone)]
pub struct PreparedContext {
    visual_units: Vec<Vec<f64>>,
    text_grounding: f64,
}

impl PreparedContext {
    pub fn new(ctx: &EvidenceContext) -> Result<Self> {
        ctx.validate()?;
        let visual_units = ctx
            .visual_features
            .iter()
            .map(|v| unit(v, "visual_features"))
            .collect::<Result<Vec<_>>>()?;
        let mut grounding = 0.0;
        for t in &ctx.text_features {
            let t_unit = unit(t, "text_features")?;
            let best = visual_units
                .iter()
                .map(|v| dot(&t_unit, v))
                .fold(f64::NEG_INFINITY, f64::max);
            grounding += best;
        }
        Ok(Self {
            visual_units,
            text_grounding: grounding / ctx.text_features.len() as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.visual_units[0].len()
    }

    /// Mean over tokens of `½ [mean_j cos(v_j, e_t) + text grounding]`.
    pub fn alignment(&self, c: &Candidate) -> Result<f64> {
        if c.token_embeddings.is_empty() {
            return Err(Error::EmptySequence("candidate token_embeddings"));
        }
        let mut total = 0.0;
        for e in &c.token_embeddings {
            if e.len() != self.dim() {
                return Err(Error::Shape {
                    what: "token embedding vs evidence dimension",
                    expected: self.dim(),
                    got: e.len(),
                });
            }
            let e_unit = unit(e, "token_embeddings")?;
            let visual: f64 = self.visual_units.iter().map(|v| dot(v, &e_unit)).sum::<f64>()
                / self.visual_units.len() as f64;
            total += 0.5 * (visual + self.text_grounding);
        }
        Ok(total / c.token_embeddings.len() as f64)
    }
}

pub fn score_alignment(c: &Candidate, ctx: &EvidenceContext) -> Result<f64> {
    PreparedContext::new(ctx)?.alignment(c)
}

/// Mean cosine between consecutive hidden states; `1.0` for single-token
/// candidates.
pub fn score_coherence(c: &Candidate) -> Result<f64> {
    let states = c.hidden_states.as_ref().unwrap_or(&c.token_embeddings);
    match states.len() {
        0 => Err(Error::EmptySequence("candidate hidden states")),
        1 => Ok(1.0),
        n => {
            let mut total = 0.0;
            for pair in states.windows(2) {
                total += cosine(&pair[0], &pair[1], "hidden_states")?;
            }
            Ok(total / (n - 1) as f64)
        }
    }
}

pub fn score_components(c: &Candidate, ctx: &PreparedContext) -> Result<ScoreComponents> {
    Ok(ScoreComponents {
        s_gen: score_generation(c)?,
        s_align: ctx.alignment(c)?,
        s_coh: score_coherence(c)?,
    })
}

/// `S_gen + λ_g S_align + λ_c S_coh` for one candidate, no rescaling.
pub fn combine(parts: ScoreComponents, config: &ScoringConfig) -> f64 {
    parts.s_gen + config.lambda_g * parts.s_align + config.lambda_c * parts.s_coh
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    move |x| if span > 0.0 { (x - lo) / span } else { 0.0 }
}

/// Combined scores for a candidate set. With `normalize_components`, each
/// component is first min–max rescaled across the set (a constant component
/// maps to 0).
pub fn combine_scores(parts: &[ScoreComponents], config: &ScoringConfig) -> Vec<f64> {
    if !config.normalize_components {
        return parts.iter().map(|p| combine(*p, config)).collect();
    }
    let gen = min_max(parts.iter().map(|p| p.s_gen));
    let align = min_max(parts.iter().map(|p| p.s_align));
    let coh = min_max(parts.iter().map(|p| p.s_coh));
    parts
        .iter()
        .map(|p| {
            combine(
                ScoreComponents {
                    s_gen: gen(p.s_gen),
                    s_align: align(p.s_align),
                    s_coh: coh(p.s_coh),
                },
                config,
            )
        })
        .collect()
}

/// Softmax with max subtraction.
pub fn normalize_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Scores a candidate set end to end.
pub fn score_candidates(
    candidates: &[Candidate],
    ctx: &PreparedContext,
    config: &ScoringConfig,
) -> Result<Vec<EvidenceScore>> {
    let parts = candidates
        .iter()
        .map(|c| score_components(c, ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_scores(&parts, config))
}

/// Combines precomputed components into scores and softmax weights.
pub fn assemble_scores(parts: &[ScoreComponents], config: &ScoringConfig) -> Vec<EvidenceScore> {
    if parts.is_empty() {
        return Vec::new();
    }
    let combined = combine_scores(parts, config);
    let weights = normalize_weights(&combined).expect("non-empty");
    parts
        .iter()
        .zip(combined)
        .zip(weights)
        .map(|((p, s), w)| EvidenceScore {
            components: *p,
            combined: s,
            normalized_weight: w,
        })
        .collect()
}

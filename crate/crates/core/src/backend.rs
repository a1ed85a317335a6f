//! Candidate-generating backends.
//!
//! A backend answers generation requests for an instance id. Candidate `j` of
//! an instance's stream is determined by `(instance_id, seed, j)` alone, so a
//! stream is identical no matter how it is split into batches.

use serde::{Deserialize, Serialize};

use crate::candidate::{Candidate, EvidenceContext};
use crate::controller::TokenDistribution;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub instance_id: u64,
    pub batch: usize,
    pub seed: u64,
    /// Stream position of the first requested candidate.
    #[serde(default)]
    pub offset: u64,
    /// Mixture token distribution from the controller's posterior. Backends may
    /// use it to bias sampling or ignore it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<TokenDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub context: EvidenceContext,
    pub candidates: Vec<Candidate>,
}

impl GenerationResponse {
    pub fn tokens(&self) -> u64 {
        self.candidates.iter().map(|c| c.token_count() as u64).sum()
    }
}

pub trait Backend {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse>;
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse> {
        (**self).generate(request)
    }
}

/// Ground truth for a graded instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    /// One flag per submitted answer.
    pub correct: Vec<bool>,
    #[serde(default)]
    pub true_s: Option<f64>,
    #[serde(default)]
    pub irreducible: bool,
}

/// Harness-side access to labels. The controller never sees this trait.
pub trait Grader {
    fn grade(&mut self, instance_id: u64, answers: &[String]) -> Result<Grade>;
}

impl<G: Grader + ?Sized> Grader for &mut G {
    fn grade(&mut self, instance_id: u64, answers: &[String]) -> Result<Grade> {
        (**self).grade(instance_id, answers)
    }
}

//! Candidate answers and the evidence they are scored against.
//!
//! Both types travel as JSON: a candidate is one record per line in the
//! JSON-lines format, vectors are arrays of doubles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::norm;

/// One sampled answer.
///
/// Carries no correctness label; only a backend's grading side knows whether
/// `answer_text` is right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub answer_text: String,
    /// Natural-log token probabilities, all `<= 0`.
    pub token_logprobs: Vec<f64>,
    pub token_embeddings: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_states: Option<Vec<Vec<f64>>>,
}

impl Candidate {
    pub fn token_count(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.token_embeddings.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.token_logprobs.len();
        if len == 0 {
            return Err(Error::EmptySequence("candidate token_logprobs"));
        }
        if self.token_embeddings.len() != len {
            return Err(Error::Shape {
                what: "token_embeddings length",
                expected: len,
                got: self.token_embeddings.len(),
            });
        }
        if let Some(bad) = self.token_logprobs.iter().find(|&&lp| !(lp <= 0.0)) {
            return Err(Error::domain(format!("token log-prob must be <= 0, got {bad}")));
        }
        let dim = self.embedding_dim();
        check_vectors(&self.token_embeddings, dim, "token_embeddings")?;
        if let Some(hidden) = &self.hidden_states {
            if hidden.len() != len {
                return Err(Error::Shape {
                    what: "hidden_states length",
                    expected: len,
                    got: hidden.len(),
                });
            }
            let hdim = hidden.first().map_or(0, Vec::len);
            check_vectors(hidden, hdim, "hidden_states")?;
        }
        Ok(())
    }
}

fn check_vectors(vs: &[Vec<f64>], dim: usize, what: &'static str) -> Result<()> {
    if dim == 0 {
        return Err(Error::EmptySequence(what));
    }
    for v in vs {
        if v.len() != dim {
            return Err(Error::Shape {
                what,
                expected: dim,
                got: v.len(),
            });
        }
        if !(norm(v) > 0.0) {
            return Err(Error::DegenerateVector(what));
        }
    }
    Ok(())
}

/// Visual and textual evidence features for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceContext {
    pub visual_features: Vec<Vec<f64>>,
    pub text_features: Vec<Vec<f64>>,
}

impl EvidenceContext {
    pub fn dim(&self) -> usize {
        self.visual_features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual_features.is_empty() {
            return Err(Error::EmptySequence("visual_features"));
        }
        if self.text_features.is_empty() {
            return Err(Error::EmptySequence("text_features"));
        }
        let dim = self.dim();
        check_vectors(&self.visual_features, dim, "visual_features")?;
        check_vectors(&self.text_features, dim, "text_features")
    }
}

/// Parses a JSON-lines stream of candidate records, skipping blank lines.
pub fn read_candidates_jsonl(text: &str) -> Result<Vec<Candidate>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let c: Candidate = serde_json::from_str(line)?;
            c.validate()?;
            Ok(c)
        })
        .collect()
}

pub fn write_candidates_jsonl(candidates: &[Candidate]) -> Result<String> {
    let mut out = String::new();
    for c in candidates {
        out.push_str(&serde_json::to_string(c)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand() -> Candidate {
        Candidate {
            answer_text: "a".into(),
            token_logprobs: vec![-0.1, -0.2],
            token_embeddings: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            hidden_states: None,
        }
    }

    #[test]
    fn validation_catches_malformed_candidates() {
        assert!(cand().validate().is_ok());
        let mut c = cand();
        c.token_logprobs.clear();
        c.token_embeddings.clear();
        assert!(matches!(c.validate(), Err(Error::EmptySequence(_))));
        let mut c = cand();
        c.token_embeddings.pop();
        assert!(matches!(c.validate(), Err(Error::Shape { .. })));
        let mut c = cand();
        c.token_logprobs[0] = 0.5;
        assert!(c.validate().is_err());
        let mut c = cand();
        c.token_embeddings[1] = vec![0.0, 0.0];
        assert!(matches!(c.validate(), Err(Error::DegenerateVector(_))));
        let mut c = cand();
        c.hidden_states = Some(vec![vec![1.0]]);
        assert!(matches!(c.validate(), Err(Error::Shape { .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut b = cand();
        b.hidden_states = Some(vec![vec![1.0, 1.0], vec![2.0, 0.5]]);
        let text = write_candidates_jsonl(&[cand(), b.clone()]).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().next().unwrap().contains("hidden_states"));
        let back = read_candidates_jsonl(&text).unwrap();
        assert_eq!(back, vec![cand(), b]);
    }

    #[test]
    fn records_reject_unknown_fields() {
        let line = r#"{"answer_text":"x","token_logprobs":[-1.0],"token_embeddings":[[1.0]],"correct":true}"#;
        assert!(read_candidates_jsonl(line).is_err());
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_DELTA;
use crate::error::{Error, Result};

use super::posterior::ControllerState;

/// When to stop sampling an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingPolicy {
    /// Stop once the leading cluster's posterior weight reaches `1 - delta`.
    Camd {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Stop once a candidate's generation confidence reaches `score_target`,
    /// or after `patience` consecutive samples without improvement.
    Threshold {
        #[serde(default)]
        score_target: Option<f64>,
        #[serde(default = "default_patience")]
        patience: u32,
    },
    /// Beta–Bernoulli model of "a new sample joins the leading cluster"; stop
    /// when a round moves the posterior mean by less than `gain_floor`.
    BetaBernoulli {
        #[serde(default = "one")]
        a0: f64,
        #[serde(default = "one")]
        b0: f64,
        #[serde(default = "default_gain_floor")]
        gain_floor: f64,
    },
    /// Stop when the estimated gain of another sample is below its token cost.
    ExpectedImprovement { cost_per_token: f64 },
    /// Always draw exactly `n` samples.
    FixedN { n: u64 },
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_patience() -> u32 {
    3
}
fn one() -> f64 {
    1.0
}
fn default_gain_floor() -> f64 {
    0.01
}

impl StoppingPolicy {
    pub fn camd() -> Self {
        Self::Camd {
            delta: DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        match *self {
            Self::Camd { delta } => open_unit("camd.delta", delta),
            Self::Threshold { patience: 0, .. } => {
                Err(Error::domain("threshold.patience must be >= 1"))
            }
            Self::Threshold { .. } => Ok(()),
            Self::BetaBernoulli { a0, b0, gain_floor } => {
                if !(a0 > 0.0 && b0 > 0.0) {
                    return Err(Error::domain("beta_bernoulli prior parameters must be > 0"));
                }
                open_unit("beta_bernoulli.gain_floor", gain_floor)
            }
            Self::ExpectedImprovement { cost_per_token } if !(cost_per_token >= 0.0) => Err(
                Error::domain(format!("cost_per_token must be >= 0, got {cost_per_token}")),
            ),
            Self::ExpectedImprovement { .. } => Ok(()),
            Self::FixedN { n: 0 } => Err(Error::domain("fixed_n.n must be >= 1")),
            Self::FixedN { .. } => Ok(()),
        }
    }

    /// Short stable label used in reports.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for StoppingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Camd { delta } => write!(f, "camd(delta={delta})"),
            Self::Threshold {
                score_target,
                patience,
            } => match score_target {
                Some(t) => write!(f, "threshold(target={t},patience={patience})"),
                None => write!(f, "threshold(patience={patience})"),
            },
            Self::BetaBernoulli { a0, b0, gain_floor } => {
                write!(f, "beta_bernoulli(a0={a0},b0={b0},floor={gain_floor})")
            }
            Self::ExpectedImprovement { cost_per_token } => write!(f, "ei(cost={cost_per_token})"),
            Self::FixedN { n } => write!(f, "fixed_n({n})"),
        }
    }
}

/// Heuristic value of one more sample: `(1 - p̂*) · max_k π̄_k`, the chance the
/// next sample changes the answer times the leader's posterior mass. Stops when
/// the gain is below `cost_per_token * expected_tokens`.
pub fn ei_estimate(state: &ControllerState, cost_per_token: f64, expected_tokens: f64) -> (f64, bool) {
    let leader_mass = state
        .posterior_mean()
        .into_iter()
        .fold(0.0, f64::max);
    let gain = (1.0 - state.p_star).max(0.0) * leader_mass;
    (gain, gain < cost_per_token * expected_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::posterior::init_state;

    #[test]
    fn ei_examples() {
        let mut s = init_state(1, 1.0).unwrap();
        s.p_star = 1.0;
        let (gain, stop) = ei_estimate(&s, 1e-9, 1.0);
        assert_eq!(gain, 0.0);
        assert!(stop);

        s.p_star = 0.3;
        assert!(!ei_estimate(&s, 0.0, 100.0).1);

        // π̄ = (0.8, 0.2)
        let mut s = init_state(2, 1.0).unwrap();
        s.alpha = vec![4.0, 1.0];
        s.p_star = 0.8;
        let (gain, stop) = ei_estimate(&s, 0.02, 10.0);
        assert!((gain - 0.16).abs() < 1e-15);
        assert!(stop);
    }

    #[test]
    fn validation() {
        assert!(StoppingPolicy::camd().validate().is_ok());
        assert!(StoppingPolicy::Camd { delta: 1.0 }.validate().is_err());
        assert!(StoppingPolicy::FixedN { n: 0 }.validate().is_err());
        assert!(StoppingPolicy::Threshold {
            score_target: None,
            patience: 0
        }
        .validate()
        .is_err());
        assert!(StoppingPolicy::ExpectedImprovement {
            cost_per_token: -1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn toml_and_json_shapes() {
        let p: StoppingPolicy = serde_json::from_str(r#"{"kind":"camd"}"#).unwrap();
        assert_eq!(p, StoppingPolicy::Camd { delta: 0.05 });
        let p: StoppingPolicy = serde_json::from_str(r#"{"kind":"threshold"}"#).unwrap();
        assert_eq!(
            p,
            StoppingPolicy::Threshold {
                score_target: None,
                patience: 3
            }
        );
        let p: StoppingPolicy = serde_json::from_str(r#"{"kind":"fixed_n","n":8}"#).unwrap();
        assert_eq!(p.label(), "fixed_n(8)");
    }
}

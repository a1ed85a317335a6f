//! Campaign configuration files.
//!
//! A campaign is a TOML document. Every key is optional: a file is layered
//! over one of the built-in [`Profile`]s, tables merge key by key and arrays
//! replace wholesale. Errors name the offending key path.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, StoppingPolicy};
use crate::distribution::DifficultyDistribution;
use crate::error::{Error, Result};
use crate::experiment::{ComparisonSetup, Estimator, TheoryCase};
use crate::synthetic::SyntheticConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Small pinned-seed campaign for continuous integration.
    Ci,
    /// Paper-scale synthetic campaign.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ci" => Ok(Profile::Ci),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config {
                location: "profile".into(),
                message: format!("unknown profile `{other}`, expected `ci` or `full`"),
            }),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Ci => "ci",
            Profile::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Synthetic,
    /// A server speaking the line protocol, e.g. `camd serve-backend`.
    Wire { address: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write the per-round decision log of every run.
    #[serde(default)]
    pub decision_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub num_instances: u64,
    pub distribution: DifficultyDistribution,
    pub policies: Vec<StoppingPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub cases: Vec<TheoryCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Root seed. Kept within `i64` range so it survives TOML.
    pub seed: u64,
    pub output: OutputConfig,
    pub backend: BackendSpec,
    pub synthetic: SyntheticConfig,
    pub controller: ControllerConfig,
    pub comparison: ComparisonConfig,
    pub theory: TheoryConfig,
}

pub const PINNED_SEED: u64 = 20_251_015;

fn heavy_tail(alpha: f64) -> DifficultyDistribution {
    DifficultyDistribution::heavy_tail(alpha, alpha, 1.0).expect("valid built-in parameters")
}

fn theory_cases(draws: usize) -> Vec<TheoryCase> {
    let mut cases: Vec<TheoryCase> = [0.5, 0.7, 1.0]
        .into_iter()
        .map(|alpha| TheoryCase {
            name: format!("heavy_tail_{alpha:.1}"),
            distribution: heavy_tail(alpha),
            ks: vec![64, 128, 256, 512, 1024],
            estimator: Estimator::MonteCarlo,
            draws,
        })
        .collect();
    cases.push(TheoryCase {
        name: "light_truncated_0.2".into(),
        distribution: DifficultyDistribution::light_truncated(
            0.2,
            DifficultyDistribution::beta(1.0, 1.0).expect("uniform"),
        )
        .expect("valid built-in parameters"),
        ks: (1..=16).map(|i| 64 * i).collect(),
        estimator: Estimator::Quadrature,
        draws: 0,
    });
    for theta in [0.5, 1.0] {
        cases.push(TheoryCase {
            name: format!("stretched_exp_{theta:.1}"),
            distribution: DifficultyDistribution::stretched_exp(theta, 1.0).expect("valid built-in parameters"),
            ks: (6..=14).map(|e| 1u64 << e).collect(),
            estimator: Estimator::Quadrature,
            draws: 0,
        });
    }
    cases.push(TheoryCase {
        name: "point_mass_0.5".into(),
        distribution: DifficultyDistribution::point_mass(0.5).expect("valid built-in parameters"),
        ks: (1..=8).collect(),
        estimator: Estimator::MonteCarlo,
        draws: 1000,
    });
    cases
}

fn baseline_policies() -> Vec<StoppingPolicy> {
    vec![
        StoppingPolicy::camd(),
        StoppingPolicy::Threshold {
            score_target: None,
            patience: 3,
        },
        StoppingPolicy::BetaBernoulli {
            a0: 1.0,
            b0: 1.0,
            gain_floor: 0.01,
        },
        StoppingPolicy::ExpectedImprovement {
            cost_per_token: 1e-3,
        },
    ]
}

impl CampaignConfig {
    pub fn profile(profile: Profile) -> Self {
        let (instances, draws, fixed): (u64, usize, &[u64]) = match profile {
            Profile::Ci => (1_000, 200_000, &[8, 32]),
            Profile::Full => (10_000, 1_000_000, &[1, 2, 4, 8, 16, 32, 64]),
        };
        let mut policies = baseline_policies();
        policies.extend(fixed.iter().map(|&n| StoppingPolicy::FixedN { n }));
        Self {
            seed: PINNED_SEED,
            output: OutputConfig {
                dir: PathBuf::from(format!("camd-{profile}")),
                decision_log: false,
            },
            backend: BackendSpec::Synthetic,
            synthetic: SyntheticConfig::default(),
            controller: ControllerConfig::default(),
            comparison: ComparisonConfig {
                num_instances: instances,
                distribution: heavy_tail(0.7),
                policies,
            },
            theory: TheoryConfig {
                cases: theory_cases(draws),
            },
        }
    }

    /// Parses `text` layered over `base`.
    pub fn from_toml_str(text: &str, base: Profile) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => line_col(text, span.start),
                None => "document".into(),
            };
            Error::Config {
                location,
                message: e.message().to_string(),
            }
        })?;
        let mut merged = toml::Table::try_from(Self::profile(base)).map_err(|e| Error::Config {
            location: "profile".into(),
            message: e.to_string(),
        })?;
        merge(&mut merged, overlay);
        let config: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| {
            let text = e.to_string();
            match text.split_once("\nin `") {
                Some((message, rest)) => Error::Config {
                    location: rest.trim_end().trim_end_matches('`').to_string(),
                    message: message.to_string(),
                },
                None => Error::Config {
                    location: "document".into(),
                    message: text.trim_end().to_string(),
                },
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, base: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config { location, message } => Error::Config {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            location: "document".into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        fn at(location: impl Into<String>) -> impl FnOnce(Error) -> Error {
            let location = location.into();
            move |e| Error::Config {
                location,
                message: e.to_string(),
            }
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config {
                location: "seed".into(),
                message: "seed must fit in a signed 64-bit integer".into(),
            });
        }
        if let BackendSpec::Wire { address } = &self.backend {
            if address.trim().is_empty() {
                return Err(Error::Config {
                    location: "backend.address".into(),
                    message: "address must not be empty".into(),
                });
            }
        }
        self.synthetic.validate().map_err(at("synthetic"))?;
        self.controller.validate().map_err(at("controller"))?;
        if self.comparison.num_instances == 0 {
            return Err(Error::Config {
                location: "comparison.num_instances".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.comparison.policies.is_empty() {
            return Err(Error::Config {
                location: "comparison.policies".into(),
                message: "at least one policy is required".into(),
            });
        }
        for (i, p) in self.comparison.policies.iter().enumerate() {
            p.validate().map_err(at(format!("comparison.policies[{i}]")))?;
        }
        for (i, case) in self.theory.cases.iter().enumerate() {
            let location = format!("theory.cases[{i}]");
            if case.ks.len() < 3 || case.ks.contains(&0) {
                return Err(Error::Config {
                    location: format!("{location}.ks"),
                    message: "need at least three positive K values".into(),
                });
            }
            if case.estimator == Estimator::MonteCarlo && case.draws < 2 {
                return Err(Error::Config {
                    location: format!("{location}.draws"),
                    message: "Monte Carlo cases need at least two draws".into(),
                });
            }
        }
        Ok(())
    }

    pub fn comparison_setup(&self) -> ComparisonSetup {
        ComparisonSetup {
            controller: self.controller,
            policies: self.comparison.policies.clone(),
            num_instances: self.comparison.num_instances,
            seed: self.seed,
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn line_col(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    format!("line {line}, column {col}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_round_trip_through_toml() {
        for p in [Profile::Ci, Profile::Full] {
            let c = CampaignConfig::profile(p);
            c.validate().unwrap();
            let text = c.to_toml_string().unwrap();
            assert_eq!(CampaignConfig::from_toml_str(&text, Profile::Ci).unwrap(), c);
        }
    }

    #[test]
    fn overlay_merges_tables_and_replaces_arrays() {
        let text = r#"
            seed = 9
            [controller]
            batch_size = 4
            [comparison]
            policies = [{ kind = "fixed_n", n = 3 }]
        "#;
        let c = CampaignConfig::from_toml_str(text, Profile::Ci).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.controller.batch_size, 4);
        assert_eq!(c.controller.max_samples, 64);
        assert_eq!(c.comparison.policies, vec![StoppingPolicy::FixedN { n: 3 }]);
        assert_eq!(c.comparison.num_instances, 1_000);
    }

    #[test]
    fn errors_carry_key_paths() {
        let err = |text: &str| match CampaignConfig::from_toml_str(text, Profile::Ci) {
            Err(Error::Config { location, .. }) => location,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(err("[controller]\nbatch_size = \"two\""), "controller.batch_size");
        assert_eq!(err("[comparison]\nnum_instances = 0"), "comparison.num_instances");
        assert_eq!(
            err("[comparison]\npolicies = [{ kind = \"camd\", delta = 1.5 }]"),
            "comparison.policies[0]"
        );
        assert_eq!(err("[comparison]\npolicies = []"), "comparison.policies");
        assert_eq!(err("seed = 1\nseed = 2"), "line 2, column 1");
        assert!(err("[controller]\nbogus = 1").starts_with("controller"));
    }

    #[test]
    fn profile_names() {
        assert_eq!("ci".parse::<Profile>().unwrap(), Profile::Ci);
        assert_eq!("full".parse::<Profile>().unwrap(), Profile::Full);
        assert!("huge".parse::<Profile>().is_err());
    }
}

//! Campaign runners: the tail-regime theory suite and policy comparisons.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::backend::{Backend, Grader};
use crate::controller::{run_instance, ControllerConfig, RoundLog, StopReason, StoppingPolicy};
use crate::coverage::{monte_carlo_residual, residual, tail_rate_prediction};
use crate::distribution::DifficultyDistribution;
use crate::error::{Error, Result};
use crate::seed::derive_path;

/// How a theory case estimates `Δ(K)` for its regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    MonteCarlo,
    /// Adaptive quadrature. Needed where `Δ(K)` falls far below what any
    /// affordable number of draws can resolve.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryCase {
    pub name: String,
    pub distribution: DifficultyDistribution,
    pub ks: Vec<u64>,
    pub estimator: Estimator,
    /// Monte Carlo draws; also used for the reference column of quadrature cases
    /// when nonzero.
    #[serde(default)]
    pub draws: usize,
}

/// Which regression recovers the tail exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `log Δ` against `log K`.
    LogLog,
    /// `log(-log Δ)` against `log K`.
    StretchedExponent,
    /// `log Δ` against `K`.
    LogLinear,
}

impl FitKind {
    fn transform(self, k: u64, delta: f64) -> Option<(f64, f64)> {
        let k = k as f64;
        let point = match self {
            FitKind::LogLog => (k.ln(), delta.ln()),
            FitKind::StretchedExponent => (k.ln(), (-delta.ln()).ln()),
            FitKind::LogLinear => (k, delta.ln()),
        };
        (point.0.is_finite() && point.1.is_finite()).then_some(point)
    }
}

/// The regression a family calls for and the exponent it should recover.
pub fn theoretical_fit(dist: &DifficultyDistribution) -> (FitKind, f64) {
    match *dist {
        DifficultyDistribution::PointMass { s } => (FitKind::LogLinear, (-s).ln_1p()),
        DifficultyDistribution::Beta { a, .. } => (FitKind::LogLog, -a),
        DifficultyDistribution::HeavyTail { alpha, .. } => (FitKind::LogLog, -alpha),
        DifficultyDistribution::StretchedExp { theta, .. } => {
            (FitKind::StretchedExponent, theta / (theta + 1.0))
        }
        DifficultyDistribution::LightTruncated { s_min, .. } => (FitKind::LogLinear, (-s_min).ln_1p()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl LinearFit {
    /// Two-sided Student-t interval for the slope.
    pub fn slope_interval(&self, level: f64) -> (f64, f64) {
        if self.points < 3 || !(self.slope_std_error > 0.0) {
            return (self.slope, self.slope);
        }
        let t = StudentsT::new(0.0, 1.0, (self.points - 2) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        (self.slope - t * self.slope_std_error, self.slope + t * self.slope_std_error)
    }
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::EmptyInput("linear fit needs at least two points"));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("linear fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_std_error = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_std_error,
        r_squared,
        points: n,
    })
}

/// One row of the theory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub family: String,
    pub k: u64,
    pub delta_mc: Option<f64>,
    pub delta_mc_se: Option<f64>,
    pub delta_exact: f64,
    /// Leading-order tail form, where the family has one.
    pub delta_tail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryFit {
    pub family: String,
    pub fit: FitKind,
    pub estimator: Estimator,
    pub fitted: f64,
    pub theoretical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub points: Vec<TheoryPoint>,
    pub fits: Vec<TheoryFit>,
}

pub fn run_theory_case(case: &TheoryCase, seed: u64) -> Result<(Vec<TheoryPoint>, TheoryFit)> {
    if case.ks.len() < 3 {
        return Err(Error::domain(format!("theory case {} needs at least three K values", case.name)));
    }
    let mc = if case.estimator == Estimator::MonteCarlo || case.draws > 0 {
        Some(monte_carlo_residual(&case.distribution, &case.ks, case.draws, seed)?)
    } else {
        None
    };
    let mut points = Vec::with_capacity(case.ks.len());
    for (i, &k) in case.ks.iter().enumerate() {
        points.push(TheoryPoint {
            family: case.name.clone(),
            k,
            delta_mc: mc.as_ref().map(|m| m[i].mean),
            delta_mc_se: mc.as_ref().map(|m| m[i].std_error),
            delta_exact: residual(&case.distribution, k)?,
            delta_tail: tail_rate_prediction(&case.distribution, k).ok().map(|p| p.value),
        });
    }
    let (kind, theoretical) = theoretical_fit(&case.distribution);
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| {
            let delta = match case.estimator {
                Estimator::MonteCarlo => p.delta_mc?,
                Estimator::Quadrature => p.delta_exact,
            };
            kind.transform(p.k, delta)
        })
        .collect();
    if xy.len() < 3 {
        return Err(Error::domain(format!(
            "theory case {}: fewer than three K values with a resolvable residual",
            case.name
        )));
    }
    let fit = linear_fit(&xy)?;
    let (ci_low, ci_high) = fit.slope_interval(0.95);
    Ok((
        points,
        TheoryFit {
            family: case.name.clone(),
            fit: kind,
            estimator: case.estimator,
            fitted: fit.slope,
            theoretical,
            ci_low,
            ci_high,
            r_squared: fit.r_squared,
        },
    ))
}

/// Runs every case with its own derived seed.
pub fn run_theory_suite(cases: &[TheoryCase], seed: u64) -> Result<TheoryReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("theory suite has no cases"));
    }
    let mut report = TheoryReport {
        points: Vec::new(),
        fits: Vec::new(),
    };
    for (i, case) in cases.iter().enumerate() {
        let (points, fit) = run_theory_case(case, derive_path(seed, &[0, i as u64]))?;
        report.points.extend(points);
        report.fits.push(fit);
    }
    Ok(report)
}

/// One instance under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub instance_id: u64,
    pub true_s: Option<f64>,
    pub irreducible: bool,
    pub policy: String,
    pub samples_used: u64,
    pub tokens_used: u64,
    /// Some sampled candidate was correct.
    pub covered: bool,
    /// The chosen answer was correct.
    pub correct: bool,
    pub p_star_final: f64,
    pub rounds: u32,
    pub stop_reason: StopReason,
    pub batches: Vec<usize>,
    /// Excluded from reports that must be reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub log: Vec<RoundLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSetup {
    pub controller: ControllerConfig,
    pub policies: Vec<StoppingPolicy>,
    pub num_instances: u64,
    pub seed: u64,
}

impl ComparisonSetup {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        if self.policies.is_empty() {
            return Err(Error::EmptyInput("no policies to compare"));
        }
        for p in &self.policies {
            p.validate()?;
        }
        if self.num_instances == 0 {
            return Err(Error::domain("num_instances must be >= 1"));
        }
        Ok(())
    }

    /// Candidate stream seed of an instance, shared by all policies so they
    /// see identical candidates.
    pub fn stream_seed(&self, instance_id: u64) -> u64 {
        derive_path(self.seed, &[1, instance_id])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub instances: u64,
    pub mean_samples: f64,
    pub mean_tokens: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub accuracy: f64,
    pub accuracy_se: f64,
    /// No other policy is at least as good on both coverage and mean tokens
    /// and strictly better on one.
    pub pareto_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub records: Vec<ExperimentRecord>,
    pub summaries: Vec<PolicySummary>,
}

fn binomial(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Per-policy aggregates in the order the policies first appear.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<PolicySummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.policy.as_str()) {
            order.push(&r.policy);
        }
    }
    let mut out: Vec<PolicySummary> = order
        .iter()
        .map(|&policy| {
            let rows: Vec<&ExperimentRecord> = records.iter().filter(|r| r.policy == policy).collect();
            let n = rows.len();
            let (coverage, coverage_se) = binomial(rows.iter().filter(|r| r.covered).count(), n);
            let (accuracy, accuracy_se) = binomial(rows.iter().filter(|r| r.correct).count(), n);
            PolicySummary {
                policy: policy.to_string(),
                instances: n as u64,
                mean_samples: rows.iter().map(|r| r.samples_used as f64).sum::<f64>() / n as f64,
                mean_tokens: rows.iter().map(|r| r.tokens_used as f64).sum::<f64>() / n as f64,
                coverage,
                coverage_se,
                accuracy,
                accuracy_se,
                pareto_optimal: true,
            }
        })
        .collect();
    let snapshot = out.clone();
    for s in &mut out {
        s.pareto_optimal = !snapshot.iter().any(|o| {
            o.coverage >= s.coverage
                && o.mean_tokens <= s.mean_tokens
                && (o.coverage > s.coverage || o.mean_tokens < s.mean_tokens)
        });
    }
    out
}

fn run_one<B: Backend + Grader>(
    backend: &mut B,
    setup: &ComparisonSetup,
    instance_id: u64,
    policy: StoppingPolicy,
) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let outcome = run_instance(
        backend,
        instance_id,
        setup.stream_seed(instance_id),
        setup.controller,
        policy,
    )?;
    let wall_time = start.elapsed();
    let mut answers = outcome.pool_answers;
    answers.push(outcome.answer.text);
    let grade = backend.grade(instance_id, &answers)?;
    if grade.correct.len() != answers.len() {
        return Err(Error::Backend(format!(
            "grader returned {} flags for {} answers",
            grade.correct.len(),
            answers.len()
        )));
    }
    let (chosen, pool) = grade.correct.split_last().expect("at least one answer");
    let batch_total: usize = outcome.batches.iter().sum();
    if batch_total as u64 != outcome.samples_used {
        return Err(Error::Backend(format!(
            "batch sizes sum to {batch_total} but {} samples were used",
            outcome.samples_used
        )));
    }
    Ok(ExperimentRecord {
        instance_id,
        true_s: grade.true_s,
        irreducible: grade.irreducible,
        policy: policy.label(),
        samples_used: outcome.samples_used,
        tokens_used: outcome.tokens_used,
        covered: pool.iter().any(|&c| c),
        correct: *chosen,
        p_star_final: outcome.p_star,
        rounds: outcome.rounds,
        stop_reason: outcome.reason,
        batches: outcome.batches,
        wall_time,
        log: outcome.log,
    })
}

/// Runs every policy on the same instances and candidate streams.
///
/// Instances fan out over the rayon pool; `make_backend` is called once per
/// worker. Records come back sorted by policy order, then instance id. If any
/// instance fails the error carries every record that did complete.
pub fn run_policy_comparison<B, F>(setup: &ComparisonSetup, make_backend: F) -> Result<ComparisonReport>
where
    B: Backend + Grader,
    F: Fn() -> Result<B> + Sync + Send,
{
    setup.validate()?;
    let results: Vec<(u64, Result<Vec<ExperimentRecord>>)> = (0..setup.num_instances)
        .into_par_iter()
        .map_init(
            &make_backend,
            |backend, id| {
                let run = match backend {
                    Ok(b) => setup
                        .policies
                        .iter()
                        .map(|&p| run_one(b, setup, id, p))
                        .collect::<Result<Vec<_>>>(),
                    Err(e) => Err(Error::Backend(format!("backend construction failed: {e}"))),
                };
                (id, run)
            },
        )
        .collect();

    let mut records = Vec::new();
    let mut failure = None;
    for (id, r) in results {
        match r {
            Ok(rows) => records.extend(rows),
            Err(e) if failure.is_none() => failure = Some((id, e)),
            Err(_) => {}
        }
    }
    let policy_rank = |label: &str| {
        setup
            .policies
            .iter()
            .position(|p| p.label() == label)
            .unwrap_or(usize::MAX)
    };
    records.sort_by(|a, b| {
        policy_rank(&a.policy)
            .cmp(&policy_rank(&b.policy))
            .then(a.instance_id.cmp(&b.instance_id))
    });
    if let Some((instance_id, source)) = failure {
        return Err(Error::Campaign {
            instance_id,
            source: Box::new(source),
            partial: records,
        });
    }
    let summaries = summarize(&records);
    Ok(ComparisonReport { records, summaries })
}

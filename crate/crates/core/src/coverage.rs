//! Coverage, residual risk, δ-coverage sample sizes and budget planning.
//!
//! For an instance with single-trial success probability `s`, `K` independent
//! samples contain a correct answer with probability `1 - (1 - s)^K`. Averaged
//! over the difficulty distribution this is the coverage `C(K)`; its
//! complement is the residual failure `Δ(K)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::distribution::{survival_power, DifficultyDistribution};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

/// Relative slack used when comparing a computed residual against a target.
/// Covers lgamma round-off and the quadrature tolerance.
pub const RESIDUAL_REL_SLACK: f64 = 1e-9;

/// Largest sample count the budget search will consider.
pub const MAX_BUDGET: u64 = 1 << 52;

fn check_k(k: u64) -> Result<()> {
    if k == 0 {
        Err(Error::domain("sample count k must be >= 1"))
    } else {
        Ok(())
    }
}

/// `E[(1 - s)^k]`.
pub fn residual(dist: &DifficultyDistribution, k: u64) -> Result<f64> {
    check_k(k)?;
    dist.validate()?;
    Ok(dist.tail_expectation(k as f64, 0.0).clamp(0.0, 1.0))
}

/// `E[1 - (1 - s)^k]`.
pub fn coverage(dist: &DifficultyDistribution, k: u64) -> Result<f64> {
    Ok(1.0 - residual(dist, k)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub k: u64,
    pub coverage: f64,
    pub residual: f64,
    pub r_irr: f64,
}

impl RiskProfile {
    /// `Δ(K) + R_irr`, clamped to `[0, 1]`.
    pub fn total_risk(&self) -> f64 {
        (self.residual + self.r_irr).clamp(0.0, 1.0)
    }
}

pub fn risk_profile(dist: &DifficultyDistribution, k: u64, r_irr: f64) -> Result<RiskProfile> {
    if !(0.0..1.0).contains(&r_irr) {
        return Err(Error::domain(format!("r_irr must lie in [0, 1), got {r_irr}")));
    }
    let residual = residual(dist, k)?;
    Ok(RiskProfile {
        k,
        coverage: 1.0 - residual,
        residual,
        r_irr,
    })
}

/// Whether `n` samples at success probability `s` reach coverage `1 - delta`.
fn reaches(s: f64, delta: f64, n: u64) -> bool {
    -((n as f64) * (-s).ln_1p()).exp_m1() >= 1.0 - delta
}

/// Minimal `n` with `1 - (1 - s)^n >= 1 - delta`.
pub fn delta_coverage_size(s: f64, delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::domain(format!(
            "success probability must lie in (0, 1], got {s}; no finite sample size exists"
        )));
    }
    if s == 1.0 {
        return Ok(1);
    }
    let estimate = (delta.ln() / (-s).ln_1p()).ceil();
    if !estimate.is_finite() || estimate >= MAX_BUDGET as f64 {
        return Err(Error::BudgetOverflow {
            target: delta,
            limit: MAX_BUDGET,
        });
    }
    let mut n = (estimate as u64).max(1);
    while !reaches(s, delta, n) {
        n += 1;
    }
    while n > 1 && reaches(s, delta, n - 1) {
        n -= 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum TailRegime {
    /// `Δ(K) ~ κ Γ(α) K^-α`.
    Polynomial { alpha: f64, kappa: f64 },
    /// `log Δ(K) ~ -C_θ K^(θ/(θ+1))`.
    StretchedExponential { theta: f64, c_theta: f64 },
    /// `Δ(K) <= C' e^(-c' K)`.
    Exponential { rate: f64 },
}

impl TailRegime {
    /// Exponent the regime-appropriate regression should recover:
    /// `-α`, `θ/(θ+1)` or `-c'`.
    pub fn fitted_exponent(&self) -> f64 {
        match *self {
            TailRegime::Polynomial { alpha, .. } => -alpha,
            TailRegime::StretchedExponential { theta, .. } => theta / (theta + 1.0),
            TailRegime::Exponential { rate } => -rate,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TailRegime::Polynomial { .. } => "polynomial",
            TailRegime::StretchedExponential { .. } => "stretched_exponential",
            TailRegime::Exponential { .. } => "exponential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPrediction {
    pub k: u64,
    pub value: f64,
    pub regime: TailRegime,
    /// Set when the constant is a numerical approximation rather than exact.
    pub approximate: bool,
}

/// `min_{u > 0} (u + c u^-θ)`, the Laplace constant of the stretched-exponential
/// regime: with `s = u K^(-1/(θ+1))` the exponent `-K s - c s^-θ` becomes
/// `-K^(θ/(θ+1)) (u + c u^-θ)`.
pub fn stretched_exp_constant(theta: f64, c: f64) -> f64 {
    let phi = |log_u: f64| log_u.exp() + c * (-theta * log_u).exp();
    // golden-section search on log u
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-40.0f64, 40.0f64);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = phi(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = phi(x2);
        }
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    phi(0.5 * (a + b))
}

pub fn tail_regime(dist: &DifficultyDistribution) -> Result<TailRegime> {
    match dist {
        DifficultyDistribution::HeavyTail { alpha, kappa, .. } => Ok(TailRegime::Polynomial {
            alpha: *alpha,
            kappa: *kappa,
        }),
        DifficultyDistribution::StretchedExp { theta, c } => {
            Ok(TailRegime::StretchedExponential {
                theta: *theta,
                c_theta: stretched_exp_constant(*theta, *c),
            })
        }
        DifficultyDistribution::LightTruncated { s_min, .. } => Ok(TailRegime::Exponential {
            rate: -(-s_min).ln_1p(),
        }),
        other => Err(Error::UnsupportedFamily(other.family_name())),
    }
}

/// Leading-order asymptotic form of `Δ(k)` for the three tail regimes.
/// The exponential regime reports the bound with `C' = 1`.
pub fn tail_rate_prediction(dist: &DifficultyDistribution, k: u64) -> Result<TailPrediction> {
    check_k(k)?;
    dist.validate()?;
    let regime = tail_regime(dist)?;
    let kf = k as f64;
    let (value, approximate) = match regime {
        TailRegime::Polynomial { alpha, kappa } => (kappa * gamma(alpha) * kf.powf(-alpha), false),
        TailRegime::StretchedExponential { theta, c_theta } => {
            ((-c_theta * kf.powf(theta / (theta + 1.0))).exp(), true)
        }
        TailRegime::Exponential { rate } => ((-rate * kf).exp(), false),
    };
    Ok(TailPrediction {
        k,
        value,
        regime,
        approximate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    /// Smallest `k` with `Δ(k) <= epsilon - r_irr`.
    pub k: u64,
    pub residual_at_k: f64,
    pub target_residual: f64,
    /// Order-of-magnitude `K*(ε)` from the asymptotic scaling, when defined.
    pub asymptotic_estimate: Option<f64>,
}

fn asymptotic_budget(dist: &DifficultyDistribution, target: f64) -> Option<f64> {
    let log_inv = (1.0 / target).ln();
    match dist {
        DifficultyDistribution::PointMass { s } => Some(target.ln() / (-s).ln_1p()),
        // Beta(a, b) has density ~ s^(a-1) / B(a, b) at 0
        DifficultyDistribution::Beta { a, b } => {
            let kappa_gamma = (ln_gamma(a + b) - ln_gamma(*b)).exp();
            Some((kappa_gamma / target).powf(1.0 / a))
        }
        DifficultyDistribution::HeavyTail { alpha, kappa, .. } => {
            Some((kappa * gamma(*alpha) / target).powf(1.0 / alpha))
        }
        DifficultyDistribution::StretchedExp { theta, c } => {
            let c_theta = stretched_exp_constant(*theta, *c);
            Some((log_inv / c_theta).powf((theta + 1.0) / theta))
        }
        DifficultyDistribution::LightTruncated { s_min, .. } => Some(log_inv / -(-s_min).ln_1p()),
    }
}

/// Smallest `k` with `Δ(k) <= epsilon - r_irr`, found by exponential then
/// binary search on the monotone residual.
pub fn budget_for_risk(dist: &DifficultyDistribution, epsilon: f64, r_irr: f64) -> Result<BudgetPlan> {
    dist.validate()?;
    if !(0.0..1.0).contains(&r_irr) {
        return Err(Error::domain(format!("r_irr must lie in [0, 1), got {r_irr}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if epsilon <= r_irr {
        return Err(Error::InfeasibleTarget { epsilon, r_irr });
    }
    let target = epsilon - r_irr;
    let ok = |k: u64| -> Result<(bool, f64)> {
        let r = residual(dist, k)?;
        Ok((r <= target * (1.0 + RESIDUAL_REL_SLACK), r))
    };

    let (mut lo, mut hi) = (0u64, 1u64);
    let mut hi_residual;
    loop {
        let (pass, r) = ok(hi)?;
        hi_residual = r;
        if pass {
            break;
        }
        if hi >= MAX_BUDGET {
            return Err(Error::BudgetOverflow {
                target,
                limit: MAX_BUDGET,
            });
        }
        lo = hi;
        hi = (hi * 2).min(MAX_BUDGET);
    }
    // invariant: lo fails (or is 0), hi passes
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let (pass, r) = ok(mid)?;
        if pass {
            hi = mid;
            hi_residual = r;
        } else {
            lo = mid;
        }
    }
    Ok(BudgetPlan {
        k: hi,
        residual_at_k: hi_residual,
        target_residual: target,
        asymptotic_estimate: asymptotic_budget(dist, target),
    })
}

/// One seeded draw from the difficulty distribution.
pub fn sample_difficulty(dist: &DifficultyDistribution, seed: u64) -> Result<f64> {
    dist.validate()?;
    Ok(dist.sample(&mut rng_from(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResidual {
    pub k: u64,
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
}

const MC_CHUNK: usize = 1 << 15;

/// Monte Carlo estimate of `Δ(k)` for every `k` in `ks` from `draws` shared
/// difficulty draws. Chunks are seeded by index so the result does not depend
/// on the rayon thread count.
pub fn monte_carlo_residual(
    dist: &DifficultyDistribution,
    ks: &[u64],
    draws: usize,
    seed: u64,
) -> Result<Vec<MonteCarloResidual>> {
    dist.validate()?;
    if draws < 2 {
        return Err(Error::domain("need at least two Monte Carlo draws"));
    }
    for &k in ks {
        check_k(k)?;
    }
    let chunks = draws.div_ceil(MC_CHUNK);
    let partials: Vec<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng_from(derive_seed(seed, chunk as u64));
            let n = MC_CHUNK.min(draws - chunk * MC_CHUNK);
            let mut acc = vec![(0.0, 0.0); ks.len()];
            for _ in 0..n {
                let s = dist.sample(&mut rng);
                let log_fail = (-s).ln_1p();
                for (slot, &k) in acc.iter_mut().zip(ks) {
                    let v = if log_fail == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (k as f64 * log_fail).exp()
                    };
                    slot.0 += v;
                    slot.1 += v * v;
                }
            }
            acc
        })
        .collect();
    let n = draws as f64;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (sum, sum_sq) = partials
                .iter()
                .fold((0.0, 0.0), |(a, b), p| (a + p[i].0, b + p[i].1));
            let mean = sum / n;
            let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
            MonteCarloResidual {
                k,
                mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Residual at a single known success probability, `(1 - s)^k`.
pub fn instance_residual(s: f64, k: u64) -> f64 {
    survival_power(s, k as f64)
}

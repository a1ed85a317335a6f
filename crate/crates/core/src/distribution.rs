//! Instance-difficulty distributions over the single-trial success probability.
//!
//! Every family puts all of its mass in `(0, 1]`. The lower tail near zero is
//! what matters for the residual-risk asymptotics, so each family is built to
//! have an exactly known tail:
//!
//! * `HeavyTail`: density `kappa * s^(alpha - 1)` on `(0, s_max]`, with an atom at
//!   `s_max` holding whatever mass the density leaves over.
//! * `StretchedExp`: CDF `exp(-c * (s^-theta - 1))` on `(0, 1]`, so that
//!   `log Pr(s <= eps) = -c * eps^-theta + c`.
//! * `LightTruncated`: a base family conditioned on `s >= s_min`.

use rand::Rng;
use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::{geometric_partition, integrate};

/// Relative tolerance for all quadrature-backed expectations.
pub const QUADRATURE_REL_TOL: f64 = 1e-8;

/// Depth of the geometric seed partition toward `s = 0`.
const PARTITION_DEPTH: u32 = 64;

/// Rejection attempts before truncated Beta sampling falls back to inversion.
const MAX_REJECTIONS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub enum DifficultyDistribution {
    PointMass {
        s: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    HeavyTail {
        alpha: f64,
        kappa: f64,
        s_max: f64,
    },
    StretchedExp {
        theta: f64,
        c: f64,
    },
    LightTruncated {
        s_min: f64,
        base: Box<DifficultyDistribution>,
    },
}

/// Wire shape: `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
enum DistributionSpec {
    PointMass {
        s: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    HeavyTail {
        alpha: f64,
        kappa: f64,
        #[serde(default = "default_s_max")]
        s_max: f64,
    },
    StretchedExp {
        theta: f64,
        c: f64,
    },
    LightTruncated {
        s_min: f64,
        #[serde(default = "default_base")]
        base: Box<DifficultyDistribution>,
    },
}

fn default_s_max() -> f64 {
    1.0
}

fn default_base() -> Box<DifficultyDistribution> {
    Box::new(DifficultyDistribution::Beta { a: 1.0, b: 1.0 })
}

impl TryFrom<DistributionSpec> for DifficultyDistribution {
    type Error = Error;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        let dist = match spec {
            DistributionSpec::PointMass { s } => Self::PointMass { s },
            DistributionSpec::Beta { a, b } => Self::Beta { a, b },
            DistributionSpec::HeavyTail {
                alpha,
                kappa,
                s_max,
            } => Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            },
            DistributionSpec::StretchedExp { theta, c } => Self::StretchedExp { theta, c },
            DistributionSpec::LightTruncated { s_min, base } => Self::LightTruncated { s_min, base },
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl From<DifficultyDistribution> for DistributionSpec {
    fn from(d: DifficultyDistribution) -> Self {
        match d {
            DifficultyDistribution::PointMass { s } => Self::PointMass { s },
            DifficultyDistribution::Beta { a, b } => Self::Beta { a, b },
            DifficultyDistribution::HeavyTail {
                alpha,
                kappa,
                s_max,
            } => Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            },
            DifficultyDistribution::StretchedExp { theta, c } => Self::StretchedExp { theta, c },
            DifficultyDistribution::LightTruncated { s_min, base } => {
                Self::LightTruncated { s_min, base }
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// `(1 - s)^k` evaluated as `exp(k * log1p(-s))`.
#[inline]
pub fn survival_power(s: f64, k: f64) -> f64 {
    (k * (-s).ln_1p()).exp()
}

impl DifficultyDistribution {
    pub fn point_mass(s: f64) -> Result<Self> {
        let d = Self::PointMass { s };
        d.validate()?;
        Ok(d)
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        let d = Self::Beta { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn heavy_tail(alpha: f64, kappa: f64, s_max: f64) -> Result<Self> {
        let d = Self::HeavyTail {
            alpha,
            kappa,
            s_max,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn stretched_exp(theta: f64, c: f64) -> Result<Self> {
        let d = Self::StretchedExp { theta, c };
        d.validate()?;
        Ok(d)
    }

    pub fn light_truncated(s_min: f64, base: DifficultyDistribution) -> Result<Self> {
        let d = Self::LightTruncated {
            s_min,
            base: Box::new(base),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::PointMass { .. } => "point_mass",
            Self::Beta { .. } => "beta",
            Self::HeavyTail { .. } => "heavy_tail",
            Self::StretchedExp { .. } => "stretched_exp",
            Self::LightTruncated { .. } => "light_truncated",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::PointMass { s } => open_unit("point_mass.s", *s),
            Self::Beta { a, b } => {
                positive("beta.a", *a)?;
                positive("beta.b", *b)
            }
            Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            } => {
                positive("heavy_tail.alpha", *alpha)?;
                positive("heavy_tail.kappa", *kappa)?;
                if !(*s_max > 0.0 && *s_max <= 1.0) {
                    return Err(Error::domain(format!(
                        "heavy_tail.s_max must lie in (0, 1], got {s_max}"
                    )));
                }
                let mass = kappa * s_max.powf(*alpha) / alpha;
                if mass > 1.0 + 1e-12 {
                    return Err(Error::domain(format!(
                        "heavy_tail density mass kappa*s_max^alpha/alpha = {mass} exceeds 1"
                    )));
                }
                Ok(())
            }
            Self::StretchedExp { theta, c } => {
                positive("stretched_exp.theta", *theta)?;
                positive("stretched_exp.c", *c)
            }
            Self::LightTruncated { s_min, base } => {
                open_unit("light_truncated.s_min", *s_min)?;
                base.validate()?;
                if base.mass_at_least(*s_min) <= 1e-12 {
                    return Err(Error::domain(format!(
                        "light_truncated base has no mass above s_min = {s_min}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Continuous density mass of the heavy-tail family (`kappa * s_max^alpha / alpha`).
    fn heavy_tail_density_mass(alpha: f64, kappa: f64, s_max: f64) -> f64 {
        (kappa * s_max.powf(alpha) / alpha).min(1.0)
    }

    /// `Pr(S >= lo)`.
    pub fn mass_at_least(&self, lo: f64) -> f64 {
        if lo <= 0.0 {
            return 1.0;
        }
        match self {
            Self::PointMass { s } => {
                if *s >= lo {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Beta { a, b } => {
                if lo >= 1.0 {
                    0.0
                } else {
                    1.0 - beta_reg(*a, *b, lo)
                }
            }
            Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            } => {
                if lo > *s_max {
                    0.0
                } else {
                    1.0 - kappa * lo.powf(*alpha) / alpha
                }
            }
            Self::StretchedExp { theta, c } => {
                if lo > 1.0 {
                    0.0
                } else {
                    -(-c * (lo.powf(-theta) - 1.0)).exp_m1()
                }
            }
            Self::LightTruncated { s_min, base } => {
                base.mass_at_least(lo.max(*s_min)) / base.mass_at_least(*s_min)
            }
        }
    }

    /// Analytic mean, `E[S] = 1 - E[(1 - S)^1]`.
    pub fn mean(&self) -> f64 {
        1.0 - self.tail_expectation(1.0, 0.0)
    }

    /// `E[(1 - S)^k ; S >= lo]`, closed form where one exists.
    pub fn tail_expectation(&self, k: f64, lo: f64) -> f64 {
        match self {
            Self::PointMass { s } => {
                if *s >= lo {
                    survival_power(*s, k)
                } else {
                    0.0
                }
            }
            Self::Beta { a, b } if lo <= 0.0 => {
                // B(a, b + k) / B(a, b)
                (ln_gamma(b + k) - ln_gamma(*b) + ln_gamma(a + b) - ln_gamma(a + b + k)).exp()
            }
            Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            } if lo <= 0.0 && *s_max == 1.0 => {
                // kappa * B(alpha, k + 1); the atom at s_max = 1 contributes nothing
                kappa
                    * (ln_gamma(*alpha) + ln_gamma(k + 1.0) - ln_gamma(alpha + k + 1.0)).exp()
            }
            Self::LightTruncated { s_min, base } => {
                base.tail_expectation(k, lo.max(*s_min)) / base.mass_at_least(*s_min)
            }
            _ => self.tail_expectation_quadrature(k, lo),
        }
    }

    /// `E[(1 - S)^k ; S >= lo]` by adaptive quadrature, ignoring closed forms.
    /// Serves as the independent route for checking the closed forms.
    pub fn tail_expectation_quadrature(&self, k: f64, lo: f64) -> f64 {
        let lo = lo.max(0.0);
        match self {
            Self::PointMass { .. } => self.tail_expectation(k, lo),
            Self::Beta { a, b } => {
                if lo >= 1.0 {
                    return 0.0;
                }
                let ln_b = ln_gamma(*a) + ln_gamma(*b) - ln_gamma(a + b);
                let expo = b + k - 1.0;
                let h = |s: f64| (expo * (-s).ln_1p() - ln_b).exp();
                let mut total = 0.0;
                if lo < 0.5 {
                    // s = t^(1/a) removes the s^(a-1) endpoint factor
                    let (t_lo, t_hi) = (lo.powf(*a), 0.5f64.powf(*a));
                    let inv_a = 1.0 / a;
                    let q = integrate(
                        |t| if t <= 0.0 { 0.0 } else { inv_a * h(t.powf(inv_a)) },
                        &geometric_partition(t_lo, t_hi, PARTITION_DEPTH),
                        QUADRATURE_REL_TOL,
                    );
                    total += q.value;
                }
                let upper_lo = lo.max(0.5);
                let q = integrate(
                    |s| ((a - 1.0) * s.ln()).exp() * h(s),
                    &geometric_partition(upper_lo, 1.0, 8),
                    QUADRATURE_REL_TOL,
                );
                total + q.value
            }
            Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            } => {
                if lo > *s_max {
                    return 0.0;
                }
                let inv_alpha = 1.0 / alpha;
                let (t_lo, t_hi) = (lo.powf(*alpha), s_max.powf(*alpha));
                // s = t^(1/alpha): kappa s^(alpha-1) ds = (kappa/alpha) dt
                let q = integrate(
                    |t| {
                        if t <= 0.0 {
                            1.0
                        } else {
                            survival_power(t.powf(inv_alpha), k)
                        }
                    },
                    &geometric_partition(t_lo, t_hi, PARTITION_DEPTH),
                    QUADRATURE_REL_TOL,
                );
                let atom = 1.0 - Self::heavy_tail_density_mass(*alpha, *kappa, *s_max);
                kappa / alpha * q.value + atom * survival_power(*s_max, k)
            }
            Self::StretchedExp { theta, c } => {
                if lo >= 1.0 {
                    return 0.0;
                }
                let density_times_power = |s: f64| {
                    if s <= 0.0 {
                        return 0.0;
                    }
                    let ln_s = s.ln();
                    let inv_pow = (-theta * ln_s).exp();
                    let ln_f = (c * theta).ln() + (-theta - 1.0) * ln_s - c * (inv_pow - 1.0);
                    (ln_f + k * (-s).ln_1p()).exp()
                };
                integrate(
                    density_times_power,
                    &geometric_partition(lo, 1.0, PARTITION_DEPTH),
                    QUADRATURE_REL_TOL,
                )
                .value
            }
            Self::LightTruncated { s_min, base } => {
                base.tail_expectation_quadrature(k, lo.max(*s_min)) / base.mass_at_least(*s_min)
            }
        }
    }

    /// Draws one success probability in `(0, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_at_least(rng, 0.0)
    }

    /// Draws from the distribution conditioned on `S >= lo`.
    fn sample_at_least<R: Rng + ?Sized>(&self, rng: &mut R, lo: f64) -> f64 {
        let s = match self {
            Self::PointMass { s } => *s,
            Self::Beta { a, b } => {
                let beta = rand_distr::Beta::new(*a, *b).expect("validated beta parameters");
                if lo <= 0.0 {
                    beta.sample(rng)
                } else {
                    (0..MAX_REJECTIONS)
                        .map(|_| beta.sample(rng))
                        .find(|&s| s >= lo)
                        .unwrap_or_else(|| {
                            let u: f64 = Open01.sample(rng);
                            let floor = beta_reg(*a, *b, lo);
                            invert_beta_cdf(*a, *b, floor + (1.0 - floor) * u, lo)
                        })
                }
            }
            Self::HeavyTail {
                alpha,
                kappa,
                s_max,
            } => {
                let floor = if lo > 0.0 {
                    kappa * lo.powf(*alpha) / alpha
                } else {
                    0.0
                };
                let u: f64 = Open01.sample(rng);
                let u = floor + (1.0 - floor) * u;
                let density_mass = Self::heavy_tail_density_mass(*alpha, *kappa, *s_max);
                if u < density_mass {
                    (alpha * u / kappa).powf(1.0 / alpha).min(*s_max)
                } else {
                    *s_max
                }
            }
            Self::StretchedExp { theta, c } => {
                let floor = if lo > 0.0 {
                    (-c * (lo.powf(-theta) - 1.0)).exp()
                } else {
                    0.0
                };
                let u: f64 = Open01.sample(rng);
                let u = floor + (1.0 - floor) * u;
                (1.0 - u.ln() / c).powf(-1.0 / theta)
            }
            Self::LightTruncated { s_min, base } => base.sample_at_least(rng, lo.max(*s_min)),
        };
        s.clamp(f64::MIN_POSITIVE, 1.0)
    }
}

/// Bisection on the regularized incomplete beta function.
fn invert_beta_cdf(a: f64, b: f64, target: f64, lo: f64) -> f64 {
    let (mut left, mut right) = (lo, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (left + right);
        if beta_reg(a, b, mid) < target {
            left = mid;
        } else {
            right = mid;
        }
    }
    0.5 * (left + right)
}

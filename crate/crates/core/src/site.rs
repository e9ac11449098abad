//! The i.i.d. initial configuration of sleeping frogs.
//!
//! A [`SiteField`] never materializes the configuration. The count at a
//! site is recomputed on demand from `mix64(mix64(seed) ^ code(x))`, where
//! `code` is the Morton interleaving of zigzag-folded coordinates (see
//! [`Point::morton_code`]); the resulting 64 bits become a uniform on (0,1)
//! that is pushed through the inverse CDF of the site law. Windows can grow
//! without resampling anything already seen.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Point;
use crate::rng::{self, mix64};
use crate::stats;

/// Below this log-level `exp` is evaluated exactly and floored; above it the
/// count saturates and `log⁺` is taken from the continuous variable directly.
const EXACT_LOG_LIMIT: f64 = 40.0;

/// Law of the number of sleeping frogs at a site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SiteDistribution {
    /// Point mass at `m`.
    Deterministic(u64),
    /// `P(k) = q (1-q)^k` on `{0, 1, 2, ...}`.
    Geometric(f64),
    /// Pareto tail on the log scale: with `V = U^(-1/s) - 1`,
    /// `η = floor(exp(V) - 1)`, so `P(η >= m) = (1 + ln(m+1))^(-s)`.
    ExpPareto(f64),
}

impl SiteDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SiteDistribution::Deterministic(_) => Ok(()),
            SiteDistribution::Geometric(q) if q > 0.0 && q < 1.0 => Ok(()),
            SiteDistribution::Geometric(q) => Err(Error::InvalidDistribution(format!(
                "geometric success probability q = {q} not in (0,1)"
            ))),
            SiteDistribution::ExpPareto(s) if s > 0.0 && s.is_finite() => Ok(()),
            SiteDistribution::ExpPareto(s) => Err(Error::InvalidDistribution(format!(
                "exppareto shape s = {s} must be positive"
            ))),
        }
    }

    /// Inverse-CDF sample driven by a uniform `u` in (0,1).
    #[inline]
    pub fn sample_from_unit(&self, u: f64) -> u64 {
        match *self {
            SiteDistribution::Deterministic(m) => m,
            SiteDistribution::Geometric(q) => {
                let k = (u.ln() / (-q).ln_1p()).floor();
                if k >= u64::MAX as f64 {
                    u64::MAX
                } else {
                    k as u64
                }
            }
            SiteDistribution::ExpPareto(s) => {
                let v = u.powf(-1.0 / s) - 1.0;
                if v >= EXACT_LOG_LIMIT + 5.0 {
                    u64::MAX
                } else {
                    let x = v.exp_m1().floor();
                    if x >= u64::MAX as f64 {
                        u64::MAX
                    } else {
                        x as u64
                    }
                }
            }
        }
    }

    /// `log⁺ η` for the same uniform; exact where the count is representable,
    /// continuous beyond it so heavy tails are not clipped by saturation.
    #[inline]
    pub fn log_plus_from_unit(&self, u: f64) -> f64 {
        match *self {
            SiteDistribution::ExpPareto(s) => {
                let v = u.powf(-1.0 / s) - 1.0;
                if v < EXACT_LOG_LIMIT {
                    log_plus(v.exp_m1().floor() as u64)
                } else {
                    v + (-(-v).exp()).ln_1p()
                }
            }
            _ => log_plus(self.sample_from_unit(u)),
        }
    }

    /// `P(η >= m)`.
    pub fn survival(&self, m: u64) -> f64 {
        if m == 0 {
            return 1.0;
        }
        match *self {
            SiteDistribution::Deterministic(c) => f64::from(u8::from(c >= m)),
            SiteDistribution::Geometric(q) => ((-q).ln_1p() * m as f64).exp(),
            SiteDistribution::ExpPareto(s) => (1.0 + ((m as f64) + 1.0).ln()).powf(-s),
        }
    }

    /// `P(η <= m)`.
    pub fn cdf(&self, m: u64) -> f64 {
        1.0 - self.survival(m.saturating_add(1))
    }

    /// `P(log⁺ η >= t)` for `t > 0`, i.e. `P(η >= ceil(e^t))`.
    pub fn log_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            SiteDistribution::ExpPareto(s) if t >= EXACT_LOG_LIMIT => (1.0 + t).powf(-s),
            _ => {
                let m = t.exp().ceil();
                if m >= u64::MAX as f64 {
                    return match *self {
                        SiteDistribution::Geometric(q) => ((-q).ln_1p() * m).exp(),
                        _ => 0.0,
                    };
                }
                self.survival(m as u64)
            }
        }
    }

    /// `E[η]`, infinite for every ExpPareto shape (the log-scale tail is
    /// polynomial, so `P(η >= m)` is not summable).
    pub fn mean(&self) -> f64 {
        match *self {
            SiteDistribution::Deterministic(m) => m as f64,
            SiteDistribution::Geometric(q) => (1.0 - q) / q,
            SiteDistribution::ExpPareto(_) => f64::INFINITY,
        }
    }

    /// Whether `E[(log⁺ η)^r] = ∞`, decided analytically.
    pub fn is_heavy(&self, r: f64) -> bool {
        match *self {
            SiteDistribution::Deterministic(_) | SiteDistribution::Geometric(_) => false,
            SiteDistribution::ExpPareto(s) => r >= s,
        }
    }
}

#[inline]
fn log_plus(n: u64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n as f64).ln()
    }
}

impl fmt::Display for SiteDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteDistribution::Deterministic(m) => write!(f, "det:{m}"),
            SiteDistribution::Geometric(q) => write!(f, "geom:{q}"),
            SiteDistribution::ExpPareto(s) => write!(f, "exppareto:{s}"),
        }
    }
}

impl FromStr for SiteDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, param) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidDistribution(format!("`{s}`: expected family:param")))?;
        let bad = |what: &str| Error::InvalidDistribution(format!("`{s}`: {what}"));
        let dist = match family.trim() {
            "det" => SiteDistribution::Deterministic(
                param.trim().parse().map_err(|_| bad("m must be a nonnegative integer"))?,
            ),
            "geom" => SiteDistribution::Geometric(
                param.trim().parse().map_err(|_| bad("q must be a number"))?,
            ),
            "exppareto" => SiteDistribution::ExpPareto(
                param.trim().parse().map_err(|_| bad("s must be a number"))?,
            ),
            other => return Err(bad(&format!("unknown family `{other}`"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Lazily evaluated product configuration over `Z^d \ {0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteField {
    pub master_seed: u64,
    pub dist: SiteDistribution,
}

impl SiteField {
    pub fn new(master_seed: u64, dist: SiteDistribution) -> Result<Self> {
        dist.validate()?;
        Ok(SiteField { master_seed, dist })
    }

    /// Uniform on (0,1) attached to `x`; a pure function of seed and site.
    #[inline]
    pub fn uniform_at(&self, x: &Point) -> f64 {
        let code = x.morton_code();
        let mut h = mix64(mix64(self.master_seed ^ rng::tag::SITE_FIELD) ^ code as u64);
        let hi = (code >> 64) as u64;
        if hi != 0 {
            h = mix64(h ^ hi);
        }
        rng::unit_open(h)
    }

    /// Number of sleeping frogs at `x`.
    pub fn site_value(&self, x: &Point) -> Result<u64> {
        if x.is_origin() {
            return Err(Error::OriginQuery);
        }
        Ok(self.dist.sample_from_unit(self.uniform_at(x)))
    }

    /// `log⁺ η_x`, with the same origin rule.
    pub fn log_value(&self, x: &Point) -> Result<f64> {
        if x.is_origin() {
            return Err(Error::OriginQuery);
        }
        Ok(self.dist.log_plus_from_unit(self.uniform_at(x)))
    }
}

/// Monte-Carlo mean of a capped statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub cap: f64,
}

/// Estimates `E[min((log⁺ η)^r, cap)]` from `samples` draws.
pub fn log_moment_mc<R: RngCore + ?Sized>(
    dist: &SiteDistribution,
    r: f64,
    samples: usize,
    cap: f64,
    stream: &mut R,
) -> Result<MomentEstimate> {
    if samples == 0 || !(cap > 0.0) || !(r > 0.0) {
        return Err(Error::Precondition(format!(
            "need samples >= 1, cap > 0, r > 0 (got {samples}, {cap}, {r})"
        )));
    }
    let mut acc = stats::Welford::default();
    for _ in 0..samples {
        let l = dist.log_plus_from_unit(rng::unit_open(stream.next_u64()));
        acc.push(l.powf(r).min(cap));
    }
    Ok(MomentEstimate {
        mean: acc.mean(),
        stderr: acc.stderr(),
        samples,
        cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_roundtrip() {
        for s in ["det:3", "geom:0.5", "exppareto:1.5"] {
            let d: SiteDistribution = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
    }

    #[test]
    fn parse_rejects_out_of_range() {
        assert!("exppareto:0".parse::<SiteDistribution>().is_err());
        assert!("geom:1".parse::<SiteDistribution>().is_err());
        assert!("det:-1".parse::<SiteDistribution>().is_err());
        assert!("poisson:1".parse::<SiteDistribution>().is_err());
        assert!("det".parse::<SiteDistribution>().is_err());
    }

    #[test]
    fn origin_is_rejected() {
        let f = SiteField::new(1, SiteDistribution::Deterministic(1)).unwrap();
        assert_eq!(f.site_value(&Point::origin(2)), Err(Error::OriginQuery));
        assert_eq!(f.site_value(&Point::new(&[0, 1])), Ok(1));
    }

    #[test]
    fn heavy_classification() {
        assert!(SiteDistribution::ExpPareto(1.0).is_heavy(1.5));
        assert!(SiteDistribution::ExpPareto(1.5).is_heavy(1.5));
        assert!(!SiteDistribution::ExpPareto(2.0).is_heavy(1.5));
        assert!(!SiteDistribution::Geometric(0.5).is_heavy(1.5));
        assert!(!SiteDistribution::Deterministic(9).is_heavy(100.0));
    }

    #[test]
    fn sampler_matches_survival_at_breakpoints() {
        // η >= m exactly when u <= survival(m).
        let d = SiteDistribution::ExpPareto(1.3);
        for m in [1u64, 2, 5, 27, 1000] {
            let u = d.survival(m);
            assert!(d.sample_from_unit(u * (1.0 - 1e-12)) >= m);
            assert!(d.sample_from_unit((u * (1.0 + 1e-9)).min(0.999_999)) < m);
        }
        let g = SiteDistribution::Geometric(0.3);
        for m in [1u64, 2, 7] {
            let u = g.survival(m);
            assert!(g.sample_from_unit(u * (1.0 - 1e-12)) >= m);
            assert!(g.sample_from_unit(u * (1.0 + 1e-9)) < m);
        }
    }

    #[test]
    fn log_plus_is_continuous_across_the_exact_limit() {
        let d = SiteDistribution::ExpPareto(1.0);
        let u_at = |v: f64| (1.0 + v).powf(-1.0);
        let below = d.log_plus_from_unit(u_at(EXACT_LOG_LIMIT - 1e-9));
        let above = d.log_plus_from_unit(u_at(EXACT_LOG_LIMIT + 1e-9));
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn deterministic_one_has_zero_log_moment() {
        let est = log_moment_mc(
            &SiteDistribution::Deterministic(1),
            1.0,
            1000,
            10.0,
            &mut rng::stream_from_seed(3),
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
    }
}

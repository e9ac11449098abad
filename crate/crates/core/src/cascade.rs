//! The renormalization construction: boxes `F_n` and `V_n`, the success
//! events of each level, and the certificate `1 - g(k)`.
//!
//! Everything here is a numerical evaluation of closed forms, apart from the
//! two Monte-Carlo probes at the end ([`gi1_monte_carlo`] and
//! [`ak_frequency_probe`]).
//!
//! Notation: `alpha >= 3` is the scale, level `n` lives at distance about
//! `alpha^(2n)` along the drift, and a run of the cascade starts at level `k`.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::run_seeds;
use crate::error::{Error, Result};
use crate::lattice::{BoxWindow, Point};
use crate::site::{SiteDistribution, SiteField};
use crate::stats::binomial_stderr;
use crate::walk::{frog_id, frog_walk, TransitionKernel};

/// Target floor for the mean of every `zeta_y`: `1 - e^-2`.
pub fn zeta_target() -> f64 {
    -(-2.0f64).exp_m1()
}

/// The gap constant `c = 5/2 (1 - e^-2) - 2` of the Chebyshev step.
pub fn gap_constant() -> f64 {
    2.5 * zeta_target() - 2.0
}

/// `c4 = c^-2 alpha^(2d)`.
pub fn chebyshev_constant(alpha: u64, d: usize) -> f64 {
    (alpha as f64).powi(2 * d as i32) / gap_constant().powi(2)
}

/// Smallest admissible scale for a hitting constant `c1`.
pub fn min_alpha(c1: f64) -> u64 {
    3.max((1.0 / c1).ceil() as u64)
}

fn powf(alpha: u64, e: f64) -> f64 {
    (alpha as f64).powf(e)
}

fn ipow(alpha: u64, e: u32) -> Result<u128> {
    (alpha as u128)
        .checked_pow(e)
        .ok_or_else(|| Error::Precondition(format!("{alpha}^{e} overflows")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    pub alpha: u64,
    pub d: usize,
    pub k: u32,
    pub i_max: u32,
    pub c1: f64,
    pub c4: f64,
    pub b: f64,
}

impl CascadeParams {
    /// Parameters with `c4` set to its Chebyshev value.
    pub fn new(alpha: u64, d: usize, k: u32, i_max: u32, c1: f64, b: f64) -> Result<Self> {
        let p = CascadeParams {
            alpha,
            d,
            k,
            i_max,
            c1,
            c4: chebyshev_constant(alpha, d),
            b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_k(self, k: u32) -> Self {
        CascadeParams { k, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Precondition("dimension must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Precondition(format!("start level k = {} must be at least 2", self.k)));
        }
        for (name, v) in [("c1", self.c1), ("c4", self.c4), ("b", self.b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Precondition(format!("{name} = {v} must be positive")));
            }
        }
        if self.alpha < min_alpha(self.c1) {
            return Err(Error::Precondition(format!(
                "alpha = {} is below max(3, ceil(1/c1)) = {}",
                self.alpha,
                min_alpha(self.c1)
            )));
        }
        Ok(())
    }
}

/// `F_n`: `ceil(3 alpha^(2n) / 2) <= x_1 <= alpha^(2n+2) - 1`, `|x_j| <= alpha^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub alpha: u64,
    pub n: u32,
    pub d: usize,
    pub x1_lo: i64,
    pub x1_hi: i64,
    pub lateral: i64,
    pub exact: u128,
}

impl BoxF {
    /// Real-valued count `alpha^(2n) (alpha^2 - 3/2) (2 alpha^n + 1)^(d-1)`,
    /// which pretends `3 alpha^(2n) / 2` is an integer.
    pub fn formula(&self) -> f64 {
        let a = self.alpha as f64;
        let n = self.n as i32;
        a.powi(2 * n) * (a * a - 1.5) * (2.0 * a.powi(n) + 1.0).powi(self.d as i32 - 1)
    }

    /// `(5/2) 2^(d-1) alpha^(n(d+1))`.
    pub fn lower_bound(&self) -> f64 {
        2.5 * 2f64.powi(self.d as i32 - 1) * powf(self.alpha, (self.n as usize * (self.d + 1)) as f64)
    }

    /// `alpha^(d+1) alpha^(n(d+1))`.
    pub fn upper_bound(&self) -> f64 {
        powf(self.alpha, ((self.n as usize + 1) * (self.d + 1)) as f64)
    }

    /// The sharper intermediate bound `3^(d-1) alpha^2 alpha^(n(d+1))`.
    pub fn middle_bound(&self) -> f64 {
        3f64.powi(self.d as i32 - 1) * powf(self.alpha, (2 + self.n as usize * (self.d + 1)) as f64)
    }

    pub fn bounds_hold(&self) -> bool {
        let e = self.exact as f64;
        self.lower_bound() <= e && e <= self.middle_bound() && self.middle_bound() <= self.upper_bound()
    }

    pub fn contains(&self, x: &Point) -> bool {
        let c = x.coords();
        c.len() == self.d
            && (self.x1_lo..=self.x1_hi).contains(&c[0])
            && c[1..].iter().all(|v| v.abs() <= self.lateral)
    }

    pub fn window(&self) -> Result<BoxWindow> {
        let mut lo = vec![-self.lateral; self.d];
        let mut hi = vec![self.lateral; self.d];
        lo[0] = self.x1_lo;
        hi[0] = self.x1_hi;
        BoxWindow::new(lo, hi)
    }

    /// Number of sites in the column `x_1 = const`.
    pub fn column_size(&self) -> u128 {
        (2 * self.lateral as u128 + 1).pow(self.d as u32 - 1)
    }
}

pub fn box_f(alpha: u64, n: u32, d: usize) -> Result<BoxF> {
    if alpha < 3 || n < 1 || d == 0 {
        return Err(Error::Precondition(format!("box F needs alpha >= 3, n >= 1, d >= 1; got {alpha}, {n}, {d}")));
    }
    let a2n = ipow(alpha, 2 * n)?;
    let lo = (3 * a2n).div_ceil(2);
    let hi = ipow(alpha, 2 * n + 2)? - 1;
    let lateral = ipow(alpha, n)?;
    let column = (2 * lateral + 1)
        .checked_pow(d as u32 - 1)
        .ok_or_else(|| Error::Precondition("box F count overflows".into()))?;
    let exact = (hi + 1 - lo)
        .checked_mul(column)
        .ok_or_else(|| Error::Precondition("box F count overflows".into()))?;
    let to_i64 = |v: u128| i64::try_from(v).map_err(|_| Error::Precondition("box F coordinate overflows".into()));
    Ok(BoxF {
        alpha,
        n,
        d,
        x1_lo: to_i64(lo)?,
        x1_hi: to_i64(hi)?,
        lateral: to_i64(lateral)?,
        exact,
    })
}

/// `V_n = { |x|_inf <= alpha^(2n) }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxV {
    pub alpha: u64,
    pub n: u32,
    pub d: usize,
    pub radius: i64,
    pub exact: u128,
}

impl BoxV {
    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.d && x.norm_inf() <= self.radius
    }

    pub fn window(&self) -> BoxWindow {
        BoxWindow::cube(self.d, self.radius)
    }
}

pub fn box_v(alpha: u64, n: u32, d: usize) -> Result<BoxV> {
    if alpha < 3 || n < 1 || d == 0 {
        return Err(Error::Precondition(format!("box V needs alpha >= 3, n >= 1, d >= 1; got {alpha}, {n}, {d}")));
    }
    let r = ipow(alpha, 2 * n)?;
    let exact = (2 * r + 1)
        .checked_pow(d as u32)
        .ok_or_else(|| Error::Precondition("box V count overflows".into()))?;
    Ok(BoxV {
        alpha,
        n,
        d,
        radius: i64::try_from(r).map_err(|_| Error::Precondition("box V radius overflows".into()))?,
        exact,
    })
}

/// `1 - prod (1 - f_x)^eta_x`, accumulated in log space.
pub fn zeta_mean_product(f_hat: &[f64], eta: &[u64]) -> Result<f64> {
    if f_hat.len() != eta.len() {
        return Err(Error::Precondition(format!(
            "{} hitting estimates for {} sources",
            f_hat.len(),
            eta.len()
        )));
    }
    let mut log_miss = 0.0;
    for (&f, &n) in f_hat.iter().zip(eta) {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Precondition(format!("hitting estimate {f} outside [0, 1]")));
        }
        if n == 0 {
            continue;
        }
        if f == 1.0 {
            return Ok(1.0);
        }
        log_miss += n as f64 * (-f).ln_1p();
    }
    Ok(-log_miss.exp_m1())
}

/// Evaluation of the chain bounding `P(zeta_y = 0)` at level `i`.
///
/// Sources sit in `F_{k+i-1}`, targets in `F_{k+i}`, so the first-coordinate
/// gap lies in `[alpha^(2(k+i)) / 2, alpha^(2(k+i+1))]`, and at least
/// `alpha^((d+1)(k+i-1))` frogs are available. With
/// `x = c1 alpha^(-(k+i+1)(d-1))` the chain reads
///
/// `(1 - x)^count <= exp(-x count) = exp(-c1 alpha^(2(k+i) - 2d))`.
///
/// The displayed closed form `exp(-c1 alpha^(2(k+i-1)))` agrees with the
/// honest exponent only for `d = 1`; both are reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaChainReport {
    pub i: u32,
    pub delta_min: f64,
    pub delta_max: f64,
    pub count: f64,
    pub x: f64,
    /// `(1 - x)^count`.
    pub chain_product: f64,
    /// `exp(-x count)`.
    pub xy_bound: f64,
    /// Exponent `e` with `x count = c1 alpha^e`.
    pub honest_exponent: i64,
    /// `exp(-c1 alpha^(2(k+i-1)))`.
    pub displayed_bound: f64,
    /// `1 - chain_product`.
    pub floor: f64,
    /// `1 - displayed_bound`.
    pub displayed_floor: f64,
    pub target: f64,
    pub xy_holds: bool,
    /// Whether `exp(-x count) <= displayed_bound`.
    pub displayed_step_holds: bool,
    /// Whether the evaluated chain gives `floor >= 1 - e^-2`.
    pub holds: bool,
    /// Whether the displayed closed form gives the floor.
    pub displayed_holds: bool,
    /// `exp(-alpha^(k+2(i-1)))`, the first covariance form.
    pub cov_displayed: f64,
    /// `exp(-i alpha^(k-2))`, the second covariance form (`i >= 1`).
    pub cov_second: f64,
    /// `displayed_bound <= cov_displayed <= cov_second`.
    pub cov_chain_holds: bool,
}

pub fn zeta_floor_check(params: &CascadeParams, i: u32) -> Result<ZetaChainReport> {
    params.validate()?;
    let CascadeParams { alpha, d, k, c1, .. } = *params;
    let m = (k + i) as i64;
    let d = d as i64;
    let a = alpha as f64;
    let count = a.powi(((d + 1) * (m - 1)) as i32);
    let x = c1 * a.powi((-(m + 1) * (d - 1)) as i32);
    let chain_product = if x >= 1.0 { 0.0 } else { (count * (-x).ln_1p()).exp() };
    let xy_bound = (-x * count).exp();
    let displayed_bound = (-c1 * a.powi((2 * (m - 1)) as i32)).exp();
    let target = zeta_target();
    let cov_displayed = (-a.powi((k as i64 + 2 * (i as i64 - 1)) as i32)).exp();
    let cov_second = if i == 0 {
        cov_displayed
    } else {
        (-(i as f64) * a.powi(k as i32 - 2)).exp()
    };
    Ok(ZetaChainReport {
        i,
        delta_min: 0.5 * a.powi(2 * m as i32),
        delta_max: a.powi(2 * (m + 1) as i32),
        count,
        x,
        chain_product,
        xy_bound,
        honest_exponent: 2 * m - 2 * d,
        displayed_bound,
        floor: 1.0 - chain_product,
        displayed_floor: 1.0 - displayed_bound,
        target,
        xy_holds: chain_product <= xy_bound,
        displayed_step_holds: xy_bound <= displayed_bound,
        holds: 1.0 - chain_product >= target,
        displayed_holds: 1.0 - displayed_bound >= target,
        cov_displayed,
        cov_second,
        cov_chain_holds: displayed_bound <= cov_displayed && cov_displayed <= cov_second,
    })
}

/// Grid check of `(1 - x)^y <= exp(-x y)`; returns the number of violations.
pub fn xy_inequality_violations(xs: &[f64], ys: &[f64]) -> usize {
    let mut bad = 0;
    for &x in xs {
        for &y in ys {
            let lhs = (y * (-x).ln_1p()).exp();
            let rhs = (-x * y).exp();
            if lhs > rhs * (1.0 + 1e-12) {
                bad += 1;
            }
        }
    }
    bad
}

/// Covariance bound used at level `i`: `exp(-alpha^(k-2))` for `i = 0`,
/// `exp(-i alpha^(k-2))` otherwise.
fn level_cov(params: &CascadeParams, i: u32) -> f64 {
    (-(i.max(1) as f64) * powf(params.alpha, params.k as f64 - 2.0)).exp()
}

/// `P(G_{i,1}^c) <= c4 (alpha^(-(k+i)(d+1)) + exp(-max(i,1) alpha^(k-2)))`.
pub fn gi1_failure_bound(params: &CascadeParams, i: u32) -> f64 {
    let e = -(((params.k + i) as usize * (params.d + 1)) as f64);
    params.c4 * (powf(params.alpha, e) + level_cov(params, i))
}

/// `min(1, 2 exp(-b a_i))` with `a_i = alpha^((d+1)(k+i))`.
pub fn gi2_failure_bound(params: &CascadeParams, i: u32) -> f64 {
    (2.0 * (-params.b * a_i(params, i)).exp()).min(1.0)
}

/// The weaker `2 exp(-max(i,1) b alpha^k)` that enters `g`.
pub fn gi2_summed_form(params: &CascadeParams, i: u32) -> f64 {
    2.0 * (-(i.max(1) as f64) * params.b * powf(params.alpha, params.k as f64)).exp()
}

fn a_i(params: &CascadeParams, i: u32) -> f64 {
    powf(params.alpha, (((params.k + i) as usize) * (params.d + 1)) as f64)
}

/// The Chebyshev step for `G_{i,1}` evaluated with the exact `|F_{k+i}|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevReport {
    pub i: u32,
    pub card: f64,
    /// `|F| (1 - e^-2) - 2 alpha^((d+1)(k+i))`.
    pub deficit: f64,
    pub cov: f64,
    /// `(|F| + |F| (|F| - 1) cov) / deficit^2`.
    pub exact: f64,
    /// `c^-2 alpha^(-2(d+1)m) (alpha^d alpha^(m(d+1)) + alpha^(2d) alpha^(2m(d+1)) cov)`.
    pub displayed_middle: f64,
    pub c4_form: f64,
    /// `exact <= c4_form`.
    pub holds: bool,
    /// `exact <= displayed_middle`.
    pub middle_holds: bool,
}

pub fn chebyshev_check(params: &CascadeParams, i: u32) -> Result<ChebyshevReport> {
    params.validate()?;
    let f = box_f(params.alpha, params.k + i, params.d)?;
    let card = f.exact as f64;
    let ai = a_i(params, i);
    let deficit = card * zeta_target() - 2.0 * ai;
    let cov = level_cov(params, i);
    let exact = (card + card * (card - 1.0) * cov) / (deficit * deficit);
    let ad = powf(params.alpha, params.d as f64);
    let displayed_middle = (ad * ai + ad * ad * ai * ai * cov) / (gap_constant().powi(2) * ai * ai);
    let c4_form = gi1_failure_bound(params, i);
    Ok(ChebyshevReport {
        i,
        card,
        deficit,
        cov,
        exact,
        displayed_middle,
        c4_form,
        holds: deficit > 0.0 && exact <= c4_form,
        middle_holds: deficit > 0.0 && exact <= displayed_middle,
    })
}

/// Per-level summary: box sizes, the zeta floor and the failure bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub i: u32,
    pub n: u32,
    pub exact: u128,
    pub formula: f64,
    pub lower: f64,
    pub upper: f64,
    pub zeta_floor: f64,
    pub gi1: f64,
    pub gi2: f64,
    /// `gi1 + gi2_summed_form`, the per-level term summed by `g`.
    pub level_bound: f64,
}

pub fn level_reports(params: &CascadeParams) -> Result<Vec<LevelReport>> {
    params.validate()?;
    (0..=params.i_max)
        .map(|i| {
            let n = params.k + i;
            let f = box_f(params.alpha, n, params.d)?;
            let z = zeta_floor_check(params, i)?;
            let gi1 = gi1_failure_bound(params, i);
            Ok(LevelReport {
                i,
                n,
                exact: f.exact,
                formula: f.formula(),
                lower: f.lower_bound(),
                upper: f.upper_bound(),
                zeta_floor: z.floor,
                gi1,
                gi2: gi2_failure_bound(params, i),
                level_bound: gi1 + gi2_summed_form(params, i),
            })
        })
        .collect()
}

/// `g(x)`, the closed form of the summed level bounds.
pub fn g_of_k(params: &CascadeParams, x: f64) -> f64 {
    let CascadeParams { alpha, d, c4, b, .. } = *params;
    let a = alpha as f64;
    let dp1 = (d + 1) as f64;
    let e = (-a.powf(x - 2.0)).exp();
    let eb = (-b * a.powf(x)).exp();
    c4 * (a.powf(-x * dp1) / (1.0 - a.powf(-dp1)) + e / -(-a.powf(x - 2.0)).exp_m1() + e)
        + 2.0 * (eb + eb / -(-b * a.powf(x)).exp_m1())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub alpha: u64,
    pub d: usize,
    pub k: u32,
    pub c1: f64,
    pub c4: f64,
    pub b: f64,
    pub g: f64,
    pub certificate: f64,
    pub vacuous: bool,
    pub i_max: u32,
    /// Sum of the level bounds for `i <= i_max`.
    pub partial_sum: f64,
    /// Closed form of the remaining levels.
    pub tail: f64,
    /// Partial sum with the sharper `gi2_failure_bound` terms.
    pub sharp_sum: f64,
    /// `partial_sum <= g`, `sharp_sum <= g` and `partial_sum + tail = g`.
    pub coherent: bool,
}

pub fn certificate(params: &CascadeParams) -> Result<Certificate> {
    params.validate()?;
    let CascadeParams { alpha, d, k, c1, c4, b, i_max } = *params;
    let g = g_of_k(params, k as f64);
    let partial_sum: f64 = (0..=i_max)
        .map(|i| gi1_failure_bound(params, i) + gi2_summed_form(params, i))
        .sum();
    let sharp_sum: f64 = (0..=i_max)
        .map(|i| gi1_failure_bound(params, i) + 2.0 * (-b * a_i(params, i)).exp())
        .sum();
    let a = alpha as f64;
    let dp1 = (d + 1) as f64;
    let j = (i_max + 1) as f64;
    let q1 = a.powf(-dp1);
    let q2 = (-a.powi(k as i32 - 2)).exp();
    let q3 = (-b * a.powi(k as i32)).exp();
    let tail = c4 * (a.powf(-(k as f64) * dp1) * q1.powf(j) / (1.0 - q1) + q2.powf(j) / (1.0 - q2))
        + 2.0 * q3.powf(j) / (1.0 - q3);
    let tol = 1e-12 * g.max(1.0);
    let coherent = partial_sum <= g + tol && sharp_sum <= g + tol && (partial_sum + tail - g).abs() <= 1e-9 * g.max(1e-300);
    Ok(Certificate {
        alpha,
        d,
        k,
        c1,
        c4,
        b,
        g,
        certificate: 1.0 - g,
        vacuous: g >= 1.0,
        i_max,
        partial_sum,
        tail,
        sharp_sum,
        coherent,
    })
}

/// `g(k)` for `k = 2..=k_max`.
pub fn g_scan(params: &CascadeParams, k_max: u32) -> Vec<(u32, f64)> {
    (2..=k_max).map(|k| (k, g_of_k(params, k as f64))).collect()
}

/// Smallest `k0` such that `g` is nonincreasing on `[k0, k_max]` in the scan.
pub fn monotone_from(scan: &[(u32, f64)]) -> Option<u32> {
    let mut k0 = scan.last()?.0;
    for w in scan.windows(2).rev() {
        if w[1].1 <= w[0].1 {
            k0 = w[0].0;
        } else {
            break;
        }
    }
    Some(k0)
}

/// Smallest `k <= k_max` with `g(k) < target`.
pub fn smallest_k(params: &CascadeParams, target: f64, k_max: u32) -> Option<u32> {
    (2..=k_max).find(|&k| g_of_k(params, k as f64) < target)
}

/// Monte-Carlo frequency of `G_{i,1}^c` under the product surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GiMonteCarlo {
    pub i: u32,
    pub sites: u128,
    pub threshold: f64,
    pub mean_sum: f64,
    pub failures: usize,
    pub trials: usize,
    pub p_hat: f64,
    pub stderr: f64,
    pub bound: f64,
}

/// Largest `|F_{k+i}|` the surrogate probe will take on.
pub const MAX_SURROGATE_SITES: u128 = 1 << 22;

/// Draws the `zeta_y` over `F_{k+i}` independently, each with mean
/// `1 - (1 - f_y)^count` where `f_y = min(1, c1 (y_1 - s)^(-(d-1)/2))`,
/// `count = alpha^((d+1)(k+i-1))` and all source frogs sit at the near edge
/// `s` of `F_{k+i-1}`, and counts how often `sum zeta_y < 2 alpha^((d+1)(k+i))`.
pub fn gi1_monte_carlo<R: Rng + ?Sized>(
    params: &CascadeParams,
    i: u32,
    trials: usize,
    stream: &mut R,
) -> Result<GiMonteCarlo> {
    params.validate()?;
    let target = box_f(params.alpha, params.k + i, params.d)?;
    if target.exact > MAX_SURROGATE_SITES {
        return Err(Error::Precondition(format!(
            "F_{} has {} sites, more than the surrogate limit",
            params.k + i,
            target.exact
        )));
    }
    let source_edge = if params.k + i >= 2 {
        box_f(params.alpha, params.k + i - 1, params.d)?.x1_lo
    } else {
        0
    };
    let count = powf(params.alpha, ((params.k + i - 1) as usize * (params.d + 1)) as f64);
    let half = (params.d as f64 - 1.0) / 2.0;
    let column = target.column_size() as u64;
    let columns: Vec<Binomial> = (target.x1_lo..=target.x1_hi)
        .map(|y1| {
            let f = (params.c1 * ((y1 - source_edge) as f64).powf(-half)).min(1.0);
            let p = if f >= 1.0 { 1.0 } else { -(count * (-f).ln_1p()).exp_m1() };
            Binomial::new(column, p.clamp(0.0, 1.0)).expect("probability in [0, 1]")
        })
        .collect();
    let threshold = 2.0 * a_i(params, i);
    let mut failures = 0;
    let mut total = 0.0;
    for _ in 0..trials {
        let s: u64 = columns.iter().map(|b| b.sample(stream)).sum();
        total += s as f64;
        if (s as f64) < threshold {
            failures += 1;
        }
    }
    let p_hat = if trials == 0 { 0.0 } else { failures as f64 / trials as f64 };
    Ok(GiMonteCarlo {
        i,
        sites: target.exact,
        threshold,
        mean_sum: if trials == 0 { 0.0 } else { total / trials as f64 },
        failures,
        trials,
        p_hat,
        stderr: binomial_stderr(p_hat, trials),
        bound: gi1_failure_bound(params, i),
    })
}

/// Path blocks of the initial frog: `L_1` is the first `alpha^2 - 1` fresh
/// sites after the origin, and `L_i` the next `alpha^(2i) - alpha^(2i-2)`
/// fresh sites outside `V_{i-1}`. Stops at the first block the path cannot fill.
pub fn path_blocks(path: &[Point], alpha: u64, k_max: u32) -> Vec<Vec<Point>> {
    let mut seen = HashSet::new();
    let fresh: Vec<&Point> = path
        .iter()
        .filter(|p| !p.is_origin() && seen.insert((*p).clone()))
        .collect();
    let a = alpha as i64;
    let mut blocks = Vec::new();
    let mut pos = 0;
    for i in 1..=k_max as i64 {
        let size = if i == 1 {
            (a * a - 1) as usize
        } else {
            (a.pow(2 * i as u32) - a.pow(2 * (i as u32 - 1))) as usize
        };
        let inner = if i == 1 { -1 } else { a.pow(2 * (i as u32 - 1)) };
        let mut block = Vec::with_capacity(size);
        while block.len() < size && pos < fresh.len() {
            if fresh[pos].norm_inf() > inner {
                block.push(fresh[pos].clone());
            }
            pos += 1;
        }
        if block.len() < size {
            break;
        }
        blocks.push(block);
    }
    blocks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AkRow {
    pub k: u32,
    pub threshold: u64,
    pub block_size: usize,
    /// Seeds whose path filled block `k`.
    pub seeds_used: usize,
    pub short_paths: usize,
    pub hits: usize,
    pub frequency: f64,
    pub stderr: f64,
    /// `1 - (1 - P(eta >= threshold))^block_size`.
    pub oracle: f64,
    pub oracle_stderr: f64,
    /// Filled blocks with a site outside `V_k \ V_{k-1}`.
    pub off_shell: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AkReport {
    pub dist: String,
    pub alpha: u64,
    pub heavy: bool,
    pub rows: Vec<AkRow>,
}

impl AkReport {
    pub fn row(&self, k: u32) -> Option<&AkRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

/// Horizon long enough, with room to spare, for the initial frog to fill
/// `L_1 .. L_k_max`.
pub fn ak_horizon(kernel: &TransitionKernel, alpha: u64, k_max: u32) -> usize {
    (4.0 * powf(alpha, 2.0 * k_max as f64) / kernel.drift()).ceil() as usize
}

/// For each seed: build the configuration and the initial frog's path exactly
/// as the frog engine does for that seed, then record for `k = 2..=k_max`
/// whether some site of `L_k` carries at least `alpha^((d+1)(k-1))` frogs.
pub fn ak_frequency_probe(
    kernel: &TransitionKernel,
    dist: &SiteDistribution,
    alpha: u64,
    k_max: u32,
    horizon: usize,
    seeds: &[u64],
) -> Result<AkReport> {
    dist.validate()?;
    if alpha < 3 || k_max < 2 {
        return Err(Error::Precondition(format!("need alpha >= 3 and k_max >= 2; got {alpha}, {k_max}")));
    }
    let d = kernel.dim();
    let origin = Point::origin(d);
    let thresholds: Vec<u64> = (2..=k_max)
        .map(|k| ipow(alpha, (d as u32 + 1) * (k - 1)).map(|v| v.min(u64::MAX as u128) as u64))
        .collect::<Result<_>>()?;
    let per_seed: Vec<Vec<Option<(bool, bool)>>> = seeds
        .par_iter()
        .map(|&seed| {
            let (field_seed, frog_seed) = run_seeds(seed);
            let field = SiteField::new(field_seed, *dist)?;
            let path = frog_walk(kernel, &origin, horizon, frog_seed, frog_id(&origin, 0)).visited();
            let blocks = path_blocks(&path, alpha, k_max);
            (2..=k_max)
                .zip(&thresholds)
                .map(|(k, &thr)| {
                    let Some(block) = blocks.get(k as usize - 1) else {
                        return Ok(None);
                    };
                    let mut hit = false;
                    for x in block {
                        if field.site_value(x)? >= thr {
                            hit = true;
                            break;
                        }
                    }
                    let inner = (alpha as i64).pow(2 * (k - 1));
                    let outer = (alpha as i64).pow(2 * k);
                    let on_shell = block.iter().all(|x| (inner + 1..=outer).contains(&x.norm_inf()));
                    Ok(Some((hit, on_shell)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows = (2..=k_max)
        .zip(&thresholds)
        .enumerate()
        .map(|(j, (k, &threshold))| {
            let a = alpha as usize;
            let block_size = a.pow(2 * k) - a.pow(2 * (k - 1));
            let outcomes: Vec<(bool, bool)> = per_seed.iter().filter_map(|v| v[j]).collect();
            let used = outcomes.len();
            let hits = outcomes.iter().filter(|o| o.0).count();
            let frequency = if used == 0 { 0.0 } else { hits as f64 / used as f64 };
            let q = dist.survival(threshold);
            let oracle = -(block_size as f64 * (-q).ln_1p()).exp_m1();
            AkRow {
                k,
                threshold,
                block_size,
                seeds_used: used,
                short_paths: seeds.len() - used,
                hits,
                frequency,
                stderr: binomial_stderr(frequency, used),
                oracle,
                oracle_stderr: binomial_stderr(oracle, used),
                off_shell: outcomes.iter().filter(|o| !o.1).count(),
            }
        })
        .collect();
    Ok(AkReport {
        dist: dist.to_string(),
        alpha,
        heavy: dist.is_heavy((d as f64 + 1.0) / 2.0),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use crate::walk::make_drift_kernel;

    fn enumerate_f(f: &BoxF) -> u128 {
        let w = f.window().unwrap();
        (0..w.volume() as usize).filter(|&i| f.contains(&w.point_of(i))).count() as u128
    }

    #[test]
    fn f_box_small_case() {
        let f = box_f(3, 1, 2).unwrap();
        assert_eq!((f.x1_lo, f.x1_hi, f.lateral), (14, 80, 3));
        assert_eq!(f.exact, 469);
        assert_eq!(enumerate_f(&f), 469);
        assert_eq!(f.lower_bound(), 135.0);
        assert_eq!(f.upper_bound(), 729.0);
        assert!((f.formula() - 472.5).abs() < 1e-9);
        assert!(f.bounds_hold());
    }

    #[test]
    fn f_box_one_dimensional() {
        for alpha in 3..6 {
            for n in 1..4 {
                let f = box_f(alpha, n, 1).unwrap();
                let a2n = (alpha as u128).pow(2 * n);
                assert_eq!(f.exact, (alpha as u128).pow(2 * n + 2) - (3 * a2n).div_ceil(2));
                assert_eq!(f.column_size(), 1);
            }
        }
    }

    #[test]
    fn sandwich_on_grid() {
        for alpha in 3..=5 {
            for n in 1..=4 {
                for d in 1..=3 {
                    let f = box_f(alpha, n, d).unwrap();
                    assert!(f.bounds_hold(), "alpha={alpha} n={n} d={d}");
                }
            }
        }
    }

    #[test]
    fn v_box_counts_and_disjointness() {
        assert_eq!(box_v(3, 1, 2).unwrap().exact, 361);
        assert_eq!(box_v(3, 1, 1).unwrap().exact, 19);
        for d in 1..=2 {
            let v = box_v(3, 1, d).unwrap();
            let w = v.window();
            let n = (0..w.volume() as usize).filter(|&i| v.contains(&w.point_of(i))).count();
            assert_eq!(n as u128, v.exact);
            let f1 = box_f(3, 1, d).unwrap();
            let f2 = box_f(3, 2, d).unwrap();
            assert!(f1.x1_lo > v.radius);
            assert!(f1.x1_hi < f2.x1_lo);
            let fw = f1.window().unwrap();
            assert!((0..fw.volume() as usize).all(|i| !v.contains(&fw.point_of(i))));
        }
    }

    #[test]
    fn bad_boxes() {
        assert!(box_f(2, 1, 2).is_err());
        assert!(box_f(3, 0, 2).is_err());
        assert!(box_v(3, 0, 1).is_err());
    }

    #[test]
    fn product_examples() {
        assert_eq!(zeta_mean_product(&[1.0], &[3]).unwrap(), 1.0);
        assert_eq!(zeta_mean_product(&[0.3, 0.9], &[0, 0]).unwrap(), 0.0);
        assert!((zeta_mean_product(&[0.5, 0.5], &[1, 1]).unwrap() - 0.75).abs() < 1e-15);
        assert!(zeta_mean_product(&[1.5], &[1]).is_err());
        assert!(zeta_mean_product(&[0.5], &[1, 2]).is_err());
    }

    #[test]
    fn constants() {
        assert!((gap_constant() - 0.161662).abs() < 1e-6);
        assert!((chebyshev_constant(3, 2) - 3099.3).abs() < 0.1);
        assert_eq!(min_alpha(0.5), 3);
        assert_eq!(min_alpha(0.2), 5);
    }

    #[test]
    fn gi_bounds_examples() {
        let p = CascadeParams::new(3, 2, 4, 10, 0.5, 0.1).unwrap();
        assert!((gi1_failure_bound(&p, 0) - 0.388).abs() < 1e-3);
        let p = CascadeParams::new(3, 2, 2, 10, 0.5, 0.1).unwrap();
        let g2 = gi2_failure_bound(&p, 0);
        assert!((g2 / (2.0 * (-72.9f64).exp()) - 1.0).abs() < 1e-12);
        assert!((1..10).all(|i| gi2_failure_bound(&p, i) <= gi2_failure_bound(&p, i - 1)));
        let tiny = CascadeParams { b: 1e-300, ..p };
        assert_eq!(gi2_failure_bound(&tiny, 0), 1.0);
    }

    #[test]
    fn one_dimensional_chain_matches_display() {
        let p = CascadeParams::new(3, 1, 2, 5, 1.0 / 3.0, 0.1).unwrap();
        for i in 0..4 {
            let r = zeta_floor_check(&p, i).unwrap();
            assert_eq!(r.honest_exponent, 2 * (2 + i as i64 - 1));
            assert!(r.xy_holds && r.displayed_step_holds && r.holds);
        }
    }

    #[test]
    fn boundary_floor_is_unreachable() {
        // c1 alpha^2 = 2 would put the displayed floor exactly at 1 - e^-2,
        // but alpha >= 1/c1 forces c1 alpha^2 >= alpha >= 3.
        for alpha in [3u64, 4, 5, 9] {
            let c1 = 2.0 / (alpha * alpha) as f64;
            assert!(CascadeParams::new(alpha, 1, 2, 0, c1, 0.1).is_err());
        }
        let edge = CascadeParams::new(3, 1, 2, 0, 1.0 / 3.0, 0.1).unwrap();
        let r = zeta_floor_check(&edge, 0).unwrap();
        assert!((r.displayed_floor - (1.0 - (-3.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn planar_chain_loses_the_displayed_exponent() {
        let p = CascadeParams::new(3, 2, 2, 5, 1.0 / 3.0, 0.1).unwrap();
        let r = zeta_floor_check(&p, 0).unwrap();
        assert_eq!(r.honest_exponent, 0);
        assert!((r.chain_product - (27.0 * (-1.0f64 / 81.0).ln_1p()).exp()).abs() < 1e-12);
        assert!(r.xy_holds);
        assert!(!r.displayed_step_holds);
        assert!(!r.holds);
        assert!(r.displayed_holds);
        assert!(r.cov_chain_holds);
    }

    #[test]
    fn xy_grid() {
        let xs: Vec<f64> = (1..100).map(|j| j as f64 / 100.0).collect();
        let ys: Vec<f64> = (0..=6).map(|e| 10f64.powi(e)).collect();
        assert_eq!(xy_inequality_violations(&xs, &ys), 0);
    }

    #[test]
    fn certificate_sums_to_g() {
        let p = CascadeParams::new(3, 2, 6, 40, 0.5, 0.1).unwrap();
        let c = certificate(&p).unwrap();
        assert!(c.coherent, "{c:?}");
        assert!(!c.vacuous);
        assert!((c.certificate - (1.0 - c.g)).abs() < 1e-15);
        let small = certificate(&p.with_k(2)).unwrap();
        assert!(small.vacuous);
    }

    #[test]
    fn g_decreases_to_zero() {
        let p = CascadeParams::new(3, 2, 2, 10, 0.5, 0.1).unwrap();
        let scan = g_scan(&p, 64);
        let k0 = monotone_from(&scan).unwrap();
        assert_eq!(k0, 2);
        assert!(scan.last().unwrap().1 < 1e-12);
        let k = smallest_k(&p, 0.5, 64).unwrap();
        assert!(g_of_k(&p, k as f64) < 0.5 && g_of_k(&p, k as f64 - 1.0) >= 0.5);
        assert!(certificate(&p.with_k(k)).unwrap().coherent);
    }

    #[test]
    fn monotone_from_finds_the_tail() {
        let scan = vec![(2, 1.0), (3, 2.0), (4, 1.5), (5, 1.5), (6, 0.1)];
        assert_eq!(monotone_from(&scan), Some(3));
        assert_eq!(monotone_from(&[]), None);
    }

    #[test]
    fn chebyshev_step() {
        for d in 1..=3 {
            let p = CascadeParams::new(3, d, 2, 3, 0.5, 0.1).unwrap();
            for i in 0..=2 {
                let r = chebyshev_check(&p, i).unwrap();
                assert!(r.deficit > 0.0);
                assert!(r.holds, "{r:?}");
            }
        }
    }

    #[test]
    fn surrogate_g01() {
        let p = CascadeParams::new(3, 2, 2, 1, 0.5, 0.1).unwrap();
        let mut s = stream_from_seed(3);
        let r = gi1_monte_carlo(&p, 0, 200, &mut s).unwrap();
        assert_eq!(r.sites, box_f(3, 2, 2).unwrap().exact);
        assert!(r.mean_sum > r.threshold);
        assert!(r.p_hat <= r.bound.min(1.0));
    }

    #[test]
    fn blocks_follow_the_path() {
        let path: Vec<Point> = (0..200).map(|x| Point::new(&[x])).collect();
        let blocks = path_blocks(&path, 3, 3);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 8);
        assert_eq!(blocks[0][0], Point::new(&[1]));
        assert_eq!(blocks[1].len(), 72);
        assert_eq!(blocks[1][0], Point::new(&[10]));
        assert_eq!(blocks[1][71], Point::new(&[81]));
    }

    #[test]
    fn probe_trivial_fields() {
        let kernel = make_drift_kernel(2, 0.3, 0.5).unwrap();
        let seeds: Vec<u64> = (0..20).collect();
        let h = ak_horizon(&kernel, 3, 2);
        let none = ak_frequency_probe(&kernel, &SiteDistribution::Deterministic(0), 3, 2, h, &seeds).unwrap();
        assert_eq!(none.row(2).unwrap().hits, 0);
        let all = ak_frequency_probe(&kernel, &SiteDistribution::Deterministic(27), 3, 2, h, &seeds).unwrap();
        let r = all.row(2).unwrap();
        assert_eq!(r.hits, r.seeds_used);
        assert_eq!(r.oracle, 1.0);
        let short = ak_frequency_probe(&kernel, &SiteDistribution::Deterministic(27), 3, 2, 10, &seeds).unwrap();
        assert_eq!(short.row(2).unwrap().short_paths, 20);
    }
}

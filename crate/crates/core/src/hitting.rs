//! Hitting probabilities `f(x, y)` of the drifted walk.
//!
//! `f` is an infinite-horizon quantity. The exact solver certifies a lower
//! bound by killing the walk when it leaves a box and stopping after `T`
//! steps; both truncation parameters travel with every estimate.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoxWindow, Direction, Point};
use crate::stats;
use crate::walk::{ctrw_lateral_state, TransitionKernel};

/// Largest box the dense solver will allocate.
pub const MAX_DP_CELLS: u64 = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactDp,
    MonteCarlo,
    ClosedForm,
}

impl Method {
    pub fn is_certified(self) -> bool {
        !matches!(self, Method::MonteCarlo)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Number of Monte-Carlo walks; zero for exact methods.
    pub samples: usize,
    /// Step horizon; `None` for the infinite-horizon closed form.
    pub horizon: Option<usize>,
    pub method: Method,
}

/// Probability of hitting `y` from `x` within `horizon` steps, for a walk
/// killed on leaving `window`, by backward recursion over the box.
///
/// `h_0 = 1{z = y}` and `h_{t+1}(z) = 1{z = y} + 1{z != y} sum_e p(e) h_t(z + e)`,
/// with `h_t = 0` outside the box.
pub fn hit_prob_exact(
    kernel: &TransitionKernel,
    x: &Point,
    y: &Point,
    window: &BoxWindow,
    horizon: usize,
) -> Result<HittingEstimate> {
    let d = kernel.dim();
    window.require(x)?;
    window.require(y)?;
    let exact = |value| HittingEstimate {
        value,
        stderr: 0.0,
        samples: 0,
        horizon: Some(horizon),
        method: Method::ExactDp,
    };
    if x == y {
        return Ok(exact(1.0));
    }
    if window.volume() > MAX_DP_CELLS {
        return Err(Error::InvalidWindow(format!(
            "{window} has {} cells, above the solver limit {MAX_DP_CELLS}",
            window.volume()
        )));
    }
    let cells = window.volume() as usize;
    let strides = window.strides();
    let dirs: Vec<Direction> = Direction::all(d).collect();
    let probs: Vec<f64> = dirs.iter().map(|&e| kernel.prob(e)).collect();

    // Neighbour table; `NONE` marks a step out of the box (killed).
    const NONE: u32 = u32::MAX;
    let mut nbr = vec![NONE; cells * dirs.len()];
    for idx in 0..cells {
        let p = window.point_of(idx);
        for (k, &e) in dirs.iter().enumerate() {
            let q = p.stepped(e);
            if window.contains(&q) {
                nbr[idx * dirs.len() + k] = window.index_of_coords(q.coords(), &strides) as u32;
            }
        }
    }
    let target = window.index_of_coords(y.coords(), &strides);
    let start = window.index_of_coords(x.coords(), &strides);

    let mut cur = vec![0.0f64; cells];
    let mut next = vec![0.0f64; cells];
    cur[target] = 1.0;
    for _ in 0..horizon {
        for idx in 0..cells {
            let row = &nbr[idx * dirs.len()..(idx + 1) * dirs.len()];
            let mut acc = 0.0;
            for (k, &j) in row.iter().enumerate() {
                if j != NONE {
                    acc += probs[k] * cur[j as usize];
                }
            }
            next[idx] = acc;
        }
        next[target] = 1.0;
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(exact(cur[start].clamp(0.0, 1.0)))
}

/// Infinite-horizon `f` in one dimension for displacement `delta = y - x`:
/// 1 to the right (drift wins) and `(p(-e1)/p(+e1))^|delta|` to the left.
pub fn hit_prob_closed_form_d1(kernel: &TransitionKernel, delta: i64) -> Result<f64> {
    if kernel.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: kernel.dim(),
        });
    }
    if delta >= 0 {
        return Ok(1.0);
    }
    let ratio = kernel.probs()[1] / kernel.probs()[0];
    Ok(ratio.powi(delta.unsigned_abs().min(i32::MAX as u64) as i32))
}

/// Same as [`hit_prob_closed_form_d1`], packaged as an estimate.
pub fn closed_form_estimate(kernel: &TransitionKernel, delta: i64) -> Result<HittingEstimate> {
    Ok(HittingEstimate {
        value: hit_prob_closed_form_d1(kernel, delta)?,
        stderr: 0.0,
        samples: 0,
        horizon: None,
        method: Method::ClosedForm,
    })
}

/// Whether a `horizon`-step walk from `x` visits `y`. Stops as soon as the
/// target is hit or can no longer be reached in the remaining steps, so the
/// indicator is exact for the truncated event.
pub fn walk_hits<R: RngCore + ?Sized>(
    kernel: &TransitionKernel,
    x: &Point,
    y: &Point,
    horizon: usize,
    stream: &mut R,
) -> bool {
    let mut p = x.coords().to_vec();
    let target = y.coords();
    let mut dist = x.l1_dist(y) as u64;
    let mut left = horizon as u64;
    while dist > 0 {
        if dist > left {
            return false;
        }
        let e = kernel.sample_direction(stream);
        let a = e.axis();
        let before = (p[a] - target[a]).unsigned_abs();
        p[a] += e.sign();
        let after = (p[a] - target[a]).unsigned_abs();
        dist = dist + after - before;
        left -= 1;
    }
    true
}

/// Fraction of `samples` independent `horizon`-step walks from `x` that
/// visit `y`.
pub fn hit_prob_mc<R: RngCore + ?Sized>(
    kernel: &TransitionKernel,
    x: &Point,
    y: &Point,
    horizon: usize,
    samples: usize,
    stream: &mut R,
) -> Result<HittingEstimate> {
    if samples == 0 {
        return Err(Error::Precondition("Monte-Carlo needs N >= 1".into()));
    }
    x.check_dim(kernel.dim())?;
    y.check_dim(kernel.dim())?;
    let hits = (0..samples)
        .filter(|_| walk_hits(kernel, x, y, horizon, stream))
        .count();
    let value = hits as f64 / samples as f64;
    Ok(HittingEstimate {
        value,
        stderr: stats::binomial_stderr(value, samples),
        samples,
        horizon: Some(horizon),
        method: Method::MonteCarlo,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsBoundReport {
    pub value: f64,
    pub epsilon: f64,
    /// `d |y - x|_inf`.
    pub exponent: i64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `f(x, y) >= eps^(d |y - x|_inf)` for a certified lower bound of `f`.
pub fn check_eps_bound(
    kernel: &TransitionKernel,
    x: &Point,
    y: &Point,
    est: &HittingEstimate,
) -> Result<EpsBoundReport> {
    if !est.method.is_certified() {
        return Err(Error::Precondition(
            "the epsilon bound is only checked against certified estimates".into(),
        ));
    }
    let exponent = kernel.dim() as i64 * y.sub(x).norm_inf();
    let epsilon = kernel.epsilon();
    let bound = epsilon.powi(exponent.min(i32::MAX as i64) as i32);
    Ok(EpsBoundReport {
        value: est.value,
        epsilon,
        exponent,
        bound,
        holds: est.value >= bound,
    })
}

/// Default horizon for the plateau probe: at least four times the expected
/// time to cover the distance.
pub fn probe_horizon(kernel: &TransitionKernel, n: u64) -> usize {
    ((4.0 * n as f64 / kernel.drift()).ceil() as usize).max(200)
}

/// Target `(n, floor(gamma sqrt n), 0, ...)` relative to the origin.
pub fn plateau_target(d: usize, n: u64, gamma: f64) -> Point {
    let mut c = vec![0i64; d];
    c[0] = n as i64;
    if d > 1 {
        c[1] = (gamma * (n as f64).sqrt()).floor() as i64;
    }
    Point::from(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauRow {
    pub n: u64,
    pub target: Point,
    pub horizon: usize,
    pub estimate: HittingEstimate,
    /// `f_hat * n^((d-1)/2)`.
    pub scaled: f64,
    /// `(f_hat - 3 stderr) * n^((d-1)/2)`.
    pub scaled_lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub rows: Vec<PlateauRow>,
    /// Minimum over distances of the lower scaled products.
    pub c1: f64,
    /// `min / max` of the scaled products.
    pub ratio: f64,
}

/// Estimates `f(0, y) n^((d-1)/2)` for `y = (n, floor(gamma sqrt n), 0, ...)`
/// at each distance and fits the constant of the lower bound.
pub fn ht_constant_probe<R: RngCore + ?Sized>(
    kernel: &TransitionKernel,
    gamma: f64,
    distances: &[u64],
    samples: usize,
    stream: &mut R,
) -> Result<PlateauReport> {
    if distances.is_empty() || distances.contains(&0) {
        return Err(Error::Precondition("distances must be positive and nonempty".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Precondition(format!("gamma = {gamma} must be >= 0")));
    }
    let d = kernel.dim();
    let origin = Point::origin(d);
    let expo = (d as f64 - 1.0) / 2.0;
    let mut rows = Vec::with_capacity(distances.len());
    for &n in distances {
        let target = plateau_target(d, n, gamma);
        let horizon = probe_horizon(kernel, n);
        let estimate = hit_prob_mc(kernel, &origin, &target, horizon, samples, stream)?;
        if estimate.value == 0.0 {
            return Err(Error::Degenerate(format!(
                "no hits of {target} in {samples} walks; increase N"
            )));
        }
        let scale = (n as f64).powf(expo);
        rows.push(PlateauRow {
            n,
            scaled: estimate.value * scale,
            scaled_lower: (estimate.value - 3.0 * estimate.stderr) * scale,
            target,
            horizon,
            estimate,
        });
    }
    let c1 = rows.iter().map(|r| r.scaled_lower).fold(f64::INFINITY, f64::min);
    let lo = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
    Ok(PlateauReport {
        rows,
        c1,
        ratio: lo / hi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `estimate * t^((d-1)/2)`.
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub rows: Vec<CltRow>,
    pub ratio: f64,
    /// Whether the scaled point masses stay within a factor 2 of each other.
    pub holds: bool,
}

/// Monte-Carlo point mass of the lateral coordinates of the continuous-time
/// walk at `offset`, rescaled by `t^((d-1)/2)`, over a list of times.
pub fn clt_lower_bound_probe<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    times: &[f64],
    offset: &[i64],
    gamma: f64,
    samples: usize,
    stream: &mut R,
) -> Result<CltReport> {
    let d = kernel.dim();
    if offset.len() != d - 1 {
        return Err(Error::DimensionMismatch {
            expected: d - 1,
            got: offset.len(),
        });
    }
    if samples == 0 || times.is_empty() {
        return Err(Error::Precondition("need N >= 1 and at least one time".into()));
    }
    let off_norm = offset.iter().map(|c| c.abs()).max().unwrap_or(0) as f64;
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0) || off_norm > gamma * t.sqrt() {
            return Err(Error::Precondition(format!(
                "offset of norm {off_norm} exceeds gamma sqrt(t) = {}",
                gamma * t.max(0.0).sqrt()
            )));
        }
        let (estimate, stderr) = if d == 1 {
            (1.0, 0.0)
        } else {
            let hits = (0..samples)
                .filter(|_| ctrw_lateral_state(kernel, t, stream) == offset)
                .count();
            let p = hits as f64 / samples as f64;
            (p, stats::binomial_stderr(p, samples))
        };
        rows.push(CltRow {
            t,
            estimate,
            stderr,
            scaled: estimate * t.powf((d as f64 - 1.0) / 2.0),
        });
    }
    let lo = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    Ok(CltReport {
        rows,
        ratio,
        holds: lo > 0.0 && ratio >= 0.5,
    })
}

/// Empirical quantiles `(gamma_1, gamma_2)` of `tau / n`, where `tau` is the
/// first time the continuous-time walk's first coordinate reaches `n`; the
/// central interval between the `q` and `1 - q` quantiles carries mass
/// `1 - 2q`.
pub fn level_hitting_quantiles<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    n: u64,
    q: f64,
    samples: usize,
    stream: &mut R,
) -> Result<(f64, f64)> {
    if n == 0 || samples == 0 || !(q > 0.0 && q < 0.5) {
        return Err(Error::Precondition("need n >= 1, N >= 1, q in (0, 1/2)".into()));
    }
    let p_plus = kernel.probs()[0];
    let p_minus = kernel.probs()[1];
    let mut taus = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut x = 0i64;
        let mut t = 0.0;
        while x < n as i64 {
            t += -rng_unit(stream).ln();
            let u = rng_unit(stream);
            if u < p_plus {
                x += 1;
            } else if u < p_plus + p_minus {
                x -= 1;
            }
        }
        taus.push(t / n as f64);
    }
    Ok((stats::quantile(&mut taus, q), stats::quantile(&mut taus, 1.0 - q)))
}

fn rng_unit<R: RngCore + ?Sized>(stream: &mut R) -> f64 {
    crate::rng::unit_open(stream.next_u64())
}

/// One row of the hitting CSV table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub x: String,
    pub y: String,
    pub method: Method,
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub horizon: Option<usize>,
    pub window: Option<String>,
}

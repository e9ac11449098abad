//! Drifted nearest-neighbour kernels on Z^d and walks sampled from them.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Direction, Point, MAX_DIM};
use crate::rng::{self, Stream};

/// Tolerance for the sum-to-one and drift invariants.
pub const KERNEL_TOL: f64 = 1e-12;

/// Nearest-neighbour step law with mean `a * e_1`.
///
/// `lateral` is the total mass on the axes `2..=d`, split evenly over the
/// `2(d-1)` lateral directions; the remaining `1 - lateral` goes to `±e_1`
/// in the proportion that produces drift `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    d: usize,
    drift: f64,
    lateral: f64,
    probs: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

pub fn make_drift_kernel(d: usize, a: f64, lateral: f64) -> Result<TransitionKernel> {
    TransitionKernel::new(d, a, lateral)
}

impl TransitionKernel {
    pub fn new(d: usize, a: f64, lateral: f64) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidKernel(format!(
                "dimension {d} outside 1..={MAX_DIM}"
            )));
        }
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidKernel(format!("drift a = {a} not in (0,1)")));
        }
        if d == 1 && lateral != 0.0 {
            return Err(Error::InvalidKernel(format!(
                "lateral mass {lateral} requires d >= 2"
            )));
        }
        if d > 1 && !(lateral > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "lateral mass {lateral} must be positive when d >= 2"
            )));
        }
        if !(lateral < 1.0 - a) {
            return Err(Error::InvalidKernel(format!(
                "lateral mass {lateral} >= 1 - a = {}: p(-e1) would be {}",
                1.0 - a,
                (1.0 - lateral - a) / 2.0
            )));
        }
        let mut probs = vec![0.0; 2 * d];
        probs[0] = (1.0 - lateral + a) / 2.0;
        probs[1] = (1.0 - lateral - a) / 2.0;
        if d > 1 {
            let each = lateral / (2.0 * (d - 1) as f64);
            for p in &mut probs[2..] {
                *p = each;
            }
        }
        Ok(Self::from_parts(d, a, lateral, probs))
    }

    fn from_parts(d: usize, drift: f64, lateral: f64, probs: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        // Guard against the last partial sum rounding below 1.
        *cumulative.last_mut().unwrap() = 1.0;
        TransitionKernel {
            d,
            drift,
            lateral,
            probs,
            cumulative,
        }
    }

    /// Rebuilds the sampling table after deserialization.
    pub fn rebuilt(self) -> Self {
        Self::from_parts(self.d, self.drift, self.lateral, self.probs)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn lateral(&self) -> f64 {
        self.lateral
    }

    pub fn prob(&self, dir: Direction) -> f64 {
        self.probs[dir.index()]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `min_e p(e)`.
    pub fn epsilon(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `sum_e p(e) e`.
    pub fn drift_of(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for dir in Direction::all(self.d) {
            m[dir.axis()] += self.prob(dir) * dir.sign() as f64;
        }
        m
    }

    /// Checks the kernel invariants to [`KERNEL_TOL`].
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidKernel("probability outside (0,1)".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > KERNEL_TOL {
            return Err(Error::InvalidKernel(format!("probabilities sum to {total}")));
        }
        let m = self.drift_of();
        if (m[0] - self.drift).abs() > KERNEL_TOL || m[1..].iter().any(|x| x.abs() > KERNEL_TOL) {
            return Err(Error::InvalidKernel(format!("drift {m:?}")));
        }
        Ok(())
    }

    /// Direction whose cumulative slot contains `u` in `[0, 1)`.
    #[inline]
    pub fn direction_at(&self, u: f64) -> Direction {
        let mut i = 0;
        while i + 1 < self.cumulative.len() && u >= self.cumulative[i] {
            i += 1;
        }
        Direction(i as u8)
    }

    /// One step drawn from `stream`; consumes exactly one 64-bit word.
    #[inline]
    pub fn sample_direction<R: RngCore + ?Sized>(&self, stream: &mut R) -> Direction {
        self.direction_at(rng::unit_open(stream.next_u64()))
    }
}

/// A walk of `horizon()` steps from `start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: Point,
    pub steps: Vec<Direction>,
    /// Identifier of the frog whose private stream produced the steps, if any.
    pub frog_id: Option<u64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Sites visited at times `0..=T`, starting with `start`.
    pub fn visited(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut p = self.start.clone();
        out.push(p.clone());
        for &dir in &self.steps {
            p.step(dir);
            out.push(p.clone());
        }
        out
    }

    /// Inverse of [`Trajectory::visited`]. Fails unless consecutive sites
    /// are nearest neighbours.
    pub fn from_visited(sites: &[Point]) -> Result<Self> {
        let start = sites
            .first()
            .ok_or_else(|| Error::Precondition("empty site sequence".into()))?
            .clone();
        let mut steps = Vec::with_capacity(sites.len().saturating_sub(1));
        for w in sites.windows(2) {
            let diff = w[1].sub(&w[0]);
            let nonzero: Vec<(usize, i64)> = diff
                .coords()
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, c)| c != 0)
                .collect();
            match nonzero.as_slice() {
                [(axis, s)] if s.abs() == 1 => steps.push(Direction::new(*axis, *s > 0)),
                _ => {
                    return Err(Error::Precondition(format!(
                        "{} -> {} is not a nearest-neighbour step",
                        w[0], w[1]
                    )))
                }
            }
        }
        Ok(Trajectory {
            start,
            steps,
            frog_id: None,
        })
    }

    pub fn end(&self) -> Point {
        let mut p = self.start.clone();
        for &dir in &self.steps {
            p.step(dir);
        }
        p
    }
}

/// `horizon` i.i.d. steps from `kernel`, drawn from `stream`.
pub fn walk_sample<R: RngCore + ?Sized>(
    kernel: &TransitionKernel,
    start: &Point,
    horizon: usize,
    stream: &mut R,
) -> Trajectory {
    let steps = (0..horizon).map(|_| kernel.sample_direction(stream)).collect();
    Trajectory {
        start: start.clone(),
        steps,
        frog_id: None,
    }
}

/// 64-bit identifier of the `index`-th frog sleeping at `site` (the initial
/// frog is index 0 at the origin).
pub fn frog_id(site: &Point, index: u64) -> u64 {
    let code = site.morton_code();
    rng::derive_key(code as u64, &[(code >> 64) as u64, index])
}

/// Private stream of frog `frog_id` under `master_seed`. Walking more steps
/// only extends what was drawn before.
pub fn frog_stream(master_seed: u64, frog_id: u64) -> Stream {
    rng::stream(master_seed, &[rng::tag::FROG, frog_id])
}

/// Walk driven by the private stream of frog `frog_id` under `master_seed`.
pub fn frog_walk(
    kernel: &TransitionKernel,
    start: &Point,
    horizon: usize,
    master_seed: u64,
    frog_id: u64,
) -> Trajectory {
    let mut s = frog_stream(master_seed, frog_id);
    let mut t = walk_sample(kernel, start, horizon, &mut s);
    t.frog_id = Some(frog_id);
    t
}

/// State at time `t` of the rate-1 continuous-time walk with jump law
/// `kernel`, started at `start`.
///
/// By Poisson thinning the number of jumps in each direction `e` up to time
/// `t` is Poisson(`t p(e)`), independently over directions, so every
/// coordinate is an independent Skellam difference.
pub fn ctrw_walk_state<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    start: &Point,
    t: f64,
    stream: &mut R,
) -> Point {
    let mut c = start.coords().to_vec();
    if t > 0.0 {
        for dir in Direction::all(kernel.dim()) {
            c[dir.axis()] += dir.sign() * poisson_count(t * kernel.prob(dir), stream) as i64;
        }
    }
    Point::from(c)
}

/// Lateral coordinates `2..=d` only (same law as in [`ctrw_walk_state`]).
pub fn ctrw_lateral_state<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    t: f64,
    stream: &mut R,
) -> Vec<i64> {
    let mut c = vec![0i64; kernel.dim().saturating_sub(1)];
    if t > 0.0 {
        for dir in Direction::all(kernel.dim()).filter(|d| d.axis() > 0) {
            c[dir.axis() - 1] += dir.sign() * poisson_count(t * kernel.prob(dir), stream) as i64;
        }
    }
    c
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, stream: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(stream) as u64
}

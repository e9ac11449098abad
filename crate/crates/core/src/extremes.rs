//! Maxima of i.i.d. nonnegative variables over growing disjoint blocks, and
//! the lower tail of their partial sums.
//!
//! "Infinitely often" cannot be observed at finite scale. What is measured
//! instead is how often late blocks exceed their thresholds across
//! independent traces, next to exact per-block probabilities and
//! Borel-Cantelli union bounds computed from the survival function.

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::site::SiteDistribution;
use crate::stats::{self, linear_fit};

/// Outcome of comparing running maxima and raw values against `u^{-1}(n)`.
/// Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnReport {
    /// `n` with `m_n >= u^{-1}(n)`.
    pub maxima_exceed: Vec<usize>,
    /// `n` with `y_n >= u^{-1}(n)`.
    pub raw_exceed: Vec<usize>,
    /// `(n, j)`: maxima exceedance `n` and the first index `j <= n` attaining
    /// `m_n`, which is itself a raw exceedance.
    pub witnesses: Vec<(usize, usize)>,
    pub holds_i: bool,
    pub holds_ii: bool,
    /// Every witness is a raw exceedance, and whenever a raw exceedance
    /// `n1` is followed by a maxima exceedance `n` with `m_n > m_{n1}`, a
    /// raw exceedance lies in `(n1, n]`.
    pub propagation_ok: bool,
}

pub fn rn_equivalence_check(y: &[f64], u_inv: &[f64]) -> Result<RnReport> {
    if y.len() != u_inv.len() {
        return Err(Error::ShortInput {
            needed: u_inv.len(),
            got: y.len(),
        });
    }
    if u_inv.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition("threshold sequence must be increasing".into()));
    }
    let mut maxima_exceed = Vec::new();
    let mut raw_exceed = Vec::new();
    let mut witnesses = Vec::new();
    let mut running = Vec::with_capacity(y.len());
    let mut m = f64::NEG_INFINITY;
    let mut argmax = 0;
    for (i, (&yi, &ui)) in y.iter().zip(u_inv).enumerate() {
        let n = i + 1;
        if yi > m {
            m = yi;
            argmax = n;
        }
        running.push(m);
        if yi >= ui {
            raw_exceed.push(n);
        }
        if m >= ui {
            maxima_exceed.push(n);
            witnesses.push((n, argmax));
        }
    }
    let is_raw = |j: usize| raw_exceed.binary_search(&j).is_ok();
    let mut ok = witnesses.iter().all(|&(n, j)| j <= n && is_raw(j));
    for &n1 in &raw_exceed {
        for &n in maxima_exceed.iter().filter(|&&n| n > n1) {
            if running[n - 1] > running[n1 - 1] {
                let next_raw = raw_exceed.iter().find(|&&j| j > n1);
                ok &= matches!(next_raw, Some(&j) if j <= n);
            }
        }
    }
    Ok(RnReport {
        holds_i: !maxima_exceed.is_empty(),
        holds_ii: !raw_exceed.is_empty(),
        maxima_exceed,
        raw_exceed,
        witnesses,
        propagation_ok: ok,
    })
}

/// Consecutive disjoint blocks of sizes `sizes[i - 1]`, `i = 1..=I`, with
/// the growth guarantee `l_i >= c2 beta^(c3 i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub sizes: Vec<usize>,
    pub c2: f64,
    pub c3: f64,
    pub beta: f64,
}

impl BlockPlan {
    pub fn new(sizes: Vec<usize>, c2: f64, c3: f64, beta: f64) -> Result<Self> {
        if !(c2 > 0.0 && c3 > 0.0 && beta > 1.0) {
            return Err(Error::Precondition(format!(
                "need c2 > 0, c3 > 0, beta > 1 (got {c2}, {c3}, {beta})"
            )));
        }
        if let Some(i) = sizes.iter().position(|&l| l == 0) {
            return Err(Error::EmptyBlock(i + 1));
        }
        for (i, &l) in sizes.iter().enumerate() {
            let need = c2 * beta.powf(c3 * (i + 1) as f64);
            if (l as f64) < need * (1.0 - 1e-12) {
                return Err(Error::Precondition(format!(
                    "block {} has {l} elements, fewer than {need}",
                    i + 1
                )));
            }
        }
        Ok(BlockPlan { sizes, c2, c3, beta })
    }

    /// Smallest admissible sizes `ceil(c2 beta^(c3 i))` for `i = 1..=count`.
    pub fn geometric(c2: f64, c3: f64, beta: f64, count: usize) -> Result<Self> {
        let sizes = (1..=count)
            .map(|i| (c2 * beta.powf(c3 * i as f64)).ceil().max(1.0) as usize)
            .collect();
        Self::new(sizes, c2, c3, beta)
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// `log theta_i = c beta^(c3 i / r)`.
    pub fn log_threshold(&self, i: usize, c: f64, r: f64) -> f64 {
        c * self.beta.powf(self.c3 * i as f64 / r)
    }
}

/// `M_i = max` over block `i` of `values`, blocks laid out consecutively.
pub fn block_maxima<T: PartialOrd + Copy>(values: &[T], plan: &BlockPlan) -> Result<Vec<T>> {
    if values.len() < plan.total() {
        return Err(Error::ShortInput {
            needed: plan.total(),
            got: values.len(),
        });
    }
    let mut out = Vec::with_capacity(plan.len());
    let mut at = 0;
    for (i, &l) in plan.sizes.iter().enumerate() {
        let block = &values[at..at + l];
        let mut m = *block.first().ok_or(Error::EmptyBlock(i + 1))?;
        for &v in &block[1..] {
            if v > m {
                m = v;
            }
        }
        out.push(m);
        at += l;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceTrace {
    pub log_thresholds: Vec<f64>,
    /// `log⁺ M_i`.
    pub log_maxima: Vec<f64>,
    pub exceeded: Vec<bool>,
    pub c: f64,
    pub r: f64,
}

impl ExceedanceTrace {
    /// Number of exceedances among blocks `from..=I` (1-based).
    pub fn exceedances_from(&self, from: usize) -> usize {
        self.exceeded
            .iter()
            .skip(from.saturating_sub(1))
            .filter(|&&e| e)
            .count()
    }

    pub fn rows(&self, plan: &BlockPlan) -> Vec<ExceedRow> {
        (0..self.exceeded.len())
            .map(|k| ExceedRow {
                i: k + 1,
                l_i: plan.sizes[k],
                log_threshold: self.log_thresholds[k],
                log_mi: self.log_maxima[k],
                exceeded: self.exceeded[k],
            })
            .collect()
    }
}

/// One CSV row per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedRow {
    pub i: usize,
    pub l_i: usize,
    pub log_threshold: f64,
    pub log_mi: f64,
    pub exceeded: bool,
}

/// Samples each block, takes its maximum and compares `log⁺ M_i` with
/// `c beta^(c3 i / r)`; everything stays in log space.
pub fn exceedance_trace<R: RngCore + ?Sized>(
    dist: &SiteDistribution,
    plan: &BlockPlan,
    c: f64,
    r: f64,
    stream: &mut R,
) -> Result<ExceedanceTrace> {
    if !(c > 0.0 && r > 0.0) {
        return Err(Error::Precondition(format!("need c > 0 and r > 0 (got {c}, {r})")));
    }
    let mut log_thresholds = Vec::with_capacity(plan.len());
    let mut log_maxima = Vec::with_capacity(plan.len());
    let mut exceeded = Vec::with_capacity(plan.len());
    for (k, &l) in plan.sizes.iter().enumerate() {
        let th = plan.log_threshold(k + 1, c, r);
        let mut m = 0.0f64;
        for _ in 0..l {
            m = m.max(dist.log_plus_from_unit(rng::unit_open(stream.next_u64())));
        }
        log_thresholds.push(th);
        log_maxima.push(m);
        exceeded.push(m >= th);
    }
    Ok(ExceedanceTrace {
        log_thresholds,
        log_maxima,
        exceeded,
        c,
        r,
    })
}

/// `traces` independent traces, trace `t` driven by its own stream derived
/// from `seed`.
pub fn exceedance_traces(
    dist: &SiteDistribution,
    plan: &BlockPlan,
    c: f64,
    r: f64,
    traces: usize,
    seed: u64,
) -> Result<Vec<ExceedanceTrace>> {
    (0..traces)
        .map(|t| {
            let mut s = rng::stream(seed, &[tag::TRIAL, t as u64]);
            exceedance_trace(dist, plan, c, r, &mut s)
        })
        .collect()
}

/// `P(Y >= theta)` with `log theta` given.
fn tail_at_log(dist: &SiteDistribution, log_theta: f64) -> f64 {
    dist.log_survival(log_theta)
}

/// Exact `P(M_i >= theta_i) = 1 - (1 - P(Y >= theta_i))^(l_i)` for each block.
pub fn block_exceedance_probs(dist: &SiteDistribution, plan: &BlockPlan, c: f64, r: f64) -> Vec<f64> {
    plan.sizes
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let s = tail_at_log(dist, plan.log_threshold(k + 1, c, r));
            if s >= 1.0 {
                1.0
            } else {
                -((l as f64) * (-s).ln_1p()).exp_m1()
            }
        })
        .collect()
}

/// Borel-Cantelli sum `sum_{i >= from} l_i P(Y >= theta_i)` over the plan,
/// an upper bound for the probability of any exceedance in those blocks.
pub fn union_bound(dist: &SiteDistribution, plan: &BlockPlan, c: f64, r: f64, from: usize) -> f64 {
    plan.sizes
        .iter()
        .enumerate()
        .skip(from.saturating_sub(1))
        .map(|(k, &l)| l as f64 * tail_at_log(dist, plan.log_threshold(k + 1, c, r)))
        .sum()
}

/// Late-block behaviour of a batch of traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LateBlockSummary {
    pub from: usize,
    pub traces: usize,
    /// Mean over traces of the fraction of blocks `from..=I` that exceed.
    pub mean_fraction: f64,
    pub mean_count: f64,
    /// Fraction of traces with at least one exceedance in the late blocks.
    pub any_fraction: f64,
    /// Exact expected fraction from [`block_exceedance_probs`].
    pub expected_fraction: f64,
    pub expected_count: f64,
}

pub fn late_block_summary(
    traces: &[ExceedanceTrace],
    dist: &SiteDistribution,
    plan: &BlockPlan,
    from: usize,
) -> Option<LateBlockSummary> {
    let first = traces.first()?;
    let blocks = plan.len().checked_sub(from.saturating_sub(1)).filter(|&b| b > 0)?;
    let counts: Vec<usize> = traces.iter().map(|t| t.exceedances_from(from)).collect();
    let n = traces.len() as f64;
    let mean_count = counts.iter().sum::<usize>() as f64 / n;
    let probs = block_exceedance_probs(dist, plan, first.c, first.r);
    let expected_count: f64 = probs.iter().skip(from.saturating_sub(1)).sum();
    Some(LateBlockSummary {
        from,
        traces: traces.len(),
        mean_fraction: mean_count / blocks as f64,
        mean_count,
        any_fraction: counts.iter().filter(|&&k| k > 0).count() as f64 / n,
        expected_fraction: expected_count / blocks as f64,
        expected_count,
    })
}

/// One CSV row of the lower-tail table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub n: u64,
    pub count: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub stderr: f64,
    /// Rule-of-three bound `3 / N`, reported in place of a point estimate
    /// when nothing was observed.
    pub upper_bound: Option<f64>,
}

/// `#{S_n <= n}` over `trials` independent sums for each `n`; no
/// precondition on the law.
pub fn lower_tail_counts<R: RngCore + ?Sized>(
    dist: &SiteDistribution,
    n_list: &[u64],
    trials: u64,
    stream: &mut R,
) -> Result<Vec<TailRow>> {
    if trials == 0 || n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::Precondition("need N >= 1 and positive sample sizes".into()));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut count = 0u64;
        for _ in 0..trials {
            let mut sum = 0u64;
            let mut ok = true;
            for _ in 0..n {
                sum = sum.saturating_add(dist.sample_from_unit(rng::unit_open(stream.next_u64())));
                if sum > n {
                    ok = false;
                    break;
                }
            }
            count += u64::from(ok);
        }
        let p = count as f64 / trials as f64;
        rows.push(TailRow {
            n,
            count,
            trials,
            p_hat: p,
            stderr: stats::binomial_stderr(p, trials as usize),
            upper_bound: (count == 0).then(|| 3.0 / trials as f64),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CramerReport {
    pub rows: Vec<TailRow>,
    /// `b_hat = -slope` of `log p_n` against `n` over the positive cells.
    pub b_hat: f64,
    pub intercept: f64,
    pub correlation: f64,
    pub cells_fitted: usize,
    pub strictly_decreasing: bool,
    /// One-sided 95% parametric-bootstrap lower bound for `b_hat`.
    pub b_lower95: f64,
    pub bootstrap_reps: usize,
}

/// Fits `log p_n = intercept - b n` by least squares over cells with a
/// positive count.
fn fit_rows(ns: &[f64], counts: &[u64], trials: u64) -> Option<(f64, f64, f64, usize)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&n, &c)| (n, (c as f64 / trials as f64).ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys)?;
    Some((-fit.slope, fit.intercept, fit.correlation, xs.len()))
}

/// Lower tail `P(S_n <= n)` for a law with infinite mean, its exponential
/// decay rate fitted in log space, and a bootstrap confidence bound.
pub fn cramer_tail_estimate<R: Rng + ?Sized>(
    dist: &SiteDistribution,
    n_list: &[u64],
    trials: u64,
    bootstrap_reps: usize,
    stream: &mut R,
) -> Result<CramerReport> {
    if dist.mean().is_finite() {
        return Err(Error::Precondition(format!(
            "{dist} has finite mean; the lower-tail rate needs an infinite-mean law"
        )));
    }
    let rows = lower_tail_counts(dist, n_list, trials, stream)?;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let counts: Vec<u64> = rows.iter().map(|r| r.count).collect();
    let (b_hat, intercept, correlation, cells) = fit_rows(&ns, &counts, trials).ok_or_else(|| {
        Error::Degenerate("fewer than two sample sizes with positive counts".into())
    })?;
    let mut order: Vec<&TailRow> = rows.iter().collect();
    order.sort_by_key(|r| r.n);
    let strictly_decreasing = order.windows(2).all(|w| w[1].p_hat < w[0].p_hat);

    let mut boot = Vec::with_capacity(bootstrap_reps);
    for _ in 0..bootstrap_reps {
        let resampled: Vec<u64> = rows
            .iter()
            .map(|r| Binomial::new(trials, r.p_hat).map(|b| b.sample(stream)).unwrap_or(0))
            .collect();
        // Resamples that lose a cell fall back to the cells that remain.
        match fit_rows(&ns, &resampled, trials) {
            Some((b, ..)) => boot.push(b),
            None => boot.push(f64::NEG_INFINITY),
        }
    }
    let b_lower95 = if boot.is_empty() {
        f64::NAN
    } else {
        stats::quantile(&mut boot, 0.05)
    };
    Ok(CramerReport {
        rows,
        b_hat,
        intercept,
        correlation,
        cells_fitted: cells,
        strictly_decreasing,
        b_lower95,
        bootstrap_reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;

    #[test]
    fn identical_sequences_exceed_everywhere() {
        let u: Vec<f64> = (1..=20).map(|n| n as f64).collect();
        let r = rn_equivalence_check(&u, &u).unwrap();
        assert_eq!(r.maxima_exceed.len(), 20);
        assert_eq!(r.raw_exceed.len(), 20);
        assert!(r.propagation_ok);
    }

    #[test]
    fn single_spike() {
        let mut y = vec![1.0; 10];
        y[0] = 5.0;
        let u: Vec<f64> = (1..=10).map(|n| n as f64).collect();
        let r = rn_equivalence_check(&y, &u).unwrap();
        assert_eq!(r.maxima_exceed, vec![1, 2, 3, 4, 5]);
        assert_eq!(r.raw_exceed, vec![1]);
        assert!(r.witnesses.iter().all(|&(_, j)| j == 1));
        assert!(r.propagation_ok);
    }

    #[test]
    fn thresholds_must_increase() {
        assert!(rn_equivalence_check(&[1.0, 2.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn plan_rejects_small_blocks() {
        assert!(BlockPlan::new(vec![1, 2], 1.0, 1.0, 2.0).is_err());
        assert!(BlockPlan::new(vec![2, 4], 1.0, 1.0, 2.0).is_ok());
        assert!(matches!(
            BlockPlan::new(vec![2, 0], 1.0, 1.0, 2.0),
            Err(Error::EmptyBlock(2))
        ));
    }

    #[test]
    fn constant_blocks() {
        let plan = BlockPlan::geometric(1.0, 1.0, 2.0, 4).unwrap();
        assert_eq!(block_maxima(&[0u64; 30], &plan).unwrap(), vec![0; 4]);
        assert_eq!(block_maxima(&[7u64; 30], &plan).unwrap(), vec![7; 4]);
        assert!(block_maxima(&[7u64; 3], &plan).is_err());
    }

    #[test]
    fn thresholds_increase_without_overflow() {
        let plan = BlockPlan {
            sizes: vec![1; 64],
            c2: 1.0,
            c3: 1.0,
            beta: 16.0,
        };
        let th: Vec<f64> = (1..=64).map(|i| plan.log_threshold(i, 1.0, 1.0)).collect();
        assert!(th.windows(2).all(|w| w[0] < w[1]));
        assert!(th.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn point_mass_one_never_exceeds() {
        let plan = BlockPlan::geometric(1.0, 1.0, 2.0, 8).unwrap();
        let t = exceedance_trace(
            &SiteDistribution::Deterministic(1),
            &plan,
            1.0,
            1.0,
            &mut stream_from_seed(4),
        )
        .unwrap();
        assert!(t.exceeded.iter().all(|&e| !e));
    }

    #[test]
    fn point_mass_two_never_sums_below_n() {
        let rows = lower_tail_counts(
            &SiteDistribution::Deterministic(2),
            &[1, 2, 5],
            1000,
            &mut stream_from_seed(4),
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.count == 0 && r.upper_bound == Some(0.003)));
    }

    #[test]
    fn finite_mean_is_rejected() {
        let r = cramer_tail_estimate(
            &SiteDistribution::Geometric(0.5),
            &[1, 2],
            10,
            0,
            &mut stream_from_seed(1),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}

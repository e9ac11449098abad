//! The frog model inside a finite window.
//!
//! Every frog owns a stream keyed by its identifier `(site, index)` and walks
//! exactly `T` of its own steps, whenever it is woken. The set of awakened
//! sites is then the least fixed point of "sites visited by frogs of awakened
//! sites", which does not depend on the order in which frogs are processed.
//! [`run_closure`] computes it layer by layer in parallel; [`run_stepwise`]
//! replays the same model tick by tick and is kept as an independent check.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoxWindow, Point, MAX_DIM};
use crate::rng::{derive_key, tag};
use crate::site::{SiteDistribution, SiteField};
use crate::stats::Welford;
use crate::walk::{frog_id, frog_stream, TransitionKernel};

pub const DEFAULT_FROG_CAP: u64 = 10_000_000;

/// Largest window the dense closure engine will allocate.
pub const MAX_WINDOW_CELLS: u64 = 1 << 28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub kernel: TransitionKernel,
    pub field: SiteField,
    /// Sites outside are never awakened.
    pub window: BoxWindow,
    /// Steps walked by every frog.
    pub horizon: usize,
    /// Seed of the frog streams.
    pub master_seed: u64,
    /// Largest number of frogs that may walk in one run.
    pub frog_cap: u64,
    /// At most this many of the frogs sleeping at a site are woken.
    pub site_cap: Option<u64>,
    /// Frogs that step out of the window are removed.
    pub absorb_outside: bool,
    /// Worker threads for the closure engine; 0 uses the ambient pool.
    pub workers: usize,
}

impl SimConfig {
    pub fn new(kernel: TransitionKernel, field: SiteField, window: BoxWindow, horizon: usize, master_seed: u64) -> Self {
        SimConfig {
            kernel,
            field,
            window,
            horizon,
            master_seed,
            frog_cap: DEFAULT_FROG_CAP,
            site_cap: None,
            absorb_outside: false,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.kernel.dim();
        if self.window.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.window.dim(),
            });
        }
        self.window.require(&Point::origin(d))?;
        if self.frog_cap == 0 {
            return Err(Error::Precondition("frog_cap must be at least 1".into()));
        }
        if self.site_cap == Some(0) {
            return Err(Error::Precondition("site_cap must be at least 1".into()));
        }
        self.field.dist.validate()
    }

    /// Frogs woken at `x`: the sampled count, cut at the site cap.
    fn woken_at(&self, x: &Point) -> (u64, bool) {
        let eta = self.field.site_value(x).unwrap_or(0);
        match self.site_cap {
            Some(k) if eta > k => (k, true),
            _ => (eta, false),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationFlags {
    /// Some frog stepped outside the window.
    pub window_hit: bool,
    /// The frog cap stopped frogs from walking.
    pub cap_hit: bool,
    /// Some site carried more frogs than the site cap.
    pub site_cap_hit: bool,
}

impl TruncationFlags {
    /// Whether `origin_visits` is only a lower bound for the uncapped model
    /// in this window.
    pub fn is_truncated(&self) -> bool {
        self.cap_hit || self.site_cap_hit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    /// The origin plus every awakened site with at least one frog, sorted.
    pub awakened_sites: Vec<Point>,
    /// Frogs that walked, the initial one included.
    pub total_frogs: u64,
    /// `(frog, time)` pairs at the origin, time 0 of the initial frog included.
    pub origin_visits: u64,
    /// Sites awakened in each round.
    pub frontier_history: Vec<u64>,
    pub truncation: TruncationFlags,
}

/// Per-frog walk over the dense window.
struct Walker<'a> {
    cfg: &'a SimConfig,
    d: usize,
    lo: [i64; MAX_DIM],
    hi: [i64; MAX_DIM],
    strides: [i64; MAX_DIM],
    origin_idx: i64,
}

#[derive(Default)]
struct WalkOutcome {
    origin_visits: u64,
    left_window: bool,
}

impl<'a> Walker<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let d = cfg.kernel.dim();
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        let mut strides = [0; MAX_DIM];
        let s = cfg.window.strides();
        for j in 0..d {
            lo[j] = cfg.window.lo()[j];
            hi[j] = cfg.window.hi()[j];
            strides[j] = s[j] as i64;
        }
        let origin_idx = (0..d).map(|j| -lo[j] * strides[j]).sum();
        Walker {
            cfg,
            d,
            lo,
            hi,
            strides,
            origin_idx,
        }
    }

    #[inline]
    fn axis_gap(&self, j: usize, c: i64) -> i64 {
        (self.lo[j] - c).max(c - self.hi[j]).max(0)
    }

    /// Walks frog `id` from `start`, calling `visit` with the window index of
    /// every in-window site it reaches at times `1..=T`. Stops early once the
    /// window is out of reach for the remaining steps, which changes nothing
    /// that is recorded.
    fn walk(&self, start: &Point, id: u64, mut visit: impl FnMut(usize)) -> WalkOutcome {
        let kernel = &self.cfg.kernel;
        let mut stream = frog_stream(self.cfg.master_seed, id);
        let mut c = [0i64; MAX_DIM];
        c[..self.d].copy_from_slice(start.coords());
        let mut idx: i64 = (0..self.d).map(|j| (c[j] - self.lo[j]) * self.strides[j]).sum();
        let mut gap: i64 = (0..self.d).map(|j| self.axis_gap(j, c[j])).sum();
        let mut out = WalkOutcome::default();
        let horizon = self.cfg.horizon as i64;
        for t in 0..horizon {
            let e = kernel.sample_direction(&mut stream);
            let a = e.axis();
            let s = e.sign();
            let before = self.axis_gap(a, c[a]);
            c[a] += s;
            idx += s * self.strides[a];
            gap += self.axis_gap(a, c[a]) - before;
            if gap == 0 {
                if idx == self.origin_idx {
                    out.origin_visits += 1;
                }
                visit(idx as usize);
            } else {
                out.left_window = true;
                if self.cfg.absorb_outside || gap > horizon - t - 1 {
                    break;
                }
            }
        }
        out
    }
}

const UNSEEN: u8 = 0;
const EMPTY: u8 = 1;
const AWAKE: u8 = 2;

/// Least fixed point of the activation map, computed in rounds.
pub fn run_closure(config: &SimConfig) -> Result<ClosureReport> {
    config.validate()?;
    if config.window.volume() > MAX_WINDOW_CELLS {
        return Err(Error::InvalidWindow(format!(
            "{} has {} cells, above the engine limit {MAX_WINDOW_CELLS}",
            config.window,
            config.window.volume()
        )));
    }
    if config.workers == 0 {
        Ok(closure_inner(config))
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        Ok(pool.install(|| closure_inner(config)))
    }
}

fn closure_inner(cfg: &SimConfig) -> ClosureReport {
    let walker = Walker::new(cfg);
    let cells = cfg.window.volume() as usize;
    let mut state = vec![UNSEEN; cells];
    state[walker.origin_idx as usize] = AWAKE;
    let mut flags = TruncationFlags::default();
    let mut awakened = vec![walker.origin_idx as usize];
    let mut history = Vec::new();
    let mut origin_visits = 1u64;
    let mut total_frogs = 0u64;

    // A round is a list of (site index, frogs woken there).
    let mut round: Vec<(usize, u64)> = vec![(walker.origin_idx as usize, 1)];
    while !round.is_empty() {
        let mut budget = cfg.frog_cap - total_frogs;
        let mut jobs = Vec::with_capacity(round.len());
        for (site, n) in round {
            if budget == 0 {
                flags.cap_hit = true;
                break;
            }
            let take = n.min(budget);
            if take < n {
                flags.cap_hit = true;
            }
            budget -= take;
            jobs.push((site, take));
        }
        total_frogs += jobs.iter().map(|j| j.1).sum::<u64>();

        let state_ref = &state;
        let results: Vec<(u64, bool, Vec<u32>)> = jobs
            .par_iter()
            .map(|&(site, n)| {
                let start = cfg.window.point_of(site);
                let mut visits = 0;
                let mut left = false;
                let mut found = Vec::new();
                for i in 0..n {
                    let id = frog_id(&start, i);
                    let o = walker.walk(&start, id, |k| {
                        if state_ref[k] == UNSEEN {
                            found.push(k as u32);
                        }
                    });
                    visits += o.origin_visits;
                    left |= o.left_window;
                    if found.len() > 4096 {
                        found.sort_unstable();
                        found.dedup();
                    }
                }
                found.sort_unstable();
                found.dedup();
                (visits, left, found)
            })
            .collect();

        let mut fresh: Vec<u32> = Vec::new();
        for (visits, left, found) in results {
            origin_visits += visits;
            flags.window_hit |= left;
            fresh.extend(found);
        }
        fresh.sort_unstable();
        fresh.dedup();

        let mut next = Vec::new();
        for k in fresh {
            let k = k as usize;
            let x = cfg.window.point_of(k);
            let (n, capped) = cfg.woken_at(&x);
            flags.site_cap_hit |= capped;
            if n > 0 {
                state[k] = AWAKE;
                awakened.push(k);
                next.push((k, n));
            } else {
                state[k] = EMPTY;
            }
        }
        if !next.is_empty() {
            history.push(next.len() as u64);
        }
        if flags.cap_hit {
            break;
        }
        round = next;
    }
    let mut sites: Vec<Point> = awakened.into_iter().map(|k| cfg.window.point_of(k)).collect();
    sites.sort();
    ClosureReport {
        awakened_sites: sites,
        total_frogs,
        origin_visits,
        frontier_history: history,
        truncation: flags,
    }
}

/// Time-synchronous simulation of the same model: at each tick every active
/// frog with steps left takes one step, and a sleeping site wakes the first
/// time any frog steps on it.
pub fn run_stepwise(config: &SimConfig) -> Result<ClosureReport> {
    config.validate()?;
    let d = config.kernel.dim();
    let origin = Point::origin(d);

    struct Active {
        stream: crate::rng::Stream,
        pos: Point,
        steps: usize,
    }
    let wake = |site: &Point, n: u64, out: &mut Vec<Active>| {
        for i in 0..n {
            out.push(Active {
                stream: frog_stream(config.master_seed, frog_id(site, i)),
                pos: site.clone(),
                steps: 0,
            });
        }
    };

    let mut flags = TruncationFlags::default();
    let mut seen: HashMap<Point, u64> = HashMap::new();
    let mut awake: HashSet<Point> = HashSet::new();
    awake.insert(origin.clone());
    let mut active = Vec::new();
    wake(&origin, 1, &mut active);
    let mut total_frogs = 1u64;
    let mut origin_visits = 1u64;
    let mut history = Vec::new();

    while !active.is_empty() {
        let mut woken = Vec::new();
        let mut newly = 0u64;
        let mut i = 0;
        while i < active.len() {
            let f = &mut active[i];
            if f.steps == config.horizon {
                active.swap_remove(i);
                continue;
            }
            let e = config.kernel.sample_direction(&mut f.stream);
            f.pos.step(e);
            f.steps += 1;
            if f.pos.is_origin() {
                origin_visits += 1;
            }
            if !config.window.contains(&f.pos) {
                flags.window_hit = true;
                if config.absorb_outside {
                    active.swap_remove(i);
                    continue;
                }
            } else if !awake.contains(&f.pos) && !seen.contains_key(&f.pos) {
                let (n, capped) = config.woken_at(&f.pos);
                flags.site_cap_hit |= capped;
                seen.insert(f.pos.clone(), n);
                if n > 0 {
                    awake.insert(f.pos.clone());
                    newly += 1;
                    let room = config.frog_cap - total_frogs;
                    let n = if n > room {
                        flags.cap_hit = true;
                        room
                    } else {
                        n
                    };
                    total_frogs += n;
                    let pos = f.pos.clone();
                    wake(&pos, n, &mut woken);
                }
            }
            i += 1;
        }
        if newly > 0 {
            history.push(newly);
        }
        active.extend(woken);
    }
    let mut sites: Vec<Point> = awake.into_iter().collect();
    sites.sort();
    Ok(ClosureReport {
        awakened_sites: sites,
        total_frogs,
        origin_visits,
        frontier_history: history,
        truncation: flags,
    })
}

/// Whether `report` is closed under the activation map for `config`: every
/// window site visited by a frog of an awakened site either is awakened or
/// carries no frogs.
pub fn is_closed(config: &SimConfig, report: &ClosureReport) -> bool {
    let awake: HashSet<&Point> = report.awakened_sites.iter().collect();
    let walker = Walker::new(config);
    let mut ok = true;
    for site in &report.awakened_sites {
        let n = if site.is_origin() { 1 } else { config.woken_at(site).0 };
        for i in 0..n {
            walker.walk(site, frog_id(site, i), |k| {
                let x = config.window.point_of(k);
                if !awake.contains(&x) && config.woken_at(&x).0 > 0 {
                    ok = false;
                }
            });
        }
    }
    ok
}

/// Horizon as a function of the window half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonRule {
    Fixed(usize),
    /// `ceil(factor * W / a)`.
    PerWidth(f64),
}

impl HorizonRule {
    pub fn horizon(&self, w: i64, drift: f64) -> usize {
        match *self {
            HorizonRule::Fixed(t) => t,
            HorizonRule::PerWidth(f) => (f * w as f64 / drift).ceil() as usize,
        }
    }
}

impl Default for HorizonRule {
    fn default() -> Self {
        HorizonRule::PerWidth(4.0)
    }
}

/// Window used for half-width `W`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    /// `[-W, W]^d`.
    #[default]
    Cube,
    /// `[-W, W] x [-L, L]^(d-1)` with `L = ceil(gamma sqrt W)`: the aspect of
    /// the region from which a frog reaches the origin with probability of
    /// order `W^(-(d-1)/2)`.
    Parabolic(f64),
}

impl WindowShape {
    pub fn window(&self, d: usize, w: i64) -> BoxWindow {
        match *self {
            WindowShape::Cube => BoxWindow::cube(d, w),
            WindowShape::Parabolic(gamma) => {
                BoxWindow::slab(d, w, (gamma * (w as f64).sqrt()).ceil() as i64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScanOptions {
    pub shape: WindowShape,
    pub horizon: HorizonRule,
    pub site_cap: Option<u64>,
    pub frog_cap: u64,
    pub absorb_outside: bool,
    pub workers: usize,
}

impl Default for PhaseScanOptions {
    fn default() -> Self {
        PhaseScanOptions {
            shape: WindowShape::default(),
            horizon: HorizonRule::default(),
            site_cap: None,
            frog_cap: DEFAULT_FROG_CAP,
            absorb_outside: false,
            workers: 0,
        }
    }
}

/// One cell of the phase-scan table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub dist: String,
    pub w: i64,
    pub horizon: usize,
    pub runs: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Runs stopped by either cap.
    pub truncated_runs: usize,
    /// Runs stopped by the frog cap, whose count is only a lower bound.
    pub capped_runs: usize,
}

/// Growth of the mean from the smallest window to a larger one, measured
/// on the same seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrowth {
    pub dist: String,
    pub w_from: i64,
    pub w_to: i64,
    pub mean_diff: f64,
    /// Standard error of the per-seed differences.
    pub paired_stderr: f64,
    /// Standard error of the difference of two independent means.
    pub unpaired_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub cells: Vec<PhaseCell>,
    pub growth: Vec<PhaseGrowth>,
}

impl PhaseScan {
    pub fn cell(&self, dist: &str, w: i64) -> Option<&PhaseCell> {
        self.cells.iter().find(|c| c.dist == dist && c.w == w)
    }

    pub fn growth(&self, dist: &str, w_to: i64) -> Option<&PhaseGrowth> {
        self.growth.iter().find(|g| g.dist == dist && g.w_to == w_to)
    }
}

/// Seeds of the site field and of the frog streams for run `seed`.
pub fn run_seeds(seed: u64) -> (u64, u64) {
    (derive_key(seed, &[tag::FIELD_SEED]), derive_key(seed, &[tag::FROG_SEED]))
}

/// Mean origin visits over `seeds` for each distribution and each window
/// half-width `W`. Every seed fixes both the configuration and the frog
/// streams, so all windows and distributions see common randomness and the
/// per-seed counts are nondecreasing in `W`.
pub fn phase_scan(
    kernel: &TransitionKernel,
    dists: &[SiteDistribution],
    widths: &[i64],
    seeds: &[u64],
    opts: &PhaseScanOptions,
) -> Result<PhaseScan> {
    if widths.is_empty() || widths.windows(2).any(|w| w[0] >= w[1]) || widths[0] < 0 {
        return Err(Error::Precondition("window widths must be nonnegative and increasing".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Precondition("at least one seed is required".into()));
    }
    let d = kernel.dim();
    let mut cells = Vec::new();
    let mut growth = Vec::new();
    for dist in dists {
        let mut per_width: Vec<Vec<f64>> = Vec::with_capacity(widths.len());
        for &w in widths {
            let horizon = opts.horizon.horizon(w, kernel.drift());
            let mut acc = Welford::default();
            let mut values = Vec::with_capacity(seeds.len());
            let mut truncated = 0;
            let mut capped = 0;
            for &seed in seeds {
                let (field_seed, frog_seed) = run_seeds(seed);
                let cfg = SimConfig {
                    kernel: kernel.clone(),
                    field: SiteField::new(field_seed, *dist)?,
                    window: opts.shape.window(d, w),
                    horizon,
                    master_seed: frog_seed,
                    frog_cap: opts.frog_cap,
                    site_cap: opts.site_cap,
                    absorb_outside: opts.absorb_outside,
                    workers: opts.workers,
                };
                let r = run_closure(&cfg)?;
                truncated += usize::from(r.truncation.is_truncated());
                capped += usize::from(r.truncation.cap_hit);
                acc.push(r.origin_visits as f64);
                values.push(r.origin_visits as f64);
            }
            cells.push(PhaseCell {
                dist: dist.to_string(),
                w,
                horizon,
                runs: seeds.len(),
                mean: acc.mean(),
                stderr: acc.stderr(),
                truncated_runs: truncated,
                capped_runs: capped,
            });
            per_width.push(values);
        }
        let base = &per_width[0];
        let base_se = cells[cells.len() - widths.len()].stderr;
        for (k, values) in per_width.iter().enumerate().skip(1) {
            let diffs: Welford = values.iter().zip(base).map(|(b, a)| b - a).collect();
            let se = cells[cells.len() - widths.len() + k].stderr;
            growth.push(PhaseGrowth {
                dist: dist.to_string(),
                w_from: widths[0],
                w_to: widths[k],
                mean_diff: diffs.mean(),
                paired_stderr: diffs.stderr(),
                unpaired_stderr: (base_se * base_se + se * se).sqrt(),
            });
        }
    }
    Ok(PhaseScan { cells, growth })
}

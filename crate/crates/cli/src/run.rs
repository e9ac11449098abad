//! Runs a resolved configuration and writes its artifacts: CSV tables and
//! JSON-lines run records named `<command>-<unix millis>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use frogsim::cascade::{
    box_f, certificate, chebyshev_check, g_of_k, g_scan, level_reports, monotone_from, zeta_floor_check,
    CascadeParams, Certificate,
};
use frogsim::engine::{phase_scan, run_closure, run_seeds, PhaseScanOptions, SimConfig, TruncationFlags};
use frogsim::extremes::{
    cramer_tail_estimate, exceedance_traces, late_block_summary, union_bound, BlockPlan, CramerReport,
    LateBlockSummary,
};
use frogsim::hitting::{
    check_eps_bound, closed_form_estimate, hit_prob_exact, hit_prob_mc, ht_constant_probe, plateau_target,
    probe_horizon, HitRow, HittingEstimate, MAX_DP_CELLS,
};
use frogsim::rng::{self, tag};
use frogsim::stats::binomial_stderr;
use frogsim::{BoxWindow, Point, SiteField};
use serde::Serialize;
use thiserror::Error;

use crate::config::{Command, ExperimentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok,
    BoundViolation,
    Inconclusive,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::BoundViolation => 3,
            Status::Inconclusive => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] frogsim::Error),
    #[error("cannot write {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug)]
pub struct Outcome {
    /// A bound violation outranks an inconclusive result.
    pub status: Status,
    pub artifacts: Vec<PathBuf>,
    pub messages: Vec<String>,
}

impl Outcome {
    fn flag(&mut self, status: Status, message: String) {
        if self.status == Status::Ok || status == Status::BoundViolation {
            self.status = status;
        }
        self.messages.push(message);
    }
}

fn io_err(path: &Path, e: impl ToString) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Artifacts {
    dir: PathBuf,
    stem: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(cfg: &ExperimentConfig) -> Result<Self, RunError> {
        fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
        let base = format!("{}-{}", cfg.command, now_millis());
        let mut stem = base.clone();
        let mut n = 1;
        while cfg.out.join(format!("{stem}.jsonl")).exists() {
            stem = format!("{base}-{n}");
            n += 1;
        }
        Ok(Artifacts {
            dir: cfg.out.clone(),
            stem,
            written: Vec::new(),
        })
    }

    fn csv<T: Serialize>(&mut self, suffix: &str, rows: &[T]) -> Result<(), RunError> {
        let path = self.dir.join(format!("{}{suffix}.csv", self.stem));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.serialize(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, records: &[Record<T>]) -> Result<(), RunError> {
        let path = self.dir.join(format!("{}.jsonl", self.stem));
        let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        for r in records {
            let line = serde_json::to_string(r).map_err(|e| io_err(&path, e))?;
            writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        }
        self.written.push(path);
        Ok(())
    }
}

/// One JSON-lines run record. Everything but `timestamp` is a function of
/// the configuration.
#[derive(Serialize)]
pub struct Record<T> {
    pub timestamp: u64,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<&'static str, String>,
    pub result: T,
}

fn record<T>(cfg: &ExperimentConfig, seed: u64, result: T) -> Record<T> {
    Record {
        timestamp: now_millis(),
        command: cfg.command.to_string(),
        seed,
        config: cfg.to_pairs().into_iter().collect(),
        result,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let mut out = Outcome {
        status: Status::Ok,
        artifacts: Vec::new(),
        messages: Vec::new(),
    };
    let mut art = Artifacts::new(cfg)?;
    match cfg.command {
        Command::Hit => hit(cfg, &mut art, &mut out)?,
        Command::Extremes => extremes(cfg, &mut art, &mut out)?,
        Command::Cascade => cascade(cfg, &mut art, &mut out)?,
        Command::Simulate => simulate(cfg, &mut art, &mut out)?,
        Command::PhaseScan => scan(cfg, &mut art, &mut out)?,
        Command::Certify => certify(cfg, &mut art, &mut out)?,
    }
    out.artifacts = art.written;
    Ok(out)
}

fn hit_row(x: &Point, y: &Point, est: &HittingEstimate, window: Option<&BoxWindow>) -> HitRow {
    HitRow {
        x: x.to_string(),
        y: y.to_string(),
        method: est.method,
        value: est.value,
        stderr: est.stderr,
        samples: est.samples,
        horizon: est.horizon,
        window: window.map(|w| w.to_string()),
    }
}

#[derive(Serialize)]
struct HitResult {
    rows: Vec<HitRow>,
    c1: Option<f64>,
    plateau_ratio: Option<f64>,
    eps_checked: usize,
    eps_violations: usize,
}

fn hit(cfg: &ExperimentConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let kernel = cfg.kernel();
    let d = cfg.d;
    let seed = cfg.seeds[0];
    let mut s = rng::stream(seed, &[tag::RUN]);
    let origin = Point::origin(d);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let (mut c1, mut ratio) = (None, None);
    if d == 1 {
        let half = (2 * *cfg.distances.iter().max().expect("nonempty") as i64).max(200);
        let window = BoxWindow::cube(1, half);
        let horizon = cfg.horizon.horizon(half, cfg.a);
        for &n in &cfg.distances {
            for delta in [-(n as i64), n as i64] {
                let y = Point::new(&[delta]);
                let dp = hit_prob_exact(&kernel, &origin, &y, &window, horizon)?;
                let cf = closed_form_estimate(&kernel, delta)?;
                let mc = hit_prob_mc(&kernel, &origin, &y, horizon, cfg.samples, &mut s)?;
                checks.push(check_eps_bound(&kernel, &origin, &y, &dp)?);
                rows.push(hit_row(&origin, &y, &dp, Some(&window)));
                rows.push(hit_row(&origin, &y, &cf, None));
                rows.push(hit_row(&origin, &y, &mc, None));
            }
        }
    } else {
        let plateau = ht_constant_probe(&kernel, cfg.gamma, &cfg.distances, cfg.samples, &mut s)?;
        out.messages.push(format!(
            "fitted c1 = {:.4}, plateau min/max ratio = {:.3}",
            plateau.c1, plateau.ratio
        ));
        c1 = Some(plateau.c1);
        ratio = Some(plateau.ratio);
        for r in &plateau.rows {
            rows.push(hit_row(&origin, &r.target, &r.estimate, None));
        }
        for &n in &cfg.distances {
            let window = BoxWindow::cube(d, n as i64 + 8);
            if window.volume() > MAX_DP_CELLS / 16 {
                continue;
            }
            let y = plateau_target(d, n, cfg.gamma);
            let dp = hit_prob_exact(&kernel, &origin, &y, &window, probe_horizon(&kernel, n))?;
            checks.push(check_eps_bound(&kernel, &origin, &y, &dp)?);
            rows.push(hit_row(&origin, &y, &dp, Some(&window)));
        }
    }
    let violations = checks.iter().filter(|c| !c.holds).count();
    if violations > 0 {
        out.flag(
            Status::BoundViolation,
            format!("epsilon bound fails on {violations} of {} certified values", checks.len()),
        );
    }
    art.csv("", &rows)?;
    let result = HitResult {
        rows,
        c1,
        plateau_ratio: ratio,
        eps_checked: checks.len(),
        eps_violations: violations,
    };
    art.jsonl(&[record(cfg, seed, result)])
}

#[derive(Serialize)]
struct ExceedRow {
    dist: String,
    heavy: bool,
    from: usize,
    traces: usize,
    mean_fraction: f64,
    any_fraction: f64,
    expected_fraction: f64,
    union_bound: f64,
}

#[derive(Serialize)]
struct TailCsv {
    dist: String,
    n: u64,
    count: u64,
    trials: u64,
    p_hat: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct ExtremesResult {
    exceedance: Vec<LateBlockSummary>,
    union_bounds: Vec<f64>,
    cramer: Vec<(String, CramerReport)>,
}

fn extremes(cfg: &ExperimentConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let plan = BlockPlan::geometric(cfg.c2, cfg.c3, cfg.beta, cfg.blocks)?;
    let seed = cfg.seeds[0];
    let mut s = rng::stream(seed, &[tag::RUN]);
    let mut rows = Vec::new();
    let mut tails = Vec::new();
    let mut result = ExtremesResult {
        exceedance: Vec::new(),
        union_bounds: Vec::new(),
        cramer: Vec::new(),
    };
    for dist in &cfg.dists {
        let traces = exceedance_traces(dist, &plan, cfg.c, cfg.r, cfg.traces, seed)?;
        let summary = late_block_summary(&traces, dist, &plan, cfg.late_from)
            .ok_or_else(|| frogsim::Error::Precondition("no late blocks".into()))?;
        let ub = union_bound(dist, &plan, cfg.c, cfg.r, cfg.late_from);
        let heavy = dist.is_heavy(cfg.r);
        let cap = ub.min(1.0);
        if !heavy && summary.any_fraction > cap + 3.0 * binomial_stderr(cap, cfg.traces) {
            out.flag(
                Status::BoundViolation,
                format!("{dist}: late exceedance fraction {} above the union bound {ub}", summary.any_fraction),
            );
        }
        out.messages.push(format!(
            "{dist}: late-block exceedance frequency {:.3}, any-exceedance fraction {:.3}, union bound {:.3e}",
            summary.mean_fraction, summary.any_fraction, ub
        ));
        rows.push(ExceedRow {
            dist: dist.to_string(),
            heavy,
            from: cfg.late_from,
            traces: cfg.traces,
            mean_fraction: summary.mean_fraction,
            any_fraction: summary.any_fraction,
            expected_fraction: summary.expected_fraction,
            union_bound: ub,
        });
        result.exceedance.push(summary);
        result.union_bounds.push(ub);
        if dist.mean().is_infinite() {
            let rep = cramer_tail_estimate(dist, &cfg.tail_n, cfg.samples as u64, cfg.bootstrap, &mut s)?;
            out.messages.push(format!(
                "{dist}: b_hat = {:.4} (95% lower {:.4}), correlation {:.4}",
                rep.b_hat, rep.b_lower95, rep.correlation
            ));
            for r in &rep.rows {
                tails.push(TailCsv {
                    dist: dist.to_string(),
                    n: r.n,
                    count: r.count,
                    trials: r.trials,
                    p_hat: r.p_hat,
                    stderr: r.stderr,
                });
            }
            result.cramer.push((dist.to_string(), rep));
        }
    }
    art.csv("", &rows)?;
    if !tails.is_empty() {
        art.csv("-tail", &tails)?;
    }
    art.jsonl(&[record(cfg, seed, result)])
}

fn params(cfg: &ExperimentConfig) -> Result<CascadeParams, RunError> {
    Ok(CascadeParams::new(cfg.alpha, cfg.d, cfg.k, cfg.i_max, cfg.c1, cfg.b)?)
}

#[derive(Serialize)]
struct BoxRow {
    n: u32,
    exact: String,
    formula: f64,
    lower: f64,
    upper: f64,
    zeta_floor: f64,
    gi1: f64,
    gi2: f64,
    level_bound: f64,
}

fn cascade(cfg: &ExperimentConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let p = params(cfg)?;
    let levels = level_reports(&p)?;
    let mut failures = Vec::new();
    for l in &levels {
        if !box_f(p.alpha, l.n, p.d)?.bounds_hold() {
            failures.push(format!("|F_{}| = {} outside its bounds", l.n, l.exact));
        }
    }
    let zeta: Vec<_> = (0..=p.i_max).map(|i| zeta_floor_check(&p, i)).collect::<Result<_, _>>()?;
    for z in &zeta {
        if !z.xy_holds {
            failures.push(format!("level {}: (1-x)^y <= exp(-xy) fails", z.i));
        }
        if !z.holds {
            failures.push(format!(
                "level {}: chain floor {:.6} below 1 - e^-2 (exponent {} instead of {})",
                z.i,
                z.floor,
                z.honest_exponent,
                2 * (p.k + z.i) as i64 - 2
            ));
        }
    }
    let cheb: Vec<_> = (0..=p.i_max).map(|i| chebyshev_check(&p, i)).collect::<Result<_, _>>()?;
    for c in cheb.iter().filter(|c| !c.holds) {
        failures.push(format!("level {}: Chebyshev value {:.3e} above the c4 form {:.3e}", c.i, c.exact, c.c4_form));
    }
    let cert = certificate(&p)?;
    if !cert.coherent {
        failures.push("level bounds do not sum to g(k)".into());
    }
    out.messages.push(format!("g({}) = {:.6e}, certificate 1 - g = {:.6}", p.k, cert.g, cert.certificate));
    for f in &failures {
        out.flag(Status::BoundViolation, f.clone());
    }
    let rows: Vec<BoxRow> = levels
        .iter()
        .map(|l| BoxRow {
            n: l.n,
            exact: l.exact.to_string(),
            formula: l.formula,
            lower: l.lower,
            upper: l.upper,
            zeta_floor: l.zeta_floor,
            gi1: l.gi1,
            gi2: l.gi2,
            level_bound: l.level_bound,
        })
        .collect();
    art.csv("-levels", &rows)?;
    art.csv("-zeta", &zeta)?;
    #[derive(Serialize)]
    struct CascadeResult<'a, Z, C> {
        certificate: &'a Certificate,
        zeta: &'a [Z],
        chebyshev: &'a [C],
        failures: &'a [String],
    }
    let result = CascadeResult {
        certificate: &cert,
        zeta: &zeta,
        chebyshev: &cheb,
        failures: &failures,
    };
    art.jsonl(&[record(cfg, cfg.seeds[0], result)])
}

#[derive(Serialize)]
struct SimResult {
    dist: String,
    w: i64,
    horizon: usize,
    awakened_sites: usize,
    total_frogs: u64,
    origin_visits: u64,
    frontier_history: Vec<u64>,
    truncation: TruncationFlags,
}

fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let kernel = cfg.kernel();
    let mut records = Vec::new();
    let mut capped = 0;
    for &seed in &cfg.seeds {
        let (field_seed, frog_seed) = run_seeds(seed);
        for dist in &cfg.dists {
            for &w in &cfg.windows {
                let horizon = cfg.horizon.horizon(w, cfg.a);
                let mut sim = SimConfig::new(
                    kernel.clone(),
                    SiteField::new(field_seed, *dist)?,
                    cfg.shape.window(cfg.d, w),
                    horizon,
                    frog_seed,
                );
                sim.frog_cap = cfg.frog_cap;
                sim.site_cap = cfg.site_cap;
                sim.absorb_outside = cfg.absorb;
                sim.workers = cfg.workers;
                let r = run_closure(&sim)?;
                capped += usize::from(r.truncation.cap_hit);
                records.push(record(
                    cfg,
                    seed,
                    SimResult {
                        dist: dist.to_string(),
                        w,
                        horizon,
                        awakened_sites: r.awakened_sites.len(),
                        total_frogs: r.total_frogs,
                        origin_visits: r.origin_visits,
                        frontier_history: r.frontier_history,
                        truncation: r.truncation,
                    },
                ));
            }
        }
    }
    out.messages.push(format!("{} runs", records.len()));
    if capped > 0 {
        out.flag(
            Status::Inconclusive,
            format!("{capped} runs reached the frog cap; their origin visits are lower bounds"),
        );
    }
    art.jsonl(&records)
}

fn scan(cfg: &ExperimentConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let opts = PhaseScanOptions {
        shape: cfg.shape,
        horizon: cfg.horizon,
        site_cap: cfg.site_cap,
        frog_cap: cfg.frog_cap,
        absorb_outside: cfg.absorb,
        workers: cfg.workers,
    };
    let table = phase_scan(&cfg.kernel(), &cfg.dists, &cfg.windows, &cfg.seeds, &opts)?;
    for c in &table.cells {
        out.messages
            .push(format!("{} W={}: mean {:.3} +- {:.3} over {} runs", c.dist, c.w, c.mean, c.stderr, c.runs));
    }
    let capped: usize = table.cells.iter().map(|c| c.capped_runs).sum();
    if capped > 0 {
        out.flag(
            Status::Inconclusive,
            format!("{capped} runs reached the frog cap; their cells are lower bounds"),
        );
    }
    art.csv("", &table.cells)?;
    art.csv("-growth", &table.growth)?;
    art.jsonl(&[record(cfg, cfg.seeds[0], &table)])
}

#[derive(Serialize)]
struct ScanRow {
    k: u32,
    g: f64,
    certificate: f64,
}

#[derive(Serialize)]
struct CertifyResult {
    level: f64,
    k0: Option<u32>,
    smallest_k: Option<u32>,
    certificate: Option<Certificate>,
}

fn certify(cfg: &ExperimentConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let p = params(cfg)?;
    let scan = g_scan(&p, cfg.k_max);
    let k0 = monotone_from(&scan);
    let k = (cfg.k..=cfg.k_max).find(|&k| g_of_k(&p, k as f64) < 1.0 - cfg.level);
    let cert = k.map(|k| certificate(&p.with_k(k))).transpose()?;
    match (&cert, k) {
        (Some(c), Some(k)) => {
            out.messages.push(format!(
                "smallest k with certificate >= {}: {k} (g = {:.6e}, 1 - g = {:.6})",
                cfg.level, c.g, c.certificate
            ));
            if !c.coherent {
                out.flag(Status::BoundViolation, "level bounds do not sum to g(k)".into());
            }
        }
        _ if scan.iter().all(|&(_, g)| g >= 1.0) => out.flag(
            Status::BoundViolation,
            format!("vacuous certificate: g(k) >= 1 for every k <= {}", cfg.k_max),
        ),
        _ => out.flag(
            Status::BoundViolation,
            format!("certificate level {} not reached for k <= {}", cfg.level, cfg.k_max),
        ),
    }
    if let Some(k0) = k0 {
        out.messages.push(format!("g is nonincreasing from k0 = {k0}"));
    }
    let rows: Vec<ScanRow> = scan
        .iter()
        .map(|&(k, g)| ScanRow {
            k,
            g,
            certificate: 1.0 - g,
        })
        .collect();
    art.csv("", &rows)?;
    let result = CertifyResult {
        level: cfg.level,
        k0,
        smallest_k: k,
        certificate: cert,
    };
    art.jsonl(&[record(cfg, cfg.seeds[0], result)])
}

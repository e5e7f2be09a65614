//! Verification campaigns: distances, hopcounts, epidemic curves and the
//! collision process, run over seeded replications and written to CSV.
//!
//! Every replication draws from streams keyed by
//! `(master_seed, experiment, n, rep)`, and results are gathered in rep order,
//! so outputs do not depend on the number of worker threads.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cmbp::{self, RootStart};
use crate::format::f17;
use crate::fpp::{self, Color, ColorPair, Explorer, Stop};
use crate::mgf::{self, MgfTable, SolverConfig};
use crate::nwgraph::{generate, GraphConfig, WeightedGraph};
use crate::rng;
use crate::stats::{self, KsResult};
use crate::theory::{constants, ModelConstants};

/// Calibration targets for the limit-law checks. The limit laws carry no
/// finite-n error rates, so these are documented choices.
pub mod thresholds {
    pub const DISTANCE_KS: f64 = 0.1;
    pub const MEDIAN_SHIFT_REL: f64 = 0.10;
    pub const HOP_MEAN_REL: f64 = 0.10;
    pub const HOP_VAR_REL: f64 = 0.25;
    pub const HOP_KS: f64 = 0.1;
    pub const EPIDEMIC_MEAN_SUP: f64 = 0.05;
    pub const EPIDEMIC_KS: f64 = 0.15;
    pub const EPIDEMIC_WINDOW: (f64, f64) = (0.1, 0.9);
    pub const COLLISION_P: f64 = 0.01;
    pub const COLLISION_REL: f64 = 0.15;
    pub const COLLISION_STABILITY_SE: f64 = 3.0;
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Distance,
    Hopcount,
    Epidemic,
    Collision,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Distance => "distance",
            ExperimentKind::Hopcount => "hopcount",
            ExperimentKind::Epidemic => "epidemic",
            ExperimentKind::Collision => "collision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(ExperimentKind),
    Many(Vec<ExperimentKind>),
}

/// Campaign configuration, read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: OneOrMany,
    pub n_list: Vec<usize>,
    pub rho: f64,
    /// Graphs per `n`.
    pub reps: usize,
    /// Pairs (distance, hopcount) or sources (epidemic) per graph.
    /// The collision experiment uses one pair per graph.
    pub pairs_per_graph: usize,
    pub master_seed: u64,
    /// Horizon of the W samples; defaults to `10 / lambda`.
    #[serde(default)]
    pub bp_horizon: Option<f64>,
    pub output_dir: PathBuf,
    /// Draws from the distance limit law; defaults to the pair count at the
    /// largest `n`.
    #[serde(default)]
    pub limit_draws: Option<usize>,
    /// W samples for the epidemic ensemble.
    #[serde(default = "default_bp_reps")]
    pub bp_reps: usize,
    /// Epidemic grid in units of `1/lambda`: `[t0, t1, dt]`.
    #[serde(default = "default_t_grid")]
    pub t_grid: [f64; 3],
    /// Collision window `[s0, s1]` in units of `1/lambda`; SWT^V is grown to
    /// `t_n + s1`.
    #[serde(default = "default_window")]
    pub collision_window: [f64; 2],
    #[serde(default = "default_mgf")]
    pub mgf: SolverConfig,
}

fn default_bp_reps() -> usize {
    10_000
}

fn default_t_grid() -> [f64; 3] {
    [-4.0, 4.0, 0.1]
}

fn default_window() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_mgf() -> SolverConfig {
    SolverConfig {
        theta_max: 200.0,
        grid_points: 2048,
        ..SolverConfig::default()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn experiments(&self) -> Vec<ExperimentKind> {
        let mut v = match &self.experiment {
            OneOrMany::One(k) => vec![*k],
            OneOrMany::Many(v) => v.clone(),
        };
        v.sort();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.experiments().is_empty() {
            return bad("experiment: at least one experiment is required".into());
        }
        if self.n_list.is_empty() {
            return bad("n_list: must not be empty".into());
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < 3) {
            return bad(format!("n_list: entries must be >= 3, got {n}"));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho: must be finite and > 0, got {}", self.rho));
        }
        if self.reps == 0 {
            return bad("reps: must be >= 1".into());
        }
        if self.pairs_per_graph == 0 {
            return bad("pairs_per_graph: must be >= 1".into());
        }
        if let Some(h) = self.bp_horizon {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("bp_horizon: must be finite and > 0, got {h}"));
            }
        }
        if self.limit_draws == Some(0) {
            return bad("limit_draws: must be >= 1".into());
        }
        if self.bp_reps == 0 {
            return bad("bp_reps: must be >= 1".into());
        }
        let [t0, t1, dt] = self.t_grid;
        if !(t0 < t1 && dt > 0.0 && ((t1 - t0) / dt) < 1e6) {
            return bad(format!("t_grid: need t0 < t1 and dt > 0, got {:?}", self.t_grid));
        }
        let [s0, s1] = self.collision_window;
        if !(s0 < s1 && s0.is_finite() && s1.is_finite()) {
            return bad(format!("collision_window: need s0 < s1, got {:?}", self.collision_window));
        }
        self.mgf.validate().map_err(|e| ExperimentError::Invalid(format!("mgf: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedRep {
    pub experiment: &'static str,
    pub n: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: &'static str,
    pub pass: bool,
    pub stats: Value,
    pub failed_reps: Vec<FailedRep>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignSummary {
    pub all_pass: bool,
    pub master_seed: u64,
    pub rho: f64,
    pub constants: crate::theory::ConstantsReport,
    pub reports: Vec<ExperimentReport>,
    pub runtime_s: f64,
}

fn ks_json(r: &KsResult) -> Value {
    json!({
        "statistic": r.statistic,
        "n_eff": r.n_eff,
        "critical_005": r.critical_005,
    })
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), ExperimentError> {
    let p = dir.join(name);
    let f = File::create(&p).map_err(io_err(&p))?;
    Ok((BufWriter::new(f), p))
}

/// Uniform pair with `u != v`.
fn sample_pair<R: Rng>(n: usize, rng: &mut R) -> (usize, usize) {
    let u = rng.random_range(0..n);
    loop {
        let v = rng.random_range(0..n);
        if v != u {
            return (u, v);
        }
    }
}

fn graph_for(cfg: &ExperimentConfig, tag: &str, n: usize, rep: usize) -> Result<WeightedGraph, String> {
    let seed = rng::derive_u64(cfg.master_seed, &format!("{tag}/graph"), &[n as u64, rep as u64]);
    generate(&GraphConfig::new(n, cfg.rho, seed)).map_err(|e| e.to_string())
}

fn w_horizon(cfg: &ExperimentConfig, k: &ModelConstants) -> f64 {
    cfg.bp_horizon.unwrap_or_else(|| cmbp::default_horizon(k))
}

/// Runs `f` for every `(n, rep)` in order, in parallel over reps.
fn per_rep<T: Send>(
    cfg: &ExperimentConfig,
    exp: &'static str,
    n: usize,
    f: impl Fn(usize) -> Result<T, String> + Sync,
) -> (Vec<(usize, T)>, Vec<FailedRep>) {
    let results: Vec<Result<T, String>> = (0..cfg.reps).into_par_iter().map(&f).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((rep, v)),
            Err(error) => failed.push(FailedRep {
                experiment: exp,
                n,
                rep,
                error,
            }),
        }
    }
    (ok, failed)
}

#[derive(Debug, Clone, Copy)]
struct PairRecord {
    rep: usize,
    pair: usize,
    u: usize,
    v: usize,
    weight: f64,
    hops: u32,
}

/// Typical-distance pairs for one `n`, shared by the distance and hopcount
/// experiments.
fn pair_runs(cfg: &ExperimentConfig, k: &ModelConstants, n: usize) -> (Vec<PairRecord>, Vec<FailedRep>) {
    let t_n = k.t_n(n);
    let (ok, failed) = per_rep(cfg, "distance", n, |rep| {
        let g = graph_for(cfg, "distance", n, rep)?;
        let mut r = rng::stream(cfg.master_seed, "distance/pairs", &[n as u64, rep as u64]);
        let mut out = Vec::with_capacity(cfg.pairs_per_graph);
        for pair in 0..cfg.pairs_per_graph {
            let (u, v) = sample_pair(n, &mut r);
            let c = fpp::collision_connect(&g, u, v, t_n, None).map_err(|e| e.to_string())?;
            out.push(PairRecord {
                rep,
                pair,
                u,
                v,
                weight: c.path.weight,
                hops: c.path.hopcount,
            });
        }
        Ok(out)
    });
    (ok.into_iter().flat_map(|(_, v)| v).collect(), failed)
}

/// Pair records and failed reps for one `n`.
type PairRuns = (usize, Vec<PairRecord>, Vec<FailedRep>);

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    k: ModelConstants,
    pairs: Option<Vec<PairRuns>>,
}

impl Context<'_> {
    fn pairs(&mut self) -> &[PairRuns] {
        if self.pairs.is_none() {
            let mut all = Vec::new();
            for &n in &self.cfg.n_list {
                let (recs, failed) = pair_runs(self.cfg, &self.k, n);
                all.push((n, recs, failed));
            }
            self.pairs = Some(all);
        }
        self.pairs.as_deref().expect("filled")
    }
}

/// One draw from the distance limit law, `-(log(W_U W_V) + Lambda + c) / lambda`.
pub fn limit_value(k: &ModelConstants, w_u: f64, w_v: f64, gumbel: f64) -> f64 {
    -((w_u * w_v).ln() + gumbel + k.c) / k.lambda
}

fn run_distance(ctx: &mut Context) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let k = ctx.k;
    let runs = ctx.pairs().to_vec();
    let dir = &cfg.output_dir;

    let (mut w, p) = create(dir, "distance.csv")?;
    writeln!(w, "n,rep,pair,u,v,weight,shifted_weight").map_err(io_err(&p))?;
    for (n, recs, _) in &runs {
        let shift = (*n as f64).ln() / k.lambda;
        for r in recs {
            writeln!(w, "{},{},{},{},{},{},{}", n, r.rep, r.pair, r.u, r.v, f17(r.weight), f17(r.weight - shift))
                .map_err(io_err(&p))?;
        }
    }
    w.flush().map_err(io_err(&p))?;

    let n_max = *cfg.n_list.iter().max().expect("validated");
    let draws = cfg.limit_draws.unwrap_or(cfg.reps * cfg.pairs_per_graph);
    let h = w_horizon(cfg, &k);
    let wu = cmbp::sample_w(&k, Color::Blue, RootStart::Immediate, h, draws, rng::derive_u64(cfg.master_seed, "distance/limit/wu", &[]))
        .map_err(|e| ExperimentError::Other(e.to_string()))?;
    let wv = cmbp::sample_w(&k, Color::Blue, RootStart::Immediate, h, draws, rng::derive_u64(cfg.master_seed, "distance/limit/wv", &[]))
        .map_err(|e| ExperimentError::Other(e.to_string()))?;
    let mut limit = Vec::with_capacity(draws);
    let (mut w, p) = create(dir, "distance_limit.csv")?;
    writeln!(w, "draw,W_U,W_V,Lambda,value").map_err(io_err(&p))?;
    for i in 0..draws {
        let mut r = rng::stream(cfg.master_seed, "distance/limit/gumbel", &[i as u64]);
        let g = stats::gumbel_sample(&mut r);
        let v = limit_value(&k, wu[i], wv[i], g);
        limit.push(v);
        writeln!(w, "{},{},{},{},{}", i, f17(wu[i]), f17(wv[i]), f17(g), f17(v)).map_err(io_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let mut per_n = Vec::new();
    let mut medians = Vec::new();
    let mut pass = true;
    let mut failed = Vec::new();
    for (n, recs, f) in &runs {
        failed.extend(f.iter().cloned());
        let shift = (*n as f64).ln() / k.lambda;
        let shifted: Vec<f64> = recs.iter().map(|r| r.weight - shift).collect();
        let raw: Vec<f64> = recs.iter().map(|r| r.weight).collect();
        if shifted.is_empty() {
            pass = false;
            continue;
        }
        let ks = stats::ks_two_sample(&shifted, &limit).map_err(|e| ExperimentError::Other(e.to_string()))?;
        let med = stats::median(&raw);
        medians.push((*n, med));
        let ok = ks.statistic < thresholds::DISTANCE_KS;
        if *n == n_max {
            pass &= ok;
        }
        per_n.push(json!({
            "n": n,
            "pairs": recs.len(),
            "mean_shifted": stats::mean(&shifted),
            "limit_mean": stats::mean(&limit),
            "median": med,
            "ks_vs_limit": ks_json(&ks),
            "ks_pass": ok,
        }));
    }
    let mut shifts = Vec::new();
    for w in medians.windows(2) {
        let ((n1, m1), (n2, m2)) = (w[0], w[1]);
        let want = (n2 as f64 / n1 as f64).ln() / k.lambda;
        let got = m2 - m1;
        let ok = ((got - want) / want).abs() < thresholds::MEDIAN_SHIFT_REL;
        pass &= ok;
        shifts.push(json!({"from": n1, "to": n2, "median_shift": got, "theory": want, "pass": ok}));
    }
    pass &= failed.is_empty();
    Ok(ExperimentReport {
        experiment: "distance",
        pass,
        stats: json!({
            "per_n": per_n,
            "median_shifts": shifts,
            "limit_draws": draws,
            "w_horizon": h,
            "thresholds": {"ks": thresholds::DISTANCE_KS, "median_shift_rel": thresholds::MEDIAN_SHIFT_REL},
        }),
        failed_reps: failed,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

fn run_hopcount(ctx: &mut Context) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let k = ctx.k;
    let runs = ctx.pairs().to_vec();
    let scale = (k.lambda + 1.0) / k.lambda;
    let (mut w, p) = create(&cfg.output_dir, "hopcount.csv")?;
    writeln!(w, "n,rep,pair,hops,standardized").map_err(io_err(&p))?;
    let n_max = *cfg.n_list.iter().max().expect("validated");
    let mut per_n = Vec::new();
    let mut pass = true;
    let mut failed = Vec::new();
    for (n, recs, f) in &runs {
        failed.extend(f.iter().cloned());
        let centre = scale * (*n as f64).ln();
        let mut hops = Vec::with_capacity(recs.len());
        let ints: Vec<u64> = recs.iter().map(|r| u64::from(r.hops)).collect();
        let mut z = Vec::with_capacity(recs.len());
        for r in recs {
            let s = (f64::from(r.hops) - centre) / centre.sqrt();
            writeln!(w, "{},{},{},{},{}", n, r.rep, r.pair, r.hops, f17(s)).map_err(io_err(&p))?;
            hops.push(f64::from(r.hops));
            z.push(s);
        }
        if z.len() < 10 {
            pass = false;
            continue;
        }
        let mean = stats::mean(&hops);
        let var = stats::variance(&hops);
        let ks = stats::ks_one_sample(&z, stats::normal_cdf).map_err(|e| ExperimentError::Other(e.to_string()))?;
        let mean_ok = ((mean - centre) / centre).abs() < thresholds::HOP_MEAN_REL;
        let var_ok = ((var - centre) / centre).abs() < thresholds::HOP_VAR_REL;
        let ks_ok = ks.statistic < thresholds::HOP_KS;
        if *n == n_max {
            pass &= mean_ok && var_ok && ks_ok;
        }
        per_n.push(json!({
            "n": n,
            "pairs": hops.len(),
            "mean": mean,
            "variance": var,
            "theory": centre,
            "mean_pass": mean_ok,
            "variance_pass": var_ok,
            "ks_vs_normal": ks_json(&ks),
            "ks_pass": ks_ok,
            "diagnostics": {
                "lattice_ks": stats::lattice_normal_ks(&ints, centre, centre),
                "lattice_ks_empirical_centre": stats::lattice_normal_ks(&ints, mean, centre),
            },
        }));
    }
    w.flush().map_err(io_err(&p))?;
    pass &= failed.is_empty();
    Ok(ExperimentReport {
        experiment: "hopcount",
        pass,
        stats: json!({
            "per_n": per_n,
            "thresholds": {"mean_rel": thresholds::HOP_MEAN_REL, "variance_rel": thresholds::HOP_VAR_REL, "ks": thresholds::HOP_KS},
        }),
        failed_reps: failed,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

fn t_grid(cfg: &ExperimentConfig, k: &ModelConstants) -> Vec<f64> {
    let [t0, t1, dt] = cfg.t_grid;
    let steps = ((t1 - t0) / dt + 1e-9).floor() as usize;
    (0..=steps).map(|i| (t0 + dt * i as f64) / k.lambda).collect()
}

/// `f(t + log(w)/lambda)`, saturating at `theta_max` (where `M_B` is
/// already negligible). Returns whether it saturated.
fn f_sat(table: &MgfTable, t: f64, w: f64) -> (f64, bool) {
    match table.f_shifted(t, w) {
        Ok(v) => (v, false),
        Err(_) => (1.0 - table.m_b_at(table.theta_max()), true),
    }
}

struct EpidemicRun {
    source: usize,
    curve: Vec<f64>,
    w_n: f64,
}

fn run_epidemic(ctx: &mut Context) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let k = ctx.k;
    let grid = t_grid(cfg, &k);
    let table = mgf::solve(&k, &cfg.mgf).map_err(|e| ExperimentError::Other(e.to_string()))?;

    let (mut w, p) = create(&cfg.output_dir, "fcurve.csv")?;
    writeln!(w, "t,f").map_err(io_err(&p))?;
    let mut grid_kept = Vec::new();
    for &t in &grid {
        match table.f_curve(t) {
            Ok(f) => {
                writeln!(w, "{},{}", f17(t), f17(f)).map_err(io_err(&p))?;
                grid_kept.push(t);
            }
            Err(_) => break,
        }
    }
    w.flush().map_err(io_err(&p))?;
    let truncated = grid.len() - grid_kept.len();
    let grid = grid_kept;

    let h = w_horizon(cfg, &k);
    let ws = cmbp::sample_w(&k, Color::Blue, RootStart::Immediate, h, cfg.bp_reps, rng::derive_u64(cfg.master_seed, "epidemic/w", &[]))
        .map_err(|e| ExperimentError::Other(e.to_string()))?;
    let mut saturated = 0usize;
    // theory[j][i]: f(t_j + log W_i / lambda)
    let theory: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| {
            ws.iter()
                .map(|&wi| {
                    let (v, s) = f_sat(&table, t, wi);
                    saturated += usize::from(s);
                    v
                })
                .collect()
        })
        .collect();

    let (mut out, p) = create(&cfg.output_dir, "epidemic.csv")?;
    writeln!(out, "n,rep,source,t,I_n").map_err(io_err(&p))?;
    let n_max = *cfg.n_list.iter().max().expect("validated");
    let mut per_n = Vec::new();
    let mut pass = true;
    let mut failed = Vec::new();
    for &n in &cfg.n_list {
        let shift = (n as f64).ln() / k.lambda;
        let t_n = k.t_n(n);
        let shifted: Vec<f64> = grid.iter().map(|t| t + shift).collect();
        let (ok, f) = per_rep(cfg, "epidemic", n, |rep| {
            let g = graph_for(cfg, "epidemic", n, rep)?;
            let mut r = rng::stream(cfg.master_seed, "epidemic/sources", &[n as u64, rep as u64]);
            let mut e = Explorer::new(&g, 0).map_err(|e| e.to_string())?;
            let mut out = Vec::new();
            for _ in 0..cfg.pairs_per_graph {
                let source = r.random_range(0..n);
                e.reset(source).map_err(|e| e.to_string())?;
                e.run(Stop::AtTime(t_n)).map_err(|e| e.to_string())?;
                let w_n = fpp::counts_martingale(&e.counts(), t_n, &k).unwrap_or(f64::NAN);
                e.run_all();
                let mut d: Vec<f64> = (0..n).map(|v| e.dist(v)).collect();
                d.sort_by(f64::total_cmp);
                out.push(EpidemicRun {
                    source,
                    curve: fpp::curve_from_sorted(&d, &shifted),
                    w_n,
                });
            }
            Ok(out)
        });
        failed.extend(f);
        let mut curves: Vec<&EpidemicRun> = Vec::new();
        for (rep, runs) in &ok {
            for run in runs {
                for (j, &t) in grid.iter().enumerate() {
                    writeln!(out, "{},{},{},{},{}", n, rep, run.source, f17(t), f17(run.curve[j])).map_err(io_err(&p))?;
                }
            }
            curves.extend(runs.iter());
        }
        if curves.len() < 10 {
            pass = false;
            continue;
        }
        let mut sup_mean: f64 = 0.0;
        let mut ks_window_max: f64 = 0.0;
        let mut ks_rows = Vec::new();
        let mut paired_err = Vec::new();
        let mut monotone = true;
        for run in &curves {
            monotone &= run.curve.windows(2).all(|x| x[0] <= x[1]);
            monotone &= run.curve.iter().all(|&v| v >= 1.0 / n as f64 && v <= 1.0);
        }
        for (j, &t) in grid.iter().enumerate() {
            let emp: Vec<f64> = curves.iter().map(|c| c.curve[j]).collect();
            let th = &theory[j];
            let me = stats::mean(&emp);
            let mt = stats::mean(th);
            sup_mean = sup_mean.max((me - mt).abs());
            let ks = stats::ks_two_sample(&emp, th).map_err(|e| ExperimentError::Other(e.to_string()))?;
            let central = (thresholds::EPIDEMIC_WINDOW.0..=thresholds::EPIDEMIC_WINDOW.1).contains(&mt);
            if central {
                ks_window_max = ks_window_max.max(ks.statistic);
            }
            let paired: Vec<f64> = curves
                .iter()
                .filter(|c| c.w_n.is_finite())
                .map(|c| (c.curve[j] - f_sat(&table, t, c.w_n).0).abs())
                .collect();
            paired_err.push(if paired.is_empty() { f64::NAN } else { stats::mean(&paired) });
            ks_rows.push(json!({"t": t, "mean_I": me, "mean_f": mt, "ks": ks.statistic, "central": central}));
        }
        let ok_mean = sup_mean < thresholds::EPIDEMIC_MEAN_SUP;
        let ok_ks = ks_window_max < thresholds::EPIDEMIC_KS;
        if n == n_max {
            pass &= ok_mean && ok_ks && monotone;
        }
        per_n.push(json!({
            "n": n,
            "sources": curves.len(),
            "sup_mean_distance": sup_mean,
            "mean_pass": ok_mean,
            "max_ks_central": ks_window_max,
            "ks_pass": ok_ks,
            "curves_monotone": monotone,
            "paired_w_n_mean_abs_error": paired_err.iter().cloned().filter(|x| x.is_finite()).fold(0.0, f64::max),
            "grid": ks_rows,
        }));
    }
    out.flush().map_err(io_err(&p))?;
    pass &= failed.is_empty();
    Ok(ExperimentReport {
        experiment: "epidemic",
        pass,
        stats: json!({
            "per_n": per_n,
            "mgf_residual": table.residual,
            "mgf_iterations": table.history.len(),
            "grid_truncated_points": truncated,
            "saturated_theory_evaluations": saturated,
            "w_samples": ws.len(),
            "w_horizon": h,
            "thresholds": {"mean_sup": thresholds::EPIDEMIC_MEAN_SUP, "ks": thresholds::EPIDEMIC_KS, "window": thresholds::EPIDEMIC_WINDOW},
        }),
        failed_reps: failed,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// One collision instance: counts per pair in the window, counts per pair
/// up to the horizon, and the two graph-side W estimates.
#[derive(Debug, Clone)]
pub struct CollisionInstance {
    pub window_counts: [u64; 4],
    pub horizon_counts: [u64; 4],
    pub w_u: f64,
    pub w_v: f64,
    pub records: Vec<(f64, ColorPair, f64)>,
}

/// Freezes SWT^U at `t_n`, grows SWT^V to `t_n + s1` and classifies the
/// collisions. `None` if `v` lay inside SWT^U already.
pub fn collision_instance(
    g: &WeightedGraph,
    k: &ModelConstants,
    u: usize,
    v: usize,
    window: (f64, f64),
) -> Result<Option<CollisionInstance>, String> {
    let t_n = k.t_n(g.n());
    let c = fpp::collision_connect(g, u, v, t_n, Some(window.1)).map_err(|e| e.to_string())?;
    if c.log.short_circuit {
        return Ok(None);
    }
    let Some(vc) = c.v_counts_at_freeze else {
        return Ok(None);
    };
    let streams = fpp::collision_log_classified(&c.log).map_err(|e| e.to_string())?;
    let w_u = fpp::counts_martingale(&c.log.u_counts, t_n, k).map_err(|e| e.to_string())?;
    let w_v = fpp::counts_martingale(&vc, t_n, k).map_err(|e| e.to_string())?;
    let mut records: Vec<(f64, ColorPair, f64)> = c
        .log
        .collisions
        .iter()
        .filter(|x| x.primary && !x.duplicate)
        .map(|x| (x.s, x.pair(), x.remaining))
        .collect();
    records.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Some(CollisionInstance {
        window_counts: streams.counts_between(window.0, window.1),
        horizon_counts: streams.counts_between(f64::NEG_INFINITY, window.1),
        w_u,
        w_v,
        records,
    }))
}

/// Ratio estimate `sum C / sum W_U W_V` with a delta-method standard error.
pub fn ratio_estimate(counts: &[f64], z: &[f64]) -> (f64, f64) {
    let m = counts.len() as f64;
    let r = counts.iter().sum::<f64>() / z.iter().sum::<f64>();
    let zbar = z.iter().sum::<f64>() / m;
    let resid: Vec<f64> = counts.iter().zip(z).map(|(c, zi)| c - r * zi).collect();
    let se = (stats::variance(&resid) / m).sqrt() / zbar;
    (r, se)
}

fn run_collision(ctx: &mut Context) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let k = ctx.k;
    let window = (cfg.collision_window[0] / k.lambda, cfg.collision_window[1] / k.lambda);
    let theory_count = k.collision_factor() * ((k.lambda * window.1).exp() - (k.lambda * window.0).exp()) / k.lambda;
    let probs = ColorPair::theory_probs(&k);
    let (mut w, p) = create(&cfg.output_dir, "collision.csv")?;
    writeln!(w, "n,rep,s,color_pair,remaining").map_err(io_err(&p))?;
    let mut per_n = Vec::new();
    let mut ratios = Vec::new();
    let mut pass = true;
    let mut failed = Vec::new();
    for &n in &cfg.n_list {
        let (ok, f) = per_rep(cfg, "collision", n, |rep| {
            let g = graph_for(cfg, "collision", n, rep)?;
            let mut r = rng::stream(cfg.master_seed, "collision/pairs", &[n as u64, rep as u64]);
            let (u, v) = sample_pair(n, &mut r);
            collision_instance(&g, &k, u, v, window)
        });
        failed.extend(f);
        let mut totals = [0u64; 4];
        let mut counts = Vec::new();
        let mut z = Vec::new();
        let mut skipped = 0usize;
        for (rep, inst) in &ok {
            let Some(inst) = inst else {
                skipped += 1;
                continue;
            };
            for (s, pair, rem) in &inst.records {
                writeln!(w, "{},{},{},{},{}", n, rep, f17(*s), pair.label(), f17(*rem)).map_err(io_err(&p))?;
            }
            for (t, c) in totals.iter_mut().zip(inst.horizon_counts) {
                *t += c;
            }
            counts.push(inst.window_counts.iter().sum::<u64>() as f64);
            z.push(inst.w_u * inst.w_v);
        }
        if counts.len() < 2 {
            pass = false;
            continue;
        }
        let chi = stats::chi_square_gof(&totals, &probs).map_err(|e| ExperimentError::Other(e.to_string()))?;
        let (ratio, se) = ratio_estimate(&counts, &z);
        let per_instance: Vec<f64> = counts.iter().zip(&z).map(|(c, zi)| c / zi).collect();
        let chi_ok = chi.p_value > thresholds::COLLISION_P;
        let rel_ok = ((ratio - theory_count) / theory_count).abs() < thresholds::COLLISION_REL;
        pass &= chi_ok && rel_ok;
        ratios.push((n, ratio, se));
        per_n.push(json!({
            "n": n,
            "instances": counts.len(),
            "skipped_short_circuit": skipped,
            "pair_totals": {"BB": totals[0], "RB": totals[1], "BR": totals[2], "RR": totals[3]},
            "pair_probs": probs,
            "chi_square": {"statistic": chi.statistic, "df": chi.dof, "p_value": chi.p_value},
            "chi_square_pass": chi_ok,
            "normalized_count": ratio,
            "normalized_count_se": se,
            "mean_of_per_instance_ratios": stats::mean(&per_instance),
            "theory": theory_count,
            "relative_error": (ratio - theory_count) / theory_count,
            "intensity_pass": rel_ok,
        }));
    }
    w.flush().map_err(io_err(&p))?;
    let mut stability = Vec::new();
    for win in ratios.windows(2) {
        let ((n1, r1, s1), (n2, r2, s2)) = (win[0], win[1]);
        let comb = (s1 * s1 + s2 * s2).sqrt();
        let ok = (r1 - r2).abs() < thresholds::COLLISION_STABILITY_SE * comb;
        pass &= ok;
        stability.push(json!({"from": n1, "to": n2, "difference": r2 - r1, "combined_se": comb, "pass": ok}));
    }
    pass &= failed.is_empty();
    Ok(ExperimentReport {
        experiment: "collision",
        pass,
        stats: json!({
            "window": [window.0, window.1],
            "per_n": per_n,
            "n_stability": stability,
            "thresholds": {"chi_square_p": thresholds::COLLISION_P, "intensity_rel": thresholds::COLLISION_REL, "stability_se": thresholds::COLLISION_STABILITY_SE},
        }),
        failed_reps: failed,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every experiment of `cfg` on a pool of `workers` threads (all cores
/// if `None`), writes the CSVs and `summary.json` to `output_dir`.
pub fn run_config(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<CampaignSummary, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let k = constants(cfg.rho).map_err(|e| ExperimentError::Invalid(format!("rho: {e}")))?;
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    let pool = b.build().map_err(|e| ExperimentError::Other(e.to_string()))?;
    let start = Instant::now();
    let reports = pool.install(|| -> Result<Vec<ExperimentReport>, ExperimentError> {
        let mut ctx = Context { cfg, k, pairs: None };
        let mut out = Vec::new();
        for e in cfg.experiments() {
            out.push(match e {
                ExperimentKind::Distance => run_distance(&mut ctx)?,
                ExperimentKind::Hopcount => run_hopcount(&mut ctx)?,
                ExperimentKind::Epidemic => run_epidemic(&mut ctx)?,
                ExperimentKind::Collision => run_collision(&mut ctx)?,
            });
        }
        Ok(out)
    })?;
    let summary = CampaignSummary {
        all_pass: reports.iter().all(|r| r.pass),
        master_seed: cfg.master_seed,
        rho: cfg.rho,
        constants: k.report(),
        reports,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    let p = cfg.output_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&json!({"config": cfg, "summary": summary}))
        .map_err(|e| ExperimentError::Other(e.to_string()))?;
    fs::write(&p, text).map_err(io_err(&p))?;
    Ok(summary)
}

pub fn run_campaign(path: &Path, workers: Option<usize>) -> Result<CampaignSummary, ExperimentError> {
    let cfg = ExperimentConfig::from_path(path)?;
    run_config(&cfg, workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> String {
        r#"{"experiment": "distance", "n_list": [1000], "rho": 2.0, "reps": 2,
            "pairs_per_graph": 5, "master_seed": 1, "output_dir": "/tmp/x"}"#
            .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(&base()).unwrap();
        assert_eq!(c.experiments(), vec![ExperimentKind::Distance]);
        assert_eq!(c.bp_reps, 10_000);
        assert_eq!(c.mgf.theta_max, 200.0);
    }

    #[test]
    fn accepts_experiment_lists() {
        let t = base().replace(r#""distance""#, r#"["hopcount", "distance", "hopcount"]"#);
        let c = ExperimentConfig::from_json(&t).unwrap();
        assert_eq!(c.experiments(), vec![ExperimentKind::Distance, ExperimentKind::Hopcount]);
    }

    #[test]
    fn unknown_key_is_named() {
        let t = base().replace(r#""rho""#, r#""rhoo""#);
        let e = ExperimentConfig::from_json(&t).unwrap_err().to_string();
        assert!(e.contains("rhoo"), "{e}");
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for (from, to) in [(r#""reps": 2"#, r#""reps": 0"#), (r#"[1000]"#, "[2]"), (r#""rho": 2.0"#, r#""rho": -1.0"#)] {
            let e = ExperimentConfig::from_json(&base().replace(from, to)).unwrap_err();
            assert!(matches!(e, ExperimentError::Invalid(_)), "{e}");
        }
    }

    #[test]
    fn limit_value_plug_in() {
        let k = constants(2.0).unwrap();
        assert!((limit_value(&k, 1.0, 1.0, 0.0) + k.c / k.lambda).abs() < 1e-15);
    }

    #[test]
    fn ratio_estimate_exact_case() {
        let (r, se) = ratio_estimate(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]);
        assert!((r - 2.0).abs() < 1e-15);
        assert!(se.abs() < 1e-15);
    }
}

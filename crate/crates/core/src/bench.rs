//! Repeated-run experiment grid: fixed vs dynamic τ, order statistics,
//! iteration-cap counts and plot-ready CSV output.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{prepare, RawData, SplitSpec};
use crate::error::{Error, Result};
use crate::network::{init_network, NetworkSpec};
use crate::trainer::{
    evaluate, train, Metrics, Mode, Speedups, StopReason, TrainerConfig, TrainingLog,
};

pub const DEFAULT_TAU_GRID: [f64; 16] = [
    0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 50.0, 100.0, 300.0, 1000.0, 5000.0, 10000.0,
];
pub const DEFAULT_REPETITIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset: String,
    pub hidden_nodes: usize,
    pub taus: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Dynamic-mode variants. Fixed mode always runs once without speed-ups.
    pub speedups: Vec<Speedups>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub split: SplitSpec,
    /// Template; τ, mode and speed-ups are overwritten per run.
    pub config: TrainerConfig,
}

impl ExperimentPlan {
    pub fn new(dataset: impl Into<String>, hidden_nodes: usize) -> Self {
        ExperimentPlan {
            dataset: dataset.into(),
            hidden_nodes,
            taus: DEFAULT_TAU_GRID.to_vec(),
            modes: vec![Mode::Fixed, Mode::Dynamic],
            speedups: vec![Speedups::Full],
            repetitions: DEFAULT_REPETITIONS,
            base_seed: 0,
            split: SplitSpec::default(),
            config: TrainerConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.taus.is_empty()
            || self.modes.is_empty()
            || self.repetitions == 0
            || self.hidden_nodes == 0
        {
            return Err(Error::InvalidArgument(
                "plan needs at least one τ, one mode, one repetition and a hidden layer".into(),
            ));
        }
        if let Some(t) = self
            .taus
            .iter()
            .find(|t| !t.is_finite() || t.abs() < self.config.tau_guard)
        {
            return Err(Error::InvalidArgument(format!(
                "initial τ {t} is not a finite value of magnitude >= {}",
                self.config.tau_guard
            )));
        }
        if self.modes.contains(&Mode::Dynamic) && self.speedups.is_empty() {
            return Err(Error::InvalidArgument(
                "dynamic mode needs at least one speed-up variant".into(),
            ));
        }
        self.config.validate()
    }

    fn cells(&self) -> Vec<(Mode, Speedups, f64)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            let variants = match mode {
                Mode::Fixed => vec![Speedups::None],
                Mode::Dynamic => self.speedups.clone(),
            };
            for s in variants {
                for &t in &self.taus {
                    out.push((mode, s, t));
                }
            }
        }
        out
    }

    pub fn run_count(&self) -> usize {
        self.cells().len() * self.repetitions
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds (base seed, τ bits, mode, repetition) through SplitMix64. Speed-up
/// variants share a seed so they start from the same split and weights.
pub fn derive_seed(base: u64, tau: f64, mode: Mode, rep: usize) -> u64 {
    let mode_code = match mode {
        Mode::Fixed => 1u64,
        Mode::Dynamic => 2,
    };
    [tau.to_bits(), mode_code, rep as u64]
        .into_iter()
        .fold(splitmix64(base), |h, v| splitmix64(h ^ v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub mode: Mode,
    pub speedups: Speedups,
    pub tau_init: f64,
    pub rep: usize,
    pub seed: u64,
    pub completed: bool,
    pub error: Option<String>,
    pub train: Option<Metrics>,
    pub validation: Option<Metrics>,
    pub test: Option<Metrics>,
    pub final_tau: f64,
    pub iterations: usize,
    pub best_iteration: usize,
    pub stop_reason: Option<StopReason>,
    pub forced_accepts: usize,
    /// First iteration whose τ is within 10% of the returned τ.
    pub tau_settle_iteration: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub log: Option<TrainingLog>,
}

pub fn tau_settle_iteration(log: &TrainingLog, final_tau: f64, tol: f64) -> Option<usize> {
    log.rows
        .iter()
        .find(|r| (r.tau - final_tau).abs() <= tol * final_tau.abs())
        .map(|r| r.iteration)
}

fn run_one(
    raw: &RawData,
    plan: &ExperimentPlan,
    mode: Mode,
    speedups: Speedups,
    tau: f64,
    rep: usize,
) -> RunRecord {
    let seed = derive_seed(plan.base_seed, tau, mode, rep);
    let mut summary = RunSummary {
        dataset: plan.dataset.clone(),
        mode,
        speedups,
        tau_init: tau,
        rep,
        seed,
        completed: false,
        error: None,
        train: None,
        validation: None,
        test: None,
        final_tau: f64::NAN,
        iterations: 0,
        best_iteration: 0,
        stop_reason: None,
        forced_accepts: 0,
        tau_settle_iteration: None,
    };
    let attempt = || -> Result<(TrainingLog, Metrics, Metrics, Metrics, f64)> {
        let data = prepare(raw, plan.split, seed)?;
        let sizes = vec![
            data.train.inputs.ncols(),
            plan.hidden_nodes,
            data.train.targets.ncols(),
        ];
        let mut spec = NetworkSpec::new(sizes, splitmix64(seed));
        spec.init_range = (-0.5, 0.5);
        let net = init_network(spec)?;
        let cfg = TrainerConfig {
            tau_init: tau,
            mode,
            speedups,
            ..plan.config.clone()
        };
        let out = train(net, &data.train, &data.validation, &cfg)?;
        let m = |d| evaluate(&out.network, out.tau, d);
        Ok((
            out.log,
            m(&data.train)?,
            m(&data.validation)?,
            m(&data.test)?,
            out.tau.value(),
        ))
    };
    match catch_unwind(AssertUnwindSafe(attempt)) {
        Ok(Ok((log, tr, va, te, t))) => {
            summary.completed = true;
            summary.train = Some(tr);
            summary.validation = Some(va);
            summary.test = Some(te);
            summary.final_tau = t;
            summary.iterations = log.iterations();
            summary.best_iteration = log.best_iteration;
            summary.stop_reason = Some(log.stop_reason);
            summary.forced_accepts = log.forced_accepts();
            summary.tau_settle_iteration = tau_settle_iteration(&log, t, 0.1);
            RunRecord {
                summary,
                log: Some(log),
            }
        }
        Ok(Err(e)) => {
            warn!("run {mode}/{speedups} τ={tau} rep {rep} failed: {e}");
            summary.error = Some(e.to_string());
            RunRecord { summary, log: None }
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            warn!("run {mode}/{speedups} τ={tau} rep {rep} panicked: {msg}");
            summary.error = Some(format!("panic: {msg}"));
            RunRecord { summary, log: None }
        }
    }
}

/// Runs every (mode, speed-up, τ, repetition) combination on a pool of
/// `jobs` threads. Output order follows the plan, not completion order.
pub fn run_plan(plan: &ExperimentPlan, raw: &RawData, jobs: usize) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let tasks: Vec<(Mode, Speedups, f64, usize)> = plan
        .cells()
        .into_iter()
        .flat_map(|(m, s, t)| (0..plan.repetitions).map(move |r| (m, s, t, r)))
        .collect();
    info!("{}: {} runs on {jobs} worker(s)", plan.dataset, tasks.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, s, t, r)| run_one(raw, plan, m, s, t, r))
            .collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// `sorted[ceil(q n) - 1]`, no interpolation.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

impl OrderStats {
    /// Statistics over the finite values; `None` when there are none.
    pub fn from_values(values: &[f64]) -> Option<OrderStats> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(OrderStats {
            n: v.len(),
            min: v[0],
            q1: nearest_rank(&v, 0.25),
            median: nearest_rank(&v, 0.5),
            q3: nearest_rank(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub mode: Mode,
    pub speedups: Speedups,
    pub tau_init: f64,
    pub runs: usize,
    pub completed: usize,
    pub cap_hits: usize,
    pub stats: std::collections::BTreeMap<String, OrderStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapHits {
    pub dataset: String,
    pub mode: Mode,
    pub speedups: Speedups,
    pub cap_hits: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub cells: Vec<CellSummary>,
    pub cap_hits: Vec<CapHits>,
}

impl GridSummary {
    pub fn cell(&self, mode: Mode, speedups: Speedups, tau: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.speedups == speedups && c.tau_init == tau)
    }
}

fn metric_columns(s: &RunSummary) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (part, m) in [
        ("train", &s.train),
        ("val", &s.validation),
        ("test", &s.test),
    ] {
        if let Some(m) = m {
            out.push((format!("{part}_e_expabs"), m.e_expabs));
            out.push((format!("{part}_mse"), m.mse));
            out.push((format!("{part}_ce"), m.ce));
            out.push((format!("{part}_rec_rate"), m.rec_rate));
        }
    }
    if s.completed {
        out.push(("final_tau".into(), s.final_tau));
        out.push(("iterations".into(), s.iterations as f64));
        out.push(("forced_accepts".into(), s.forced_accepts as f64));
        if let Some(k) = s.tau_settle_iteration {
            out.push(("tau_settle_iteration".into(), k as f64));
        }
    }
    out
}

type CellKey = (String, Mode, Speedups, u64);

fn cell_key(s: &RunSummary) -> CellKey {
    (s.dataset.clone(), s.mode, s.speedups, s.tau_init.to_bits())
}

/// Test E_ExpAbs of each run divided by the mean over completed runs of its
/// (dataset, mode, speed-up, τ) cell. NaN for failed runs.
pub fn relative_test_e_expabs(runs: &[RunSummary]) -> Vec<f64> {
    let mut sums: Vec<(CellKey, f64, usize)> = Vec::new();
    for s in runs {
        if let Some(t) = &s.test {
            let k = cell_key(s);
            match sums.iter_mut().find(|e| e.0 == k) {
                Some(e) => {
                    e.1 += t.e_expabs;
                    e.2 += 1;
                }
                None => sums.push((k, t.e_expabs, 1)),
            }
        }
    }
    runs.iter()
        .map(|s| match &s.test {
            Some(t) => {
                let k = cell_key(s);
                let e = sums.iter().find(|e| e.0 == k).unwrap();
                t.e_expabs / (e.1 / e.2 as f64)
            }
            None => f64::NAN,
        })
        .collect()
}

pub fn summarize(runs: &[RunSummary]) -> Result<GridSummary> {
    if runs.is_empty() {
        return Err(Error::Empty("run summaries"));
    }
    let rel = relative_test_e_expabs(runs);
    let mut groups: Vec<(CellKey, Vec<usize>)> = Vec::new();
    for (i, s) in runs.iter().enumerate() {
        let k = cell_key(s);
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => g.1.push(i),
            None => groups.push((k, vec![i])),
        }
    }

    let mut cells = Vec::new();
    for (_, idx) in &groups {
        let first = &runs[idx[0]];
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        for &i in idx {
            let mut values = metric_columns(&runs[i]);
            values.push(("test_e_expabs_rel".into(), rel[i]));
            for (name, v) in values {
                match columns.iter_mut().find(|c| c.0 == name) {
                    Some(c) => c.1.push(v),
                    None => columns.push((name, vec![v])),
                }
            }
        }
        let stats = columns
            .into_iter()
            .filter_map(|(name, v)| OrderStats::from_values(&v).map(|s| (name, s)))
            .collect();
        cells.push(CellSummary {
            dataset: first.dataset.clone(),
            mode: first.mode,
            speedups: first.speedups,
            tau_init: first.tau_init,
            runs: idx.len(),
            completed: idx.iter().filter(|&&i| runs[i].completed).count(),
            cap_hits: idx
                .iter()
                .filter(|&&i| runs[i].stop_reason == Some(StopReason::IterationCap))
                .count(),
            stats,
        });
    }

    let mut cap_hits: Vec<CapHits> = Vec::new();
    for c in &cells {
        match cap_hits
            .iter_mut()
            .find(|h| h.dataset == c.dataset && h.mode == c.mode && h.speedups == c.speedups)
        {
            Some(h) => {
                h.cap_hits += c.cap_hits;
                h.runs += c.runs;
            }
            None => cap_hits.push(CapHits {
                dataset: c.dataset.clone(),
                mode: c.mode,
                speedups: c.speedups,
                cap_hits: c.cap_hits,
                runs: c.runs,
            }),
        }
    }
    Ok(GridSummary { cells, cap_hits })
}

/// Settings of the Adult comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdultConfig {
    pub patience: usize,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub tau_init: f64,
    pub alpha: f64,
    pub hidden_nodes: usize,
    /// Train / validation / test sizes for the full 32561-row file.
    pub counts: [usize; 3],
}

impl Default for AdultConfig {
    fn default() -> Self {
        AdultConfig {
            patience: 500,
            eta_plus: 1.02,
            eta_minus: 0.3,
            tau_init: 10.0,
            alpha: 0.1,
            hidden_nodes: 8,
            counts: [5000, 1414, 26147],
        }
    }
}

impl AdultConfig {
    /// The configured counts when they cover `patterns` exactly, otherwise
    /// the same proportions apportioned over `patterns`.
    pub fn counts_for(&self, patterns: usize) -> [usize; 3] {
        let total: usize = self.counts.iter().sum();
        if patterns == total {
            return self.counts;
        }
        let exact: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| patterns as f64 * c as f64 / total as f64)
            .collect();
        let mut out = [0usize; 3];
        for k in 0..3 {
            out[k] = exact[k].floor() as usize;
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .partial_cmp(&(exact[a] - exact[a].floor()))
                .unwrap()
                .then(a.cmp(&b))
        });
        let short = patterns - out.iter().sum::<usize>();
        for &k in order.iter().take(short) {
            out[k] += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AdultReport {
    pub config: AdultConfig,
    pub counts: [usize; 3],
    pub plan: ExperimentPlan,
    pub runs: Vec<RunRecord>,
    /// Distribution of 1 - RecRate on the test part.
    pub test_error: Option<OrderStats>,
}

pub fn adult_comparison(
    raw: &RawData,
    cfg: &AdultConfig,
    repetitions: usize,
    base_seed: u64,
    max_iterations: usize,
    jobs: usize,
) -> Result<AdultReport> {
    if raw.labels().is_none() {
        return Err(Error::InvalidArgument(
            "the Adult comparison needs class labels".into(),
        ));
    }
    let counts = cfg.counts_for(raw.len());
    let plan = ExperimentPlan {
        dataset: "adult".into(),
        hidden_nodes: cfg.hidden_nodes,
        taus: vec![cfg.tau_init],
        modes: vec![Mode::Dynamic],
        speedups: vec![Speedups::Full],
        repetitions,
        base_seed,
        split: SplitSpec::Counts(counts),
        config: TrainerConfig {
            patience: cfg.patience,
            eta_plus: cfg.eta_plus,
            eta_minus: cfg.eta_minus,
            alpha: cfg.alpha,
            tau_init: cfg.tau_init,
            max_iterations,
            ..TrainerConfig::default()
        },
    };
    let runs = run_plan(&plan, raw, jobs)?;
    let errs: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.summary.test.map(|m| 1.0 - m.rec_rate))
        .collect();
    Ok(AdultReport {
        config: cfg.clone(),
        counts,
        test_error: OrderStats::from_values(&errs),
        plan,
        runs,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    }
}

fn fmt_tau(t: f64) -> String {
    format!("{t}")
}

pub fn log_file_name(s: &RunSummary) -> String {
    format!(
        "{}_{}_{}_tau{}_rep{}.csv",
        s.dataset,
        s.mode,
        s.speedups,
        fmt_tau(s.tau_init),
        s.rep
    )
}

/// Writes `summary.jsonl`, `runs.jsonl`, `logs/*.csv`, `tau_trajectories.csv`,
/// `metric_boxplots.csv` and `cap_hits.csv` under `out_dir`. Returns the
/// paths written.
pub fn emit_results(
    grid: &GridSummary,
    runs: &[RunRecord],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let logs_dir = out_dir.join("logs");
    fs::create_dir_all(&logs_dir).map_err(|e| Error::io(&logs_dir, e))?;
    let mut written = Vec::new();

    let summary_path = out_dir.join("summary.jsonl");
    let mut text = String::new();
    for c in &grid.cells {
        text.push_str(&serde_json::to_string(c).expect("cell serialises"));
        text.push('\n');
    }
    fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    let runs_path = out_dir.join("runs.jsonl");
    let mut text = String::new();
    for r in runs {
        text.push_str(&serde_json::to_string(&r.summary).expect("summary serialises"));
        text.push('\n');
    }
    fs::write(&runs_path, text).map_err(|e| Error::io(&runs_path, e))?;
    written.push(runs_path);

    for r in runs {
        if let Some(log) = &r.log {
            let p = logs_dir.join(log_file_name(&r.summary));
            log.save_csv(&p)?;
            written.push(p);
        }
    }

    let traj = out_dir.join("tau_trajectories.csv");
    let mut w = csv_writer(&traj)?;
    let e = csv_err(&traj);
    w.write_record([
        "dataset",
        "mode",
        "speedups",
        "tau_init",
        "rep",
        "iteration",
        "tau",
    ])
    .map_err(&e)?;
    for r in runs {
        let s = &r.summary;
        for row in r.log.iter().flat_map(|l| &l.rows) {
            w.write_record([
                s.dataset.clone(),
                s.mode.to_string(),
                s.speedups.to_string(),
                fmt_tau(s.tau_init),
                s.rep.to_string(),
                row.iteration.to_string(),
                row.tau.to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|err| Error::io(&traj, err))?;
    written.push(traj.clone());

    let boxes = out_dir.join("metric_boxplots.csv");
    let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let rel = relative_test_e_expabs(&summaries);
    let mut w = csv_writer(&boxes)?;
    let e = csv_err(&boxes);
    w.write_record([
        "dataset",
        "mode",
        "speedups",
        "tau_init",
        "rep",
        "completed",
        "test_mse",
        "test_ce",
        "test_rec_rate",
        "test_e_expabs",
        "test_e_expabs_rel",
        "final_tau",
        "iterations",
        "stop_reason",
    ])
    .map_err(&e)?;
    for (s, rel) in summaries.iter().zip(&rel) {
        let t = s.test.unwrap_or(Metrics {
            e_expabs: f64::NAN,
            mse: f64::NAN,
            ce: f64::NAN,
            rec_rate: f64::NAN,
        });
        w.write_record([
            s.dataset.clone(),
            s.mode.to_string(),
            s.speedups.to_string(),
            fmt_tau(s.tau_init),
            s.rep.to_string(),
            s.completed.to_string(),
            t.mse.to_string(),
            t.ce.to_string(),
            t.rec_rate.to_string(),
            t.e_expabs.to_string(),
            rel.to_string(),
            s.final_tau.to_string(),
            s.iterations.to_string(),
            s.stop_reason.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|err| Error::io(&boxes, err))?;
    written.push(boxes.clone());

    let caps = out_dir.join("cap_hits.csv");
    let mut w = csv_writer(&caps)?;
    let e = csv_err(&caps);
    w.write_record(["dataset", "mode", "speedups", "cap_hits", "runs"])
        .map_err(&e)?;
    for h in &grid.cap_hits {
        w.write_record([
            h.dataset.clone(),
            h.mode.to_string(),
            h.speedups.to_string(),
            h.cap_hits.to_string(),
            h.runs.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|err| Error::io(&caps, err))?;
    written.push(caps.clone());
    Ok(written)
}

//! Levenberg-Marquardt over (weights, τ) with μ adaptation, SuperSAB and
//! momentum on τ, early stopping and an iteration cap.

use std::fmt;
use std::io::Write;
use std::path::Path;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::jacobian::{pass, Pass};
use crate::measures::{
    cross_entropy, e_expabs_total, err_expabs_excess, err_expabs_from_sum, mse, recognition_rate,
    ErrorMatrix, Tau, TAU_GUARD,
};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Speedups {
    None,
    Momentum,
    /// Momentum and SuperSAB.
    Full,
}

/// When SuperSAB grows η.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupersabRule {
    /// Grow when the new τ step has the sign of Δτ (or Δτ is 0).
    Prose,
    /// Grow when Δτ * step <= 0, as the algorithm listing prints it.
    Pseudocode,
}

/// What the LM solve is least-squares over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualForm {
    /// Residuals whose squares sum to E_ExpAbs: sqrt(err_p - |τ|) per pattern
    /// plus sqrt(P|τ|), so the step is Gauss-Newton on the trained measure.
    SquareRoot,
    /// The E_ExpAbs derivative rows paired with r_p = Σ_n e_{n,p}.
    ErrorSum,
    /// One residual per output, c_p e_{n,p} with c_p² = expm1(x)/x and
    /// x = s_p/|τ|, plus sqrt(P|τ|). The squares again sum to E_ExpAbs; as
    /// |τ| grows c_p -> 1 and the weight block becomes LM on squared errors.
    /// The default.
    PerOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    GaussNewton,
    Gradient,
    ForcedAccept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    IterationCap,
}

macro_rules! display_as_serde {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = serde_json::to_value(self).map_err(|_| fmt::Error)?;
                f.write_str(s.as_str().ok_or(fmt::Error)?)
            }
        }
    )*};
}
display_as_serde!(
    Mode,
    Speedups,
    SupersabRule,
    ResidualForm,
    Branch,
    StopReason
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub mu_init: f64,
    /// μ is clamped into [mu_min, mu_max] after every update.
    pub mu_min: f64,
    pub mu_max: f64,
    pub alpha: f64,
    pub eta_init: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub tau_init: f64,
    pub tau_guard: f64,
    pub m_max: usize,
    pub max_iterations: usize,
    pub patience: usize,
    pub mode: Mode,
    pub speedups: Speedups,
    pub supersab_rule: SupersabRule,
    pub residual: ResidualForm,
    /// Dynamic mode with the τ row zeroed; τ never moves.
    pub freeze_tau: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mu_init: 1.0,
            mu_min: 1e-4,
            mu_max: 1e12,
            alpha: 0.1,
            eta_init: 1.0,
            eta_plus: 1.05,
            eta_minus: 0.5,
            tau_init: 1.0,
            tau_guard: TAU_GUARD,
            m_max: 5,
            max_iterations: 5000,
            patience: 200,
            mode: Mode::Dynamic,
            speedups: Speedups::Full,
            supersab_rule: SupersabRule::Prose,
            residual: ResidualForm::PerOutput,
            freeze_tau: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eta_plus > 1.0) {
            return bad(format!("eta_plus must exceed 1, got {}", self.eta_plus));
        }
        if !(self.eta_minus > 0.0 && self.eta_minus < 1.0) {
            return bad(format!(
                "eta_minus must lie in (0, 1), got {}",
                self.eta_minus
            ));
        }
        if !(self.eta_init > 0.0 && self.eta_init.is_finite()) {
            return bad(format!("eta_init must be positive, got {}", self.eta_init));
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu_init && self.mu_init <= self.mu_max) {
            return bad(format!(
                "need 0 < mu_min <= mu_init <= mu_max, got {} / {} / {}",
                self.mu_min, self.mu_init, self.mu_max
            ));
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        if self.m_max == 0 || self.max_iterations == 0 || self.patience == 0 {
            return bad("m_max, max_iterations and patience must be at least 1".into());
        }
        Tau::with_guard(self.tau_init, self.tau_guard)?;
        Ok(())
    }

    fn moves_tau(&self) -> bool {
        self.mode == Mode::Dynamic && !self.freeze_tau
    }
}

/// Solves (J Jᵀ + μI) δ = J r for a parameters x residuals Jacobian.
pub fn lm_step(j: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    if j.ncols() != r.len() {
        return Err(Error::DimensionMismatch {
            expected: j.ncols(),
            actual: r.len(),
        });
    }
    let normal = j * j.transpose();
    let g = j * r;
    solve_damped(j, r, &normal, &g, mu)
}

fn svd_step(j: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> DVector<f64> {
    let nan = || DVector::from_element(j.nrows(), f64::NAN);
    let Some(svd) = j.transpose().try_svd(true, true, f64::EPSILON, 0) else {
        return nan();
    };
    let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) else {
        return nan();
    };
    // singular values under the numerical rank cut are rounding noise
    let cut = svd.singular_values.max() * j.nrows().max(j.ncols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    if mu <= 0.0 && rank < j.nrows() {
        return nan();
    }
    let mut coef = u.transpose() * r;
    for (c, &s) in coef.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > cut { *c * s / (s * s + mu) } else { 0.0 };
    }
    v_t.transpose() * coef
}

fn solve_damped(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    normal: &DMatrix<f64>,
    g: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    let mut a = normal.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += mu;
    }
    let step = match a.cholesky() {
        Some(c) => c.solve(g),
        // Badly scaled systems (entries far above μ) lose definiteness to
        // rounding once squared. With Jᵀ = U S Vᵀ the same step is
        // V S (S² + μ)⁻¹ Uᵀ r, which never forms J Jᵀ.
        None => svd_step(j, r, mu),
    };
    if step.iter().all(|v| v.is_finite()) {
        Ok(step)
    } else {
        Err(Error::Training(format!(
            "damped normal equations could not be solved at μ = {mu}"
        )))
    }
}

/// `[w; τ] - step`. Without a τ component the τ value is returned unchanged.
pub fn lm_candidate(net: &Network, tau: f64, step: &DVector<f64>) -> Result<(Network, f64)> {
    let w = net.weight_count();
    if step.len() != w && step.len() != w + 1 {
        return Err(Error::DimensionMismatch {
            expected: w + 1,
            actual: step.len(),
        });
    }
    let cand = net.stepped(step.as_slice());
    let t = if step.len() == w + 1 {
        tau - step[w]
    } else {
        tau
    };
    Ok((cand, t))
}

/// τ state carried between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauState {
    pub tau: f64,
    pub delta_tau: f64,
    pub eta: f64,
}

/// τ_{k+1} = η (τ_{k+1} - τ_k) + τ_k.
pub fn supersab_scale(tau_k: f64, tau_candidate: f64, eta: f64) -> f64 {
    eta * (tau_candidate - tau_k) + tau_k
}

/// τ + α Δτ.
pub fn momentum_tau(tau: f64, delta_tau: f64, alpha: f64) -> f64 {
    tau + alpha * delta_tau
}

/// η and Δτ after an accepted step `d = τ_{k+1} - τ_k`.
pub fn supersab_update(
    delta_tau: f64,
    eta: f64,
    d: f64,
    rule: SupersabRule,
    eta_plus: f64,
    eta_minus: f64,
) -> (f64, f64) {
    let grow = match rule {
        SupersabRule::Prose => delta_tau == 0.0 || delta_tau * d > 0.0,
        SupersabRule::Pseudocode => delta_tau * d <= 0.0,
    };
    if grow {
        (eta * eta_plus, d)
    } else {
        (eta * eta_minus, 0.0)
    }
}

/// Applies SuperSAB scaling to a raw LM τ candidate. Returns the scaled
/// candidate; η and Δτ change only once the step is accepted, see
/// [`supersab_update`].
pub fn supersab_tau(state: &TauState, tau_candidate: f64) -> f64 {
    supersab_scale(state.tau, tau_candidate, state.eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStopCheck {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation value; stops after `patience` checks without
/// a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub counter: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            counter: 0,
        }
    }

    pub fn check(&mut self, value: f64) -> EarlyStopCheck {
        if value < self.best {
            self.best = value;
            self.counter = 0;
            EarlyStopCheck::Improved
        } else {
            self.counter += 1;
            if self.counter >= self.patience {
                EarlyStopCheck::Stop
            } else {
                EarlyStopCheck::Continue
            }
        }
    }
}

/// Outcome of the μ loop for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuDecision {
    Accept(Branch),
    Retry,
}

/// μ bookkeeping for one candidate comparison. `failures` counts earlier
/// rejected candidates in this iteration.
pub fn mu_adapt_accept(
    mu: &mut f64,
    e_new: f64,
    e_old: f64,
    failures: usize,
    cfg: &TrainerConfig,
) -> MuDecision {
    if e_new <= e_old {
        *mu = (*mu / 10.0).max(cfg.mu_min);
        MuDecision::Accept(if failures == 0 {
            Branch::GaussNewton
        } else {
            Branch::Gradient
        })
    } else if failures + 1 < cfg.m_max {
        *mu = (*mu * 10.0).min(cfg.mu_max);
        MuDecision::Retry
    } else {
        MuDecision::Accept(Branch::ForcedAccept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub e_expabs: f64,
    pub mse: f64,
    pub ce: f64,
    pub rec_rate: f64,
    pub tau: f64,
    pub mu: f64,
    pub eta: f64,
    pub branch: Branch,
    pub val_e_expabs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub stop_reason: StopReason,
    /// Iteration whose weights were returned.
    pub best_iteration: usize,
}

impl TrainingLog {
    pub fn forced_accepts(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.branch == Branch::ForcedAccept)
            .count()
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    /// CSV with a header row; `stop_reason` is filled on the last row only.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Training(format!("log write failed: {e}"));
        w.write_record([
            "iteration",
            "e_expabs",
            "mse",
            "ce",
            "rec_rate",
            "tau",
            "mu",
            "eta",
            "branch",
            "val_e_expabs",
            "stop_reason",
        ])
        .map_err(to_err)?;
        let last = self.rows.len().saturating_sub(1);
        for (i, r) in self.rows.iter().enumerate() {
            let stop = if i == last {
                self.stop_reason.to_string()
            } else {
                String::new()
            };
            w.write_record([
                r.iteration.to_string(),
                r.e_expabs.to_string(),
                r.mse.to_string(),
                r.ce.to_string(),
                r.rec_rate.to_string(),
                r.tau.to_string(),
                r.mu.to_string(),
                r.eta.to_string(),
                r.branch.to_string(),
                r.val_e_expabs.to_string(),
                stop,
            ])
            .map_err(to_err)?;
        }
        w.flush()
            .map_err(|e| Error::Training(format!("log write failed: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Measures of a network on one dataset. CE and RecRate are NaN for
/// regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub e_expabs: f64,
    pub mse: f64,
    pub ce: f64,
    pub rec_rate: f64,
}

fn metrics_from_outputs(outputs: &DMatrix<f64>, data: &Dataset, tau: Tau) -> Result<Metrics> {
    let errors = ErrorMatrix::from_outputs(&data.targets, outputs)?;
    let (ce, rr) = if data.is_classification() {
        (
            cross_entropy(&data.targets, outputs)?,
            recognition_rate(outputs, &data.targets)?,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(Metrics {
        e_expabs: e_expabs_total(&errors, tau),
        mse: mse(&errors)?,
        ce,
        rec_rate: rr,
    })
}

pub fn evaluate(net: &Network, tau: Tau, data: &Dataset) -> Result<Metrics> {
    let outputs = net.predict(&data.inputs)?;
    metrics_from_outputs(&outputs, data, tau)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub tau: Tau,
    pub log: TrainingLog,
}

/// Least-squares system for the configured residual form. Returns a
/// parameters x residuals matrix and the residuals.
fn residual_system(
    p: &Pass,
    tau: Tau,
    form: ResidualForm,
    with_tau: bool,
) -> (DMatrix<f64>, DVector<f64>) {
    let rows = if with_tau {
        p.jacobian.nrows()
    } else {
        p.jacobian.nrows() - 1
    };
    let n = p.jacobian.ncols();
    match form {
        ResidualForm::ErrorSum => (p.jacobian.rows(0, rows).into_owned(), p.residual.clone()),
        ResidualForm::PerOutput => per_output_system(p, tau, with_tau),
        ResidualForm::SquareRoot => {
            let extra = usize::from(with_tau);
            let mut j = DMatrix::zeros(rows, n + extra);
            let mut r = DVector::zeros(n + extra);
            for c in 0..n {
                let rho = err_expabs_excess(p.sum_sq[c], tau).max(0.0).sqrt();
                if !(rho > 1e-150) {
                    continue;
                }
                r[c] = rho;
                let scale = 1.0 / (2.0 * rho);
                let src = p.jacobian.column(c);
                let mut dst = j.column_mut(c);
                for k in 0..rows {
                    dst[k] = src[k] * scale;
                }
                if with_tau {
                    dst[rows - 1] = (src[rows - 1] - tau.signum()) * scale;
                }
            }
            if with_tau {
                let pf = n as f64;
                r[n] = (pf * tau.abs()).sqrt();
                j[(rows - 1, n)] = tau.signum() * pf.sqrt() / (2.0 * tau.abs().sqrt());
            }
            (j, r)
        }
    }
}

/// Largest per-output scale; its square times a bounded Jacobian entry must
/// still sum to a finite normal matrix.
const SCALE_CAP: f64 = 1e100;

/// c(x) = sqrt(expm1(x)/x) and c'(x) for the per-output residuals. Past
/// saturation or the cap the scale is frozen.
fn output_scale(sum_sq: f64, tau: Tau) -> (f64, f64) {
    if sum_sq == 0.0 {
        return (1.0, 0.25);
    }
    let (_, saturated) = err_expabs_from_sum(sum_sq, tau);
    let excess = err_expabs_excess(sum_sq, tau);
    let c = (excess / sum_sq).sqrt();
    if saturated || !(c < SCALE_CAP) {
        return (SCALE_CAP.min(c), 0.0);
    }
    let x = sum_sq / tau.abs();
    // φ(x) = expm1(x)/x, φ' by series near 0 where the closed form cancels.
    let dphi = if x < 1e-2 {
        0.5 + x / 3.0 + x * x / 8.0 + x.powi(3) / 30.0 + x.powi(4) / 144.0 + x.powi(5) / 840.0
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    };
    (c, (dphi / (2.0 * c)).min(SCALE_CAP))
}

fn per_output_system(p: &Pass, tau: Tau, with_tau: bool) -> (DMatrix<f64>, DVector<f64>) {
    let oj = p
        .output_jacobian
        .as_ref()
        .expect("per-output residuals need the output Jacobian");
    let w = oj.nrows();
    let (patterns, n_out) = p.errors.shape();
    let rows = w + usize::from(with_tau);
    let n = patterns * n_out;
    let mut j = DMatrix::zeros(rows, n + usize::from(with_tau));
    let mut r = DVector::zeros(n + usize::from(with_tau));
    let a = tau.abs();
    let mut ds = DVector::zeros(w);
    for q in 0..patterns {
        let (c, dc) = output_scale(p.sum_sq[q], tau);
        let x = p.sum_sq[q] / a;
        // ∂s/∂w = -2 Σ_n e_n ∂o_n/∂w
        ds.fill(0.0);
        for k in 0..n_out {
            ds.axpy(-2.0 * p.errors[(q, k)], &oj.column(q * n_out + k), 1.0);
        }
        for k in 0..n_out {
            let e = p.errors[(q, k)];
            let col = q * n_out + k;
            r[col] = c * e;
            let mut dst = j.column_mut(col);
            for i in 0..w {
                dst[i] = -c * oj[(i, col)] + e * dc * ds[i] / a;
            }
            if with_tau {
                dst[w] = -e * dc * x * tau.signum() / a;
            }
        }
    }
    if with_tau {
        let pf = patterns as f64;
        r[n] = (pf * a).sqrt();
        j[(w, n)] = tau.signum() * pf.sqrt() / (2.0 * a.sqrt());
    }
    (j, r)
}

fn check_data(net: &Network, data: &Dataset, what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(what));
    }
    if data.inputs.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            actual: data.inputs.ncols(),
        });
    }
    if data.targets.ncols() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            actual: data.targets.ncols(),
        });
    }
    Ok(())
}

pub fn train(
    net: Network,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(&net, train_set, "training set")?;
    check_data(&net, validation, "validation set")?;

    let guard = cfg.tau_guard;
    let moves_tau = cfg.moves_tau();
    let mut ts = TauState {
        tau: cfg.tau_init,
        delta_tau: 0.0,
        eta: cfg.eta_init,
    };
    let mut mu = cfg.mu_init;
    let mut net = net;
    let mut tau = Tau::with_guard(cfg.tau_init, guard)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (net.clone(), tau, 0usize);
    let mut rows = Vec::new();
    let mut stop_reason = StopReason::IterationCap;

    let per_output = cfg.residual == ResidualForm::PerOutput;
    let mut current = pass(&net, &train_set.inputs, &train_set.targets, tau, per_output);
    let mut e_cur: f64 = current.err.sum();

    for k in 1..=cfg.max_iterations {
        let (j, r) = residual_system(&current, tau, cfg.residual, moves_tau);
        let normal = &j * j.transpose();
        let g = &j * &r;

        let mut failures = 0;
        let (branch, cand_net, cand_tau, cand_e, cand_out) = loop {
            let solved = solve_damped(&j, &r, &normal, &g, mu);
            let candidate = match solved {
                Ok(step) => {
                    let (cn, raw_tau) = lm_candidate(&net, ts.tau, &step)?;
                    let mut t = raw_tau;
                    if moves_tau {
                        if cfg.speedups == Speedups::Full {
                            t = supersab_tau(&ts, t);
                        }
                        if cfg.speedups != Speedups::None {
                            t = momentum_tau(t, ts.delta_tau, cfg.alpha);
                        }
                        // E_ExpAbs only sees |τ|; keep the sign so Δτ and
                        // SuperSAB compare like with like.
                        if t.signum() != ts.tau.signum() {
                            t = -t;
                        }
                    }
                    let t = Tau::projected(t, guard);
                    if cn.all_finite() && t.value().is_finite() {
                        let out = cn.predict(&train_set.inputs)?;
                        let errors = ErrorMatrix::from_outputs(&train_set.targets, &out)?;
                        let e = e_expabs_total(&errors, t);
                        Some((cn, t, e, out))
                    } else {
                        None
                    }
                }
                Err(_) => None,
            };
            let e_new = candidate.as_ref().map_or(f64::NAN, |c| c.2);
            let decision = if e_new.is_nan() {
                if failures + 1 < cfg.m_max {
                    mu = (mu * 10.0).min(cfg.mu_max);
                    MuDecision::Retry
                } else {
                    return Err(Error::Training(format!(
                        "iteration {k}: no finite candidate after {} attempts (μ = {mu:e})",
                        cfg.m_max
                    )));
                }
            } else {
                mu_adapt_accept(&mut mu, e_new, e_cur, failures, cfg)
            };
            match decision {
                MuDecision::Retry => failures += 1,
                MuDecision::Accept(b) => {
                    let (cn, t, e, out) = candidate.unwrap();
                    break (b, cn, t, e, out);
                }
            }
        };

        if moves_tau && branch != Branch::ForcedAccept {
            let d = cand_tau.value() - ts.tau;
            match cfg.speedups {
                Speedups::Full => {
                    let (eta, dt) = supersab_update(
                        ts.delta_tau,
                        ts.eta,
                        d,
                        cfg.supersab_rule,
                        cfg.eta_plus,
                        cfg.eta_minus,
                    );
                    ts.eta = eta;
                    ts.delta_tau = dt;
                }
                Speedups::Momentum => ts.delta_tau = d,
                Speedups::None => {}
            }
        }
        net = cand_net;
        tau = cand_tau;
        ts.tau = tau.value();
        e_cur = cand_e;

        let m = metrics_from_outputs(&cand_out, train_set, tau)?;
        let val = evaluate(&net, tau, validation)?.e_expabs;
        rows.push(LogRow {
            iteration: k,
            e_expabs: cand_e,
            mse: m.mse,
            ce: m.ce,
            rec_rate: m.rec_rate,
            tau: tau.value(),
            mu,
            eta: ts.eta,
            branch,
            val_e_expabs: val,
        });

        match stopper.check(val) {
            EarlyStopCheck::Improved => best = (net.clone(), tau, k),
            EarlyStopCheck::Continue => {}
            EarlyStopCheck::Stop => {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
        if k < cfg.max_iterations {
            current = pass(&net, &train_set.inputs, &train_set.targets, tau, per_output);
        }
    }

    let (network, tau, best_iteration) = best;
    debug!(
        "stopped after {} iterations ({stop_reason}), best at {best_iteration}, τ = {}",
        rows.len(),
        tau.value()
    );
    Ok(TrainOutcome {
        network,
        tau,
        log: TrainingLog {
            rows,
            stop_reason,
            best_iteration,
        },
    })
}

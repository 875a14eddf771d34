//! Derivatives of the per-pattern E_ExpAbs error and the extended Jacobian.
//!
//! The Jacobian is stored parameters x patterns: `(W+1) x P`, column `p` for
//! pattern `p`, weight rows in the canonical order of [`Network::flatten`] and
//! the last row for τ.
//!
//! Index conventions for the per-edge helpers: `n_prev` addresses a row of
//! the weight matrix, so 0 is the bias unit and `k >= 1` is node `k-1` of
//! layer `l-1`. `n_l` is the 0-based destination node of layer `l`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measures::{err_expabs_from_sum, Tau, ERR_SATURATION};
use crate::network::{ForwardTrace, Network};

/// Rows are parameters (weights then τ), columns are patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedJacobian {
    pub matrix: DMatrix<f64>,
}

/// r_p = Σ_n e_{n,p}.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub r: DVector<f64>,
}

#[inline]
fn bounded(v: f64) -> f64 {
    v.clamp(-ERR_SATURATION, ERR_SATURATION)
}

/// exp(s/|τ|), capped so that |τ| exp(...) stays at the saturation value.
#[inline]
fn capped_exp(sum_sq: f64, tau: Tau) -> f64 {
    let a = tau.abs();
    let x = (sum_sq / a).min((ERR_SATURATION / a).ln());
    x.exp()
}

fn sum_sq(e_p: &[f64]) -> f64 {
    e_p.iter().map(|v| v * v).sum()
}

fn d_tau_from_sum(s: f64, tau: Tau) -> f64 {
    bounded(tau.signum() * capped_exp(s, tau) * (1.0 - s / tau.abs()))
}

/// ∂err_p/∂τ = sign(τ) exp(s/|τ|) (1 - s/|τ|).
pub fn d_err_d_tau(e_p: &[f64], tau: Tau) -> f64 {
    d_tau_from_sum(sum_sq(e_p), tau)
}

/// ∂err_p/∂o_n = -2 exp(s/|τ|) e_n.
pub fn d_err_d_output(e_p: &[f64], tau: Tau, n: usize) -> Result<f64> {
    let e_n = *e_p
        .get(n)
        .ok_or_else(|| Error::IndexOutOfRange(format!("output {n} of {}", e_p.len())))?;
    Ok(bounded(-2.0 * capped_exp(sum_sq(e_p), tau) * e_n))
}

fn check_edge(net: &Network, l: usize, n_l: usize, n_prev: usize) -> Result<()> {
    if l == 0 || l > net.depth() {
        return Err(Error::IndexOutOfRange(format!(
            "layer {l} of 1..={}",
            net.depth()
        )));
    }
    let w = net.layer(l);
    if n_prev >= w.nrows() || n_l >= w.ncols() {
        return Err(Error::IndexOutOfRange(format!(
            "edge ({n_prev}, {n_l}) in layer {l} with shape {:?}",
            w.shape()
        )));
    }
    Ok(())
}

/// ∂o^l_{n_l}/∂o^{l-1}_{n_prev} = o (1 - o) w^l[n_prev, n_l], with `o` the
/// post-activation output.
pub fn layer_output_derivative(
    trace: &ForwardTrace,
    net: &Network,
    l: usize,
    n_l: usize,
    n_prev: usize,
) -> Result<f64> {
    check_edge(net, l, n_l, n_prev)?;
    let o = trace.activations[l][n_l];
    Ok(o * (1.0 - o) * net.layer(l)[(n_prev, n_l)])
}

/// ∂o^l_{n_l}/∂w^l[n_prev, n_l] = o (1 - o) o^{l-1}_{n_prev}.
pub fn weight_derivative(
    trace: &ForwardTrace,
    net: &Network,
    l: usize,
    n_prev: usize,
    n_l: usize,
) -> Result<f64> {
    check_edge(net, l, n_l, n_prev)?;
    let o = trace.activations[l][n_l];
    Ok(o * (1.0 - o) * trace.with_bias(l - 1, n_prev))
}

/// Everything one sweep over a batch produces.
#[derive(Debug, Clone)]
pub(crate) struct Pass {
    /// `(W+1) x P`; the τ row is last.
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub err: DVector<f64>,
    pub sum_sq: DVector<f64>,
    /// `P x N_L` errors t - o.
    pub errors: DMatrix<f64>,
    /// `W x (P N_L)`, column `p N_L + n` holding ∂o_{p,n}/∂w. Only filled on request.
    pub output_jacobian: Option<DMatrix<f64>>,
}

/// Backpropagates `grad` (∂·/∂o of the output layer) for pattern `p` and
/// writes the weight derivatives into `col`.
fn backprop(
    net: &Network,
    acts: &[DMatrix<f64>],
    offsets: &[usize],
    p: usize,
    grad: &mut [f64],
    delta: &mut [f64],
    col: &mut [f64],
) {
    for l in (1..=net.depth()).rev() {
        let w = net.layer(l);
        let here = &acts[l];
        let below = &acts[l - 1];
        let cols = w.ncols();
        for j in 0..cols {
            let o = here[(p, j)];
            delta[j] = bounded(grad[j] * o * (1.0 - o));
        }
        let base = offsets[l - 1];
        col[base..base + cols].copy_from_slice(&delta[..cols]);
        for i in 1..w.nrows() {
            let o_prev = below[(p, i - 1)];
            let row = base + i * cols;
            for j in 0..cols {
                col[row + j] = bounded(delta[j] * o_prev);
            }
        }
        if l > 1 {
            for i in 1..w.nrows() {
                let mut g = 0.0;
                for j in 0..cols {
                    g += delta[j] * w[(i, j)];
                }
                grad[i - 1] = bounded(g);
            }
        }
    }
}

pub(crate) fn pass(
    net: &Network,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    tau: Tau,
    per_output: bool,
) -> Pass {
    let acts = net.forward_batch_unchecked(inputs);
    let p_count = inputs.nrows();
    let w_count = net.weight_count();
    let depth = net.depth();
    let n_out = net.output_dim();
    let mut jac = DMatrix::zeros(w_count + 1, p_count);
    let mut out_jac = per_output.then(|| DMatrix::zeros(w_count, p_count * n_out));
    let mut residual = DVector::zeros(p_count);
    let mut err = DVector::zeros(p_count);
    let mut sums = DVector::zeros(p_count);
    let errors = targets - &acts[depth];

    let offsets: Vec<usize> = net
        .layers()
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.len();
            Some(o)
        })
        .collect();
    let widest = net.layer_sizes().iter().copied().max().unwrap();
    let mut grad = vec![0.0; widest];
    let mut delta = vec![0.0; widest];

    for p in 0..p_count {
        let e: Vec<f64> = errors.row(p).iter().copied().collect();
        let s = sum_sq(&e);
        err[p] = err_expabs_from_sum(s, tau).0;
        sums[p] = s;
        residual[p] = e.iter().sum();

        let ex = capped_exp(s, tau);
        for (n, g) in grad.iter_mut().take(n_out).enumerate() {
            *g = bounded(-2.0 * ex * e[n]);
        }
        let mut col = jac.column_mut(p);
        backprop(
            net,
            &acts,
            &offsets,
            p,
            &mut grad,
            &mut delta,
            &mut col.as_mut_slice()[..w_count],
        );
        jac[(w_count, p)] = d_tau_from_sum(s, tau);

        if let Some(oj) = out_jac.as_mut() {
            for n in 0..n_out {
                grad[..n_out].fill(0.0);
                grad[n] = 1.0;
                let mut col = oj.column_mut(p * n_out + n);
                backprop(
                    net,
                    &acts,
                    &offsets,
                    p,
                    &mut grad,
                    &mut delta,
                    col.as_mut_slice(),
                );
            }
        }
    }

    Pass {
        jacobian: jac,
        residual,
        err,
        sum_sq: sums,
        errors,
        output_jacobian: out_jac,
    }
}

pub fn build_extended_jacobian(
    net: &Network,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    tau: Tau,
) -> Result<(ExtendedJacobian, ResidualVector)> {
    if inputs.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    if inputs.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            actual: inputs.ncols(),
        });
    }
    if targets.shape() != (inputs.nrows(), net.output_dim()) {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows() * net.output_dim(),
            actual: targets.len(),
        });
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch"));
    }
    let p = pass(net, inputs, targets, tau, false);
    Ok((
        ExtendedJacobian { matrix: p.jacobian },
        ResidualVector { r: p.residual },
    ))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

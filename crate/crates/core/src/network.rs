//! Fully connected sigmoid MLP.
//!
//! Layer `l` (1..=L) owns a `(N_{l-1}+1) x N_l` weight matrix. Row 0 is the
//! bias: node 0 of every non-output layer is a constant unit with output 1.
//! Parameters are flattened layer-major, then by source row, then by
//! destination column. The Jacobian uses the same order.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest f64 below 1. Sigmoid outputs are clamped into
/// `[f64::MIN_POSITIVE, ONE_BELOW]` so they stay strictly inside (0, 1).
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub init_range: (f64, f64),
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Self {
        NetworkSpec {
            layer_sizes,
            seed,
            init_range: (-0.5, 0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least an input and an output layer, got {} layer(s)",
                self.layer_sizes.len()
            )));
        }
        if let Some(l) = self.layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidSpec(format!("layer {l} has zero nodes")));
        }
        let (lo, hi) = self.init_range;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidSpec(format!(
                "init range [{lo}, {hi}] is not a finite interval"
            )));
        }
        Ok(())
    }

    /// W = sum over layers of (N_{l-1}+1) * N_l.
    pub fn weight_count(&self) -> usize {
        weight_count(&self.layer_sizes)
    }
}

pub fn weight_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: Vec<DMatrix<f64>>,
}

/// Activations of every layer for one pattern. `activations[0]` is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub activations: Vec<DVector<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DVector<f64> {
        self.activations
            .last()
            .expect("trace has at least two layers")
    }

    /// Output of node `n` in layer `l` with the bias convention applied:
    /// index 0 is the constant 1, index `k >= 1` is node `k-1`.
    pub fn with_bias(&self, l: usize, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.activations[l][n - 1]
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

pub fn init_network(spec: NetworkSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.init_range;
    let dist = Uniform::new_inclusive(lo, hi);
    let weights = spec
        .layer_sizes
        .windows(2)
        .map(|w| DMatrix::from_fn(w[0] + 1, w[1], |_, _| dist.sample(&mut rng)))
        .collect();
    Ok(Network { spec, weights })
}

impl Network {
    /// Builds a network from explicit weight matrices.
    pub fn from_weights(spec: NetworkSpec, weights: Vec<DMatrix<f64>>) -> Result<Network> {
        spec.validate()?;
        if weights.len() + 1 != spec.layer_sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.layer_sizes.len() - 1,
                actual: weights.len(),
            });
        }
        for (m, w) in weights.iter().zip(spec.layer_sizes.windows(2)) {
            if m.shape() != (w[0] + 1, w[1]) {
                return Err(Error::InvalidSpec(format!(
                    "weight matrix {:?} does not match layer pair {:?}",
                    m.shape(),
                    (w[0], w[1])
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("weights"));
            }
        }
        Ok(Network { spec, weights })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.spec.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_sizes.last().unwrap()
    }

    /// Number of weight layers, L.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Weight matrix of layer `l`, 1-based as in the layer notation.
    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.weights[l - 1]
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn weight_count(&self) -> usize {
        self.spec.weight_count()
    }

    /// Flat offset of `w^l[src, dst]` in canonical order.
    pub fn weight_index(&self, l: usize, src: usize, dst: usize) -> usize {
        let before: usize = self.weights[..l - 1].iter().map(|m| m.len()).sum();
        before + src * self.weights[l - 1].ncols() + dst
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weight_count());
        for m in &self.weights {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.push(m[(r, c)]);
                }
            }
        }
        out
    }

    pub fn unflatten(&self, params: &[f64]) -> Result<Network> {
        if params.len() != self.weight_count() {
            return Err(Error::DimensionMismatch {
                expected: self.weight_count(),
                actual: params.len(),
            });
        }
        let mut net = self.clone();
        net.set_params(params);
        Ok(net)
    }

    /// Overwrites weights from a canonical flat slice. Length must be W.
    pub(crate) fn set_params(&mut self, params: &[f64]) {
        let mut i = 0;
        for m in &mut self.weights {
            let cols = m.ncols();
            for r in 0..m.nrows() {
                for c in 0..cols {
                    m[(r, c)] = params[i];
                    i += 1;
                }
            }
        }
    }

    /// `w - step[..W]` into a new network.
    pub(crate) fn stepped(&self, step: &[f64]) -> Network {
        let mut net = self.clone();
        let mut i = 0;
        for m in &mut net.weights {
            let cols = m.ncols();
            for r in 0..m.nrows() {
                for c in 0..cols {
                    m[(r, c)] -= step[i];
                    i += 1;
                }
            }
        }
        net
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input"));
        }
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(DVector::from_column_slice(input));
        for w in &self.weights {
            let prev = activations.last().unwrap();
            let next = DVector::from_fn(w.ncols(), |j, _| {
                let mut z = w[(0, j)];
                for (i, o) in prev.iter().enumerate() {
                    z += w[(i + 1, j)] * o;
                }
                sigmoid(z)
            });
            activations.push(next);
        }
        Ok(ForwardTrace { activations })
    }

    /// Forward pass for a `P x N_0` batch. Returns one `P x N_l` matrix per
    /// layer, the input included.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input"));
        }
        Ok(self.forward_batch_unchecked(inputs))
    }

    pub(crate) fn forward_batch_unchecked(&self, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(inputs.clone());
        for w in &self.weights {
            let prev: &DMatrix<f64> = acts.last().unwrap();
            let body = w.rows(1, w.nrows() - 1);
            let mut z = prev * body;
            for mut row in z.row_iter_mut() {
                row += w.row(0);
            }
            z.apply(|v| *v = sigmoid(*v));
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(inputs)?.pop().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn net(sizes: &[usize], seed: u64) -> Network {
        init_network(NetworkSpec::new(sizes.to_vec(), seed)).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = net(&[4, 7, 3], 42);
        let b = net(&[4, 7, 3], 42);
        assert_eq!(a.flatten(), b.flatten());
        assert_ne!(a.flatten(), net(&[4, 7, 3], 43).flatten());
    }

    #[test]
    fn iris_shapes() {
        let n = net(&[4, 7, 3], 42);
        assert_eq!(n.layer(1).shape(), (5, 7));
        assert_eq!(n.layer(2).shape(), (8, 3));
        assert_eq!(n.weight_count(), 59);
    }

    #[test]
    fn degenerate_range_gives_zero_net() {
        let mut spec = NetworkSpec::new(vec![3, 2, 2], 1);
        spec.init_range = (0.0, 0.0);
        let n = init_network(spec).unwrap();
        assert!(n.flatten().iter().all(|&w| w == 0.0));
        let t = n.forward(&[0.3, -4.0, 9.0]).unwrap();
        for l in 1..3 {
            assert!(t.activations[l].iter().all(|&o| o == 0.5));
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(init_network(NetworkSpec::new(vec![3], 0)).is_err());
        assert!(init_network(NetworkSpec::new(vec![3, 0, 1], 0)).is_err());
        assert!(init_network(NetworkSpec::new(vec![], 0)).is_err());
    }

    #[test]
    fn scalar_chain_by_hand() {
        // 1-1 net, bias 0.25, weight 1: o = 1/(1+exp(-(0.25 + x)))
        let spec = NetworkSpec::new(vec![1, 1], 0);
        let w = DMatrix::from_row_slice(2, 1, &[0.25, 1.0]);
        let n = Network::from_weights(spec, vec![w]).unwrap();
        let o = n.forward(&[0.0]).unwrap().output()[0];
        assert_relative_eq!(o, 0.562_176_500_885_798_1, epsilon = 1e-15);
        let o = n.forward(&[2.0]).unwrap().output()[0];
        assert_relative_eq!(o, 1.0 / (1.0 + (-2.25f64).exp()), epsilon = 1e-15);
    }

    #[test]
    fn forward_errors() {
        let n = net(&[2, 2], 0);
        assert!(matches!(
            n.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            n.forward(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn saturated_sigmoid_stays_open() {
        assert!(sigmoid(1e4) < 1.0);
        assert!(sigmoid(-1e4) > 0.0);
    }

    #[test]
    fn weight_index_matches_flatten() {
        let n = net(&[3, 4, 2], 5);
        let flat = n.flatten();
        assert_eq!(flat[n.weight_index(2, 3, 1)], n.layer(2)[(3, 1)]);
        assert_eq!(flat[n.weight_index(1, 0, 0)], n.layer(1)[(0, 0)]);
    }

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), h in 1usize..6, i in 1usize..5, o in 1usize..4) {
            let n = net(&[i, h, o], seed);
            let back = n.unflatten(&n.flatten()).unwrap();
            prop_assert_eq!(back, n);
        }

        #[test]
        fn outputs_in_open_unit_interval(
            seed in any::<u64>(),
            x in prop::collection::vec(-50.0f64..50.0, 3),
        ) {
            let mut spec = NetworkSpec::new(vec![3, 5, 2], seed);
            spec.init_range = (-20.0, 20.0);
            let n = init_network(spec).unwrap();
            let t = n.forward(&x).unwrap();
            prop_assert_eq!(t.activations[0].as_slice(), &x[..]);
            for l in 1..3 {
                prop_assert!(t.activations[l].iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        #[test]
        fn bias_equals_constant_feature(
            seed in any::<u64>(),
            x in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            // Moving the bias into an explicit always-1 input changes nothing.
            let n = net(&[2, 3], seed);
            let w = n.layer(1);
            let mut aug = DMatrix::zeros(4, 3);
            aug.rows_mut(1, 3).copy_from(w);
            let spec = NetworkSpec::new(vec![3, 3], 0);
            let explicit = Network::from_weights(spec, vec![aug]).unwrap();
            let a = n.forward(&x).unwrap();
            let b = explicit.forward(&[1.0, x[0], x[1]]).unwrap();
            for j in 0..3 {
                prop_assert!((a.output()[j] - b.output()[j]).abs() < 1e-15);
            }
        }

        #[test]
        fn batch_matches_single(seed in any::<u64>(), p in 1usize..6) {
            let n = net(&[3, 4, 2], seed);
            let x = DMatrix::from_fn(p, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.5);
            let acts = n.forward_batch(&x).unwrap();
            for r in 0..p {
                let row: Vec<f64> = x.row(r).iter().copied().collect();
                let t = n.forward(&row).unwrap();
                for l in 1..3 {
                    for j in 0..acts[l].ncols() {
                        prop_assert!((acts[l][(r, j)] - t.activations[l][j]).abs() < 1e-14);
                    }
                }
            }
        }
    }
}

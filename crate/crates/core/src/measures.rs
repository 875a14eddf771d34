//! Error and evaluation measures.
//!
//! `ErrorMatrix` holds `e = t - o` with one row per pattern. The exponential
//! measures work on the per-pattern sum of squares `s = sum e^2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum |τ| accepted anywhere.
pub const TAU_GUARD: f64 = 1e-6;
/// Per-pattern E_ExpAbs values are capped here instead of overflowing.
pub const ERR_SATURATION: f64 = 1e300;
/// Output clamp used by cross-entropy before taking the log.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau {
    value: f64,
    guard: f64,
}

impl Tau {
    pub fn new(value: f64) -> Result<Tau> {
        Tau::with_guard(value, TAU_GUARD)
    }

    pub fn with_guard(value: f64, guard: f64) -> Result<Tau> {
        if !(guard > 0.0 && guard.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "τ guard must be positive, got {guard}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("tau"));
        }
        if value.abs() < guard {
            return Err(Error::InvalidArgument(format!(
                "|τ| = {} is below the guard {guard}",
                value.abs()
            )));
        }
        Ok(Tau { value, guard })
    }

    /// Moves `value` out of the forbidden band around zero, keeping its sign
    /// (zero goes positive).
    pub fn projected(value: f64, guard: f64) -> Tau {
        let sign = if value < 0.0 { -1.0 } else { 1.0 };
        let value = if value.abs() < guard {
            sign * guard
        } else {
            value
        };
        Tau { value, guard }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn abs(&self) -> f64 {
        self.value.abs()
    }

    pub fn signum(&self) -> f64 {
        self.value.signum()
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    e: DMatrix<f64>,
}

impl ErrorMatrix {
    pub fn new(e: DMatrix<f64>) -> ErrorMatrix {
        ErrorMatrix { e }
    }

    pub fn from_rows(rows: &[&[f64]]) -> ErrorMatrix {
        let cols = rows.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ErrorMatrix {
            e: DMatrix::from_row_slice(rows.len(), cols, &flat),
        }
    }

    pub fn from_outputs(targets: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<ErrorMatrix> {
        check_same_shape(targets, outputs)?;
        Ok(ErrorMatrix {
            e: targets - outputs,
        })
    }

    pub fn patterns(&self) -> usize {
        self.e.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.e.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn row_sum_sq(&self, p: usize) -> f64 {
        self.e.row(p).iter().map(|v| v * v).sum()
    }

    fn is_empty(&self) -> bool {
        self.e.nrows() == 0 || self.e.ncols() == 0
    }
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Mean over all P * N_L entries.
pub fn mse(errors: &ErrorMatrix) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("error matrix"));
    }
    let e = errors.matrix();
    Ok(e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64)
}

/// Sum of `-t ln o` with `o` clamped to `[ε, 1-ε]`. The flag reports whether
/// the clamp changed any output that is paired with a nonzero target.
pub fn cross_entropy_flagged(
    targets: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
) -> Result<(f64, bool)> {
    check_same_shape(targets, outputs)?;
    let mut clamped = false;
    let mut total = 0.0;
    for (t, o) in targets.iter().zip(outputs.iter()) {
        if *t == 0.0 {
            continue;
        }
        let oc = o.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
        clamped |= oc != *o;
        total -= t * oc.ln();
    }
    Ok((total, clamped))
}

pub fn cross_entropy(targets: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<f64> {
    cross_entropy_flagged(targets, outputs).map(|(v, _)| v)
}

/// Σ h² exp(-e²/2h²). Larger is better.
pub fn zedm(errors: &ErrorMatrix, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ZEDM bandwidth must be positive, got {h}"
        )));
    }
    let h2 = h * h;
    Ok(errors
        .matrix()
        .iter()
        .map(|e| h2 * (-e * e / (2.0 * h2)).exp())
        .sum())
}

/// |τ| exp(s/|τ|) from a precomputed sum of squares, with the saturation flag.
pub fn err_expabs_from_sum(sum_sq: f64, tau: Tau) -> (f64, bool) {
    let a = tau.abs();
    let x = sum_sq / a;
    if x > (ERR_SATURATION / a).ln() {
        return (ERR_SATURATION, true);
    }
    let v = a * x.exp();
    if v >= ERR_SATURATION || !v.is_finite() {
        (ERR_SATURATION, true)
    } else {
        (v, false)
    }
}

pub fn err_expabs_flagged(e_p: &[f64], tau: Tau) -> (f64, bool) {
    err_expabs_from_sum(e_p.iter().map(|v| v * v).sum(), tau)
}

pub fn err_expabs(e_p: &[f64], tau: Tau) -> f64 {
    err_expabs_flagged(e_p, tau).0
}

/// `err_expabs - |τ|` computed as |τ| expm1(s/|τ|), accurate when s ≪ |τ|
/// where the plain subtraction cancels.
pub fn err_expabs_excess(sum_sq: f64, tau: Tau) -> f64 {
    let (v, saturated) = err_expabs_from_sum(sum_sq, tau);
    if saturated {
        v
    } else {
        tau.abs() * (sum_sq / tau.abs()).exp_m1()
    }
}

/// Σ_p err_p. The flag is set when any pattern saturated.
pub fn e_expabs_total_flagged(errors: &ErrorMatrix, tau: Tau) -> (f64, bool) {
    let mut total = 0.0;
    let mut any = false;
    for p in 0..errors.patterns() {
        let (v, s) = err_expabs_from_sum(errors.row_sum_sq(p), tau);
        total += v;
        any |= s;
    }
    (total.min(f64::MAX), any)
}

pub fn e_expabs_total(errors: &ErrorMatrix, tau: Tau) -> f64 {
    e_expabs_total_flagged(errors, tau).0
}

/// Σ_p τ exp(s_p/τ); τ may be negative here.
pub fn e_exp_total(errors: &ErrorMatrix, tau: f64) -> Result<f64> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "τ must be finite and nonzero, got {tau}"
        )));
    }
    Ok((0..errors.patterns())
        .map(|p| tau * (errors.row_sum_sq(p) / tau).exp())
        .sum())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn recognition_rate(outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(targets, outputs)?;
    if targets.nrows() == 0 {
        return Err(Error::Empty("targets"));
    }
    let mut hits = 0usize;
    for p in 0..targets.nrows() {
        let t = targets.row(p);
        let ones = t.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || t.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::NotOneHot(p));
        }
        if argmax(outputs.row(p).iter().copied()) == argmax(t.iter().copied()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / targets.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tau(v: f64) -> Tau {
        Tau::new(v).unwrap()
    }

    #[test]
    fn tau_guard() {
        assert!(Tau::new(0.0).is_err());
        assert!(Tau::new(5e-7).is_err());
        assert!(Tau::new(f64::NAN).is_err());
        assert_eq!(Tau::projected(0.0, 1e-6).value(), 1e-6);
        assert_eq!(Tau::projected(-1e-9, 1e-6).value(), -1e-6);
        assert_eq!(Tau::projected(3.0, 1e-6).value(), 3.0);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&ErrorMatrix::from_rows(&[&[0.0, 0.0]])).unwrap(), 0.0);
        assert_eq!(
            mse(&ErrorMatrix::from_rows(&[&[1.0], &[3.0]])).unwrap(),
            5.0
        );
        assert_eq!(mse(&ErrorMatrix::from_rows(&[&[1.0, 3.0]])).unwrap(), 5.0);
        assert!(mse(&ErrorMatrix::new(DMatrix::zeros(0, 3))).is_err());
    }

    #[test]
    fn ce_examples() {
        let t = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let o = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert_relative_eq!(
            cross_entropy(&t, &o).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );

        let o = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (v, clamped) = cross_entropy_flagged(&t, &o).unwrap();
        assert!(v <= 1e-11);
        assert!(clamped);

        let z = DMatrix::zeros(2, 2);
        let o = DMatrix::from_row_slice(2, 2, &[0.1, 0.7, 0.3, 0.9]);
        assert_eq!(cross_entropy(&z, &o).unwrap(), 0.0);

        // o = 0 under a hot target is clamped, not infinite.
        let o = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let (v, clamped) = cross_entropy_flagged(&t, &o).unwrap();
        assert!(clamped && v.is_finite());
    }

    #[test]
    fn zedm_examples() {
        let z = ErrorMatrix::from_rows(&[&[0.0]]);
        assert_eq!(zedm(&z, 1.0).unwrap(), 1.0);
        assert_eq!(zedm(&z, 2.0).unwrap(), 4.0);
        let one = ErrorMatrix::from_rows(&[&[1.0]]);
        assert_relative_eq!(
            zedm(&one, 1.0).unwrap(),
            0.606_530_659_712_633_4,
            epsilon = 1e-15
        );
        assert!(zedm(&one, 0.0).is_err());
    }

    #[test]
    fn err_expabs_examples() {
        assert_eq!(err_expabs(&[0.0], tau(2.0)), 2.0);
        assert_eq!(err_expabs(&[0.0], tau(-2.0)), 2.0);
        assert_relative_eq!(
            err_expabs(&[1.0], tau(1.0)),
            std::f64::consts::E,
            epsilon = 1e-15
        );
        // oracle: 1e6 * (exp(4e-6) - 1) = 4.00000800001066...
        let excess = err_expabs(&[2.0], tau(1e6)) - 1e6;
        assert!((excess - 4.0).abs() <= 1e-4);
        assert_relative_eq!(
            err_expabs_excess(4.0, tau(1e6)),
            4.000_008_000_010_667,
            epsilon = 1e-12
        );
    }

    #[test]
    fn saturation() {
        let (v, s) = err_expabs_flagged(&[30.0], tau(1e-6));
        assert!(s);
        assert_eq!(v, ERR_SATURATION);
        let e = ErrorMatrix::from_rows(&[&[30.0], &[30.0]]);
        let (t, s) = e_expabs_total_flagged(&e, tau(1e-6));
        assert!(s && t.is_finite());
    }

    #[test]
    fn totals() {
        let z = ErrorMatrix::from_rows(&[&[0.0], &[0.0], &[0.0]]);
        assert_eq!(e_expabs_total(&z, tau(1.0)), 3.0);
        let one = ErrorMatrix::from_rows(&[&[0.3, -0.4]]);
        assert_eq!(
            e_expabs_total(&one, tau(0.7)),
            err_expabs(&[0.3, -0.4], tau(0.7))
        );
        let two = ErrorMatrix::from_rows(&[&[0.0], &[1.0]]);
        assert_relative_eq!(
            e_expabs_total(&two, tau(1.0)),
            3.718_281_828_459_045,
            epsilon = 1e-14
        );
    }

    #[test]
    fn e_exp_examples() {
        let z = ErrorMatrix::from_rows(&[&[0.0]]);
        assert_eq!(e_exp_total(&z, -2.0).unwrap(), -2.0);
        let one = ErrorMatrix::from_rows(&[&[1.0]]);
        assert_relative_eq!(
            e_exp_total(&one, -1.0).unwrap(),
            -0.367_879_441_171_442_3,
            epsilon = 1e-15
        );
        assert!(e_exp_total(&one, 0.0).is_err());
    }

    #[test]
    fn recognition_examples() {
        let t = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(recognition_rate(&t, &t).unwrap(), 1.0);

        let hot0 = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let flat = DMatrix::from_element(2, 3, 0.5);
        assert_eq!(recognition_rate(&flat, &hot0).unwrap(), 1.0);

        let o = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4]);
        assert_eq!(recognition_rate(&o, &t).unwrap(), 0.5);

        let bad = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(matches!(
            recognition_rate(&bad, &bad),
            Err(Error::NotOneHot(0))
        ));
    }

    proptest! {
        #[test]
        fn sign_symmetry(e in prop::collection::vec(-1.0f64..1.0, 1..5), t in 0.05f64..1e4) {
            prop_assert_eq!(err_expabs(&e, tau(t)), err_expabs(&e, tau(-t)));
        }

        #[test]
        fn lower_bound(e in prop::collection::vec(-1.0f64..1.0, 1..5), t in 0.05f64..1e4) {
            let v = err_expabs(&e, tau(t));
            prop_assert!(v >= t);
            if e.iter().all(|&x| x == 0.0) {
                prop_assert_eq!(v, t);
            }
        }

        #[test]
        fn strict_monotone(s in 0.0f64..5.0, ds in 1e-3f64..1.0, t in 0.05f64..100.0) {
            let a = err_expabs_from_sum(s, tau(t)).0;
            let b = err_expabs_from_sum(s + ds, tau(t)).0;
            prop_assert!(b > a);
        }

        #[test]
        fn e_exp_agrees_for_positive_tau(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
            t in 0.05f64..1e4,
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let e = ErrorMatrix::from_rows(&refs);
            let a = e_exp_total(&e, t).unwrap();
            let b = e_expabs_total(&e, tau(t));
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }

        #[test]
        fn recognition_rate_is_a_count(
            seed_rows in prop::collection::vec((0usize..3, prop::collection::vec(0.0f64..1.0, 3)), 1..20)
        ) {
            let p = seed_rows.len();
            let t = DMatrix::from_fn(p, 3, |r, c| if seed_rows[r].0 == c { 1.0 } else { 0.0 });
            let o = DMatrix::from_fn(p, 3, |r, c| seed_rows[r].1[c]);
            let rr = recognition_rate(&o, &t).unwrap();
            let k = (rr * p as f64).round();
            prop_assert!((rr - k / p as f64).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&rr));
        }
    }
}

//! Dense arithmetic, activation functions and the softmax cross-entropy loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Keeps the rows whose indices are listed, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &r in indices {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// `f'(z)`; relu uses `f'(0) = 0`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected relu, tanh or sigmoid)"
            ))),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn apply_activation(kind: Activation, z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| kind.apply(v)).collect()
}

pub fn activation_derivative(kind: Activation, z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| kind.derivative(v)).collect()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "softmax: logits must be non-empty",
            expected: 1,
            actual: 0,
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Training target for one sample.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class(usize),
    Soft(&'a [f64]),
}

/// Returns `(−Σ t log p, p − t)` with `p = softmax(logits)`.
pub fn softmax_cross_entropy(logits: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    let mut grad = softmax(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    // log p_i = logits_i − max − log Σ exp(logits − max)
    let log_p = |i: usize| logits[i] - max - log_sum;
    let loss = match target {
        Target::Class(c) => {
            if c >= logits.len() {
                return Err(Error::DimensionMismatch {
                    context: "softmax_cross_entropy: class index",
                    expected: logits.len(),
                    actual: c,
                });
            }
            grad[c] -= 1.0;
            -log_p(c)
        }
        Target::Soft(t) => {
            if t.len() != logits.len() {
                return Err(Error::DimensionMismatch {
                    context: "softmax_cross_entropy: soft target",
                    expected: logits.len(),
                    actual: t.len(),
                });
            }
            let mut loss = 0.0;
            for (i, &ti) in t.iter().enumerate() {
                grad[i] -= ti;
                if ti != 0.0 {
                    loss -= ti * log_p(i);
                }
            }
            loss
        }
    };
    // clamp roundoff below zero, but let NaN through
    Ok((if loss < 0.0 { 0.0 } else { loss }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn non_finite_logits_give_non_finite_loss() {
        let (loss, _) = softmax_cross_entropy(&[f64::INFINITY, 0.0], Target::Class(1)).unwrap();
        assert!(!loss.is_finite());
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let c = 7;
        let (loss, grad) = softmax_cross_entropy(&vec![0.3; c], Target::Class(2)).unwrap();
        assert_relative_eq!(loss, (c as f64).ln(), epsilon = 1e-14);
        for (i, g) in grad.iter().enumerate() {
            let t = if i == 2 { 1.0 } else { 0.0 };
            assert_relative_eq!(*g, 1.0 / c as f64 - t, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_class_closed_form() {
        let (loss, _) = softmax_cross_entropy(&[2.0, 0.0], Target::Class(0)).unwrap();
        // ln(1 + e^-2)
        assert_relative_eq!(loss, 0.126_928_011_042_972_6, epsilon = 1e-15);
    }

    #[test]
    fn soft_target_at_fixed_point_has_zero_gradient() {
        let logits = [0.5, -1.25, 2.0, 0.0];
        let p = softmax(&logits).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, Target::Soft(&p)).unwrap();
        for g in grad {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn empty_logits_rejected() {
        assert!(softmax_cross_entropy(&[], Target::Class(0)).is_err());
        assert!(softmax_cross_entropy(&[1.0], Target::Class(1)).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, -1000.0, 0.0], Target::Class(1)).unwrap();
        assert!(loss.is_finite());
        assert_relative_eq!(loss, 2000.0, epsilon = 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn activation_examples() {
        assert_eq!(apply_activation(Activation::Relu, &[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(Activation::Tanh.derivative(0.0), 1.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert!("softplus".parse::<Activation>().is_err());
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for kind in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            for _ in 0..10_000 {
                let mut z: f64 = rng.random_range(-6.0..6.0);
                if kind == Activation::Relu && z.abs() < 1e-3 {
                    z += 0.01;
                }
                let fd = (kind.apply(z + h) - kind.apply(z - h)) / (2.0 * h);
                let an = kind.derivative(z);
                let rel = (fd - an).abs() / an.abs().max(1e-3);
                assert!(rel < 1e-6, "{kind} at {z}: {an} vs {fd}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one_and_is_shift_invariant(
                logits in proptest::collection::vec(-50.0f64..50.0, 1..20),
                shift in -100.0f64..100.0,
            ) {
                let p = softmax(&logits).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
                let q = softmax(&shifted).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

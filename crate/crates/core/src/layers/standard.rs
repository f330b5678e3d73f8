use crate::error::{check_len, Result};
use crate::math::{Activation, Matrix};

use super::{fill_uniform, glorot_bound, input_at, LinearMap};

/// Ordinary dense layer with an explicit `n_out × (n_in + 1)` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLayer {
    n_in: usize,
    n_out: usize,
    /// Input-major: entry `(i, j)` lives at `j * n_out + i`.
    weights: Vec<f64>,
}

impl StandardLayer {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_out * (n_in + 1)],
        }
    }

    /// Builds a layer from a row-major `n_out × (n_in + 1)` matrix.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.cols() == 0 {
            return Err(crate::Error::DimensionMismatch {
                context: "StandardLayer::from_matrix: bias column",
                expected: 1,
                actual: 0,
            });
        }
        let (n_out, n_in) = (m.rows(), m.cols() - 1);
        let mut layer = Self::new(n_in, n_out);
        for i in 0..n_out {
            for j in 0..=n_in {
                layer.weights[j * n_out + i] = m.get(i, j);
            }
        }
        Ok(layer)
    }

    pub(crate) fn from_raw(n_in: usize, n_out: usize, weights: Vec<f64>) -> Result<Self> {
        check_len("StandardLayer weights", n_out * (n_in + 1), weights.len())?;
        Ok(Self { n_in, n_out, weights })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_out + i
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[self.index(i, j)]
    }

    pub fn set_weight(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.weights[k] = v;
    }

    pub fn to_matrix(&self) -> Matrix {
        super::materialize(self)
    }

    pub fn init_weights(&mut self, init_seed: u64) {
        fill_uniform(&mut self.weights, glorot_bound(self.n_in, self.n_out), init_seed);
    }

    pub fn forward(&self, a_prev: &[f64]) -> Result<Vec<f64>> {
        super::forward_checked(self, a_prev)
    }

    pub fn backward_error(
        &self,
        delta_next: &[f64],
        z_prev: &[f64],
        activation: Activation,
    ) -> Result<Vec<f64>> {
        super::backward_error_checked(self, delta_next, z_prev, activation)
    }

    /// `G_ij = a_j δ_i` as a row-major `n_out × (n_in + 1)` matrix.
    pub fn gradient_standard(&self, a_prev: &[f64], delta_next: &[f64]) -> Result<Matrix> {
        let flat = super::gradient_checked(self, a_prev, delta_next)?;
        let mut g = Matrix::zeros(self.n_out, self.n_in + 1);
        for i in 0..self.n_out {
            for j in 0..=self.n_in {
                g.set(i, j, flat[self.index(i, j)]);
            }
        }
        Ok(g)
    }
}

impl LinearMap for StandardLayer {
    fn n_in(&self) -> usize {
        self.n_in
    }

    fn n_out(&self) -> usize {
        self.n_out
    }

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn forward_into(&self, a_prev: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        for j in 0..=self.n_in {
            let aj = input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            let col = &self.weights[j * self.n_out..(j + 1) * self.n_out];
            for (zi, &w) in z.iter_mut().zip(col) {
                *zi += w * aj;
            }
        }
    }

    fn backprop_into(&self, delta_next: &[f64], out: &mut [f64]) {
        for j in 1..=self.n_in {
            let col = &self.weights[j * self.n_out..(j + 1) * self.n_out];
            let mut s = 0.0;
            for (&w, &d) in col.iter().zip(delta_next) {
                s += w * d;
            }
            out[j - 1] = s;
        }
    }

    fn accumulate_gradient(&self, a_prev: &[f64], delta_next: &[f64], grad: &mut [f64]) {
        for j in 0..=self.n_in {
            let aj = input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            let col = &mut grad[j * self.n_out..(j + 1) * self.n_out];
            for (g, &d) in col.iter_mut().zip(delta_next) {
                *g += aj * d;
            }
        }
    }

    fn virtual_entry(&self, i: usize, j: usize) -> f64 {
        self.weight(i, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vectors_give_single_gradient_entry() {
        let layer = StandardLayer::new(4, 3);
        let mut a = vec![0.0; 4];
        a[2] = 1.0; // j = 3
        let delta = [0.0, 1.0, 0.0];
        let g = layer.gradient_standard(&a, &delta).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                // the bias column always sees a_0 = 1
                let expected = if i == 1 && (j == 3 || j == 0) { 1.0 } else { 0.0 };
                assert_eq!(g.get(i, j), expected, "({i},{j})");
            }
        }
    }

    #[test]
    fn forward_matches_matrix_product() {
        let m = Matrix::from_vec(2, 4, vec![0.5, 1.0, -2.0, 0.25, -1.0, 0.0, 3.0, 1.5]).unwrap();
        let layer = StandardLayer::from_matrix(&m).unwrap();
        let z = layer.forward(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(z, vec![0.5 + 1.0 - 4.0 + 1.0, -1.0 + 0.0 + 6.0 + 6.0]);
        assert_eq!(layer.to_matrix(), m);
    }

    #[test]
    fn dimension_errors() {
        let layer = StandardLayer::new(3, 2);
        assert!(layer.forward(&[1.0, 2.0]).is_err());
        assert!(layer
            .backward_error(&[1.0], &[0.0, 0.0, 0.0], Activation::Tanh)
            .is_err());
        assert!(layer.gradient_standard(&[1.0, 2.0, 3.0], &[1.0; 3]).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let mut a = StandardLayer::new(10, 7);
        let mut b = StandardLayer::new(10, 7);
        a.init_weights(42);
        b.init_weights(42);
        assert_eq!(a, b);
        let bound = glorot_bound(10, 7);
        assert!(a.params().iter().all(|w| w.abs() <= bound));
    }
}

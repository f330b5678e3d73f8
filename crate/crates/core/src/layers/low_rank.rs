use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};
use crate::math::{Activation, Matrix};

use super::{fill_uniform, glorot_bound, input_at, LinearMap};

/// `V = B A` with `B` (`n_out × r`) frozen Gaussian and `A`
/// (`r × (n_in + 1)`) trainable. Only `A` counts as stored parameters.
#[derive(Debug, Clone)]
pub struct LowRankLayer {
    n_in: usize,
    n_out: usize,
    rank: usize,
    basis_seed: u64,
    /// Row-major `n_out × r`, entries ~ N(0, 1/n_in).
    basis: Vec<f64>,
    /// Input-major: entry `(t, j)` lives at `j * rank + t`.
    coeffs: Vec<f64>,
}

impl LowRankLayer {
    pub fn new(n_in: usize, n_out: usize, rank: usize, basis_seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("low-rank layer needs rank >= 1".into()));
        }
        if n_in == 0 {
            return Err(Error::Config("low-rank layer needs at least one input".into()));
        }
        let std = 1.0 / (n_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(basis_seed);
        let basis = (0..n_out * rank).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            n_in,
            n_out,
            rank,
            basis_seed,
            basis,
            coeffs: vec![0.0; rank * (n_in + 1)],
        })
    }

    pub(crate) fn from_raw(
        n_in: usize,
        n_out: usize,
        rank: usize,
        basis_seed: u64,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        let mut layer = Self::new(n_in, n_out, rank, basis_seed)?;
        check_len("LowRankLayer coefficients", layer.coeffs.len(), coeffs.len())?;
        layer.coeffs = coeffs;
        Ok(layer)
    }

    /// Largest rank whose trainable factor fits `budget` parameters,
    /// clamped to `[1, min(n_out, n_in + 1)]`.
    pub fn rank_for_budget(n_in: usize, n_out: usize, budget: usize) -> usize {
        (budget / (n_in + 1)).clamp(1, n_out.min(n_in + 1).max(1))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn basis_seed(&self) -> u64 {
        self.basis_seed
    }

    /// Frozen factor `B`, row-major `n_out × r`.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn init_weights(&mut self, init_seed: u64) {
        fill_uniform(&mut self.coeffs, glorot_bound(self.rank, self.n_in), init_seed);
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

    /// `∂L/∂A = (Bᵀ δ) [1; a]ᵀ` as a row-major `r × (n_in + 1)` matrix.
    pub fn gradient_coeffs(&self, a_prev: &[f64], delta_next: &[f64]) -> Result<Matrix> {
        let flat = super::gradient_checked(self, a_prev, delta_next)?;
        let mut g = Matrix::zeros(self.rank, self.n_in + 1);
        for t in 0..self.rank {
            for j in 0..=self.n_in {
                g.set(t, j, flat[j * self.rank + t]);
            }
        }
        Ok(g)
    }

    fn project_delta(&self, delta_next: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.rank];
        for (i, &d) in delta_next.iter().enumerate() {
            let row = &self.basis[i * self.rank..(i + 1) * self.rank];
            for (gt, &b) in g.iter_mut().zip(row) {
                *gt += b * d;
            }
        }
        g
    }
}

impl LinearMap for LowRankLayer {
    fn n_in(&self) -> usize {
        self.n_in
    }

    fn n_out(&self) -> usize {
        self.n_out
    }

    fn params(&self) -> &[f64] {
        &self.coeffs
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    fn forward_into(&self, a_prev: &[f64], z: &mut [f64]) {
        let r = self.rank;
        let mut u = vec![0.0; r];
        for j in 0..=self.n_in {
            let aj = input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            for (ut, &c) in u.iter_mut().zip(&self.coeffs[j * r..(j + 1) * r]) {
                *ut += c * aj;
            }
        }
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &self.basis[i * r..(i + 1) * r];
            *zi = row.iter().zip(&u).map(|(b, u)| b * u).sum();
        }
    }

    fn backprop_into(&self, delta_next: &[f64], out: &mut [f64]) {
        let r = self.rank;
        let g = self.project_delta(delta_next);
        for j in 1..=self.n_in {
            let col = &self.coeffs[j * r..(j + 1) * r];
            out[j - 1] = col.iter().zip(&g).map(|(c, g)| c * g).sum();
        }
    }

    fn accumulate_gradient(&self, a_prev: &[f64], delta_next: &[f64], grad: &mut [f64]) {
        let r = self.rank;
        let g = self.project_delta(delta_next);
        for j in 0..=self.n_in {
            let aj = input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            for (gr, &gt) in grad[j * r..(j + 1) * r].iter_mut().zip(&g) {
                *gr += aj * gt;
            }
        }
    }

    fn virtual_entry(&self, i: usize, j: usize) -> f64 {
        let r = self.rank;
        let row = &self.basis[i * r..(i + 1) * r];
        row.iter()
            .zip(&self.coeffs[j * r..(j + 1) * r])
            .map(|(b, c)| b * c)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_reproducible_and_scaled() {
        let a = LowRankLayer::new(400, 300, 50, 9).unwrap();
        let b = LowRankLayer::new(400, 300, 50, 9).unwrap();
        assert_eq!(a.basis(), b.basis());
        let n = a.basis().len() as f64;
        let var = a.basis().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var * 400.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn forward_equals_materialized_product() {
        let mut l = LowRankLayer::new(6, 5, 2, 3).unwrap();
        l.init_weights(4);
        let m = super::super::materialize(&l);
        let x = [0.5, -1.0, 0.0, 0.25, 2.0, -0.5];
        let z = l.forward(&x).unwrap();
        for i in 0..5 {
            let direct: f64 = (0..=6).map(|j| m.get(i, j) * input_at(&x, j)).sum();
            assert!((z[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_gradient_matches_finite_differences() {
        let mut l = LowRankLayer::new(4, 3, 2, 5).unwrap();
        l.init_weights(6);
        let x = [0.3, -0.7, 0.2, 0.9];
        let target = [0.1, -0.2, 0.4];
        // L = ½‖z − target‖², so δ = z − target
        let loss = |l: &LowRankLayer| -> f64 {
            let z = l.forward(&x).unwrap();
            z.iter().zip(&target).map(|(z, t)| 0.5 * (z - t).powi(2)).sum()
        };
        let z = l.forward(&x).unwrap();
        let delta: Vec<f64> = z.iter().zip(&target).map(|(z, t)| z - t).collect();
        let g = l.gradient_coeffs(&x, &delta).unwrap();
        let eps = 1e-5;
        for t in 0..2 {
            for j in 0..=4 {
                let k = j * 2 + t;
                let mut p = l.clone();
                p.params_mut()[k] += eps;
                let up = loss(&p);
                p.params_mut()[k] -= 2.0 * eps;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * eps);
                let an = g.get(t, j);
                assert!((fd - an).abs() / an.abs().max(1e-4) < 1e-6, "({t},{j}) {an} vs {fd}");
            }
        }
    }

    #[test]
    fn rank_budget() {
        assert_eq!(LowRankLayer::rank_for_budget(784, 1000, 98_125), 125);
        assert_eq!(LowRankLayer::rank_for_budget(10, 3, 5), 1);
        assert_eq!(LowRankLayer::rank_for_budget(10, 3, 10_000), 3);
        assert!(LowRankLayer::new(4, 4, 0, 1).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{Activation, Matrix};

use super::{LinearMap, StandardLayer};

/// Dense layer with a random subset of connections removed before training.
#[derive(Debug, Clone)]
pub struct EdgeRemovedLayer {
    inner: StandardLayer,
    /// Input-major like the weights.
    mask: Vec<bool>,
    keep_prob: f64,
    mask_seed: u64,
    mask_bias: bool,
    kept: usize,
}

impl EdgeRemovedLayer {
    /// Draws the frozen mask: each connection is kept with probability
    /// `keep_prob`. With `mask_bias = false` the bias column is always kept.
    pub fn new(n_in: usize, n_out: usize, keep_prob: f64, mask_seed: u64, mask_bias: bool) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "edge keep probability must lie in (0, 1], got {keep_prob}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut mask = vec![true; n_out * (n_in + 1)];
        let first = if mask_bias { 0 } else { n_out };
        for m in &mut mask[first..] {
            *m = keep_prob >= 1.0 || rng.random::<f64>() < keep_prob;
        }
        let kept = mask.iter().filter(|&&m| m).count();
        Ok(Self {
            inner: StandardLayer::new(n_in, n_out),
            mask,
            keep_prob,
            mask_seed,
            mask_bias,
            kept,
        })
    }

    pub(crate) fn from_raw(
        n_in: usize,
        n_out: usize,
        keep_prob: f64,
        mask_seed: u64,
        mask_bias: bool,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut layer = Self::new(n_in, n_out, keep_prob, mask_seed, mask_bias)?;
        layer.inner = StandardLayer::from_raw(n_in, n_out, weights)?;
        if layer.inner.params().iter().zip(&layer.mask).any(|(&w, &m)| !m && w != 0.0) {
            return Err(Error::Format("edge-removed weights violate the mask".into()));
        }
        Ok(layer)
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn mask_seed(&self) -> u64 {
        self.mask_seed
    }

    pub fn mask_bias(&self) -> bool {
        self.mask_bias
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        self.mask[self.inner.index(i, j)]
    }

    pub fn inner(&self) -> &StandardLayer {
        &self.inner
    }

    pub fn init_weights(&mut self, init_seed: u64) {
        self.inner.init_weights(init_seed);
        self.project();
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

    /// Row-major gradient with removed connections zeroed.
    pub fn gradient_standard(&self, a_prev: &[f64], delta_next: &[f64]) -> Result<Matrix> {
        let mut g = self.inner.gradient_standard(a_prev, delta_next)?;
        for i in 0..self.inner.n_out() {
            for j in 0..=self.inner.n_in() {
                if !self.is_kept(i, j) {
                    g.set(i, j, 0.0);
                }
            }
        }
        Ok(g)
    }
}

impl LinearMap for EdgeRemovedLayer {
    fn n_in(&self) -> usize {
        self.inner.n_in()
    }

    fn n_out(&self) -> usize {
        self.inner.n_out()
    }

    fn params(&self) -> &[f64] {
        self.inner.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.inner.params_mut()
    }

    fn trainable_count(&self) -> usize {
        self.kept
    }

    fn forward_into(&self, a_prev: &[f64], z: &mut [f64]) {
        self.inner.forward_into(a_prev, z)
    }

    fn backprop_into(&self, delta_next: &[f64], out: &mut [f64]) {
        self.inner.backprop_into(delta_next, out)
    }

    fn accumulate_gradient(&self, a_prev: &[f64], delta_next: &[f64], grad: &mut [f64]) {
        let n_out = self.inner.n_out();
        for j in 0..=self.inner.n_in() {
            let aj = super::input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            let range = j * n_out..(j + 1) * n_out;
            for ((g, &m), &d) in grad[range.clone()]
                .iter_mut()
                .zip(&self.mask[range])
                .zip(delta_next)
            {
                if m {
                    *g += aj * d;
                }
            }
        }
    }

    fn project(&mut self) {
        let mask = &self.mask;
        for (w, &m) in self.inner.params_mut().iter_mut().zip(mask) {
            if !m {
                *w = 0.0;
            }
        }
    }

    fn is_frozen(&self, k: usize) -> bool {
        !self.mask[k]
    }

    fn virtual_entry(&self, i: usize, j: usize) -> f64 {
        self.inner.weight(i, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_probability_one_is_a_standard_layer() {
        let mut e = EdgeRemovedLayer::new(5, 4, 1.0, 3, true).unwrap();
        e.init_weights(8);
        let mut s = StandardLayer::new(5, 4);
        s.init_weights(8);
        assert_eq!(e.params(), s.params());
        assert_eq!(e.trainable_count(), s.trainable_count());
        let x = [0.3, -0.1, 0.0, 0.8, 0.2];
        assert_eq!(e.forward(&x).unwrap(), s.forward(&x).unwrap());
    }

    #[test]
    fn masked_entries_are_zero_and_have_zero_gradient() {
        let mut e = EdgeRemovedLayer::new(20, 10, 0.25, 77, true).unwrap();
        e.init_weights(1);
        let kept_frac = e.trainable_count() as f64 / (21.0 * 10.0);
        assert!((kept_frac - 0.25).abs() < 0.1, "{kept_frac}");
        let g = e.gradient_standard(&[1.0; 20], &[1.0; 10]).unwrap();
        for i in 0..10 {
            for j in 0..=20 {
                if !e.is_kept(i, j) {
                    assert_eq!(e.inner().weight(i, j), 0.0);
                    assert_eq!(g.get(i, j), 0.0);
                } else {
                    assert_eq!(g.get(i, j), 1.0);
                }
            }
        }
    }

    #[test]
    fn unmasked_bias_column_survives() {
        let e = EdgeRemovedLayer::new(30, 6, 0.05, 5, false).unwrap();
        for i in 0..6 {
            assert!(e.is_kept(i, 0));
        }
    }

    #[test]
    fn rejects_bad_keep_probability() {
        assert!(EdgeRemovedLayer::new(3, 3, 0.0, 1, true).is_err());
        assert!(EdgeRemovedLayer::new(3, 3, 1.5, 1, true).is_err());
    }
}

//! Fully connected layer kinds.
//!
//! Every layer maps `a ∈ R^{n_in}` to `z ∈ R^{n_out}` through a (possibly
//! virtual) matrix `V` of shape `n_out × (n_in + 1)` whose column `j = 0`
//! multiplies the constant bias input `a_0 = 1`. Activations are applied by
//! the network, never by the layer.
//!
//! All kinds store their matrices input-major (`index = j * rows + i`) and
//! visit columns in ascending `j`, skipping zero inputs. Two layers that
//! hold the same virtual matrix therefore produce bit-identical results.

mod edge_removed;
mod hashed;
mod low_rank;
mod standard;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use edge_removed::EdgeRemovedLayer;
pub use hashed::{BucketAssignment, HashedLayer, HashedLayerConfig, IndexMode};
pub use low_rank::LowRankLayer;
pub use standard::StandardLayer;

use crate::error::{check_len, Error, Result};
use crate::math::{Activation, Matrix};

/// Operations shared by all layer kinds. The unchecked `*_into` methods
/// assume correctly sized buffers; use the checked wrappers on [`Layer`]
/// or the concrete types at API boundaries.
pub trait LinearMap {
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;

    /// Flat trainable parameter vector.
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Number of stored free parameters. Differs from `params().len()` only
    /// for layers with frozen entries.
    fn trainable_count(&self) -> usize {
        self.params().len()
    }

    /// `z = V [1; a]`.
    fn forward_into(&self, a_prev: &[f64], z: &mut [f64]);

    /// `out_j = Σ_i V_ij δ_i` for `j = 1..=n_in` (bias column dropped).
    fn backprop_into(&self, delta_next: &[f64], out: &mut [f64]);

    /// `grad += ∂L/∂params` for one sample.
    fn accumulate_gradient(&self, a_prev: &[f64], delta_next: &[f64], grad: &mut [f64]);

    /// Re-imposes structural constraints after a parameter update.
    fn project(&mut self) {}

    /// True for parameter slots that are pinned (never trained).
    fn is_frozen(&self, _k: usize) -> bool {
        false
    }

    /// Entry `V_ij` of the (virtual) weight matrix; `j = 0` is the bias.
    fn virtual_entry(&self, i: usize, j: usize) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Standard,
    Hashed,
    EdgeRemoved,
    LowRank,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Standard => "standard",
            LayerKind::Hashed => "hashed",
            LayerKind::EdgeRemoved => "edge_removed",
            LayerKind::LowRank => "low_rank",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LayerKind::Standard),
            "hashed" => Ok(LayerKind::Hashed),
            "edge_removed" => Ok(LayerKind::EdgeRemoved),
            "low_rank" => Ok(LayerKind::LowRank),
            other => Err(Error::Config(format!(
                "unknown layer kind `{other}` (expected standard, hashed, edge_removed or low_rank)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Standard(StandardLayer),
    Hashed(HashedLayer),
    EdgeRemoved(EdgeRemovedLayer),
    LowRank(LowRankLayer),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Standard($l) => $body,
            Layer::Hashed($l) => $body,
            Layer::EdgeRemoved($l) => $body,
            Layer::LowRank($l) => $body,
        }
    };
}

impl LinearMap for Layer {
    fn n_in(&self) -> usize {
        dispatch!(self, l => l.n_in())
    }
    fn n_out(&self) -> usize {
        dispatch!(self, l => l.n_out())
    }
    fn params(&self) -> &[f64] {
        dispatch!(self, l => l.params())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        dispatch!(self, l => l.params_mut())
    }
    fn trainable_count(&self) -> usize {
        dispatch!(self, l => l.trainable_count())
    }
    fn forward_into(&self, a_prev: &[f64], z: &mut [f64]) {
        dispatch!(self, l => l.forward_into(a_prev, z))
    }
    fn backprop_into(&self, delta_next: &[f64], out: &mut [f64]) {
        dispatch!(self, l => l.backprop_into(delta_next, out))
    }
    fn accumulate_gradient(&self, a_prev: &[f64], delta_next: &[f64], grad: &mut [f64]) {
        dispatch!(self, l => l.accumulate_gradient(a_prev, delta_next, grad))
    }
    fn project(&mut self) {
        dispatch!(self, l => l.project())
    }
    fn is_frozen(&self, k: usize) -> bool {
        dispatch!(self, l => l.is_frozen(k))
    }
    fn virtual_entry(&self, i: usize, j: usize) -> f64 {
        dispatch!(self, l => l.virtual_entry(i, j))
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Standard(_) => LayerKind::Standard,
            Layer::Hashed(_) => LayerKind::Hashed,
            Layer::EdgeRemoved(_) => LayerKind::EdgeRemoved,
            Layer::LowRank(_) => LayerKind::LowRank,
        }
    }

    pub fn init_weights(&mut self, init_seed: u64) {
        dispatch!(self, l => l.init_weights(init_seed))
    }

    /// Checked forward pass.
    pub fn forward(&self, a_prev: &[f64]) -> Result<Vec<f64>> {
        forward_checked(self, a_prev)
    }

    /// `δ_j = (Σ_i V_ij δ^{next}_i) f'(z_j)` over the non-bias inputs.
    pub fn backward_error(
        &self,
        delta_next: &[f64],
        z_prev: &[f64],
        activation: Activation,
    ) -> Result<Vec<f64>> {
        backward_error_checked(self, delta_next, z_prev, activation)
    }

    /// Gradient with respect to the flat parameter vector.
    pub fn gradient(&self, a_prev: &[f64], delta_next: &[f64]) -> Result<Vec<f64>> {
        gradient_checked(self, a_prev, delta_next)
    }

    /// Materializes the full `n_out × (n_in+1)` virtual matrix (row-major).
    pub fn virtual_matrix(&self) -> Matrix {
        materialize(self)
    }
}

pub(crate) fn forward_checked<L: LinearMap + ?Sized>(layer: &L, a_prev: &[f64]) -> Result<Vec<f64>> {
    check_len("forward: input width", layer.n_in(), a_prev.len())?;
    let mut z = vec![0.0; layer.n_out()];
    layer.forward_into(a_prev, &mut z);
    Ok(z)
}

pub(crate) fn backward_error_checked<L: LinearMap + ?Sized>(
    layer: &L,
    delta_next: &[f64],
    z_prev: &[f64],
    activation: Activation,
) -> Result<Vec<f64>> {
    check_len("backward_error: delta width", layer.n_out(), delta_next.len())?;
    check_len("backward_error: pre-activation width", layer.n_in(), z_prev.len())?;
    let mut out = vec![0.0; layer.n_in()];
    layer.backprop_into(delta_next, &mut out);
    for (o, &z) in out.iter_mut().zip(z_prev) {
        *o *= activation.derivative(z);
    }
    Ok(out)
}

pub(crate) fn gradient_checked<L: LinearMap + ?Sized>(
    layer: &L,
    a_prev: &[f64],
    delta_next: &[f64],
) -> Result<Vec<f64>> {
    check_len("gradient: input width", layer.n_in(), a_prev.len())?;
    check_len("gradient: delta width", layer.n_out(), delta_next.len())?;
    let mut grad = vec![0.0; layer.params().len()];
    layer.accumulate_gradient(a_prev, delta_next, &mut grad);
    Ok(grad)
}

pub(crate) fn materialize<L: LinearMap + ?Sized>(layer: &L) -> Matrix {
    let cols = layer.n_in() + 1;
    let mut m = Matrix::zeros(layer.n_out(), cols);
    for i in 0..layer.n_out() {
        for j in 0..cols {
            m.set(i, j, layer.virtual_entry(i, j));
        }
    }
    m
}

/// Glorot-style uniform bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn fill_uniform(values: &mut [f64], bound: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in values {
        *v = dist.sample(&mut rng);
    }
}

#[inline]
pub(crate) fn input_at(a_prev: &[f64], j: usize) -> f64 {
    if j == 0 {
        1.0
    } else {
        a_prev[j - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips_through_strings() {
        for kind in [
            LayerKind::Standard,
            LayerKind::Hashed,
            LayerKind::EdgeRemoved,
            LayerKind::LowRank,
        ] {
            assert_eq!(kind.as_str().parse::<LayerKind>().unwrap(), kind);
        }
        assert!("conv".parse::<LayerKind>().is_err());
    }

    #[test]
    fn uniform_init_variance() {
        let (n_in, n_out) = (300, 200);
        let mut v = vec![0.0; 100_000];
        fill_uniform(&mut v, glorot_bound(n_in, n_out), 5);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let expected = 2.0 / (n_in + n_out) as f64;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}

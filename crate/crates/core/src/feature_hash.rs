//! Feature-hashing view of a hashed layer.
//!
//! Output unit `i` of a hashed layer is the inner product of the shared
//! weights with a signed bucket-sum of the layer input,
//! `z_i = wᵀ φ_i(a)` where `[φ_i(a)]_k = Σ_{j : h(i,j) = k} ξ(i,j) a_j`.
//! The routines here evaluate that formulation literally, straight from
//! [`hash_index`] and [`hash_sign`], so they can serve as an independent
//! oracle for the fused kernels in [`crate::layers`]. Clarity over speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::hashing::{hash_index, hash_sign, HashSpec};
use crate::layers::{HashedLayer, HashedLayerConfig, LinearMap, StandardLayer, BucketAssignment};
use crate::math::Activation;

/// The map `φ_i` for output unit `i`.
#[derive(Debug, Clone, Copy)]
pub struct PhiMap {
    pub spec: HashSpec,
    pub output_index: usize,
    pub sign_enabled: bool,
    /// Include the constant input `a_0 = 1` as key `j = 0`.
    pub include_bias: bool,
}

impl PhiMap {
    pub fn new(spec: HashSpec, output_index: usize) -> Self {
        Self {
            spec,
            output_index,
            sign_enabled: true,
            include_bias: false,
        }
    }

    /// The map used by output `i` of `layer`.
    pub fn for_layer(layer: &HashedLayer, output_index: usize) -> Self {
        Self {
            spec: *layer.spec(),
            output_index,
            sign_enabled: layer.sign_enabled(),
            include_bias: layer.hash_bias(),
        }
    }

    fn sign(&self, j: usize) -> f64 {
        if self.sign_enabled {
            hash_sign(&self.spec, self.output_index, j)
        } else {
            1.0
        }
    }

    /// `φ_i(a) ∈ R^K`; input `a_j` is keyed by `j` (1-based, 0 is the bias).
    pub fn phi(&self, a: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spec.bucket_count];
        if self.include_bias {
            out[hash_index(&self.spec, self.output_index, 0)?] += self.sign(0);
        }
        for (idx, &aj) in a.iter().enumerate() {
            let j = idx + 1;
            let k = hash_index(&self.spec, self.output_index, j)?;
            out[k] += self.sign(j) * aj;
        }
        Ok(out)
    }
}

/// `wᵀ φ_i(a)`.
pub fn hashed_dot(w: &[f64], map: &PhiMap, a: &[f64]) -> Result<f64> {
    check_len("hashed_dot: weight length", map.spec.bucket_count, w.len())?;
    let phi = map.phi(a)?;
    Ok(w.iter().zip(&phi).map(|(w, p)| w * p).sum())
}

fn require_hashed(layer: &HashedLayer) -> Result<()> {
    if layer.config().assignment != BucketAssignment::Hashed {
        return Err(Error::Config(
            "feature-hash oracle only covers hash-assigned layers".into(),
        ));
    }
    Ok(())
}

/// Layer output through `z_i = wᵀ φ_i(a) (+ free bias)`.
pub fn oracle_forward(layer: &HashedLayer, a: &[f64]) -> Result<Vec<f64>> {
    require_hashed(layer)?;
    check_len("oracle_forward: input width", layer.n_in(), a.len())?;
    (0..layer.n_out())
        .map(|i| {
            let bias = layer.free_bias().get(i).copied().unwrap_or(0.0);
            Ok(hashed_dot(layer.weights(), &PhiMap::for_layer(layer, i), a)? + bias)
        })
        .collect()
}

/// Two-stage error propagation: first to the hashed representations,
/// `δ^{+½}_{i,k} = w_k δ_i`, then back through each `φ_i`:
/// `δ_j = (Σ_i ξ(i,j) δ^{+½}_{i,h(i,j)}) f'(z_j)`.
pub fn oracle_backward_error(
    layer: &HashedLayer,
    delta_next: &[f64],
    z_prev: &[f64],
    activation: Activation,
) -> Result<Vec<f64>> {
    require_hashed(layer)?;
    check_len("oracle_backward_error: delta width", layer.n_out(), delta_next.len())?;
    check_len("oracle_backward_error: pre-activation width", layer.n_in(), z_prev.len())?;
    let w = layer.weights();
    let middle: Vec<Vec<f64>> = delta_next
        .iter()
        .map(|&d| w.iter().map(|&wk| wk * d).collect())
        .collect();
    let spec = layer.spec();
    let mut out = Vec::with_capacity(layer.n_in());
    for (idx, &z) in z_prev.iter().enumerate() {
        let j = idx + 1;
        let mut acc = 0.0;
        for (i, row) in middle.iter().enumerate() {
            let map = PhiMap::for_layer(layer, i);
            acc += map.sign(j) * row[hash_index(spec, i, j)?];
        }
        out.push(acc * activation.derivative(z));
    }
    Ok(out)
}

/// `∂L/∂w_k = Σ_i [φ_i(a)]_k δ_i`.
pub fn oracle_gradient(layer: &HashedLayer, a: &[f64], delta_next: &[f64]) -> Result<Vec<f64>> {
    require_hashed(layer)?;
    check_len("oracle_gradient: input width", layer.n_in(), a.len())?;
    check_len("oracle_gradient: delta width", layer.n_out(), delta_next.len())?;
    let mut grad = vec![0.0; layer.bucket_count()];
    for (i, &d) in delta_next.iter().enumerate() {
        let phi = PhiMap::for_layer(layer, i).phi(a)?;
        for (g, p) in grad.iter_mut().zip(phi) {
            *g += p * d;
        }
    }
    Ok(grad)
}

/// Monte Carlo estimate of `E_φ[φ(x)ᵀ φ(x′)]` over `n_seeds` independent
/// hash seeds (seed `t` for trial `t`). Returns `(mean, standard error)`.
pub fn unbiasedness_trial(x: &[f64], x2: &[f64], k: usize, n_seeds: usize) -> Result<(f64, f64)> {
    check_len("unbiasedness_trial: vector lengths", x.len(), x2.len())?;
    if n_seeds < 2 {
        return Err(Error::Config("unbiasedness_trial needs at least 2 seeds".into()));
    }
    let mut samples = Vec::with_capacity(n_seeds);
    for seed in 0..n_seeds as u64 {
        let map = PhiMap::new(HashSpec::new(seed, 0, k)?, 0);
        let p = map.phi(x)?;
        let q = map.phi(x2)?;
        samples.push(p.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>());
    }
    Ok(mean_and_stderr(&samples))
}

pub(crate) fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Largest absolute disagreement between fused kernels and the oracle.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub layers: usize,
    pub max_forward_diff: f64,
    pub max_backward_diff: f64,
    pub max_gradient_diff: f64,
    /// Collision-free layers that disagreed bitwise with a standard layer.
    pub collision_free_mismatches: usize,
}

impl EquivalenceReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_forward_diff <= tol
            && self.max_backward_diff <= tol
            && self.max_gradient_diff <= tol
            && self.collision_free_mismatches == 0
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares forward, error and gradient of `n_layers` random hashed layers
/// (widths ≤ 32, K ≤ 64, mixed sign/bias settings) against the oracle, and
/// the same number of collision-free layers against their materialized
/// standard counterparts.
pub fn run_equivalence_suite(n_layers: usize, seed: u64) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EquivalenceReport {
        layers: n_layers,
        max_forward_diff: 0.0,
        max_backward_diff: 0.0,
        max_gradient_diff: 0.0,
        collision_free_mismatches: 0,
    };
    for t in 0..n_layers {
        let n_in = rng.random_range(1..=32);
        let n_out = rng.random_range(1..=32);
        let k = rng.random_range(1..=64);
        let config = HashedLayerConfig {
            sign_enabled: rng.random_bool(0.5),
            hash_bias: rng.random_bool(0.5),
            ..Default::default()
        };
        let spec = HashSpec::new(rng.random(), rng.random_range(0..8), k)?;
        let mut layer = HashedLayer::with_config(n_in, n_out, spec, config)?;
        layer.init_weights(rng.random());
        for b in layer.free_bias_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let a: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let activation = [Activation::Tanh, Activation::Sigmoid, Activation::Relu][t % 3];

        let fwd = layer.forward(&a)?;
        report.max_forward_diff = report
            .max_forward_diff
            .max(max_abs_diff(&fwd, &oracle_forward(&layer, &a)?));
        let back = layer.backward_error(&delta, &a, activation)?;
        let back_oracle = oracle_backward_error(&layer, &delta, &a, activation)?;
        report.max_backward_diff = report.max_backward_diff.max(max_abs_diff(&back, &back_oracle));
        let grad = layer.gradient_shared(&a, &delta)?;
        report.max_gradient_diff = report
            .max_gradient_diff
            .max(max_abs_diff(&grad, &oracle_gradient(&layer, &a, &delta)?));

        if !collision_free_matches(&layer, &a, &delta, activation, rng.random())? {
            report.collision_free_mismatches += 1;
        }
    }
    Ok(report)
}

/// Builds the collision-free counterpart of `like` (same widths and bias
/// handling, one bucket per connection) and checks forward, error and
/// gradient for exact agreement with a standard layer holding its
/// materialized virtual matrix.
pub fn collision_free_matches(
    like: &HashedLayer,
    a: &[f64],
    delta: &[f64],
    activation: Activation,
    init_seed: u64,
) -> Result<bool> {
    let (n_in, n_out) = (like.n_in(), like.n_out());
    let config = HashedLayerConfig {
        assignment: BucketAssignment::Direct,
        ..*like.config()
    };
    let k = n_out * (n_in + usize::from(config.hash_bias));
    let spec = HashSpec::new(like.spec().base_seed, like.spec().layer_index, k)?;
    let mut hashed = HashedLayer::with_config(n_in, n_out, spec, config)?;
    hashed.init_weights(init_seed);
    for (b, &v) in hashed.free_bias_mut().iter_mut().zip(like.free_bias()) {
        *b = v;
    }
    let standard = StandardLayer::from_matrix(&hashed.virtual_matrix())?;

    let same_forward = hashed.forward(a)? == standard.forward(a)?;
    let same_error = hashed.backward_error(delta, a, activation)?
        == standard.backward_error(delta, a, activation)?;
    let gh = hashed.gradient(a, delta)?;
    let gs = standard.gradient_standard(a, delta)?;
    let mut same_gradient = true;
    for i in 0..n_out {
        for j in 0..=n_in {
            let expected = gs.get(i, j);
            let got = if j == 0 && !config.hash_bias {
                gh[k + i]
            } else {
                let (b, s) = hashed.entry(i, j);
                s * gh[b]
            };
            same_gradient &= got == expected;
        }
    }
    Ok(same_forward && same_error && same_gradient)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_maps_to_zero() {
        let map = PhiMap::new(HashSpec::new(3, 0, 5).unwrap(), 2);
        assert_eq!(map.phi(&[0.0; 9]).unwrap(), vec![0.0; 5]);
        assert_eq!(hashed_dot(&[0.0; 5], &map, &[1.0; 9]).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_bucket_sums() {
        // n = 6 inputs, K = 3: enumerate the table explicitly.
        let spec = HashSpec::new(17, 2, 3).unwrap();
        let map = PhiMap::new(spec, 4);
        let a = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let table: Vec<(usize, f64)> = (1..=6).map(|j| (spec.bucket(4, j), spec.sign(4, j))).collect();
        let mut expected = [0.0; 3];
        for (idx, &(b, s)) in table.iter().enumerate() {
            expected[b] += s * a[idx];
        }
        assert_eq!(map.phi(&a).unwrap(), expected.to_vec());
        // powers of two make every bucket sum unique to its member set
        let l1: f64 = map.phi(&a).unwrap().iter().map(|v| v.abs()).sum();
        assert!(l1 <= a.iter().sum::<f64>());
    }

    #[test]
    fn unsigned_injective_map_is_a_scatter() {
        // K large and a seed whose buckets are distinct on the support
        let a = [0.5, -1.5, 2.0];
        let (spec, map) = (0u64..)
            .map(|s| {
                let spec = HashSpec::new(s, 0, 16).unwrap();
                let mut map = PhiMap::new(spec, 1);
                map.sign_enabled = false;
                (spec, map)
            })
            .find(|(spec, _)| {
                let b: Vec<usize> = (1..=3).map(|j| spec.bucket(1, j)).collect();
                b[0] != b[1] && b[0] != b[2] && b[1] != b[2]
            })
            .unwrap();
        let phi = map.phi(&a).unwrap();
        for (idx, &v) in a.iter().enumerate() {
            assert_eq!(phi[spec.bucket(1, idx + 1)], v);
        }
        assert_eq!(phi.iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn single_bucket_collapses_to_signed_sum() {
        let spec = HashSpec::new(8, 1, 1).unwrap();
        let map = PhiMap::new(spec, 0);
        let a = [0.25, -0.5, 1.0, 3.0];
        let expected: f64 = a.iter().enumerate().map(|(idx, v)| spec.sign(0, idx + 1) * v).sum();
        assert!((hashed_dot(&[1.5], &map, &a).unwrap() - 1.5 * expected).abs() < 1e-15);
    }

    #[test]
    fn unbiasedness_trivial_cases() {
        let x = [0.3, -0.2, 0.9];
        assert_eq!(unbiasedness_trial(&x, &[0.0; 3], 4, 100).unwrap(), (0.0, 0.0));
        let e1 = [1.0, 0.0, 0.0];
        assert_eq!(unbiasedness_trial(&e1, &e1, 2, 100).unwrap(), (1.0, 0.0));
        assert!(unbiasedness_trial(&x, &[1.0], 4, 100).is_err());
    }

    #[test]
    fn random_layers_match_oracle() {
        let report = run_equivalence_suite(20, 99).unwrap();
        assert!(report.passes(1e-12), "{report:?}");
    }

    #[test]
    fn oracle_rejects_direct_assignment() {
        let config = HashedLayerConfig {
            assignment: BucketAssignment::Direct,
            ..Default::default()
        };
        let layer = HashedLayer::with_config(2, 2, HashSpec::new(0, 0, 6).unwrap(), config).unwrap();
        assert!(oracle_forward(&layer, &[1.0, 1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn phi_is_sparsity_preserving_and_contracts_l1(
                seed in any::<u64>(), k in 1usize..40, i in 0usize..50,
                a in proptest::collection::vec(prop_oneof![Just(0.0), -10.0f64..10.0], 0..60),
            ) {
                let map = PhiMap::new(HashSpec::new(seed, 0, k).unwrap(), i);
                let phi = map.phi(&a).unwrap();
                let nnz_in = a.iter().filter(|v| **v != 0.0).count();
                let nnz_out = phi.iter().filter(|v| **v != 0.0).count();
                prop_assert!(nnz_out <= nnz_in);
                let l1_in: f64 = a.iter().map(|v| v.abs()).sum();
                let l1_out: f64 = phi.iter().map(|v| v.abs()).sum();
                prop_assert!(l1_out <= l1_in * (1.0 + 1e-12));
            }
        }
    }
}

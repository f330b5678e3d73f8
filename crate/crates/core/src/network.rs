//! Feed-forward classifier: a chain of layers, a hidden activation per
//! layer boundary and a softmax output.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::layers::{Layer, LinearMap};
use crate::math::{softmax, softmax_cross_entropy, Activation, Target};

/// Derives an independent 64-bit seed from a master seed, a purpose tag and
/// an index. Streams for hashing, initialization, masks, shuffling and
/// dropout never share a seed this way.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut key = Vec::with_capacity(tag.len() + 8);
    key.extend_from_slice(tag.as_bytes());
    key.extend_from_slice(&index.to_le_bytes());
    xxhash_rust::xxh64::xxh64(&key, master)
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    /// `activations[l]` follows layer `l`; the last layer feeds the softmax.
    activations: Vec<Activation>,
}

/// Per-layer values of one forward pass. `a[0]` is the input, `a[l]` the
/// (dropped-out) output of hidden layer `l`, `z[l]` the pre-activation of
/// layer `l + 1`'s input side, so `z.last()` holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub a: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (`0` or `1/(1-p)`); empty without dropout.
    pub dropout: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.z.last().expect("non-empty network")
    }
}

/// Error terms `δ` for every layer output, `deltas[l]` belonging to
/// `z[l]`. The input layer has none.
#[derive(Debug, Clone)]
pub struct BackwardTrace {
    pub deltas: Vec<Vec<f64>>,
}

impl Network {
    /// Uses `activation` after every hidden layer.
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let n = layers.len().saturating_sub(1);
        Self::with_activations(layers, vec![activation; n])
    }

    pub fn with_activations(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DegenerateArchitecture("network needs at least one layer".into()));
        }
        check_len("network: hidden activations", layers.len() - 1, activations.len())?;
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::DegenerateArchitecture(format!(
                    "layer {l} outputs {} units but layer {} takes {}",
                    pair[0].n_out(),
                    l + 1,
                    pair[1].n_in()
                )));
            }
        }
        Ok(Self { layers, activations })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn set_activation(&mut self, activation: Activation) {
        for a in &mut self.activations {
            *a = activation;
        }
    }

    /// `n^1, ..., n^L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].n_in()];
        w.extend(self.layers.iter().map(|l| l.n_out()));
        w
    }

    /// Number of layers counting input and output (`L`).
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("non-empty").n_out()
    }

    pub fn trainable_count(&self) -> usize {
        self.layers.iter().map(|l| l.trainable_count()).sum()
    }

    /// Initializes layer `l` from `derive_seed(init_seed, "init", l)`.
    pub fn init_weights(&mut self, init_seed: u64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.init_weights(derive_seed(init_seed, "init", l as u64));
        }
    }

    /// Forward pass. With `dropout = Some((p, rng))` each hidden unit is
    /// zeroed with probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn forward_trace<R: Rng>(&self, x: &[f64], dropout: Option<(f64, &mut R)>) -> Result<ForwardTrace> {
        check_len("network: input width", self.n_inputs(), x.len())?;
        let mut a = Vec::with_capacity(self.layers.len());
        let mut z = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::new();
        a.push(x.to_vec());
        let mut dropout = dropout;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.n_out()];
            layer.forward_into(&a[l], &mut out);
            if l + 1 < self.layers.len() {
                let f = self.activations[l];
                let mut next: Vec<f64> = out.iter().map(|&v| f.apply(v)).collect();
                if let Some((p, rng)) = dropout.as_mut() {
                    let keep = 1.0 / (1.0 - *p);
                    let mask: Vec<f64> = (0..next.len())
                        .map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep })
                        .collect();
                    for (v, &m) in next.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    masks.push(mask);
                }
                a.push(next);
            }
            z.push(out);
        }
        Ok(ForwardTrace { a, z, dropout: masks })
    }

    /// Back-propagates `delta_out = ∂L/∂logits`. The error for the network
    /// input is never formed.
    pub fn backward(&self, trace: &ForwardTrace, delta_out: &[f64]) -> Result<BackwardTrace> {
        check_len("network: output delta", self.n_classes(), delta_out.len())?;
        let n = self.layers.len();
        let mut deltas = vec![Vec::new(); n];
        deltas[n - 1] = delta_out.to_vec();
        for l in (1..n).rev() {
            let mut d = vec![0.0; self.layers[l].n_in()];
            self.layers[l].backprop_into(&deltas[l], &mut d);
            let f = self.activations[l - 1];
            for (k, (dk, &zk)) in d.iter_mut().zip(&trace.z[l - 1]).enumerate() {
                *dk *= f.derivative(zk);
                if let Some(mask) = trace.dropout.get(l - 1) {
                    *dk *= mask[k];
                }
            }
            deltas[l - 1] = d;
        }
        Ok(BackwardTrace { deltas })
    }

    /// `grads[l] += ∂L/∂params(layer l)`.
    pub fn accumulate_gradients(&self, trace: &ForwardTrace, back: &BackwardTrace, grads: &mut [Vec<f64>]) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.accumulate_gradient(&trace.a[l], &back.deltas[l], &mut grads[l]);
        }
    }

    /// Copy with every hashed layer replaced by a dense layer holding its
    /// virtual matrix, or `None` when there is nothing to replace. Forward
    /// and error passes through the copy are bit-identical.
    pub fn dense_view(&self) -> Option<Network> {
        if !self.layers.iter().any(|l| matches!(l, Layer::Hashed(_))) {
            return None;
        }
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Hashed(h) => Layer::Standard(h.to_standard()),
                other => other.clone(),
            })
            .collect();
        Some(Network { layers, activations: self.activations.clone() })
    }

    /// Maps gradients taken on [`Network::dense_view`] back onto this
    /// network's parameters, adding them to `grads`.
    pub fn fold_view_gradients(&self, view_grads: &[Vec<f64>], grads: &mut [Vec<f64>]) {
        for ((layer, vg), g) in self.layers.iter().zip(view_grads).zip(grads) {
            match layer {
                Layer::Hashed(h) => h.fold_dense_gradient(vg, g),
                _ => g.iter_mut().zip(vg).for_each(|(a, &b)| *a += b),
            }
        }
    }

    /// Zeroed gradient buffers shaped like the parameters.
    pub fn zero_gradients(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.params().len()]).collect()
    }

    /// Loss and parameter gradient for one sample, without dropout.
    pub fn loss_and_gradient(&self, x: &[f64], target: Target<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
        let trace = self.forward_trace::<rand_chacha::ChaCha8Rng>(x, None)?;
        let (loss, delta) = softmax_cross_entropy(trace.logits(), target)?;
        let back = self.backward(&trace, &delta)?;
        let mut grads = self.zero_gradients();
        self.accumulate_gradients(&trace, &back, &mut grads);
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &[f64], target: Target<'_>) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.logits(x)?, target)?.0)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network: input width", self.n_inputs(), x.len())?;
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.n_out()];
            layer.forward_into(&a, &mut z);
            if l + 1 < self.layers.len() {
                let f = self.activations[l];
                z.iter_mut().for_each(|v| *v = f.apply(*v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.logits(x)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Fraction of misclassified rows.
    pub fn error_rate(&self, samples: &crate::math::Matrix, labels: &[usize]) -> Result<f64> {
        check_len("network: label count", samples.rows(), labels.len())?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        if let Some(view) = self.dense_view() {
            return view.error_rate(samples, labels);
        }
        let mut wrong = 0usize;
        for (r, &y) in labels.iter().enumerate() {
            if self.predict(samples.row(r))? != y {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / labels.len() as f64)
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::HashSpec;
    use crate::layers::{HashedLayer, StandardLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> Network {
        let mut net = Network::new(
            vec![
                Layer::Standard(StandardLayer::new(4, 6)),
                Layer::Hashed(HashedLayer::new(6, 3, HashSpec::new(1, 1, 7).unwrap()).unwrap()),
            ],
            Activation::Tanh,
        )
        .unwrap();
        net.init_weights(9);
        net
    }

    #[test]
    fn rejects_broken_chains() {
        let r = Network::new(
            vec![
                Layer::Standard(StandardLayer::new(4, 6)),
                Layer::Standard(StandardLayer::new(5, 2)),
            ],
            Activation::Relu,
        );
        assert!(matches!(r, Err(Error::DegenerateArchitecture(_))));
    }

    #[test]
    fn trace_lengths_match_depth() {
        let net = small_net();
        let t = net.forward_trace::<ChaCha8Rng>(&[0.1, 0.2, 0.3, 0.4], None).unwrap();
        assert_eq!(t.a.len(), net.depth() - 1);
        assert_eq!(t.z.len(), net.depth() - 1);
        assert_eq!(t.logits(), net.logits(&[0.1, 0.2, 0.3, 0.4]).unwrap().as_slice());
        let b = net.backward(&t, &[0.1, -0.2, 0.1]).unwrap();
        assert_eq!(b.deltas.len(), net.depth() - 1);
        assert_eq!(net.widths(), vec![4, 6, 3]);
    }

    #[test]
    fn dropout_scales_survivors() {
        let net = small_net();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.5, -0.5, 0.25, 1.0];
        let plain = net.forward_trace::<ChaCha8Rng>(&x, None).unwrap();
        let dropped = net.forward_trace(&x, Some((0.5, &mut rng))).unwrap();
        for (k, &m) in dropped.dropout[0].iter().enumerate() {
            assert!(m == 0.0 || m == 2.0);
            assert_eq!(dropped.a[1][k], plain.a[1][k] * m);
        }
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let s = derive_seed(5, "init", 0);
        assert_eq!(s, derive_seed(5, "init", 0));
        assert_ne!(s, derive_seed(5, "init", 1));
        assert_ne!(s, derive_seed(5, "hash", 0));
        assert_ne!(s, derive_seed(6, "init", 0));
    }

    #[test]
    fn argmax_takes_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}

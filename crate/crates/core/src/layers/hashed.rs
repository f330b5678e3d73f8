//! Layer whose virtual matrix is `V_ij = ξ(i,j) · w_{h(i,j)}`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hashing::HashSpec;
use crate::math::{Activation, Matrix};

use super::{fill_uniform, glorot_bound, input_at, LinearMap, StandardLayer};

/// How connections are assigned to buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketAssignment {
    /// `h(i, j)` from the seeded bucket hash.
    #[default]
    Hashed,
    /// Injective enumeration `(j − j0) · n_out + i`. Requires one bucket per
    /// hashed connection; used for collision-free comparisons.
    Direct,
}

/// Whether bucket/sign pairs are recomputed from the hash on every pass or
/// looked up in a table built once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    #[default]
    OnTheFly,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedLayerConfig {
    pub sign_enabled: bool,
    /// When false, the bias column is not hashed; each output keeps its own
    /// free bias stored after the `K` shared weights.
    pub hash_bias: bool,
    pub assignment: BucketAssignment,
    pub index_mode: IndexMode,
}

impl Default for HashedLayerConfig {
    fn default() -> Self {
        Self {
            sign_enabled: true,
            hash_bias: true,
            assignment: BucketAssignment::Hashed,
            index_mode: IndexMode::OnTheFly,
        }
    }
}

const SIGN_BIT: u32 = 1 << 31;

#[derive(Debug, Clone)]
pub struct HashedLayer {
    n_in: usize,
    n_out: usize,
    spec: HashSpec,
    config: HashedLayerConfig,
    /// `K` shared weights, then `n_out` free biases when `!hash_bias`.
    params: Vec<f64>,
    /// Packed `bucket | sign << 31`, input-major over the hashed columns.
    table: Option<Vec<u32>>,
}

impl HashedLayer {
    pub fn new(n_in: usize, n_out: usize, spec: HashSpec) -> Result<Self> {
        Self::with_config(n_in, n_out, spec, HashedLayerConfig::default())
    }

    pub fn with_config(
        n_in: usize,
        n_out: usize,
        spec: HashSpec,
        config: HashedLayerConfig,
    ) -> Result<Self> {
        if spec.bucket_count == 0 {
            return Err(Error::InvalidBucketCount);
        }
        if n_in >= u32::MAX as usize || n_out > u32::MAX as usize {
            return Err(Error::Config("layer widths must stay below 2^32".into()));
        }
        let j0 = usize::from(!config.hash_bias);
        let hashed_connections = n_out * (n_in + 1 - j0);
        if config.assignment == BucketAssignment::Direct && spec.bucket_count < hashed_connections {
            return Err(Error::Config(format!(
                "direct assignment needs {hashed_connections} buckets, layer has {}",
                spec.bucket_count
            )));
        }
        let n_params = spec.bucket_count + if config.hash_bias { 0 } else { n_out };
        let mut layer = Self {
            n_in,
            n_out,
            spec,
            config,
            params: vec![0.0; n_params],
            table: None,
        };
        if config.index_mode == IndexMode::Precomputed {
            layer.build_table()?;
        }
        Ok(layer)
    }

    pub(crate) fn from_raw(
        n_in: usize,
        n_out: usize,
        spec: HashSpec,
        config: HashedLayerConfig,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut layer = Self::with_config(n_in, n_out, spec, config)?;
        check_len("HashedLayer params", layer.params.len(), params.len())?;
        layer.params = params;
        Ok(layer)
    }

    fn build_table(&mut self) -> Result<()> {
        if self.spec.bucket_count > SIGN_BIT as usize {
            return Err(Error::Config(
                "precomputed index mode supports at most 2^31 buckets".into(),
            ));
        }
        let j0 = self.first_column();
        let mut table = Vec::with_capacity(self.n_out * (self.n_in + 1 - j0));
        for j in j0..=self.n_in {
            for i in 0..self.n_out {
                let (b, s) = self.compute_entry(i, j);
                table.push(b as u32 | if s < 0.0 { SIGN_BIT } else { 0 });
            }
        }
        self.table = Some(table);
        Ok(())
    }

    pub fn set_index_mode(&mut self, mode: IndexMode) -> Result<()> {
        self.config.index_mode = mode;
        match mode {
            IndexMode::OnTheFly => {
                self.table = None;
                Ok(())
            }
            IndexMode::Precomputed => self.build_table(),
        }
    }

    pub fn spec(&self) -> &HashSpec {
        &self.spec
    }

    pub fn config(&self) -> &HashedLayerConfig {
        &self.config
    }

    pub fn bucket_count(&self) -> usize {
        self.spec.bucket_count
    }

    pub fn sign_enabled(&self) -> bool {
        self.config.sign_enabled
    }

    pub fn hash_bias(&self) -> bool {
        self.config.hash_bias
    }

    /// The shared weight vector `w`.
    pub fn weights(&self) -> &[f64] {
        &self.params[..self.spec.bucket_count]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        let k = self.spec.bucket_count;
        &mut self.params[..k]
    }

    /// Unhashed output biases (empty when the bias column is hashed).
    pub fn free_bias(&self) -> &[f64] {
        &self.params[self.spec.bucket_count..]
    }

    pub fn free_bias_mut(&mut self) -> &mut [f64] {
        let k = self.spec.bucket_count;
        &mut self.params[k..]
    }

    #[inline]
    fn first_column(&self) -> usize {
        usize::from(!self.config.hash_bias)
    }

    #[inline]
    fn compute_entry(&self, i: usize, j: usize) -> (usize, f64) {
        let bucket = match self.config.assignment {
            BucketAssignment::Hashed => self.spec.bucket(i, j),
            BucketAssignment::Direct => (j - self.first_column()) * self.n_out + i,
        };
        let sign = if self.config.sign_enabled {
            self.spec.sign(i, j)
        } else {
            1.0
        };
        (bucket, sign)
    }

    /// Bucket and sign of a hashed connection.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> (usize, f64) {
        match &self.table {
            Some(t) => unpack(t[(j - self.first_column()) * self.n_out + i]),
            None => self.compute_entry(i, j),
        }
    }

    /// `V_ij` without materializing the matrix; `j = 0` is the bias column.
    pub fn virtual_weight(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n_out || j > self.n_in {
            return Err(Error::IndexOutOfRange {
                i,
                j,
                n_out: self.n_out,
                n_in: self.n_in,
            });
        }
        Ok(self.virtual_entry(i, j))
    }

    pub fn virtual_matrix(&self) -> Matrix {
        super::materialize(self)
    }

    /// Glorot-uniform shared weights at the scale of the virtual matrix;
    /// free biases start at zero.
    pub fn init_weights(&mut self, init_seed: u64) {
        let bound = glorot_bound(self.n_in, self.n_out);
        let k = self.spec.bucket_count;
        fill_uniform(&mut self.params[..k], bound, init_seed);
        self.params[k..].fill(0.0);
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

    /// `∂L/∂w_k = Σ_i Σ_j a_j δ_i ξ(i,j) [h(i,j) = k]`.
    pub fn gradient_shared(&self, a_prev: &[f64], delta_next: &[f64]) -> Result<Vec<f64>> {
        let mut grad = super::gradient_checked(self, a_prev, delta_next)?;
        grad.truncate(self.spec.bucket_count);
        Ok(grad)
    }

    /// Dense layer holding the materialized virtual matrix. Its forward and
    /// error passes are bit-identical to this layer's.
    pub fn to_standard(&self) -> StandardLayer {
        let n_out = self.n_out;
        let j0 = self.first_column();
        let w = self.weights();
        let mut dense = vec![0.0; n_out * (self.n_in + 1)];
        if j0 == 1 {
            dense[..n_out].copy_from_slice(self.free_bias());
        }
        for j in j0..=self.n_in {
            let col = &mut dense[j * n_out..(j + 1) * n_out];
            match &self.table {
                Some(t) => {
                    let packed = &t[(j - j0) * n_out..(j - j0 + 1) * n_out];
                    for (v, &p) in col.iter_mut().zip(packed) {
                        let (b, s) = unpack(p);
                        *v = s * w[b];
                    }
                }
                None => {
                    for (i, v) in col.iter_mut().enumerate() {
                        let (b, s) = self.compute_entry(i, j);
                        *v = s * w[b];
                    }
                }
            }
        }
        StandardLayer::from_raw(self.n_in, self.n_out, dense).expect("shape is consistent")
    }

    /// Adds the chain rule through `V_ij = ξ(i,j) w_{h(i,j)}` to `grad`:
    /// `grad[k] += Σ_{h(i,j)=k} ξ(i,j) G_ij`, where `dense` is a gradient
    /// with respect to the virtual matrix in [`StandardLayer`] layout.
    pub fn fold_dense_gradient(&self, dense: &[f64], grad: &mut [f64]) {
        let n_out = self.n_out;
        let j0 = self.first_column();
        let (gw, gb) = grad.split_at_mut(self.spec.bucket_count);
        if j0 == 1 {
            for (g, &d) in gb.iter_mut().zip(&dense[..n_out]) {
                *g += d;
            }
        }
        for j in j0..=self.n_in {
            let col = &dense[j * n_out..(j + 1) * n_out];
            match &self.table {
                Some(t) => {
                    let packed = &t[(j - j0) * n_out..(j - j0 + 1) * n_out];
                    for (&g, &p) in col.iter().zip(packed) {
                        let (b, s) = unpack(p);
                        gw[b] += s * g;
                    }
                }
                None => {
                    for (i, &g) in col.iter().enumerate() {
                        let (b, s) = self.compute_entry(i, j);
                        gw[b] += s * g;
                    }
                }
            }
        }
    }

    /// Gradient of all parameters: the `K` shared weights followed by the
    /// free biases, if any.
    pub fn gradient(&self, a_prev: &[f64], delta_next: &[f64]) -> Result<Vec<f64>> {
        super::gradient_checked(self, a_prev, delta_next)
    }
}

#[inline]
fn unpack(packed: u32) -> (usize, f64) {
    let sign = if packed & SIGN_BIT != 0 { -1.0 } else { 1.0 };
    ((packed & !SIGN_BIT) as usize, sign)
}

impl LinearMap for HashedLayer {
    fn n_in(&self) -> usize {
        self.n_in
    }

    fn n_out(&self) -> usize {
        self.n_out
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_into(&self, a_prev: &[f64], z: &mut [f64]) {
        let n_out = self.n_out;
        let j0 = self.first_column();
        let w = self.weights();
        if self.config.hash_bias {
            z.fill(0.0);
        } else {
            z.copy_from_slice(self.free_bias());
        }
        for j in j0..=self.n_in {
            let aj = input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            match &self.table {
                Some(t) => {
                    let col = &t[(j - j0) * n_out..(j - j0 + 1) * n_out];
                    for (zi, &p) in z.iter_mut().zip(col) {
                        let (b, s) = unpack(p);
                        *zi += (s * w[b]) * aj;
                    }
                }
                None => {
                    for (i, zi) in z.iter_mut().enumerate() {
                        let (b, s) = self.compute_entry(i, j);
                        *zi += (s * w[b]) * aj;
                    }
                }
            }
        }
    }

    fn backprop_into(&self, delta_next: &[f64], out: &mut [f64]) {
        let n_out = self.n_out;
        let j0 = self.first_column();
        let w = self.weights();
        for j in 1..=self.n_in {
            let mut acc = 0.0;
            match &self.table {
                Some(t) => {
                    let col = &t[(j - j0) * n_out..(j - j0 + 1) * n_out];
                    for (&p, &d) in col.iter().zip(delta_next) {
                        let (b, s) = unpack(p);
                        acc += (s * w[b]) * d;
                    }
                }
                None => {
                    for (i, &d) in delta_next.iter().enumerate() {
                        let (b, s) = self.compute_entry(i, j);
                        acc += (s * w[b]) * d;
                    }
                }
            }
            out[j - 1] = acc;
        }
    }

    fn accumulate_gradient(&self, a_prev: &[f64], delta_next: &[f64], grad: &mut [f64]) {
        let n_out = self.n_out;
        let k = self.spec.bucket_count;
        let j0 = self.first_column();
        let (gw, gb) = grad.split_at_mut(k);
        if !self.config.hash_bias {
            for (g, &d) in gb.iter_mut().zip(delta_next) {
                *g += d;
            }
        }
        for j in j0..=self.n_in {
            let aj = input_at(a_prev, j);
            if aj == 0.0 {
                continue;
            }
            match &self.table {
                Some(t) => {
                    let col = &t[(j - j0) * n_out..(j - j0 + 1) * n_out];
                    for (&p, &d) in col.iter().zip(delta_next) {
                        let (b, s) = unpack(p);
                        gw[b] += s * (aj * d);
                    }
                }
                None => {
                    for (i, &d) in delta_next.iter().enumerate() {
                        let (b, s) = self.compute_entry(i, j);
                        gw[b] += s * (aj * d);
                    }
                }
            }
        }
    }

    fn virtual_entry(&self, i: usize, j: usize) -> f64 {
        if j == 0 && !self.config.hash_bias {
            return self.free_bias()[i];
        }
        let (b, s) = self.entry(i, j);
        s * self.weights()[b]
    }
}

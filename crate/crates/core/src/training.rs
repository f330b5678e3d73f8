//! Mini-batch SGD with momentum and inverted dropout, distillation targets
//! and a finite-difference gradient check.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::layers::LinearMap;
use crate::math::{softmax, softmax_cross_entropy, Activation, Matrix, Target};
use crate::network::{argmax, derive_seed, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub dk_temperature: f64,
    /// Weight of the hard-label term.
    pub dk_mix: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            dropout_rate: 0.0,
            batch_size: 50,
            epochs: 10,
            rng_seed: 0,
            dk_temperature: 2.0,
            dk_mix: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.dk_temperature > 0.0 && self.dk_temperature.is_finite()) {
            return bad(format!("dk_temperature must be positive, got {}", self.dk_temperature));
        }
        if !(0.0..=1.0).contains(&self.dk_mix) {
            return bad(format!("dk_mix must lie in [0, 1], got {}", self.dk_mix));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Error of the training pass itself (dropout active).
    pub train_err: f64,
    pub test_err: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_err,test_err";

    pub fn final_test_error(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.test_err)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            let test = r.test_err.map(|t| format!("{t:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.6},{:.6},{}", r.epoch, r.train_loss, r.train_err, test);
        }
        s
    }
}

/// Per-sample loss gradient w.r.t. the logits. With soft targets the loss
/// is `λ CE(hard) + (1 − λ) CE(soft)`.
pub fn target_loss_gradient(logits: &[f64], label: usize, soft: Option<&[f64]>, dk_mix: f64) -> Result<(f64, Vec<f64>)> {
    let (hard_loss, mut grad) = softmax_cross_entropy(logits, Target::Class(label))?;
    let Some(soft) = soft else {
        return Ok((hard_loss, grad));
    };
    let (soft_loss, soft_grad) = softmax_cross_entropy(logits, Target::Soft(soft))?;
    for (g, s) in grad.iter_mut().zip(&soft_grad) {
        *g = dk_mix * *g + (1.0 - dk_mix) * s;
    }
    Ok((dk_mix * hard_loss + (1.0 - dk_mix) * soft_loss, grad))
}

/// Mean gradient of one batch, for inspection and tests. Dropout is off.
pub fn batch_gradient(net: &Network, data: &Dataset, indices: &[usize], dk_mix: f64) -> Result<Vec<Vec<f64>>> {
    let mut grads = net.zero_gradients();
    for &r in indices {
        let soft = data.soft_targets.as_ref().map(|m| m.row(r));
        let trace = net.forward_trace::<ChaCha8Rng>(data.samples.row(r), None)?;
        let (_, delta) = target_loss_gradient(trace.logits(), data.labels[r], soft, dk_mix)?;
        let back = net.backward(&trace, &delta)?;
        net.accumulate_gradients(&trace, &back, &mut grads);
    }
    let scale = 1.0 / indices.len() as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok(grads)
}

/// Trains in place. Shuffling and dropout draw from streams derived from
/// `config.rng_seed`; soft targets on `data` switch on the distillation loss.
pub fn train(net: &mut Network, data: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_len("train: sample width", net.n_inputs(), data.dim())?;
    if let Some(t) = test {
        check_len("train: test sample width", net.n_inputs(), t.dim())?;
    }
    if data.n_classes > net.n_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes, network outputs {}",
            data.n_classes,
            net.n_classes()
        )));
    }

    let mut velocity = net.zero_gradients();
    let mut grads = net.zero_gradients();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, "dropout", 0));
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, "shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut wrong) = (0.0, 0usize);

        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let mut batch_loss = 0.0;
            {
                // Hashed layers are expanded once per batch; the weights
                // are fixed until the update below.
                let view = net.dense_view();
                let fwd: &Network = view.as_ref().unwrap_or(net);
                let mut view_grads = view.as_ref().map(|v| v.zero_gradients());
                for &r in chunk {
                    let soft = data.soft_targets.as_ref().map(|m| m.row(r));
                    let dropout = (config.dropout_rate > 0.0).then_some((config.dropout_rate, &mut dropout_rng));
                    let trace = fwd.forward_trace(data.samples.row(r), dropout)?;
                    let (loss, delta) = target_loss_gradient(trace.logits(), data.labels[r], soft, config.dk_mix)?;
                    if argmax(trace.logits()) != data.labels[r] {
                        wrong += 1;
                    }
                    batch_loss += loss;
                    let back = fwd.backward(&trace, &delta)?;
                    fwd.accumulate_gradients(&trace, &back, view_grads.as_mut().unwrap_or(&mut grads));
                }
                if let Some(vg) = &view_grads {
                    net.fold_view_gradients(vg, &mut grads);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: batch_loss / chunk.len() as f64,
                });
            }
            loss_sum += batch_loss;

            let step = config.learning_rate / chunk.len() as f64;
            for ((layer, v), g) in net.layers_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                for ((w, v), &g) in layer.params_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = config.momentum * *v - step * g;
                    *w += *v;
                }
                layer.project();
            }
        }

        let test_err = test.map(|t| net.error_rate(&t.samples, &t.labels)).transpose()?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            train_err: wrong as f64 / data.len() as f64,
            test_err,
        });
    }
    Ok(log)
}

/// Rows `softmax(teacher_logits / T)`.
pub fn distill_targets(teacher: &Network, data: &Dataset, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let k = teacher.n_classes();
    let mut out = Vec::with_capacity(data.len() * k);
    for r in 0..data.len() {
        let mut logits = teacher.logits(data.samples.row(r))?;
        if temperature != 1.0 {
            logits.iter_mut().for_each(|z| *z /= temperature);
        }
        out.extend(softmax(&logits)?);
    }
    Matrix::from_vec(data.len(), k, out)
}

/// Largest relative error `|g − ĝ| / max(|g| + |ĝ|, 1e-4)` between the
/// analytic gradient `g` and central differences `ĝ` over all trainable
/// parameters. Needs tanh or sigmoid hidden units; pinned entries (removed
/// edges) are skipped.
pub fn grad_check(net: &Network, x: &[f64], target: Target<'_>, eps: f64) -> Result<f64> {
    if net.activations().contains(&Activation::Relu) {
        return Err(Error::Config("gradient check needs smooth activations (use tanh)".into()));
    }
    let (_, analytic) = net.loss_and_gradient(x, target)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for l in 0..net.layers().len() {
        for k in 0..net.layers()[l].params().len() {
            if net.layers()[l].is_frozen(k) {
                continue;
            }
            let w = net.layers()[l].params()[k];
            probe.layers_mut()[l].params_mut()[k] = w + eps;
            let up = probe.loss(x, target)?;
            probe.layers_mut()[l].params_mut()[k] = w - eps;
            let down = probe.loss(x, target)?;
            probe.layers_mut()[l].params_mut()[k] = w;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[l][k];
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4));
        }
    }
    Ok(worst)
}

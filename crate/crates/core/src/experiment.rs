//! Budget-matched network construction and compression/expansion sweeps.
//!
//! Along the compression axis a value `c` shrinks a base architecture:
//! hashed nets keep the base widths with `round(c · virtual)` buckets per
//! layer, the standard baseline shrinks its hidden widths by the factor
//! from [`solve_shrinkage`], edge removal keeps each connection with
//! probability `c` and low rank picks the largest rank that fits each
//! layer's budget.
//!
//! Along the expansion axis a value `e` keeps the storage of the base
//! network fixed and multiplies the virtual hidden widths by `e`. The
//! standard baseline is the base network itself.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::{check_compression, full_param_count, hashed_layer_budgets, solve_shrinkage, Architecture};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hashing::HashSpec;
use crate::layers::{BucketAssignment, HashedLayerConfig, IndexMode, Layer, LinearMap, LowRankLayer};
use crate::math::Activation;
use crate::model_io::LayerSpec;
use crate::network::{derive_seed, Network};
use crate::training::{distill_targets, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hashed,
    HashedDk,
    Standard,
    StandardDk,
    EdgeRemoved,
    LowRank,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Hashed,
        Method::HashedDk,
        Method::Standard,
        Method::StandardDk,
        Method::EdgeRemoved,
        Method::LowRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hashed => "hashed",
            Method::HashedDk => "hashed_dk",
            Method::Standard => "standard",
            Method::StandardDk => "standard_dk",
            Method::EdgeRemoved => "edge_removed",
            Method::LowRank => "low_rank",
        }
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, Method::HashedDk | Method::StandardDk)
    }

    fn base(self) -> Method {
        match self {
            Method::HashedDk => Method::Hashed,
            Method::StandardDk => Method::Standard,
            m => m,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .or_else(|| (s == "dk").then_some(Method::StandardDk))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected hashed, hashed_dk, standard, standard_dk, edge_removed or low_rank)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Compression,
    Expansion,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Compression => "compression",
            Axis::Expansion => "expansion",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compression" => Ok(Axis::Compression),
            "expansion" => Ok(Axis::Expansion),
            other => Err(Error::Config(format!("unknown axis `{other}` (expected compression or expansion)"))),
        }
    }
}

/// Everything needed to build one network of a sweep.
#[derive(Debug, Clone)]
pub struct NetworkPlan {
    pub method: Method,
    pub axis: Axis,
    pub value: f64,
    /// Base architecture `n^1..n^L`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Collision-free bucket assignment for hashed layers when every layer
    /// has one bucket per connection.
    pub injective: bool,
    pub index_mode: IndexMode,
    /// Uniform bucket count overriding the budget (hashed only).
    pub buckets: Option<usize>,
    /// Seeds hashing, masks and bases.
    pub structure_seed: u64,
}

impl NetworkPlan {
    pub fn new(method: Method, axis: Axis, value: f64, widths: Vec<usize>) -> Self {
        Self {
            method,
            axis,
            value,
            widths,
            activation: Activation::Relu,
            injective: false,
            index_mode: IndexMode::Precomputed,
            buckets: None,
            structure_seed: 0,
        }
    }

    /// Virtual widths of the built network.
    pub fn virtual_widths(&self) -> Result<Vec<usize>> {
        check_compression(self.value)?;
        let w = &self.widths;
        let last = w.len() - 1;
        match (self.axis, self.method.base()) {
            (Axis::Compression, Method::Standard) => {
                if self.value == 1.0 {
                    return Ok(w.clone());
                }
                let arch = Architecture::new(w.clone(), self.value)?;
                Ok(solve_shrinkage(&arch)?.widths)
            }
            (Axis::Compression, _) | (Axis::Expansion, Method::Standard) => Ok(w.clone()),
            (Axis::Expansion, _) => Ok(w
                .iter()
                .enumerate()
                .map(|(l, &n)| {
                    if l == 0 || l == last {
                        n
                    } else {
                        crate::budget::round_half_up(n as f64 * self.value).max(1)
                    }
                })
                .collect()),
        }
    }

    /// Stored weights per layer (output biases of hashed nets excluded).
    pub fn layer_budgets(&self) -> Result<Vec<usize>> {
        match self.axis {
            Axis::Compression => Ok(hashed_layer_budgets(&self.widths, self.value)),
            Axis::Expansion => Ok(hashed_layer_budgets(&self.widths, 1.0)),
        }
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.widths.len() < 2 {
            return Err(Error::DegenerateArchitecture("need at least input and output widths".into()));
        }
        let v = self.virtual_widths()?;
        let budgets = self.layer_budgets()?;
        let n_layers = v.len() - 1;
        let mut specs = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (v[l], v[l + 1]);
            let is_last = l + 1 == n_layers;
            let seed = derive_seed(self.structure_seed, "layer", l as u64);
            let spec = match self.method.base() {
                Method::Standard => LayerSpec::Standard { n_in, n_out },
                Method::Hashed => {
                    let hash_bias = !is_last;
                    let connections = n_out * (n_in + usize::from(hash_bias));
                    let k = self.buckets.unwrap_or(budgets[l]).max(1);
                    let assignment = if self.injective {
                        if k < connections {
                            return Err(Error::InfeasibleBudget(format!(
                                "injective assignment needs {connections} buckets in layer {l}, budget is {k}"
                            )));
                        }
                        BucketAssignment::Direct
                    } else {
                        BucketAssignment::Hashed
                    };
                    LayerSpec::Hashed {
                        n_in,
                        n_out,
                        base_seed: self.structure_seed,
                        layer_index: l as u32,
                        bucket_count: k,
                        config: HashedLayerConfig {
                            sign_enabled: true,
                            hash_bias,
                            assignment,
                            index_mode: self.index_mode,
                        },
                    }
                }
                Method::EdgeRemoved => {
                    let virtual_count = if is_last { n_in * n_out } else { (n_in + 1) * n_out };
                    let keep_prob = budgets[l] as f64 / virtual_count as f64;
                    if keep_prob > 1.0 {
                        return Err(Error::InfeasibleBudget(format!(
                            "edge removal cannot exceed the dense layer ({} > {virtual_count} in layer {l})",
                            budgets[l]
                        )));
                    }
                    if keep_prob <= 0.0 {
                        return Err(Error::InfeasibleBudget(format!("layer {l} keeps no connections")));
                    }
                    LayerSpec::EdgeRemoved { n_in, n_out, keep_prob, mask_seed: seed, mask_bias: !is_last }
                }
                Method::LowRank => {
                    let budget = budgets[l] + if is_last { n_out } else { 0 };
                    LayerSpec::LowRank {
                        n_in,
                        n_out,
                        rank: LowRankLayer::rank_for_budget(n_in, n_out, budget),
                        basis_seed: seed,
                    }
                }
                Method::HashedDk | Method::StandardDk => unreachable!("base() strips distillation"),
            };
            specs.push(spec);
        }
        Ok(specs)
    }

    /// Builds and initializes the network.
    pub fn build(&self, init_seed: u64) -> Result<Network> {
        let layers: Vec<Layer> = self.layer_specs()?.iter().map(|s| s.build()).collect::<Result<_>>()?;
        let mut net = Network::new(layers, self.activation)?;
        net.init_weights(init_seed);
        Ok(net)
    }
}

/// The uncompressed standard network on the base widths.
pub fn teacher_plan(widths: &[usize], activation: Activation) -> NetworkPlan {
    let mut p = NetworkPlan::new(Method::Standard, Axis::Compression, 1.0, widths.to_vec());
    p.activation = activation;
    p
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub injective: bool,
    pub seeds: usize,
    pub master_seed: u64,
    pub train: TrainConfig,
}

/// One CSV row. `test_error` and `param_count` are `None` for infeasible
/// points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub method: Method,
    pub seed: u64,
    pub test_error: Option<f64>,
    pub param_count: Option<usize>,
    pub note: Option<String>,
}

pub const SWEEP_CSV_HEADER: &str = "axis_value,method,seed,test_error,param_count";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let err = r.test_error.map(|e| format!("{e:.6}")).unwrap_or_else(|| "infeasible".into());
        let count = r.param_count.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{}", r.axis_value, r.method, r.seed, err, count);
    }
    s
}

/// Seeds for run `index` of a sweep. Every method at the same index gets
/// the same seeds, so runs pair up across methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    pub run: u64,
    pub structure: u64,
    pub init: u64,
    pub train: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, index: usize) -> Self {
        let run = derive_seed(master, "run", index as u64);
        Self {
            run,
            structure: derive_seed(run, "structure", 0),
            init: derive_seed(run, "init", 0),
            train: derive_seed(run, "train", 0),
        }
    }
}

/// Trains one plan and returns `(test_error, trainable parameters)`.
pub fn run_point(
    plan: &NetworkPlan,
    seeds: RunSeeds,
    train_cfg: &TrainConfig,
    data: &Dataset,
    test: &Dataset,
    soft: Option<&Dataset>,
) -> Result<(f64, usize, Network)> {
    let mut net = plan.build(seeds.init)?;
    let cfg = TrainConfig { rng_seed: seeds.train, ..train_cfg.clone() };
    let train_on = if plan.method.uses_teacher() {
        soft.ok_or_else(|| Error::Config("distillation method needs teacher targets".into()))?
    } else {
        data
    };
    train(&mut net, train_on, None, &cfg)?;
    let err = net.error_rate(&test.samples, &test.labels)?;
    Ok((err, net.trainable_count(), net))
}

/// Trains the teacher for run `seeds` and returns the training set with
/// its soft targets attached.
pub fn teacher_targets(
    widths: &[usize],
    activation: Activation,
    seeds: RunSeeds,
    train_cfg: &TrainConfig,
    data: &Dataset,
) -> Result<Dataset> {
    let mut teacher = teacher_plan(widths, activation).build(derive_seed(seeds.init, "teacher", 0))?;
    let cfg = TrainConfig { rng_seed: derive_seed(seeds.train, "teacher", 0), ..train_cfg.clone() };
    let mut plain = data.clone();
    plain.soft_targets = None;
    train(&mut teacher, &plain, None, &cfg)?;
    let soft = distill_targets(&teacher, &plain, train_cfg.dk_temperature)?;
    plain.with_soft_targets(soft)
}

/// Runs every (value, seed, method) point in that order. Infeasible points
/// become rows without an error value; other failures abort the sweep.
pub fn run_sweep(cfg: &SweepConfig, data: &Dataset, test: &Dataset, mut progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    if cfg.values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("sweep needs at least one method".into()));
    }
    if cfg.seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    for &v in &cfg.values {
        check_compression(v)?;
    }
    cfg.train.validate()?;
    let any_dk = cfg.methods.iter().any(|m| m.uses_teacher());
    let mut rows = Vec::new();
    for s in 0..cfg.seeds {
        let seeds = RunSeeds::derive(cfg.master_seed, s);
        let soft = if any_dk {
            Some(teacher_targets(&cfg.widths, cfg.activation, seeds, &cfg.train, data)?)
        } else {
            None
        };
        for &value in &cfg.values {
            for &method in &cfg.methods {
                let mut plan = NetworkPlan::new(method, cfg.axis, value, cfg.widths.clone());
                plan.activation = cfg.activation;
                plan.injective = cfg.injective && method.base() == Method::Hashed;
                plan.structure_seed = seeds.structure;
                let row = match run_point(&plan, seeds, &cfg.train, data, test, soft.as_ref()) {
                    Ok((err, count, _)) => SweepRow {
                        axis_value: value,
                        method,
                        seed: seeds.run,
                        test_error: Some(err),
                        param_count: Some(count),
                        note: None,
                    },
                    Err(e @ (Error::InfeasibleBudget(_) | Error::DegenerateArchitecture(_))) => SweepRow {
                        axis_value: value,
                        method,
                        seed: seeds.run,
                        test_error: None,
                        param_count: None,
                        note: Some(e.to_string()),
                    },
                    Err(e) => return Err(e),
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then_with(|| cfg.methods.iter().position(|&m| m == a.method).cmp(&cfg.methods.iter().position(|&m| m == b.method)))
    });
    Ok(rows)
}

/// Trainable parameters of the base standard network.
pub fn base_param_count(widths: &[usize]) -> usize {
    full_param_count(widths)
}

/// Paired comparison of two methods over rows sharing `seed`: returns
/// (mean error of `a`, mean error of `b`, runs where `a` beat `b`, pairs).
pub fn paired_wins(rows: &[SweepRow], value: f64, a: Method, b: Method) -> (f64, f64, usize, usize) {
    let pick = |m: Method| -> Vec<(u64, f64)> {
        rows.iter()
            .filter(|r| r.method == m && r.axis_value == value)
            .filter_map(|r| r.test_error.map(|e| (r.seed, e)))
            .collect()
    };
    let (ra, rb) = (pick(a), pick(b));
    let mut wins = 0;
    let mut pairs = 0;
    let (mut sa, mut sb) = (0.0, 0.0);
    for &(seed, ea) in &ra {
        if let Some(&(_, eb)) = rb.iter().find(|(s, _)| *s == seed) {
            pairs += 1;
            sa += ea;
            sb += eb;
            if ea < eb {
                wins += 1;
            }
        }
    }
    let n = pairs.max(1) as f64;
    (sa / n, sb / n, wins, pairs)
}

/// Stored parameters of every layer of `net`, for reporting.
pub fn layer_param_counts(net: &Network) -> Vec<usize> {
    net.layers().iter().map(|l| l.trainable_count()).collect()
}

/// Uniform-bucket hashed network, e.g. for gradient checks.
pub fn hashed_network(widths: &[usize], buckets: usize, seed: u64, activation: Activation) -> Result<Network> {
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let spec = HashSpec::new(seed, l as u32, buckets)?;
            Ok(Layer::Hashed(crate::layers::HashedLayer::new(w[0], w[1], spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut net = Network::new(layers, activation)?;
    net.init_weights(derive_seed(seed, "init", 0));
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::param_count_hashed;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("dk".parse::<Method>().unwrap(), Method::StandardDk);
        assert!("pruned".parse::<Method>().is_err());
    }

    #[test]
    fn hashed_compression_matches_budget_count() {
        let w = vec![784, 1000, 10];
        let plan = NetworkPlan::new(Method::Hashed, Axis::Compression, 0.125, w.clone());
        let net = plan.build(1).unwrap();
        assert_eq!(net.trainable_count(), param_count_hashed(&Architecture::new(w, 0.125).unwrap()));
    }

    #[test]
    fn standard_baseline_uses_shrunk_widths() {
        let plan = NetworkPlan::new(Method::Standard, Axis::Compression, 0.125, vec![784, 1000, 10]);
        assert_eq!(plan.virtual_widths().unwrap(), vec![784, 125, 10]);
        assert_eq!(plan.build(0).unwrap().trainable_count(), 99_385);
    }

    #[test]
    fn expansion_keeps_storage_fixed() {
        let base = vec![784, 50, 10];
        let full = full_param_count(&base);
        for e in [1.0, 2.0, 4.0] {
            let plan = NetworkPlan::new(Method::Hashed, Axis::Expansion, e, base.clone());
            let net = plan.build(2).unwrap();
            assert_eq!(net.widths()[1], (50.0 * e) as usize);
            assert_eq!(net.trainable_count(), full);
        }
        let std_plan = NetworkPlan::new(Method::Standard, Axis::Expansion, 4.0, base.clone());
        assert_eq!(std_plan.virtual_widths().unwrap(), base);
    }

    #[test]
    fn edge_removal_at_unit_expansion_is_dense() {
        let base = vec![30, 8, 4];
        let plan = NetworkPlan::new(Method::EdgeRemoved, Axis::Expansion, 1.0, base.clone());
        let specs = plan.layer_specs().unwrap();
        for s in &specs {
            match s {
                LayerSpec::EdgeRemoved { keep_prob, .. } => assert_eq!(*keep_prob, 1.0),
                other => panic!("{other:?}"),
            }
        }
        let mut e = plan.build(5).unwrap();
        let mut s = NetworkPlan::new(Method::Standard, Axis::Expansion, 1.0, base).build(5).unwrap();
        assert_eq!(e.trainable_count(), s.trainable_count());
        for (a, b) in e.layers_mut().iter_mut().zip(s.layers_mut()) {
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn injective_needs_full_budget() {
        let mut plan = NetworkPlan::new(Method::Hashed, Axis::Compression, 0.5, vec![6, 5, 3]);
        plan.injective = true;
        assert!(matches!(plan.build(0), Err(Error::InfeasibleBudget(_))));
        plan.value = 1.0;
        assert!(plan.build(0).is_ok());
    }

    #[test]
    fn edge_removal_cannot_expand() {
        let plan = NetworkPlan::new(Method::EdgeRemoved, Axis::Compression, 2.0, vec![6, 5, 3]);
        assert!(matches!(plan.build(0), Err(Error::InfeasibleBudget(_))));
    }

    #[test]
    fn sweep_csv_marks_infeasible_points() {
        let rows = vec![
            SweepRow { axis_value: 0.5, method: Method::Hashed, seed: 7, test_error: Some(0.125), param_count: Some(40), note: None },
            SweepRow { axis_value: 2.0, method: Method::EdgeRemoved, seed: 7, test_error: None, param_count: None, note: Some("x".into()) },
        ];
        assert_eq!(
            sweep_csv(&rows),
            "axis_value,method,seed,test_error,param_count\n0.5,hashed,7,0.125000,40\n2,edge_removed,7,infeasible,\n"
        );
    }
}

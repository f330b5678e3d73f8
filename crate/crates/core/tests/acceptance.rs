//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any fails. Criteria 6 and 7 need the MNIST IDX files (see README).

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use hashednets::budget::{full_param_count, param_count_hashed, solve_shrinkage, Architecture};
use hashednets::data::{load_mnist, synth_blobs, DATA_DIR_ENV};
use hashednets::experiment::{run_sweep, Axis, Method, NetworkPlan, SweepConfig};
use hashednets::feature_hash::{collision_free_matches, run_equivalence_suite, unbiasedness_trial};
use hashednets::hashing::HashSpec;
use hashednets::layers::{HashedLayer, HashedLayerConfig};
use hashednets::math::{Activation, Target};
use hashednets::network::Network;
use hashednets::training::{batch_gradient, distill_targets, grad_check, target_loss_gradient, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let t = started.elapsed();
    check(t < limit, format!("{detail}; {:.2}s (limit {}s)", t.as_secs_f64(), limit.as_secs()))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let r = run_equivalence_suite(50, 2024).map_err(|e| e.to_string())?;
    let detail = format!(
        "50 layers, max diff forward {:.1e} / error {:.1e} / gradient {:.1e}",
        r.max_forward_diff, r.max_backward_diff, r.max_gradient_diff
    );
    if !r.passes(1e-12) {
        return Err(detail);
    }
    within(Duration::from_secs(5), t, detail)
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let n = 50;
    for _ in 0..n {
        let (n_in, n_out) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let config = HashedLayerConfig {
            sign_enabled: rng.random_bool(0.5),
            hash_bias: rng.random_bool(0.5),
            ..Default::default()
        };
        let spec = HashSpec::new(rng.random(), rng.random_range(0..4), 1).map_err(|e| e.to_string())?;
        let like = HashedLayer::with_config(n_in, n_out, spec, config).map_err(|e| e.to_string())?;
        let a: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        if !collision_free_matches(&like, &a, &d, Activation::Tanh, rng.random()).map_err(|e| e.to_string())? {
            mismatches += 1;
        }
    }
    let detail = format!("{n} injective layers, {mismatches} inexact");
    if mismatches > 0 {
        return Err(detail);
    }
    within(Duration::from_secs(1), t, detail)
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut report = Vec::new();
    let mut worst_all: f64 = 0.0;
    for method in [Method::Standard, Method::Hashed, Method::EdgeRemoved, Method::LowRank] {
        let mut plan = NetworkPlan::new(method, Axis::Compression, 0.25, vec![16, 12, 5]);
        plan.activation = Activation::Tanh;
        plan.structure_seed = 11;
        let net = plan.build(5).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_range(0..5);
            worst = worst.max(grad_check(&net, &x, Target::Class(y), 1e-5).map_err(|e| e.to_string())?);
        }
        report.push(format!("{method} {worst:.1e}"));
        worst_all = worst_all.max(worst);
    }
    let detail = format!("max rel. error {}", report.join(", "));
    if worst_all >= 1e-6 {
        return Err(detail);
    }
    within(Duration::from_secs(30), t, detail)
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_z: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..10 {
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact: f64 = x.iter().zip(&x2).map(|(a, b)| a * b).sum();
        let (mean, se) = unbiasedness_trial(&x, &x2, 8, 10_000).map_err(|e| e.to_string())?;
        let z = (mean - exact).abs() / se;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            failures += 1;
        }
    }
    let detail = format!("10 pairs, K=8, 10^4 seeds, worst |mean - x.x'| = {worst_z:.2} SE");
    if failures > 0 {
        return Err(detail);
    }
    within(Duration::from_secs(60), t, detail)
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut not_c = 0;
    for _ in 0..100 {
        let w = vec![rng.random_range(1..2000), rng.random_range(1..2000), rng.random_range(1..100)];
        let c = rng.random_range(0.001..8.0);
        let s = solve_shrinkage(&Architecture::new(w, c).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if s.r != c {
            not_c += 1;
        }
    }
    let mut outside = Vec::new();
    let mut checked = 0;
    for _ in 0..100 {
        let depth = rng.random_range(4..=6);
        let w: Vec<usize> = (0..depth).map(|_| rng.random_range(1..1000)).collect();
        for c in [1.0 / 64.0, 1.0 / 8.0, 1.0, 8.0] {
            let arch = Architecture::new(w.clone(), c).map_err(|e| e.to_string())?;
            let s = solve_shrinkage(&arch).map_err(|e| e.to_string())?;
            let n_std = full_param_count(&s.widths);
            let n_hash = param_count_hashed(&arch);
            checked += 1;
            if n_std.abs_diff(n_hash) > depth * arch.max_width() {
                outside.push(format!("{w:?} c={c}: |{n_std} - {n_hash}| > {}", depth * arch.max_width()));
            }
        }
    }
    let detail = format!(
        "L=3: {not_c}/100 with r != c; L in 4..6: {}/{checked} outside slack{}",
        outside.len(),
        outside.first().map(|s| format!(" (e.g. {s})")).unwrap_or_default()
    );
    if not_c > 0 || !outside.is_empty() {
        return Err(detail);
    }
    within(Duration::from_secs(1), t, detail)
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Hyperparameters shared by the two MNIST criteria.
fn mnist_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        dropout_rate: 0.2,
        batch_size: 50,
        epochs: 10,
        ..Default::default()
    }
}

fn mnist_trend(axis: Axis, widths: Vec<usize>, value_a: f64, a: Method, value_b: f64, b: Method) -> Outcome {
    let t = Instant::now();
    let (train_set, test_set) = load_mnist(&mnist_dir(), Some(10_000), Some(2_000))
        .map_err(|e| format!("MNIST unavailable ({e}); set {DATA_DIR_ENV}"))?;
    let mut values = vec![value_a];
    if value_b != value_a {
        values.push(value_b);
    }
    let mut methods = vec![a];
    if b != a {
        methods.push(b);
    }
    let cfg = SweepConfig {
        axis,
        values,
        methods,
        widths,
        activation: Activation::Relu,
        injective: false,
        seeds: 5,
        master_seed: 0,
        train: mnist_train_config(),
    };
    let rows = run_sweep(&cfg, &train_set, &test_set, |_| {}).map_err(|e| e.to_string())?;
    let pick = |v: f64, m: Method| -> Vec<(u64, f64)> {
        rows.iter()
            .filter(|r| r.axis_value == v && r.method == m)
            .map(|r| (r.seed, r.test_error.unwrap_or(f64::NAN)))
            .collect()
    };
    let (ra, rb) = (pick(value_a, a), pick(value_b, b));
    let mut wins = 0;
    for ((sa, ea), (sb, eb)) in ra.iter().zip(&rb) {
        assert_eq!(sa, sb, "paired seeds");
        if ea < eb {
            wins += 1;
        }
    }
    let mean = |v: &[(u64, f64)]| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let detail = format!(
        "{a}@{value_a} mean {:.2}% vs {b}@{value_b} mean {:.2}%, paired wins {wins}/{}",
        100.0 * ma,
        100.0 * mb,
        ra.len()
    );
    if !(ma < mb && wins >= 4 && ra.len() == 5) {
        return Err(detail);
    }
    within(Duration::from_secs(30 * 60), t, detail)
}

fn criterion_6() -> Outcome {
    let out = mnist_trend(Axis::Compression, vec![784, 1000, 10], 0.125, Method::Hashed, 0.125, Method::Standard)?;
    Ok(format!("784-1000-10 at c=1/8 vs widths from the shrinkage solve: {out}"))
}

fn criterion_7() -> Outcome {
    let out = mnist_trend(Axis::Expansion, vec![784, 50, 10], 4.0, Method::Hashed, 1.0, Method::Hashed)?;
    Ok(format!("budget of 784-50-10, expansion 4 vs 1: {out}"))
}

fn criterion_8() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_hashednets");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let blobs = ["--dataset", "blobs", "--blob-classes", "3", "--blob-dim", "10", "--arch", "10,24,3", "--seed", "9", "--dropout", "0.3"];
    // same paths both times: the header echoes them
    let out_file = dir.path().join("run.out");
    let ckpt = dir.path().join("run.hnet");
    let invoke = |sub: &str, extra: &[&str]| -> Result<Vec<Vec<u8>>, String> {
        for p in [&out_file, &ckpt] {
            if sub != "eval" && p.exists() {
                fs::remove_file(p).map_err(|e| e.to_string())?;
            }
        }
        let mut args: Vec<String> = vec![sub.into()];
        args.extend(extra.iter().map(|s| s.to_string()));
        if sub == "train" || sub == "sweep" {
            args.extend(["--out".into(), out_file.display().to_string()]);
        }
        if sub == "train" {
            args.extend(["--checkpoint".into(), ckpt.display().to_string()]);
        }
        if sub == "eval" {
            args.extend(["--checkpoint".into(), ckpt.display().to_string()]);
        }
        let o = Command::new(bin).args(&args).output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{sub} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        let mut files = vec![o.stdout];
        for p in [&out_file, &ckpt] {
            if p.exists() {
                files.push(fs::read(p).map_err(|e| e.to_string())?);
            }
        }
        Ok(files)
    };
    let mut compared = Vec::new();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("train", [&blobs[..], &["--kind", "hashed", "--c", "0.5", "--epochs", "3"]].concat()),
        ("eval", blobs.to_vec()),
        ("sweep", [&blobs[..], &["--axis", "compression", "--values", "1,0.25", "--methods", "hashed,hashed_dk,standard,edge_removed,low_rank", "--epochs", "2", "--seeds", "2"]].concat()),
        ("gradcheck", vec!["--arch", "8,6,3", "--kind", "low_rank", "--c", "0.5"]),
        ("shrink", vec!["--arch", "100,60,60,10", "--c", "0.3"]),
        ("equivtest", vec!["--layers", "10"]),
    ];
    for (sub, extra) in &cases {
        let first = invoke(sub, extra)?;
        let second = invoke(sub, extra)?;
        if first != second {
            return Err(format!("{sub}: outputs differ between identical invocations"));
        }
        compared.push(format!("{sub} ({} artifacts)", first.len()));
    }
    Ok(format!("byte-identical reruns: {}", compared.join(", ")))
}

fn criterion_9() -> Outcome {
    let data = synth_blobs(30, 3, 12, 8, 0.2).map_err(|e| e.to_string())?;
    let mut teacher_plan = NetworkPlan::new(Method::Standard, Axis::Compression, 1.0, vec![12, 10, 3]);
    teacher_plan.structure_seed = 1;
    let mut teacher = teacher_plan.build(2).map_err(|e| e.to_string())?;
    train(&mut teacher, &data, None, &TrainConfig { epochs: 3, ..Default::default() }).map_err(|e| e.to_string())?;

    let soft = distill_targets(&teacher, &data, 1.0).map_err(|e| e.to_string())?;
    let mut t1_mismatch = 0;
    for r in 0..data.len() {
        let p = teacher.probabilities(data.samples.row(r)).map_err(|e| e.to_string())?;
        if soft.row(r) != p.as_slice() {
            t1_mismatch += 1;
        }
    }

    let with_soft = data.clone().with_soft_targets(soft).map_err(|e| e.to_string())?;
    let mut plan = NetworkPlan::new(Method::Hashed, Axis::Compression, 0.3, vec![12, 10, 3]);
    plan.structure_seed = 4;
    let student: Network = plan.build(6).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let g_dk = batch_gradient(&student, &with_soft, &idx, 1.0).map_err(|e| e.to_string())?;
    let g_hard = batch_gradient(&student, &data, &idx, 1.0).map_err(|e| e.to_string())?;
    let mut per_sample_equal = true;
    for r in 0..data.len() {
        let logits = student.logits(data.samples.row(r)).map_err(|e| e.to_string())?;
        let a = target_loss_gradient(&logits, data.labels[r], Some(with_soft.soft_targets.as_ref().unwrap().row(r)), 1.0)
            .map_err(|e| e.to_string())?;
        let b = target_loss_gradient(&logits, data.labels[r], None, 1.0).map_err(|e| e.to_string())?;
        per_sample_equal &= a.1 == b.1;
    }
    let cfg = TrainConfig { dk_mix: 1.0, epochs: 2, dropout_rate: 0.1, ..Default::default() };
    let (mut s1, mut s2) = (student.clone(), student);
    train(&mut s1, &with_soft, None, &cfg).map_err(|e| e.to_string())?;
    train(&mut s2, &data, None, &cfg).map_err(|e| e.to_string())?;
    let same_training = hashednets::model_io::to_bytes(&s1).ok() == hashednets::model_io::to_bytes(&s2).ok();

    check(
        t1_mismatch == 0 && g_dk == g_hard && per_sample_equal && same_training,
        format!(
            "T=1 rows differing from teacher softmax: {t1_mismatch}; lambda=1 gradients identical: {}; trained weights identical: {same_training}",
            g_dk == g_hard && per_sample_equal
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 equivalence suite", criterion_1),
        ("2 collision-free reduction", criterion_2),
        ("3 gradient check", criterion_3),
        ("4 unbiasedness", criterion_4),
        ("5 budget calculus", criterion_5),
        ("6 compression trend (MNIST)", criterion_6),
        ("7 expansion trend (MNIST)", criterion_7),
        ("8 CLI determinism", criterion_8),
        ("9 distillation plumbing", criterion_9),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        let number = name.split(' ').next().unwrap();
        if !only.is_empty() && !only.iter().any(|o| o == number) {
            continue;
        }
        let t = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {name}: {status} [{:.1}s] {detail}", t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

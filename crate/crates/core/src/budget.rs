//! Parameter counting for hashed and standard networks, and the width
//! shrinkage that makes a standard network as large as a hashed one.
//!
//! Widths are `n^1..n^L` (input first). A hashed network with compression
//! `c` stores `round(c (n^l+1) n^{l+1})` weights for every layer but the
//! last, `round(c n^{L-1} n^L)` for the last, plus `n^L` uncompressed
//! output biases. The equivalent standard network keeps input and output
//! widths and scales every hidden width by `r`, where `r` is the positive
//! root of
//!
//! ```text
//! r² Σ_{l=2}^{L-2} n^l n^{l+1}
//!   + r (Σ_{l=1}^{L-2} n^{l+1} + n^1 n^2 + n^{L-1} n^L)
//!   − c (Σ_{l=1}^{L-2} (n^l+1) n^{l+1} + n^{L-1} n^L) = 0.
//! ```
//!
//! Real-valued counts are rounded half-up per layer; hidden widths are
//! rounded and floored at 1.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    widths: Vec<usize>,
    compression: f64,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, compression: f64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::DegenerateArchitecture(format!(
                "need at least 2 layers, got {}",
                widths.len()
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::DegenerateArchitecture(format!("layer {} has width 0", pos + 1)));
        }
        check_compression(compression)?;
        Ok(Self { widths, compression })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn compression(&self) -> f64 {
        self.compression
    }

    /// Number of layers `L` (including input and output).
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }
}

pub(crate) fn check_compression(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidCompression(c))
    }
}

/// `⌊x + ½⌋`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Parameters of the uncompressed standard network.
pub fn full_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Stored weights per layer of a hashed network: `round(c (n^l+1) n^{l+1})`
/// for all layers but the last, `round(c n^{L-1} n^L)` for the last. The
/// `n^L` free output biases are not included.
pub fn hashed_layer_budgets(widths: &[usize], c: f64) -> Vec<usize> {
    let last = widths.len() - 2;
    widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let inputs = if l == last { w[0] } else { w[0] + 1 };
            round_half_up(c * (inputs * w[1]) as f64)
        })
        .collect()
}

/// `N_hash`.
pub fn param_count_hashed(arch: &Architecture) -> usize {
    let n_out = *arch.widths.last().expect("validated depth");
    hashed_layer_budgets(&arch.widths, arch.compression).iter().sum::<usize>() + n_out
}

/// Widths `m^l` of the shrunk standard network.
pub fn shrunk_widths(widths: &[usize], r: f64) -> Result<Vec<usize>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::DegenerateArchitecture(format!(
            "shrinkage factor must be positive and finite, got {r}"
        )));
    }
    let last = widths.len() - 1;
    Ok(widths
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            if l == 0 || l == last {
                n
            } else {
                round_half_up(r * n as f64).max(1)
            }
        })
        .collect())
}

/// Hidden widths near `r n^l` whose count lands closest to `target`. Each
/// hidden width is floored or ceiled; the half-up rounding wins ties.
/// Falls back to plain rounding past 16 hidden layers.
pub fn fitted_widths(widths: &[usize], r: f64, target: usize) -> Result<Vec<usize>> {
    let rounded = shrunk_widths(widths, r)?;
    let hidden = widths.len() - 2;
    if hidden > 16 {
        return Ok(rounded);
    }
    let mut best_gap = full_param_count(&rounded).abs_diff(target);
    let mut best = rounded;
    let mut w = widths.to_vec();
    for mask in 0u32..(1 << hidden) {
        for h in 0..hidden {
            let x = r * widths[h + 1] as f64;
            w[h + 1] = if mask >> h & 1 == 1 { x.ceil() } else { x.floor() }.max(1.0) as usize;
        }
        let gap = full_param_count(&w).abs_diff(target);
        if gap < best_gap {
            best_gap = gap;
            best.copy_from_slice(&w);
        }
    }
    Ok(best)
}

/// `N_standard` of the network with hidden widths scaled by `r`.
pub fn param_count_standard(arch: &Architecture, r: f64) -> Result<usize> {
    Ok(full_param_count(&shrunk_widths(&arch.widths, r)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct Shrinkage {
    pub r: f64,
    pub compression: f64,
    pub hashed_params: usize,
    pub standard_params: usize,
    pub widths: Vec<usize>,
    /// `L · max(n^l)`, the slack allowed for per-layer rounding.
    pub slack: usize,
    pub within_slack: bool,
}

/// Solves the size-matching quadratic for the hidden-width factor `r`.
pub fn solve_shrinkage(arch: &Architecture) -> Result<Shrinkage> {
    let n = &arch.widths;
    let depth = n.len();
    if depth < 3 {
        return Err(Error::DegenerateArchitecture(
            "shrinkage needs at least one hidden layer (L >= 3)".into(),
        ));
    }
    let c = arch.compression;
    // 0-based: n[0] = n^1, n[depth-1] = n^L
    let quad: usize = (1..depth - 2).map(|l| n[l] * n[l + 1]).sum();
    let lin: usize = (0..depth - 2).map(|l| n[l + 1]).sum::<usize>() + n[0] * n[1] + n[depth - 2] * n[depth - 1];
    let full: usize = (0..depth - 2).map(|l| (n[l] + 1) * n[l + 1]).sum::<usize>() + n[depth - 2] * n[depth - 1];

    let (a, b, s) = (quad as f64, lin as f64, full as f64);
    // Positive root written as 2cS / (b + √(b² + 4acS)) so that a = 0
    // reduces to r = c · (S / b) without cancellation.
    let disc = b * b + 4.0 * a * c * s;
    let r = c * (2.0 * s / (b + disc.sqrt()));
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InfeasibleBudget(format!(
            "no positive shrinkage factor for widths {n:?} at c = {c}"
        )));
    }
    let hashed_params = param_count_hashed(arch);
    let widths = fitted_widths(n, r, hashed_params)?;
    let standard_params = full_param_count(&widths);
    let slack = depth * arch.max_width();
    Ok(Shrinkage {
        r,
        compression: c,
        hashed_params,
        standard_params,
        widths,
        slack,
        within_slack: standard_params.abs_diff(hashed_params) <= slack,
    })
}

//! C ABI over `hashednets`.
//!
//! Every fallible function returns an [`HnStatus`]; on failure the message is
//! available from [`hn_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use hashednets::budget::{solve_shrinkage, Architecture};
use hashednets::hashing::{hash_index, hash_sign, HashSpec};
use hashednets::layers::{HashedLayer, HashedLayerConfig};
use hashednets::network::Network;
use hashednets::Error;

/// Result codes. `HN_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    IndexOutOfRange = 4,
    InvalidCompression = 5,
    DegenerateArchitecture = 6,
    InfeasibleBudget = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
}

/// Opaque hashed layer.
pub struct HnHashedLayer(HashedLayer);

/// Opaque network loaded from a checkpoint.
pub struct HnNetwork(Network);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HnStatus {
    match e {
        Error::InvalidBucketCount | Error::Config(_) => HnStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => HnStatus::DimensionMismatch,
        Error::IndexOutOfRange { .. } => HnStatus::IndexOutOfRange,
        Error::InvalidCompression(_) => HnStatus::InvalidCompression,
        Error::DegenerateArchitecture(_) => HnStatus::DegenerateArchitecture,
        Error::InfeasibleBudget(_) => HnStatus::InfeasibleBudget,
        Error::Io { .. } => HnStatus::Io,
        _ => HnStatus::Format,
    }
}

struct Fail(HnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HnStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    *p = v;
    Ok(())
}

fn spec(base_seed: u64, layer_index: u32, bucket_count: usize) -> Result<HashSpec, Fail> {
    Ok(HashSpec::new(base_seed, layer_index, bucket_count)?)
}

/// Message for the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Bucket `h(i, j)` for connection `(i, j)`, with `j = 0` the bias column.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_hash_index(
    base_seed: u64,
    layer_index: u32,
    bucket_count: usize,
    i: usize,
    j: usize,
    out: *mut usize,
) -> HnStatus {
    guard(|| {
        let b = hash_index(&spec(base_seed, layer_index, bucket_count)?, i, j)?;
        write(out, b, "out")
    })
}

/// Sign `ξ(i, j)` as -1 or +1.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_hash_sign(
    base_seed: u64,
    layer_index: u32,
    bucket_count: usize,
    i: usize,
    j: usize,
    out: *mut i32,
) -> HnStatus {
    guard(|| {
        let s = hash_sign(&spec(base_seed, layer_index, bucket_count)?, i, j);
        write(out, s as i32, "out")
    })
}

/// Solves for the width factor `r` of a standard network with the same
/// parameter count as a hashed one at compression `c`. Any of the output
/// pointers may be null.
///
/// # Safety
/// `widths` must point to `n_widths` values; `out_widths`, when non-null,
/// must have room for `n_widths` values.
#[no_mangle]
pub unsafe extern "C" fn hn_solve_shrinkage(
    widths: *const usize,
    n_widths: usize,
    compression: f64,
    out_r: *mut f64,
    out_hashed_params: *mut usize,
    out_standard_params: *mut usize,
    out_widths: *mut usize,
) -> HnStatus {
    guard(|| {
        if widths.is_null() {
            return Err(null("widths"));
        }
        let w = slice::from_raw_parts(widths, n_widths).to_vec();
        let s = solve_shrinkage(&Architecture::new(w, compression)?)?;
        if !out_r.is_null() {
            *out_r = s.r;
        }
        if !out_hashed_params.is_null() {
            *out_hashed_params = s.hashed_params;
        }
        if !out_standard_params.is_null() {
            *out_standard_params = s.standard_params;
        }
        if !out_widths.is_null() {
            slice::from_raw_parts_mut(out_widths, n_widths).copy_from_slice(&s.widths);
        }
        Ok(())
    })
}

/// Creates a hashed layer with `bucket_count` shared weights initialized from
/// `init_seed`.
///
/// # Safety
/// `out` must be a valid pointer; the handle it receives must be freed with
/// `hn_hashed_layer_free`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hn_hashed_layer_new(
    n_in: usize,
    n_out: usize,
    bucket_count: usize,
    base_seed: u64,
    layer_index: u32,
    sign_enabled: bool,
    hash_bias: bool,
    init_seed: u64,
    out: *mut *mut HnHashedLayer,
) -> HnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = HashedLayerConfig {
            sign_enabled,
            hash_bias,
            ..Default::default()
        };
        let mut layer = HashedLayer::with_config(n_in, n_out, spec(base_seed, layer_index, bucket_count)?, config)?;
        layer.init_weights(init_seed);
        *out = Box::into_raw(Box::new(HnHashedLayer(layer)));
        Ok(())
    })
}

/// # Safety
/// `layer` must come from `hn_hashed_layer_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn hn_hashed_layer_free(layer: *mut HnHashedLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Number of trainable values: the shared weights, plus one free bias per
/// output when the bias column is not hashed.
///
/// # Safety
/// `layer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hn_hashed_layer_param_count(layer: *const HnHashedLayer) -> usize {
    layer.as_ref().map_or(0, |l| l.0.weights().len() + l.0.free_bias().len())
}

/// Copies `len` trainable values into the layer: the shared weights, then
/// any free biases.
///
/// # Safety
/// `layer` must be a live handle and `values` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn hn_hashed_layer_set_params(
    layer: *mut HnHashedLayer,
    values: *const f64,
    len: usize,
) -> HnStatus {
    guard(|| {
        let l = layer.as_mut().ok_or_else(|| null("layer"))?;
        let v = input(values, len, "values")?;
        let k = l.0.weights().len();
        let expected = k + l.0.free_bias().len();
        if expected != len {
            return Err(Error::DimensionMismatch { context: "set_params", expected, actual: len }.into());
        }
        l.0.weights_mut().copy_from_slice(&v[..k]);
        l.0.free_bias_mut().copy_from_slice(&v[k..]);
        Ok(())
    })
}

/// `z = V a + b` for one input vector.
///
/// # Safety
/// `layer` must be a live handle; `input` and `output` must point to `n_in`
/// and `n_out` values.
#[no_mangle]
pub unsafe extern "C" fn hn_hashed_layer_forward(
    layer: *const HnHashedLayer,
    input_ptr: *const f64,
    n_in: usize,
    output_ptr: *mut f64,
    n_out: usize,
) -> HnStatus {
    guard(|| {
        let l = layer.as_ref().ok_or_else(|| null("layer"))?;
        let x = input(input_ptr, n_in, "input")?;
        let z = l.0.forward(x)?;
        let out = output(output_ptr, n_out, "output")?;
        if z.len() != n_out {
            return Err(Error::DimensionMismatch { context: "forward output", expected: z.len(), actual: n_out }.into());
        }
        out.copy_from_slice(&z);
        Ok(())
    })
}

/// Virtual weight `V_ij`, with `j = 0` the bias column.
///
/// # Safety
/// `layer` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hn_hashed_layer_virtual_weight(
    layer: *const HnHashedLayer,
    i: usize,
    j: usize,
    out: *mut f64,
) -> HnStatus {
    guard(|| {
        let l = layer.as_ref().ok_or_else(|| null("layer"))?;
        write(out, l.0.virtual_weight(i, j)?, "out")
    })
}

/// Loads a checkpoint written by the `hashednets` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer; free
/// the handle with `hn_network_free`.
#[no_mangle]
pub unsafe extern "C" fn hn_network_load(path: *const c_char, out: *mut *mut HnNetwork) -> HnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(HnStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let net = hashednets::model_io::load(p)?;
        *out = Box::into_raw(Box::new(HnNetwork(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must come from `hn_network_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn hn_network_free(net: *mut HnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hn_network_n_inputs(net: *const HnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.n_inputs())
}

/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hn_network_n_classes(net: *const HnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.n_classes())
}

/// Stored trainable parameters over all layers.
///
/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hn_network_param_count(net: *const HnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.trainable_count())
}

/// Class with the largest output for one input row.
///
/// # Safety
/// `net` must be a live handle, `x` must point to `len` values and `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn hn_network_predict(
    net: *const HnNetwork,
    x: *const f64,
    len: usize,
    out: *mut usize,
) -> HnStatus {
    guard(|| {
        let n = net.as_ref().ok_or_else(|| null("net"))?;
        write(out, n.0.predict(input(x, len, "x")?)?, "out")
    })
}

/// Softmax output for one input row into `probs[0..n_classes]`.
///
/// # Safety
/// `net` must be a live handle; `x` and `probs` must point to `len` and
/// `n_classes` values.
#[no_mangle]
pub unsafe extern "C" fn hn_network_probabilities(
    net: *const HnNetwork,
    x: *const f64,
    len: usize,
    probs: *mut f64,
    n_classes: usize,
) -> HnStatus {
    guard(|| {
        let n = net.as_ref().ok_or_else(|| null("net"))?;
        let p = n.0.probabilities(input(x, len, "x")?)?;
        if p.len() != n_classes {
            return Err(Error::DimensionMismatch { context: "probabilities", expected: p.len(), actual: n_classes }.into());
        }
        output(probs, n_classes, "probs")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Fraction of misclassified rows of a row-major `rows x cols` matrix.
///
/// # Safety
/// `net` must be a live handle; `samples` must point to `rows * cols` values
/// and `labels` to `rows` values.
#[no_mangle]
pub unsafe extern "C" fn hn_network_error_rate(
    net: *const HnNetwork,
    samples: *const f64,
    rows: usize,
    cols: usize,
    labels: *const usize,
    out: *mut f64,
) -> HnStatus {
    guard(|| {
        let n = net.as_ref().ok_or_else(|| null("net"))?;
        let len = rows.checked_mul(cols).ok_or_else(|| Fail(HnStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let m = hashednets::math::Matrix::from_vec(rows, cols, input(samples, len, "samples")?.to_vec())?;
        let y = if rows == 0 {
            Vec::new()
        } else if labels.is_null() {
            return Err(null("labels"));
        } else {
            slice::from_raw_parts(labels, rows).to_vec()
        };
        write(out, n.0.error_rate(&m, &y)?, "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_is_per_call() {
        let mut out = 0usize;
        let s = unsafe { hn_hash_index(1, 0, 0, 0, 0, &mut out) };
        assert_eq!(s, HnStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(hn_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("bucket count"));
    }
}

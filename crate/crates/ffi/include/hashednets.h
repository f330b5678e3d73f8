#ifndef HASHEDNETS_H
#define HASHEDNETS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `HN_STATUS_OK` is zero.
 */
typedef enum HnStatus {
  HN_STATUS_OK = 0,
  HN_STATUS_NULL_POINTER = 1,
  HN_STATUS_INVALID_ARGUMENT = 2,
  HN_STATUS_DIMENSION_MISMATCH = 3,
  HN_STATUS_INDEX_OUT_OF_RANGE = 4,
  HN_STATUS_INVALID_COMPRESSION = 5,
  HN_STATUS_DEGENERATE_ARCHITECTURE = 6,
  HN_STATUS_INFEASIBLE_BUDGET = 7,
  HN_STATUS_FORMAT = 8,
  HN_STATUS_IO = 9,
  HN_STATUS_PANIC = 10,
} HnStatus;

/**
 * Opaque hashed layer.
 */
typedef struct HnHashedLayer HnHashedLayer;

/**
 * Opaque network loaded from a checkpoint.
 */
typedef struct HnNetwork HnNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *hn_last_error_message(void);

/**
 * Bucket `h(i, j)` for connection `(i, j)`, with `j = 0` the bias column.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HnStatus hn_hash_index(uint64_t base_seed,
                            uint32_t layer_index,
                            size_t bucket_count,
                            size_t i,
                            size_t j,
                            size_t *out);

/**
 * Sign `ξ(i, j)` as -1 or +1.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HnStatus hn_hash_sign(uint64_t base_seed,
                           uint32_t layer_index,
                           size_t bucket_count,
                           size_t i,
                           size_t j,
                           int32_t *out);

/**
 * Solves for the width factor `r` of a standard network with the same
 * parameter count as a hashed one at compression `c`. Any of the output
 * pointers may be null.
 *
 * # Safety
 * `widths` must point to `n_widths` values; `out_widths`, when non-null,
 * must have room for `n_widths` values.
 */
enum HnStatus hn_solve_shrinkage(const size_t *widths,
                                 size_t n_widths,
                                 double compression,
                                 double *out_r,
                                 size_t *out_hashed_params,
                                 size_t *out_standard_params,
                                 size_t *out_widths);

/**
 * Creates a hashed layer with `bucket_count` shared weights initialized from
 * `init_seed`.
 *
 * # Safety
 * `out` must be a valid pointer; the handle it receives must be freed with
 * `hn_hashed_layer_free`.
 */
enum HnStatus hn_hashed_layer_new(size_t n_in,
                                  size_t n_out,
                                  size_t bucket_count,
                                  uint64_t base_seed,
                                  uint32_t layer_index,
                                  bool sign_enabled,
                                  bool hash_bias,
                                  uint64_t init_seed,
                                  struct HnHashedLayer **out);

/**
 * # Safety
 * `layer` must come from `hn_hashed_layer_new` or be null.
 */
void hn_hashed_layer_free(struct HnHashedLayer *layer);

/**
 * Number of trainable values: the shared weights, plus one free bias per
 * output when the bias column is not hashed.
 *
 * # Safety
 * `layer` must be a live handle.
 */
size_t hn_hashed_layer_param_count(const struct HnHashedLayer *layer);

/**
 * Copies `len` trainable values into the layer: the shared weights, then
 * any free biases.
 *
 * # Safety
 * `layer` must be a live handle and `values` must point to `len` values.
 */
enum HnStatus hn_hashed_layer_set_params(struct HnHashedLayer *layer,
                                         const double *values,
                                         size_t len);

/**
 * `z = V a + b` for one input vector.
 *
 * # Safety
 * `layer` must be a live handle; `input` and `output` must point to `n_in`
 * and `n_out` values.
 */
enum HnStatus hn_hashed_layer_forward(const struct HnHashedLayer *layer,
                                      const double *input_ptr,
                                      size_t n_in,
                                      double *output_ptr,
                                      size_t n_out);

/**
 * Virtual weight `V_ij`, with `j = 0` the bias column.
 *
 * # Safety
 * `layer` and `out` must be valid.
 */
enum HnStatus hn_hashed_layer_virtual_weight(const struct HnHashedLayer *layer,
                                             size_t i,
                                             size_t j,
                                             double *out);

/**
 * Loads a checkpoint written by the `hashednets` CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer; free
 * the handle with `hn_network_free`.
 */
enum HnStatus hn_network_load(const char *path, struct HnNetwork **out);

/**
 * # Safety
 * `net` must come from `hn_network_load` or be null.
 */
void hn_network_free(struct HnNetwork *net);

/**
 * # Safety
 * `net` must be a live handle.
 */
size_t hn_network_n_inputs(const struct HnNetwork *net);

/**
 * # Safety
 * `net` must be a live handle.
 */
size_t hn_network_n_classes(const struct HnNetwork *net);

/**
 * Stored trainable parameters over all layers.
 *
 * # Safety
 * `net` must be a live handle.
 */
size_t hn_network_param_count(const struct HnNetwork *net);

/**
 * Class with the largest output for one input row.
 *
 * # Safety
 * `net` must be a live handle, `x` must point to `len` values and `out` must
 * be valid.
 */
enum HnStatus hn_network_predict(const struct HnNetwork *net,
                                 const double *x,
                                 size_t len,
                                 size_t *out);

/**
 * Softmax output for one input row into `probs[0..n_classes]`.
 *
 * # Safety
 * `net` must be a live handle; `x` and `probs` must point to `len` and
 * `n_classes` values.
 */
enum HnStatus hn_network_probabilities(const struct HnNetwork *net,
                                       const double *x,
                                       size_t len,
                                       double *probs,
                                       size_t n_classes);

/**
 * Fraction of misclassified rows of a row-major `rows x cols` matrix.
 *
 * # Safety
 * `net` must be a live handle; `samples` must point to `rows * cols` values
 * and `labels` to `rows` values.
 */
enum HnStatus hn_network_error_rate(const struct HnNetwork *net,
                                    const double *samples,
                                    size_t rows,
                                    size_t cols,
                                    const size_t *labels,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HASHEDNETS_H */

#ifndef IAE_H
#define IAE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum IaeStatus {
  IAE_STATUS_OK = 0,
  IAE_STATUS_NULL_POINTER = 1,
  IAE_STATUS_INVALID_ARGUMENT = 2,
  IAE_STATUS_SHAPE = 3,
  IAE_STATUS_DOMAIN = 4,
  IAE_STATUS_CONTRACT = 5,
  IAE_STATUS_CONFIG = 6,
  IAE_STATUS_PARSE = 7,
  IAE_STATUS_NON_FINITE = 8,
  IAE_STATUS_IO = 9,
  IAE_STATUS_SERDE = 10,
  IAE_STATUS_PANIC = 11,
} IaeStatus;

/**
 * Opaque point cloud.
 */
typedef struct IaeDataset IaeDataset;

/**
 * Opaque trained encoder/decoder pair.
 */
typedef struct IaeModel IaeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next failing call on this thread.
 */
const char *iae_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *iae_version(void);

/**
 * Samples `n` points of a named surface (`swiss_roll`, `s_shape`,
 * `open_sphere`), uniformly in its parameters.
 */
enum IaeStatus iae_dataset_generate(const char *kind,
                                    size_t n,
                                    uint64_t seed,
                                    struct IaeDataset **out);

/**
 * Copies a row-major `n×dim` array into a new dataset.
 */
enum IaeStatus iae_dataset_from_points(const double *points,
                                       size_t n,
                                       size_t dim,
                                       struct IaeDataset **out);

/**
 * Number of points; 0 for a null handle.
 */
size_t iae_dataset_len(const struct IaeDataset *ds);

/**
 * Ambient dimension; 0 for a null handle.
 */
size_t iae_dataset_dim(const struct IaeDataset *ds);

/**
 * Copies the points into `out`, which must hold `len × dim` values.
 */
enum IaeStatus iae_dataset_points(const struct IaeDataset *ds, double *out, size_t capacity);

void iae_dataset_free(struct IaeDataset *ds);

/**
 * Trains on `ds` with a TOML configuration (`ae`, `train` and optional
 * `loss` sections; a `dataset` section is ignored). Returns the
 * lowest-loss parameters.
 */
enum IaeStatus iae_train(const struct IaeDataset *ds,
                         const char *config_toml,
                         struct IaeModel **out);

/**
 * Loads a JSON checkpoint.
 */
enum IaeStatus iae_model_load(const char *path, struct IaeModel **out);

enum IaeStatus iae_model_save(const struct IaeModel *model, const char *path);

size_t iae_model_ambient_dim(const struct IaeModel *model);

size_t iae_model_latent_dim(const struct IaeModel *model);

/**
 * `out (n×latent_dim) = g(x (n×ambient_dim))`, row-major.
 */
enum IaeStatus iae_model_encode(const struct IaeModel *model,
                                const double *x,
                                size_t n,
                                double *out);

/**
 * `out (n×ambient_dim) = f(z (n×latent_dim))`, row-major.
 */
enum IaeStatus iae_model_decode(const struct IaeModel *model,
                                const double *z,
                                size_t n,
                                double *out);

/**
 * Edge-ratio standard deviation of the decoder on a `resolution²` grid over
 * the codes of `ds`. Requires a 2-dimensional latent space.
 */
enum IaeStatus iae_model_edge_ratio_std(const struct IaeModel *model,
                                        const struct IaeDataset *ds,
                                        size_t resolution,
                                        double *out_std);

void iae_model_free(struct IaeModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IAE_H */

#ifndef MOLPECO_H
#define MOLPECO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  MP_STATUS_INVALID_UTF8 = 2,
  /**
   * An index or buffer length is out of range.
   */
  MP_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Malformed input molecules or datasets.
   */
  MP_STATUS_DATA = 4,
  MP_STATUS_CONFIG = 5,
  MP_STATUS_NUMERIC = 6,
  /**
   * Corrupt or incompatible checkpoint.
   */
  MP_STATUS_FORMAT = 7,
  MP_STATUS_IO = 8,
  MP_STATUS_PANIC = 9,
} MpStatus;

/**
 * A parsed set of molecules.
 */
typedef struct MpDataset MpDataset;

/**
 * A trained model restored from a checkpoint.
 */
typedef struct MpModel MpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *mp_last_error(void);

/**
 * Library version as a static string.
 */
const char *mp_version(void);

/**
 * Coulomb matrix of `n` atoms, written row-major into `out` (`n * n` values).
 *
 * `atomic_numbers` holds `n` values and `positions` holds `3 * n` coordinates
 * in Ångström.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
MpStatus mp_coulomb_matrix(const uint32_t *atomic_numbers,
                           const double *positions,
                           size_t n,
                           double *out,
                           size_t out_len);

/**
 * Parses a JSONL molecule file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
MpStatus mp_dataset_open(const char *path, MpDataset **out);

/**
 * Parses JSONL text held in memory.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
MpStatus mp_dataset_parse(const char *text, MpDataset **out);

/**
 * Number of molecules; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t mp_dataset_len(const MpDataset *ds);

/**
 * Number of atoms in molecule `index`; 0 when out of range.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t mp_dataset_atom_count(const MpDataset *ds, size_t index);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void mp_dataset_free(MpDataset *ds);

/**
 * Restores a model from a checkpoint written by `molpeco train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
MpStatus mp_model_load(const char *path, MpModel **out);

/**
 * Number of descriptors the model scores; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mp_model_num_descriptors(const MpModel *model);

/**
 * Length of the pooled molecule embedding; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mp_model_embedding_dim(const MpModel *model);

/**
 * Name of descriptor `index`, owned by the model; null when out of range.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *mp_model_descriptor_name(const MpModel *model, size_t index);

/**
 * Descriptor probabilities for molecule `index`, one per descriptor.
 *
 * # Safety
 * Handles must be live and `out` valid for `out_len` values.
 */
MpStatus mp_model_predict(const MpModel *model,
                          const MpDataset *ds,
                          size_t index,
                          double *out,
                          size_t out_len);

/**
 * Pooled embedding of molecule `index`.
 *
 * # Safety
 * Handles must be live and `out` valid for `out_len` values.
 */
MpStatus mp_model_embed(const MpModel *model,
                        const MpDataset *ds,
                        size_t index,
                        double *out,
                        size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void mp_model_free(MpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOLPECO_H */

#ifndef NOCGUARD_H
#define NOCGUARD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  NG_STATUS_OK = 0,
  NG_STATUS_NULL_ARGUMENT = 1,
  NG_STATUS_INVALID_ARGUMENT = 2,
  NG_STATUS_IO = 3,
  NG_STATUS_PARSE = 4,
  NG_STATUS_MODEL = 5,
  NG_STATUS_SHAPE = 6,
  /**
   * Localization ran but could not confirm an attacker.
   */
  NG_STATUS_INCONCLUSIVE = 7,
  NG_STATUS_INTERNAL = 8,
} NgStatus;

typedef struct NgDetector NgDetector;

typedef struct NgReport NgReport;

typedef struct NgSegmentor NgSegmentor;

/**
 * Simulator with its own scenario configuration.
 */
typedef struct NgSimulator NgSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *ng_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ng_version(void);

/**
 * Build a simulator from scenario text in `key = value` form and run its
 * warmup.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a writable pointer.
 */
NgStatus ng_simulator_new(const char *config, NgSimulator **out);

/**
 * # Safety
 * `sim` must be NULL or a handle from [`ng_simulator_new`] not yet freed.
 */
void ng_simulator_free(NgSimulator *sim);

/**
 * Mesh radix of the simulator, 0 for NULL.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
size_t ng_simulator_radix(const NgSimulator *sim);

/**
 * Current cycle, 0 for NULL.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
uint64_t ng_simulator_cycle(const NgSimulator *sim);

/**
 * Run one sampling window and write its padded VCO and raw BOC planes, each
 * `4 * R * R` long. `attack` (may be NULL) receives 1 if malicious buffer
 * operations occurred in the window.
 *
 * # Safety
 * `vco` and `boc` must point to `len` writable doubles each.
 */
NgStatus ng_simulator_window(NgSimulator *sim,
                             double *vco,
                             double *boc,
                             size_t len,
                             uint8_t *attack);

/**
 * Halt new malicious packets from `node`. Writes 1 to `changed` (may be
 * NULL) if the node was an active attacker.
 *
 * # Safety
 * `sim` must be a live handle.
 */
NgStatus ng_simulator_quarantine(NgSimulator *sim, size_t node, uint8_t *changed);

/**
 * Load a detector saved for mesh radix `radix`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
NgStatus ng_detector_load(const char *path, size_t radix, NgDetector **out);

/**
 * # Safety
 * `det` must be NULL or a handle from [`ng_detector_load`] not yet freed.
 */
void ng_detector_free(NgDetector *det);

/**
 * Attack probability for four padded VCO planes (`4 * R * R` doubles).
 *
 * # Safety
 * `vco` must point to `len` readable doubles and `prob` be writable.
 */
NgStatus ng_detector_predict(const NgDetector *det, const double *vco, size_t len, double *prob);

/**
 * Load a segmentor saved for mesh radix `radix`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
NgStatus ng_segmentor_load(const char *path, size_t radix, NgSegmentor **out);

/**
 * # Safety
 * `seg` must be NULL or a handle from [`ng_segmentor_load`] not yet freed.
 */
void ng_segmentor_free(NgSegmentor *seg);

/**
 * Per-node attack-route probabilities for one normalized, padded BOC plane.
 * Both buffers hold `R * R` doubles.
 *
 * # Safety
 * `boc` must point to `len` readable doubles and `probs` to `len` writable
 * doubles.
 */
NgStatus ng_segmentor_predict(const NgSegmentor *seg, const double *boc, double *probs, size_t len);

/**
 * Localize from per-direction probability maps (`4 * R * R` doubles, E, N,
 * W, S). Only directions whose `present` flag is nonzero are used.
 * `Inconclusive` means no attacker survived route validation.
 *
 * # Safety
 * `maps` must point to `len` readable doubles, `present` to 4 bytes and
 * `out` be writable.
 */
NgStatus ng_localize(size_t radix,
                     const double *maps,
                     size_t len,
                     const uint8_t *present,
                     double threshold,
                     uint8_t vce,
                     NgReport **out);

/**
 * # Safety
 * `report` must be NULL or a handle from [`ng_localize`] not yet freed.
 */
void ng_report_free(NgReport *report);

/**
 * Target victim node id, or `SIZE_MAX` for NULL.
 *
 * # Safety
 * `report` must be NULL or a live handle.
 */
size_t ng_report_target_victim(const NgReport *report);

/**
 * Copy up to `cap` confirmed attacker ids into `out` (may be NULL) and
 * return how many there are.
 *
 * # Safety
 * `report` must be NULL or a live handle; `out` must hold `cap` entries.
 */
size_t ng_report_attackers(const NgReport *report, size_t *out, size_t cap);

/**
 * Copy up to `cap` victim ids, ascending, into `out` (may be NULL) and
 * return how many there are.
 *
 * # Safety
 * `report` must be NULL or a live handle; `out` must hold `cap` entries.
 */
size_t ng_report_victims(const NgReport *report, size_t *out, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOCGUARD_H */

#ifndef SAFEGAUGE_H
#define SAFEGAUGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_INPUT = 2,
  SG_STATUS_DIMENSION_MISMATCH = 3,
  SG_STATUS_NON_FINITE = 4,
  SG_STATUS_STATE_OUTSIDE_SET = 5,
  SG_STATUS_CERTIFICATE_INVALID = 6,
  SG_STATUS_SYNTHESIS_FAILED = 7,
  SG_STATUS_NUMERICAL_FAILURE = 8,
  SG_STATUS_PANIC = 9,
} SgStatus;

/*
 A verified invariant-set certificate bound to a system.
 */
typedef struct SgCertificate SgCertificate;

/*
 A trained actor behind its action map.
 */
typedef struct SgPolicy SgPolicy;

/*
 `u = K x + G(v | Ω̂(x))` for a fixed certificate.
 */
typedef struct SgSafetyLayer SgSafetyLayer;

/*
 Dynamics and constraint sets of a plant.
 */
typedef struct SgSystem SgSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the most recent failure on this thread, or null. Owned by the
 library; valid until the next failing call on the same thread.
 */
const char *sg_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sg_version(void);

/*
 Load a grid case or raw system description from JSON text.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SgStatus sg_system_from_json(const char *json, struct SgSystem **out);

/*
 # Safety
 `system` must come from [`sg_system_from_json`] or be null.
 */
void sg_system_free(struct SgSystem *system);

/*
 State, input and disturbance dimensions.

 # Safety
 `system` must be a live handle; the output pointers may be null.
 */
enum SgStatus sg_system_dims(const struct SgSystem *system, size_t *n, size_t *m, size_t *p);

/*
 Parse a certificate and verify it against `system`; invalid certificates
 are refused with [`SgStatus::CertificateInvalid`].

 # Safety
 `system` must be a live handle, `json` NUL-terminated, `out` valid.
 */
enum SgStatus sg_certificate_from_json(const struct SgSystem *system,
                                       const char *json,
                                       struct SgCertificate **out);

/*
 Synthesize a certificate with the default gain sweep.

 # Safety
 `system` must be a live handle and `out` valid.
 */
enum SgStatus sg_certificate_synthesize(const struct SgSystem *system, struct SgCertificate **out);

/*
 Serialize a certificate as JSON. The string must be released with
 [`sg_string_free`].

 # Safety
 `cert` must be a live handle and `out` valid.
 */
enum SgStatus sg_certificate_to_json(const struct SgCertificate *cert, char **out);

/*
 Number of row pairs `±V_s x ≤ s̄` in the certificate.

 # Safety
 `cert` must be a live handle or null (returns 0).
 */
size_t sg_certificate_rows(const struct SgCertificate *cert);

/*
 Whether `x` lies in the certificate's invariant set (within `tol`).

 # Safety
 `cert` must be a live handle and `x` point to `n` doubles.
 */
enum SgStatus sg_certificate_contains(const struct SgCertificate *cert,
                                      const double *x,
                                      size_t n,
                                      double tol,
                                      int *inside);

/*
 # Safety
 `cert` must come from this library or be null.
 */
void sg_certificate_free(struct SgCertificate *cert);

/*
 # Safety
 `s` must come from this library or be null.
 */
void sg_string_free(char *s);

/*
 Build the safety layer for `system` and `cert`. Both handles may be freed
 afterwards.

 # Safety
 Handles must be live and `out` valid.
 */
enum SgStatus sg_safety_layer_new(const struct SgSystem *system,
                                  const struct SgCertificate *cert,
                                  struct SgSafetyLayer **out);

/*
 # Safety
 `layer` must come from [`sg_safety_layer_new`] or be null.
 */
void sg_safety_layer_free(struct SgSafetyLayer *layer);

/*
 Map a virtual action `v ∈ [−1, 1]^m` at state `x` to a safe input `u`.
 `fallback` (optional) is set to 1 when the state is on the boundary band
 and `u = K x` was returned.

 # Safety
 `x` holds `n` doubles, `v` and `u` hold `m` doubles.
 */
enum SgStatus sg_safety_layer_apply(const struct SgSafetyLayer *layer,
                                    const double *x,
                                    size_t n,
                                    const double *v,
                                    size_t m,
                                    double *u,
                                    int *fallback);

/*
 `∂u/∂v` at `(x, v)`, written row-major into `jac` (`m × m`).

 # Safety
 `x` holds `n` doubles, `v` holds `m`, `jac` holds `m·m`.
 */
enum SgStatus sg_safety_layer_jacobian(const struct SgSafetyLayer *layer,
                                       const double *x,
                                       size_t n,
                                       const double *v,
                                       size_t m,
                                       double *jac);

/*
 Load a policy checkpoint. Safe policies need `cert`; penalty policies
 ignore it (pass null).

 # Safety
 `system` must be live, `cert` live or null, `json` NUL-terminated.
 */
enum SgStatus sg_policy_from_json(const struct SgSystem *system,
                                  const struct SgCertificate *cert,
                                  const char *json,
                                  struct SgPolicy **out);

/*
 # Safety
 `policy` must come from [`sg_policy_from_json`] or be null.
 */
void sg_policy_free(struct SgPolicy *policy);

/*
 Action of the policy at `x`.

 # Safety
 `x` holds `n` doubles and `u` holds `m`.
 */
enum SgStatus sg_policy_act(const struct SgPolicy *policy,
                            const double *x,
                            size_t n,
                            double *u,
                            size_t m,
                            int *fallback);

/*
 Gauge map `G(v | Q)` for `Q = {w : F w ≤ g}` with `F` row-major
 (`rows × m`). `Q` must be a C-set.

 # Safety
 `f` holds `rows·m` doubles, `g` holds `rows`, `v` and `out` hold `m`.
 */
enum SgStatus sg_gauge_map(const double *f,
                           const double *g,
                           size_t rows,
                           size_t m,
                           const double *v,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAFEGAUGE_H */

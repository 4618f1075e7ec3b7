#ifndef SPINCHANNEL_H
#define SPINCHANNEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. The non-zero values match the command-line exit codes.
typedef enum SpcStatus {
  SPC_STATUS_OK = 0,
  SPC_STATUS_NULL_POINTER = 1,
  SPC_STATUS_INVALID_ARGUMENT = 2,
  SPC_STATUS_CAPABILITY = 3,
  SPC_STATUS_CONVERGENCE = 4,
  SPC_STATUS_NUMERICAL = 5,
  SPC_STATUS_IO = 6,
  SPC_STATUS_PANIC = 7,
} SpcStatus;

typedef enum SpcGeometry {
  SPC_GEOMETRY_CHAIN = 0,
  SPC_GEOMETRY_LADDER = 1,
} SpcGeometry;

typedef enum SpcSolver {
  SPC_SOLVER_AUTO = 0,
  SPC_SOLVER_DENSE = 1,
  SPC_SOLVER_TEBD = 2,
} SpcSolver;

// Opaque channel description.
typedef struct SpcSpec SpcSpec;

// Opaque sampled time series.
typedef struct SpcTrajectory SpcTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t spc_last_error_message(char *buf, uintptr_t len);

// Library version as a static NUL-terminated string.
const char *spc_version(void);

// Dipolar coupling at distance `r_nm`, in rad/µs.
//
// # Safety
// `out` must be null or point to a writable `double`.
enum SpcStatus spc_dipolar_coupling(double r_nm, double *out);

// Uniform channel of `n` sites between NVs `separation_nm` apart. Rates
// are in kHz.
//
// # Safety
// `out` must be null or point to a writable handle slot. The handle is
// owned by the caller and released with [`spc_spec_free`].
enum SpcStatus spc_spec_uniform(enum SpcGeometry geometry,
                                uintptr_t n,
                                double separation_nm,
                                double gamma_nv_khz,
                                double gamma_c_khz,
                                struct SpcSpec **out);

// Uniform channel of `n` sites with fixed spacing `spacing_nm`.
//
// # Safety
// As [`spc_spec_uniform`].
enum SpcStatus spc_spec_spaced(enum SpcGeometry geometry,
                               uintptr_t n,
                               double spacing_nm,
                               double gamma_nv_khz,
                               double gamma_c_khz,
                               struct SpcSpec **out);

// Number of channel spins, the length of a missing mask.
//
// # Safety
// `spec` must be a live handle or null; `out` null or writable.
enum SpcStatus spc_spec_channel_spins(const struct SpcSpec *spec, uintptr_t *out);

// Marks channel spins as missing; `mask[i] != 0` removes spin `i`.
//
// # Safety
// `spec` must be a live handle; `mask` must point to `len` readable bytes.
enum SpcStatus spc_spec_set_missing(struct SpcSpec *spec, const uint8_t *mask, uintptr_t len);

// Releases a spec handle. Null is ignored.
//
// # Safety
// `spec` must be null or a handle not yet freed.
void spc_spec_free(struct SpcSpec *spec);

// Evolves the singlet initial state. Non-positive `dt_us` or negative
// `t_max_us` select the default grid; `chi_max` is used by the tensor
// backend only.
//
// # Safety
// `spec` must be a live handle; `out` null or a writable handle slot. The
// trajectory is released with [`spc_trajectory_free`].
enum SpcStatus spc_evolve(const struct SpcSpec *spec,
                          enum SpcSolver solver,
                          double dt_us,
                          double t_max_us,
                          uintptr_t chi_max,
                          struct SpcTrajectory **out);

// Number of samples.
//
// # Safety
// `traj` must be a live handle; `out` writable.
enum SpcStatus spc_trajectory_len(const struct SpcTrajectory *traj, uintptr_t *out);

// Sample `index`: time in µs, E, trace and purity or discarded weight.
// Any output pointer may be null.
//
// # Safety
// `traj` must be a live handle; non-null outputs must be writable.
enum SpcStatus spc_trajectory_sample(const struct SpcTrajectory *traj,
                                     uintptr_t index,
                                     double *time_us,
                                     double *e,
                                     double *trace,
                                     double *aux);

// Maximum E and the earliest time it is reached.
//
// # Safety
// `traj` must be a live handle; outputs writable.
enum SpcStatus spc_trajectory_max_e(const struct SpcTrajectory *traj,
                                    double *e_max,
                                    double *t_at_max_us);

// Releases a trajectory handle. Null is ignored.
//
// # Safety
// `traj` must be null or a handle not yet freed.
void spc_trajectory_free(struct SpcTrajectory *traj);

// Wootters concurrence of a two-qubit density matrix given row-major as
// real and imaginary parts; `im` may be null for a real matrix.
//
// # Safety
// `re` (and `im` if non-null) must point to 16 readable doubles.
enum SpcStatus spc_concurrence(const double *re, const double *im, double *out);

// Entanglement of formation, with the same input layout as
// [`spc_concurrence`].
//
// # Safety
// As [`spc_concurrence`].
enum SpcStatus spc_entanglement_of_formation(const double *re, const double *im, double *out);

// Runs a configuration given as text and writes its output files.
//
// # Safety
// `config` must be a NUL-terminated UTF-8 string.
enum SpcStatus spc_run_config(const char *config);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINCHANNEL_H */

#ifndef MEMXBAR_H
#define MEMXBAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Solver selection for [`mx_crossbar_new`].
 */
typedef enum {
  MX_SOLVER_IDEAL = 0,
  MX_SOLVER_NODAL = 1,
} MxSolver;

/**
 * Result code of every call.
 */
typedef enum {
  MX_STATUS_OK = 0,
  MX_STATUS_NULL_POINTER = 1,
  MX_STATUS_INVALID_INPUT = 2,
  MX_STATUS_INVALID_CONFIG = 3,
  MX_STATUS_SOLVER_FAILED = 4,
  MX_STATUS_INVALID_STATE = 5,
  MX_STATUS_IO = 6,
  MX_STATUS_PANIC = 7,
} MxStatus;

/**
 * Opaque crossbar handle owning its array and random stream.
 */
typedef struct MxCrossbar MxCrossbar;

/**
 * Outcome of [`mx_crossbar_tune_device`].
 */
typedef struct {
  /**
   * Last verified read conductance in siemens.
   */
  double achieved;
  uint32_t pulses;
  /**
   * 1 when the last read was within tolerance.
   */
  uint8_t converged;
} MxTuneResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mx_last_error(char *buf, size_t len);

/**
 * Sample a `rows x cols` array with default device variability. All
 * randomness derives from `seed`.
 *
 * # Safety
 * `out_handle` must be a valid pointer; on success it receives a new handle.
 */
MxStatus mx_crossbar_new(size_t rows,
                         size_t cols,
                         uint64_t seed,
                         MxSolver solver,
                         MxCrossbar **out_handle);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `h` must be null or a handle from [`mx_crossbar_new`] not yet freed.
 */
void mx_crossbar_free(MxCrossbar *h);

/**
 * Array shape.
 *
 * # Safety
 * `h`, `rows` and `cols` must be valid pointers.
 */
MxStatus mx_crossbar_shape(MxCrossbar *h, size_t *rows, size_t *cols);

/**
 * True (noise-free) read conductance of one device in siemens.
 *
 * # Safety
 * `h` and `g` must be valid pointers.
 */
MxStatus mx_crossbar_conductance(MxCrossbar *h, size_t row, size_t col, double *g);

/**
 * Force one device to `g` siemens, clamped to its bounds. Stuck devices are
 * left unchanged.
 *
 * # Safety
 * `h` must be a valid handle.
 */
MxStatus mx_crossbar_set_conductance(MxCrossbar *h, size_t row, size_t col, double g);

/**
 * Measured read conductance through the configured solver, with read noise.
 *
 * # Safety
 * `h` and `g` must be valid pointers.
 */
MxStatus mx_crossbar_read(MxCrossbar *h, size_t row, size_t col, double *g);

/**
 * Half-biased write pulse of `amplitude` volts on one device.
 *
 * # Safety
 * `h` must be a valid handle.
 */
MxStatus mx_crossbar_write(MxCrossbar *h, size_t row, size_t col, double amplitude);

/**
 * Column drive `v` (length `cols`) to row currents `i_out` (length `rows`).
 *
 * # Safety
 * `v` must point to `n_v` doubles and `i_out` to `n_out` writable doubles.
 */
MxStatus mx_crossbar_vmm(MxCrossbar *h, const double *v, size_t n_v, double *i_out, size_t n_out);

/**
 * Write-verify tune one device toward `target` siemens at `tolerance_rel`
 * using the default pulse schedule.
 *
 * # Safety
 * `h` and `result` must be valid pointers.
 */
MxStatus mx_crossbar_tune_device(MxCrossbar *h,
                                 size_t row,
                                 size_t col,
                                 double target,
                                 double tolerance_rel,
                                 MxTuneResult *result);

/**
 * Signed tuning error `100 * (target - actual) / target` in percent.
 *
 * # Safety
 * `pct` must be a valid pointer.
 */
MxStatus mx_tuning_error(double target, double actual, double *pct);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMXBAR_H */

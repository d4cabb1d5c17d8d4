#ifndef HWFLOW_H
#define HWFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum HwStatus {
  HW_STATUS_OK = 0,
  HW_STATUS_NULL_POINTER = 1,
  HW_STATUS_INVALID_UTF8 = 2,
  /*
   Bad input: config syntax or schema, model or discretization.
   */
  HW_STATUS_VALIDATION = 3,
  /*
   Failure while running, e.g. a density leaving its bounds.
   */
  HW_STATUS_RUNTIME = 4,
  HW_STATUS_IO = 5,
  HW_STATUS_OUT_OF_RANGE = 6,
  HW_STATUS_BUFFER_TOO_SMALL = 7,
  HW_STATUS_PANIC = 8,
} HwStatus;

/*
 Opaque scenario handle.
 */
typedef struct HwScenario HwScenario;

/*
 Opaque handle to a finished run.
 */
typedef struct HwTrajectory HwTrajectory;

/*
 Planned discretization of a scenario.
 */
typedef struct HwPlan {
  size_t n_cells;
  size_t n_classes;
  size_t n_steps;
  double dx;
  double dt;
  double lambda;
  double cfl_bound;
} HwPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last error on this thread; empty if none. Valid until the
 next failing call on the same thread.
 */
const char *hw_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *hw_version(void);

/*
 Parses a scenario file's contents.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HwStatus hw_scenario_from_toml(const char *text, struct HwScenario **out);

/*
 Builds a preset from its TOML description, e.g.
 `name = "av-penetration"\np = 0.5\nspeed = "triangular"`.

 # Safety
 `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HwStatus hw_scenario_from_preset(const char *spec, struct HwScenario **out);

/*
 Overrides discretization parameters; pass NaN to keep a value. A
 positive `dt` forces the time step, zero or NaN restores planning.

 # Safety
 `s` must be a handle from this library.
 */
enum HwStatus hw_scenario_set_discretization(struct HwScenario *s,
                                             double dx,
                                             double t_final,
                                             double cfl_safety,
                                             double dt);

/*
 Validates the scenario and reports the planned grid.

 # Safety
 `s` must be a handle from this library, `plan` a valid pointer.
 */
enum HwStatus hw_scenario_check(const struct HwScenario *s, struct HwPlan *plan);

/*
 Serializes the scenario in inline file form. Release the string with
 [`hw_string_free`].

 # Safety
 `s` must be a handle from this library, `out` a valid pointer.
 */
enum HwStatus hw_scenario_to_toml(const struct HwScenario *s, char **out);

/*
 # Safety
 `p` must come from this library or be null.
 */
void hw_string_free(char *p);

/*
 # Safety
 `s` must come from this library or be null.
 */
void hw_scenario_free(struct HwScenario *s);

/*
 Runs the scenario to its final time with snapshots at `0` and `T`
 plus `n_times` extra times.

 # Safety
 `s` must be a handle from this library; `times` must point to `n_times`
 doubles (or be null with `n_times == 0`); `out` must be valid.
 */
enum HwStatus hw_run(const struct HwScenario *s,
                     const double *times,
                     size_t n_times,
                     struct HwTrajectory **out);

/*
 # Safety
 `t` must come from this library or be null.
 */
void hw_trajectory_free(struct HwTrajectory *t);

/*
 Number of stored snapshots; 0 for a null handle.

 # Safety
 `t` must be a handle from this library or null.
 */
size_t hw_trajectory_n_snapshots(const struct HwTrajectory *t);

/*
 Planned grid of the run.

 # Safety
 `t` must be a handle from this library, `plan` a valid pointer.
 */
enum HwStatus hw_trajectory_plan(const struct HwTrajectory *t, struct HwPlan *plan);

/*
 Time of snapshot `k`.

 # Safety
 `t` must be a handle from this library, `time` a valid pointer.
 */
enum HwStatus hw_trajectory_snapshot_time(const struct HwTrajectory *t, size_t k, double *time);

/*
 Copies the cell averages of `class` at snapshot `k` into `buf`, which
 must hold at least `n_cells` doubles.

 # Safety
 `t` must be a handle from this library; `buf` must point to `len`
 writable doubles.
 */
enum HwStatus hw_trajectory_copy_density(const struct HwTrajectory *t,
                                         size_t k,
                                         size_t class_,
                                         double *buf,
                                         size_t len);

/*
 Time integral of the total variation of the total density.

 # Safety
 `t` must be a handle from this library, `out` a valid pointer.
 */
enum HwStatus hw_trajectory_j(const struct HwTrajectory *t, double *out);

/*
 Writes the result bundle into directory `dir`.

 # Safety
 `t` must be a handle from this library, `dir` a NUL-terminated string.
 */
enum HwStatus hw_trajectory_write_bundle(const struct HwTrajectory *t, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HWFLOW_H */

#ifndef WULFF_LAB_H
#define WULFF_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

enum WlStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  WL_STATUS_OK = 0,
  WL_STATUS_NULL_POINTER = 1,
  WL_STATUS_INVALID_ARGUMENT = 2,
  WL_STATUS_INVALID_SPEC = 3,
  WL_STATUS_GEOMETRY = 4,
  WL_STATUS_NON_CONVERGENCE = 5,
  WL_STATUS_DIAGNOSTICS = 6,
  WL_STATUS_IO = 7,
  WL_STATUS_BUFFER_TOO_SMALL = 8,
  WL_STATUS_PANIC = 9,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum WlStatus WlStatus;
#else
typedef int32_t WlStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * A triangulation of the problem domain.
 */
typedef struct WlMesh WlMesh;

/**
 * A validated problem specification.
 */
typedef struct WlProblem WlProblem;

/**
 * Nodal values and solver metadata.
 */
typedef struct WlSolution WlSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *wl_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next library call on the same thread.
 */
const char *wl_last_error_message(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must be NULL or a pointer obtained from this library, freed once.
 */
void wl_string_free(char *s);

/**
 * Parses and validates a problem from JSON (same schema as the `problem`
 * block of a run configuration).
 *
 * # Safety
 * `json` must be NULL or a NUL-terminated string; `out` must be NULL or
 * writable.
 */
WlStatus wl_problem_from_json(const char *json, struct WlProblem **out);

/**
 * # Safety
 * `p` must be NULL or a handle from `wl_problem_from_json`, freed once.
 */
void wl_problem_free(struct WlProblem *p);

/**
 * Effective dimension `D = 2 + λ`.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_problem_dimension(const struct WlProblem *p, double *out);

/**
 * Optimal isoperimetric constant of the problem's (norm, weight, cone).
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_optimal_constant(const struct WlProblem *p, double *out);

/**
 * `H(x, y)` for the problem's norm.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_norm_eval(const struct WlProblem *p, double x, double y, double *out);

/**
 * Dual norm `H₀(x, y)`.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_norm_dual(const struct WlProblem *p, double x, double y, double *out);

/**
 * Triangulates the problem domain with target size `h`.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_mesh_generate(const struct WlProblem *p, double h, bool grading, struct WlMesh **out);

/**
 * # Safety
 * `m` must be NULL or a handle from `wl_mesh_generate`, freed once.
 */
void wl_mesh_free(struct WlMesh *m);

/**
 * Number of mesh vertices; 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or valid.
 */
size_t wl_mesh_vertex_count(const struct WlMesh *m);

/**
 * Number of mesh triangles; 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or valid.
 */
size_t wl_mesh_triangle_count(const struct WlMesh *m);

/**
 * Copies vertex coordinates as interleaved `x0, y0, x1, y1, …` into `buf`
 * of length `len` (at least twice the vertex count).
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
WlStatus wl_mesh_vertices(const struct WlMesh *m, double *buf, size_t len);

/**
 * Solves the problem on `mesh`. `solver_json` may be NULL for the default
 * solver settings.
 *
 * # Safety
 * Pointers must be NULL or valid; `solver_json` NUL-terminated if non-NULL.
 */
WlStatus wl_solve(const struct WlProblem *p,
                  const struct WlMesh *mesh,
                  const char *solver_json,
                  struct WlSolution **out);

/**
 * # Safety
 * `s` must be NULL or a handle from `wl_solve`, freed once.
 */
void wl_solution_free(struct WlSolution *s);

/**
 * `M = max u`.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_solution_max(const struct WlSolution *s, double *out);

/**
 * Quasi-Newton iterations of the final stage.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_solution_iterations(const struct WlSolution *s, size_t *out);

/**
 * Copies the nodal values into `buf` of length `len` (at least the vertex
 * count).
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
WlStatus wl_solution_values(const struct WlSolution *s, double *buf, size_t len);

/**
 * Normalized weak residual of the solution.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_weak_residual(const struct WlProblem *p,
                          const struct WlMesh *mesh,
                          const struct WlSolution *s,
                          double *out);

/**
 * Runs the level-set diagnostics with default tolerances on `n_levels`
 * levels. Writes the JSON report to `*json_out` (release with
 * `wl_string_free`) and whether every diagnostic passed to `*passed`.
 *
 * # Safety
 * Pointers must be NULL or valid.
 */
WlStatus wl_verify(const struct WlProblem *p,
                   const struct WlMesh *mesh,
                   const struct WlSolution *s,
                   size_t n_levels,
                   char **json_out,
                   bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WULFF_LAB_H */

#ifndef MOAT_H
#define MOAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MoatStatus {
  MOAT_STATUS_OK = 0,
  // A required pointer argument was null.
  MOAT_STATUS_NULL_POINTER = 1,
  // Invalid settings or arguments.
  MOAT_STATUS_CONFIG = 2,
  // Malformed or inconsistent data.
  MOAT_STATUS_DATA = 3,
  // A numerical failure inside the analysis.
  MOAT_STATUS_NUMERIC = 4,
  // An index was out of range or a buffer was too small.
  MOAT_STATUS_OUT_OF_RANGE = 5,
  // A Rust panic was caught at the boundary.
  MOAT_STATUS_INTERNAL = 6,
} MoatStatus;

// Finished analysis: extracted subnetworks and their inference.
typedef struct MoatAnalysis MoatAnalysis;

// Analysis settings, starting from the library defaults.
typedef struct MoatSettings MoatSettings;

// Study data: predictors, vectorized connectome outcomes, confounders.
typedef struct MoatStudy MoatStudy;

// Summary of one extracted subnetwork.
typedef struct MoatSubnetworkInfo {
  size_t n_predictors;
  size_t n_edges;
  size_t n_regions;
  // Within-block density of the bipartite level.
  double gamma1;
  // Within-block density of the connectome level.
  double gamma2;
  // Natural log of the test statistic; 0 when not testable.
  double log_statistic;
  // Permutation q-value; 1 when inference did not run.
  double q_value;
  // 1 when `q_value < alpha`.
  int32_t significant;
} MoatSubnetworkInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *moat_last_error(void);

// Library version as a static NUL-terminated string.
const char *moat_version(void);

// 0-based lexicographic index of region pair `(i, j)`, `0 <= i < j < n_regions`.
//
// # Safety
// `out` must be a valid pointer to a `size_t`.
enum MoatStatus moat_pair_index(size_t i, size_t j, size_t n_regions, size_t *out);

// Builds a study from `subjects` rows of predictors (`n_predictors`
// columns), outcomes (`n_edges` columns, a triangular number) and
// confounders (`n_confounders` columns; pass null with 0 for none).
//
// # Safety
// Each non-null matrix pointer must reference `subjects * columns` readable
// doubles. `out` must be a valid pointer; on success it receives a handle to
// release with [`moat_study_free`].
enum MoatStatus moat_study_new(const double *predictors,
                               size_t n_predictors,
                               const double *outcomes,
                               size_t n_edges,
                               const double *confounders,
                               size_t n_confounders,
                               size_t subjects,
                               struct MoatStudy **out);

// Releases a study. Null is ignored.
//
// # Safety
// `study` must come from [`moat_study_new`] and not be used afterwards.
void moat_study_free(struct MoatStudy *study);

// New settings holding the library defaults (p < 0.001 per pair, 200
// permutations, alpha 0.05, seed 0, CCA on).
struct MoatSettings *moat_settings_new(void);

// Settings parsed from JSON with the field names of the CLI's `[analysis]`
// table; missing fields keep their defaults.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum MoatStatus moat_settings_from_json(const char *json, struct MoatSettings **out);

// Releases settings. Null is ignored.
//
// # Safety
// `settings` must come from this library and not be used afterwards.
void moat_settings_free(struct MoatSettings *settings);

// Seed for the permutation test.
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_seed(struct MoatSettings *settings, uint64_t seed);

// Number of permutations `L`.
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_permutations(struct MoatSettings *settings, size_t permutations);

// Significance level for the q-values.
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_alpha(struct MoatSettings *settings, double alpha);

// Keeps pairs with per-pair p-value below `p`.
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_p_threshold(struct MoatSettings *settings, double p);

// Keeps pairs with p-value below `alpha / (pairs tested)`.
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_bonferroni(struct MoatSettings *settings, double alpha);

// Skips the lambda search and uses the given pair.
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_lambdas(struct MoatSettings *settings,
                                          double lambda1,
                                          double lambda2);

// Turns CCA on significant subnetworks on (nonzero) or off (0).
//
// # Safety
// `settings` must be a live handle.
enum MoatStatus moat_settings_set_cca(struct MoatSettings *settings, int32_t enabled);

// Runs association, extraction, inference and (optionally) CCA.
//
// # Safety
// `study` and `settings` must be live handles; `out` a valid pointer that
// receives a handle to release with [`moat_analysis_free`].
enum MoatStatus moat_analyze(const struct MoatStudy *study,
                             const struct MoatSettings *settings,
                             struct MoatAnalysis **out);

// Releases an analysis. Null is ignored.
//
// # Safety
// `analysis` must come from [`moat_analyze`] and not be used afterwards.
void moat_analysis_free(struct MoatAnalysis *analysis);

// Number of extracted subnetworks (0 for a null handle).
//
// # Safety
// `analysis` must be null or a live handle.
size_t moat_analysis_count(const struct MoatAnalysis *analysis);

// Lambdas used for extraction.
//
// # Safety
// `analysis` must be a live handle; the outputs valid pointers.
enum MoatStatus moat_analysis_lambdas(const struct MoatAnalysis *analysis,
                                      double *lambda1,
                                      double *lambda2);

// Summary of subnetwork `index`, in extraction order.
//
// # Safety
// `analysis` must be a live handle and `out` a valid pointer.
enum MoatStatus moat_analysis_subnetwork(const struct MoatAnalysis *analysis,
                                         size_t index,
                                         struct MoatSubnetworkInfo *out);

// Copies the 0-based predictor indices of subnetwork `index` into `buf`,
// which must hold at least `n_predictors` entries.
//
// # Safety
// `analysis` must be a live handle; `buf` must be writable for `capacity`
// entries.
enum MoatStatus moat_analysis_predictors(const struct MoatAnalysis *analysis,
                                         size_t index,
                                         size_t *buf,
                                         size_t capacity);

// Copies the 0-based edge indices of subnetwork `index` into `buf`, which
// must hold at least `n_edges` entries.
//
// # Safety
// `analysis` must be a live handle; `buf` must be writable for `capacity`
// entries.
enum MoatStatus moat_analysis_edges(const struct MoatAnalysis *analysis,
                                    size_t index,
                                    size_t *buf,
                                    size_t capacity);

// Thresholded score `a(edge, predictor)` used for extraction.
//
// # Safety
// `analysis` must be a live handle and `out` a valid pointer.
enum MoatStatus moat_analysis_score(const struct MoatAnalysis *analysis,
                                    size_t predictor,
                                    size_t edge,
                                    double *out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void moat_string_free(char *s);

// Settings as JSON, the format [`moat_settings_from_json`] reads. Release
// the string with [`moat_string_free`].
//
// # Safety
// `settings` must be a live handle and `out` a valid pointer.
enum MoatStatus moat_settings_to_json(const struct MoatSettings *settings, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOAT_H */

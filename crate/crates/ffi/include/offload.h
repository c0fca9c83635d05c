#ifndef OFFLOAD_H
#define OFFLOAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OffloadStatus {
  OFFLOAD_STATUS_OK = 0,
  OFFLOAD_STATUS_CONFIG = 2,
  OFFLOAD_STATUS_EVALUATOR = 3,
  OFFLOAD_STATUS_PARSE = 4,
  OFFLOAD_STATUS_NULL_ARGUMENT = 10,
  OFFLOAD_STATUS_INVALID_UTF8 = 11,
  OFFLOAD_STATUS_PANIC = 12,
} OffloadStatus;

/**
 * Opaque analyzed program.
 */
typedef struct OffloadProgram OffloadProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next library call on the same thread.
 */
const char *offload_last_error(void);

/**
 * Analyzes loop-language source text.
 *
 * # Safety
 * `source` must be a nul-terminated string and `out` a valid pointer.
 */
enum OffloadStatus offload_program_parse_source(const char *source, struct OffloadProgram **out);

/**
 * Reads a JSON loop descriptor.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum OffloadStatus offload_program_parse_json(const char *json, struct OffloadProgram **out);

/**
 * Releases a program. Null is ignored.
 *
 * # Safety
 * `program` must come from this library and not be used afterwards.
 */
void offload_program_free(struct OffloadProgram *program);

/**
 * Number of loops in the program.
 *
 * # Safety
 * `program_handle` must be a live program handle and `out` a valid pointer.
 */
enum OffloadStatus offload_program_loop_count(const struct OffloadProgram *program_handle,
                                              size_t *out);

/**
 * Number of parallelizable loops, which is the gene length.
 *
 * # Safety
 * `program_handle` must be a live program handle and `out` a valid pointer.
 */
enum OffloadStatus offload_program_parallel_count(const struct OffloadProgram *program_handle,
                                                  size_t *out);

/**
 * The program as a JSON loop descriptor.
 *
 * # Safety
 * `program_handle` must be a live program handle and `out` a valid pointer.
 */
enum OffloadStatus offload_program_to_json(const struct OffloadProgram *program_handle, char **out);

/**
 * Watt-seconds over the combined span of `count` power traces given as
 * CSV texts.
 *
 * # Safety
 * `labels` and `csv_texts` must each point to `count` nul-terminated
 * strings; `out_ws` must be a valid pointer.
 */
enum OffloadStatus offload_energy_from_csv(const char *const *labels,
                                           const char *const *csv_texts,
                                           size_t count,
                                           double *out_ws);

/**
 * Default score `time^-1/2 * energy^-1/2`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum OffloadStatus offload_fitness(double time_s, double energy_ws, double *out);

/**
 * Searches the program against a simulated device profile (JSON). GA
 * devices take an optional GA config and return the search history; FPGA
 * takes an optional FPGA config and returns its report. Both as JSON.
 *
 * # Safety
 * `program_handle` must be a live handle, `profile_json` a nul-terminated string,
 * `config_json` null or a nul-terminated string, `out` a valid pointer.
 */
enum OffloadStatus offload_search_json(const struct OffloadProgram *program_handle,
                                       const char *profile_json,
                                       const char *config_json,
                                       char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void offload_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFFLOAD_H */

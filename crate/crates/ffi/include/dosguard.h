#ifndef DOSGUARD_H
#define DOSGUARD_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define DG_OK 0

// A required pointer argument was null.
#define DG_ERR_NULL_POINTER 1

// An argument is out of range or malformed.
#define DG_ERR_INVALID_ARGUMENT 2

// The inputs make the requested quantity undefined (zero norm, constant vector, too few samples).
#define DG_ERR_DEGENERATE 3

// The call is not valid in the handle's current state.
#define DG_ERR_STATE 4

// JSON could not be parsed or produced.
#define DG_ERR_JSON 5

// A caller-provided buffer is too small.
#define DG_ERR_BUFFER_TOO_SMALL 6

// An internal error; the handle should be discarded.
#define DG_ERR_INTERNAL 7

#define DG_ACTION_REWARD 0

#define DG_ACTION_MILD_PENALTY 1

#define DG_ACTION_DOS_PENALTY 2

#define DG_REGION_A 0

#define DG_REGION_B 1

#define DG_REGION_C 2

#define DG_REGION_D 3

#define DG_REGION_E 4

#define DG_REGION_F 5

// Opaque classifier handle.
typedef struct DgClassifier DgClassifier;

// Opaque scheduler handle.
typedef struct DgScheduler DgScheduler;

// Opaque suppression state for one generation.
typedef struct DgSuppressor DgSuppressor;

// Per-request resource vector.
typedef struct DgResourceVector {
  // Completion time in seconds.
  double t;
  // Memory in GB.
  double m;
  // Utilization in percent.
  double g;
  double l_in;
  double l_out;
} DgResourceVector;

// Classification of one request.
typedef struct DgVerdict {
  double i_c;
  double i_t;
  // One of the region codes, 0 (A) to 5 (F).
  uint32_t region;
  // One of the `DG_ACTION_*` codes.
  uint32_t action;
  uint32_t cluster_id;
} DgVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if there was
// none. The pointer stays valid until the next failing call on the thread.
const char *dg_last_error_message(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library that has not been freed.
void dg_string_free(char *s);

// I_c = ||current|| / ||reference||.
//
// # Safety
// `current` and `reference` must point to `len` doubles; `out` must be writable.
int32_t dg_consumption_index(const double *current,
                             const double *reference,
                             size_t len,
                             double *out);

// Centred cosine similarity of two equal-length vectors.
//
// # Safety
// `current` and `reference` must point to `len` doubles; `out` must be writable.
int32_t dg_tendency_index(const double *current, const double *reference, size_t len, double *out);

// IQR fences of `len` samples (at least 4).
//
// # Safety
// `samples` must point to `len` doubles; both out pointers must be writable.
int32_t dg_iqr_thresholds(const double *samples,
                          size_t len,
                          double lambda,
                          double *out_lower,
                          double *out_upper);

// Per-user output cap, clamped to [l_min, l_max].
double dg_output_cap(double score, double initial_score, double l_min, double l_max);

// True when generation stops at step `n`.
bool dg_should_terminate(double corrected_eos,
                         double top_excluding_eos,
                         uint32_t n,
                         uint32_t l_max);

// Restores a classifier from the JSON written by `dg_classifier_to_json`
// or by the CLI (`classifier_state.json`).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
int32_t dg_classifier_from_json(const char *json, struct DgClassifier **out);

// Fits a classifier with default settings on `len` benign vectors.
//
// # Safety
// `history` must point to `len` vectors; `out` must be writable.
int32_t dg_classifier_from_history(const struct DgResourceVector *history,
                                   size_t len,
                                   struct DgClassifier **out);

// Classifies one vector without changing the classifier.
//
// # Safety
// `handle` must be a live classifier; `v` readable; `out` writable.
int32_t dg_classifier_classify(const struct DgClassifier *handle,
                               const struct DgResourceVector *v,
                               struct DgVerdict *out);

// Feeds a finished request back. Only Reward verdicts move the reference.
//
// # Safety
// `handle` must be a live classifier; `v` and `verdict` readable.
int32_t dg_classifier_learn(struct DgClassifier *handle,
                            const struct DgResourceVector *v,
                            const struct DgVerdict *verdict);

// Serializes the classifier. Free the string with `dg_string_free`.
//
// # Safety
// `handle` must be a live classifier; `out` writable.
int32_t dg_classifier_to_json(const struct DgClassifier *handle, char **out);

// # Safety
// `handle` must be null or a classifier not yet freed.
void dg_classifier_free(struct DgClassifier *handle);

// Creates a scheduler serving `parallelism` users per round.
//
// # Safety
// `out` must be writable.
int32_t dg_scheduler_new(size_t parallelism,
                         double gamma,
                         double mu,
                         double delta,
                         double initial_score,
                         struct DgScheduler **out);

// Queues a request. During a round it becomes visible once the round ends.
//
// # Safety
// `handle` must be a live scheduler.
int32_t dg_scheduler_enqueue(struct DgScheduler *handle,
                             uint32_t user,
                             uint64_t request_id,
                             double arrival);

// Starts a round. Writes up to `capacity` picks and their count to
// `out_len`; zero picks means no work is queued and no round was started.
//
// # Safety
// `handle` must be a live scheduler; `users` and `requests` must hold
// `capacity` elements; `out_len` writable.
int32_t dg_scheduler_select(struct DgScheduler *handle,
                            uint32_t *users,
                            uint64_t *requests,
                            size_t capacity,
                            size_t *out_len);

// Ends the round with one verdict per served user.
//
// # Safety
// `handle` must be a live scheduler; `users` and `verdicts` must hold `len` elements.
int32_t dg_scheduler_apply(struct DgScheduler *handle,
                           const uint32_t *users,
                           const struct DgVerdict *verdicts,
                           size_t len);

// Current reputation score of a known user.
//
// # Safety
// `handle` must be a live scheduler; `out` writable.
int32_t dg_scheduler_score(const struct DgScheduler *handle, uint32_t user, double *out);

// # Safety
// `handle` must be null or a scheduler not yet freed.
void dg_scheduler_free(struct DgScheduler *handle);

// Starts suppression for one generation with output cap `cap`.
//
// # Safety
// `out` must be writable.
int32_t dg_suppressor_new(uint32_t cap,
                          uint32_t l_max,
                          double eta,
                          double gamma_supp,
                          struct DgSuppressor **out);

// Feeds one decoding step: the best non-EOS logit, the raw EOS logit and
// the best non-EOS token. Writes the corrected EOS logit and whether
// decoding should stop at this step.
//
// # Safety
// `handle` must be a live suppressor; out pointers writable.
int32_t dg_suppressor_step(struct DgSuppressor *handle,
                           double top_logit,
                           double eos_logit,
                           uint32_t candidate,
                           double *out_corrected,
                           bool *out_stop);

// Steps seen so far.
//
// # Safety
// `handle` must be null or a live suppressor.
uint32_t dg_suppressor_steps(const struct DgSuppressor *handle);

// # Safety
// `handle` must be null or a suppressor not yet freed.
void dg_suppressor_free(struct DgSuppressor *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOSGUARD_H */

#ifndef AUTOHEAD_H
#define AUTOHEAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AhStatus {
  AH_STATUS_OK = 0,
  AH_STATUS_NULL_POINTER = 1,
  AH_STATUS_INVALID_ARGUMENT = 2,
  AH_STATUS_SHAPE = 3,
  AH_STATUS_DATA = 4,
  AH_STATUS_FORMAT = 5,
  AH_STATUS_IO = 6,
  AH_STATUS_TRAINING = 7,
  AH_STATUS_SEARCH = 8,
  AH_STATUS_CONFIG = 9,
  AH_STATUS_AUC_UNDEFINED = 10,
  AH_STATUS_BUFFER_TOO_SMALL = 11,
  AH_STATUS_PANIC = 99,
} AhStatus;

/**
 * Truncated CNN followed by the searched head.
 */
typedef struct AhAutoClassifier AhAutoClassifier;

/**
 * A fixed set of networks with weights from their validation AUCs.
 */
typedef struct AhFusion AhFusion;

/**
 * A trained CNN.
 */
typedef struct AhNetwork AhNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ah_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *ah_last_error_message(void);

/**
 * Area under the ROC curve of `scores` against `labels` (non-zero = defect).
 */
enum AhStatus ah_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Loads a network saved by `train-cnns` (`.acnn`).
 */
enum AhStatus ah_network_load(const char *path, struct AhNetwork **out);

void ah_network_free(struct AhNetwork *handle);

/**
 * Pixels per input image, or 0 for a null handle.
 */
size_t ah_network_input_len(const struct AhNetwork *handle);

/**
 * Number of output classes, or 0 for a null handle.
 */
size_t ah_network_class_count(const struct AhNetwork *handle);

enum AhStatus ah_network_validation_auc(const struct AhNetwork *handle, double *out);

/**
 * Class probabilities for one image into `probs[0..class_count]`.
 */
enum AhStatus ah_network_predict(const struct AhNetwork *handle,
                                 const double *pixels,
                                 size_t len,
                                 double *probs,
                                 size_t cap);

/**
 * Builds a fusion over copies of `count` networks. The networks stay owned
 * by the caller.
 */
enum AhStatus ah_fusion_new(const struct AhNetwork *const *networks,
                            size_t count,
                            struct AhFusion **out);

void ah_fusion_free(struct AhFusion *handle);

/**
 * Normalised weight of network `index`.
 */
enum AhStatus ah_fusion_weight(const struct AhFusion *handle, size_t index, double *out);

/**
 * Fused class scores into `scores[0..classes]` and the winning class (the
 * lowest index among ties) into `winner`.
 */
enum AhStatus ah_fusion_predict(const struct AhFusion *handle,
                                const double *pixels,
                                size_t len,
                                size_t *winner,
                                double *scores,
                                size_t cap);

/**
 * Loads a composite saved by `search-head` (`auto-classifier.model`).
 */
enum AhStatus ah_auto_classifier_load(const char *path, struct AhAutoClassifier **out);

void ah_auto_classifier_free(struct AhAutoClassifier *handle);

/**
 * Pixels per input image, or 0 for a null handle.
 */
size_t ah_auto_classifier_input_len(const struct AhAutoClassifier *handle);

/**
 * Width of the extracted feature vector, or 0 for a null handle.
 */
size_t ah_auto_classifier_feature_dim(const struct AhAutoClassifier *handle);

/**
 * Probability that the image shows a defect.
 */
enum AhStatus ah_auto_classifier_predict_proba(const struct AhAutoClassifier *handle,
                                               const double *pixels,
                                               size_t len,
                                               double *out);

/**
 * Head probability for an already extracted feature vector.
 */
enum AhStatus ah_auto_classifier_head_proba(const struct AhAutoClassifier *handle,
                                            const double *features,
                                            size_t len,
                                            double *out);

/**
 * Index of the defect class in network and fusion outputs.
 */
size_t ah_positive_class(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOHEAD_H */

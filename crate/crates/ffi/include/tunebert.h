#ifndef TUNEBERT_H
#define TUNEBERT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TbStatus {
  TB_STATUS_OK = 0,
  TB_STATUS_NULL_POINTER = 1,
  TB_STATUS_INVALID_UTF8 = 2,
  TB_STATUS_IO = 3,
  TB_STATUS_INVALID_ARGUMENT = 4,
  TB_STATUS_CHECKPOINT = 5,
  TB_STATUS_BUFFER_TOO_SMALL = 6,
  TB_STATUS_PANIC = 7,
  TB_STATUS_INTERNAL = 8,
} TbStatus;

/**
 * Truncation strategies for over-length token sequences.
 */
typedef enum TbTruncation {
  TB_TRUNCATION_HEAD_ONLY = 0,
  TB_TRUNCATION_TAIL_ONLY = 1,
  TB_TRUNCATION_HEAD_TAIL = 2,
} TbTruncation;

/**
 * Fine-tuned classifier handle.
 */
typedef struct TbClassifier TbClassifier;

/**
 * Word-piece vocabulary handle.
 */
typedef struct TbVocab TbVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tb_version(void);

/**
 * Loads a vocabulary file (one token per line).
 */
enum TbStatus tb_vocab_load(const char *path, struct TbVocab **out);

void tb_vocab_free(struct TbVocab *vocab);

/**
 * Number of tokens, or 0 for a null handle.
 */
size_t tb_vocab_size(const struct TbVocab *vocab);

/**
 * Word-piece ids of `text` (no special tokens). `*out_len` always receives
 * the full count; `BufferTooSmall` is returned when it exceeds `capacity`.
 */
enum TbStatus tb_tokenize(const struct TbVocab *vocab,
                          const char *text,
                          uint32_t *out_ids,
                          size_t capacity,
                          size_t *out_len);

/**
 * Keeps at most 510 ids: the first 510, the last 510, or the first 128
 * followed by the last 382.
 */
enum TbStatus tb_truncate(const uint32_t *ids,
                          size_t len,
                          enum TbTruncation kind,
                          uint32_t *out_ids,
                          size_t capacity,
                          size_t *out_len);

/**
 * Slanted triangular learning rate at `step` of `total`.
 */
double tb_stlr(size_t step, size_t total, double warmup_proportion, double peak);

/**
 * Rate of parameter group `depth` (0 = embeddings, 1..=layers = blocks,
 * layers + 1 = task head) at `step`, with layer-wise decay `decay`.
 */
enum TbStatus tb_effective_rate(size_t depth,
                                size_t layers,
                                double base_lr,
                                double decay,
                                size_t step,
                                size_t total,
                                double warmup_proportion,
                                double *out_rate);

/**
 * Loads a classifier checkpoint. When `vocab` is non-null its hash must match
 * the one recorded in the checkpoint.
 */
enum TbStatus tb_classifier_load(const char *path,
                                 const struct TbVocab *vocab,
                                 struct TbClassifier **out);

void tb_classifier_free(struct TbClassifier *clf);

/**
 * Number of classes, or 0 for a null handle.
 */
size_t tb_classifier_num_classes(const struct TbClassifier *clf);

/**
 * Class probabilities for `text`, written to `out_probs[..num_classes]`.
 */
enum TbStatus tb_classify(const struct TbClassifier *clf,
                          const struct TbVocab *vocab,
                          const char *text,
                          float *out_probs,
                          size_t capacity,
                          size_t *out_len);

/**
 * Class probabilities for already tokenized word-piece ids.
 */
enum TbStatus tb_classify_ids(const struct TbClassifier *clf,
                              const uint32_t *ids,
                              size_t len,
                              float *out_probs,
                              size_t capacity,
                              size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TUNEBERT_H */

#ifndef CTXLM_H
#define CTXLM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtxlmStatus {
  CTXLM_STATUS_OK = 0,
  CTXLM_STATUS_NULL_POINTER = 1,
  CTXLM_STATUS_IO = 2,
  CTXLM_STATUS_FORMAT = 3,
  CTXLM_STATUS_INVALID_ARGUMENT = 4,
  CTXLM_STATUS_NUMERIC = 5,
  CTXLM_STATUS_UTF8 = 6,
  CTXLM_STATUS_PANIC = 7,
} CtxlmStatus;

/**
 * A trained neural language model with its vocabulary.
 */
typedef struct CtxlmModel CtxlmModel;

/**
 * A modified Kneser-Ney n-gram model with its vocabulary.
 */
typedef struct CtxlmNgram CtxlmNgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static version string, e.g. `"0.1.0"`.
 */
const char *ctxlm_version(void);

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ctxlm_last_error_message(void);

/**
 * Loads a checkpoint written by `ctxlm train`.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum CtxlmStatus ctxlm_model_load(const char *path, struct CtxlmModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `ctxlm_model_load` and not be used afterwards.
 */
void ctxlm_model_free(struct CtxlmModel *model);

/**
 * Vocabulary size including the reserved tokens, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctxlm_model_vocab_size(const struct CtxlmModel *model);

/**
 * Number of context sentences the model was trained with, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctxlm_model_context_size(const struct CtxlmModel *model);

/**
 * NLL in nats of `target` (whitespace-separated tokens, EOS included)
 * given `context`, one preceding sentence per line, oldest first. `context`
 * may be null or empty.
 *
 * # Safety
 * `model` must be a live handle, strings valid C strings, `out` valid.
 */
enum CtxlmStatus ctxlm_model_sentence_nll(const struct CtxlmModel *model,
                                          const char *context,
                                          const char *target,
                                          double *out);

/**
 * Perplexity of the corpus file at `path` with `n` context sentences.
 *
 * # Safety
 * `model` must be a live handle, `path` a valid C string, `out` valid.
 */
enum CtxlmStatus ctxlm_model_corpus_perplexity(const struct CtxlmModel *model,
                                               const char *path,
                                               size_t n,
                                               double *out);

/**
 * Trains an n-gram model of `order` on the corpus at `path`, keeping the
 * `vocab_size` most frequent types (reserved tokens included).
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum CtxlmStatus ctxlm_ngram_train(const char *path,
                                   size_t order,
                                   size_t vocab_size,
                                   struct CtxlmNgram **out);

/**
 * Releases an n-gram model. Null is ignored.
 *
 * # Safety
 * `ngram` must come from `ctxlm_ngram_train` and not be used afterwards.
 */
void ctxlm_ngram_free(struct CtxlmNgram *ngram);

/**
 * Natural-log probability of `sentence`, EOS included.
 *
 * # Safety
 * `ngram` must be a live handle, `sentence` a valid C string, `out` valid.
 */
enum CtxlmStatus ctxlm_ngram_sentence_log_prob(const struct CtxlmNgram *ngram,
                                               const char *sentence,
                                               double *out);

/**
 * Perplexity of the corpus file at `path`.
 *
 * # Safety
 * `ngram` must be a live handle, `path` a valid C string, `out` valid.
 */
enum CtxlmStatus ctxlm_ngram_corpus_perplexity(const struct CtxlmNgram *ngram,
                                               const char *path,
                                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTXLM_H */

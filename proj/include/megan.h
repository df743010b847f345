/* megan — multi-view ECG synthesis GAN: C API.
 *
 * All functions returning megan_status set a thread-local message readable
 * via megan_last_error() on failure. Handles are opaque; every *_open /
 * *_create has a matching *_free. Buffers use row-major float32
 * [record][view][sample] layout, matching the on-disk signals.f32le format.
 */
#ifndef MEGAN_H
#define MEGAN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef MEGAN_API
#define MEGAN_API __attribute__((visibility("default")))
#endif

typedef enum megan_status {
  MEGAN_OK = 0,
  MEGAN_ERR_INVALID_ARGUMENT = 1,
  MEGAN_ERR_IO = 2,
  MEGAN_ERR_CORRUPT = 3,
  MEGAN_ERR_CONFIG_MISMATCH = 4,
  MEGAN_ERR_RUNTIME = 5
} megan_status;

MEGAN_API const char* megan_version(void);
MEGAN_API const char* megan_status_name(megan_status status);
MEGAN_API const char* megan_last_error(void);
MEGAN_API void megan_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Datasets                                                            */
/* ------------------------------------------------------------------ */

typedef struct megan_dataset megan_dataset;

/* Synthesizes the dipole-projection toy dataset. disease_mix holds mix_len
 * per-condition probabilities (mix_len must be 3). */
MEGAN_API megan_status megan_toy_dataset_create(int64_t count, uint64_t seed, const double* disease_mix,
                                                size_t mix_len, megan_dataset** out);
MEGAN_API megan_status megan_dataset_open(const char* dir, megan_dataset** out);
MEGAN_API megan_status megan_dataset_save(const megan_dataset* ds, const char* dir);
MEGAN_API megan_status megan_dataset_split(const megan_dataset* ds, double train_fraction, uint64_t seed,
                                           megan_dataset** train_out, megan_dataset** test_out);
MEGAN_API int megan_dataset_count(const megan_dataset* ds);
MEGAN_API int megan_dataset_views(const megan_dataset* ds);
MEGAN_API int megan_dataset_length(const megan_dataset* ds);
MEGAN_API int megan_dataset_diseases(const megan_dataset* ds);
/* out must hold views()*length() floats. */
MEGAN_API megan_status megan_dataset_signals(const megan_dataset* ds, int index, float* out);
/* out must hold diseases() bytes. */
MEGAN_API megan_status megan_dataset_labels(const megan_dataset* ds, int index, uint8_t* out);
MEGAN_API void megan_dataset_free(megan_dataset* ds);

/* ------------------------------------------------------------------ */
/* Training                                                            */
/* ------------------------------------------------------------------ */

/* config_json keys (all optional): batch, iterations, lr, beta1, beta2,
 * lsgan_a, lsgan_b, seed, no_disease, checkpoint_interval, clip_grads,
 * clip_norm. Writes loss.csv, loss.svg, interval checkpoints,
 * train_state_final.megan and generator.megan under out_dir.
 * resume_checkpoint may be NULL. */
MEGAN_API megan_status megan_train(const megan_dataset* train_set, const char* config_json,
                                   const char* out_dir, const char* resume_checkpoint);

/* ------------------------------------------------------------------ */
/* Generation                                                          */
/* ------------------------------------------------------------------ */

typedef struct megan_generator megan_generator;

/* Accepts generator.megan and train_state checkpoints. */
MEGAN_API megan_status megan_generator_open(const char* checkpoint_path, megan_generator** out);
MEGAN_API int megan_generator_views(const megan_generator* g);
MEGAN_API int megan_generator_length(const megan_generator* g);
MEGAN_API int megan_generator_diseases(const megan_generator* g);
/* condition: NULL for the all-zero condition, else diseases() 0/1 entries.
 * out must hold count*views()*length() floats. */
MEGAN_API megan_status megan_generate(const megan_generator* g, int count, const uint8_t* condition,
                                      uint64_t seed, float* out);
/* Writes a dataset directory plus one 12-panel SVG per sample (up to
 * max_plots). condition_index < 0 selects the all-zero condition. */
MEGAN_API megan_status megan_generate_to_dir(const megan_generator* g, int count, int condition_index,
                                             uint64_t seed, const char* out_dir, int max_plots);
MEGAN_API void megan_generator_free(megan_generator* g);

/* ------------------------------------------------------------------ */
/* Metrics                                                             */
/* ------------------------------------------------------------------ */

typedef struct megan_extractor megan_extractor;

MEGAN_API megan_status megan_synth_image_corpus(int count, int classes, uint64_t seed, const char* out_dir);
/* Pretrains the 1D Inception on a patchified image corpus; writes the
 * extractor checkpoint. eval_accuracy (nullable) receives held-out top-1. */
MEGAN_API megan_status megan_pretrain_extractor(const char* corpus_dir, int epochs, uint64_t seed,
                                                const char* out_checkpoint, double* eval_accuracy);
MEGAN_API megan_status megan_extractor_open(const char* checkpoint_path, megan_extractor** out);
MEGAN_API void megan_extractor_free(megan_extractor* fx);

/* options_json keys (optional): seed, onnc_samples, embedder_steps,
 * consistency_samples, with_augmentation. *report_json_out receives a
 * malloc'd JSON document (free with megan_string_free). */
MEGAN_API megan_status megan_eval(const megan_generator* g, const megan_dataset* ds,
                                  const megan_extractor* fx, const char* options_json,
                                  char** report_json_out);

/* Cumulative noise/erase/blur tracks; writes noise.csv, erase.csv, blur.csv
 * (step,rfid rows) and perturbation.svg under out_dir. max_samples caps the
 * per-half record count (0 selects the default). */
MEGAN_API megan_status megan_perturb(const megan_dataset* ds, const megan_extractor* fx, int steps,
                                     int max_samples, uint64_t seed, const char* out_dir);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MEGAN_H */

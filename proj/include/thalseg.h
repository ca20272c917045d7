/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 *
 * C API of the thalseg shared library: thalamic nuclei segmentation with
 * cascaded multi-planar 2D networks, plus phantom generation, evaluation,
 * noise-robustness sweeps and cohort statistics.
 *
 * Conventions: every function returns a ts_status (TS_OK on success); the
 * message for the most recent failure on the calling thread is available via
 * ts_last_error(). Objects come back as opaque handles released with the
 * matching *_free call. Strings returned through char** are heap-allocated
 * and released with ts_string_free().
 */
#ifndef THALSEG_H
#define THALSEG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ts_status {
  TS_OK = 0,
  TS_ERROR = 1,             /* unexpected failure */
  TS_INVALID_ARGUMENT = 2,
  TS_IO_ERROR = 3,
  TS_FORMAT_ERROR = 4,      /* malformed file */
  TS_VALIDATION_ERROR = 5,  /* contract violation (bad data, bad config) */
  TS_NUMERIC_ERROR = 6
} ts_status;

typedef struct ts_volume ts_volume;  /* image volume or label map */
typedef struct ts_model ts_model;    /* multi-planar segmentation bundle */

const char* ts_version(void);
const char* ts_last_error(void);
void ts_string_free(char* s);

/* worker pool size for data-parallel steps (0 = hardware default) */
void ts_set_jobs(int jobs);

/* ------------------------------------------------------------------ */
/* volumes and label maps (NIfTI-1, .nii or .nii.gz)                    */
/* ------------------------------------------------------------------ */

ts_status ts_volume_read(const char* path, ts_volume** out);
ts_status ts_labelmap_read(const char* path, ts_volume** out);
ts_status ts_volume_write(const ts_volume* v, const char* path);
void ts_volume_free(ts_volume* v);

int ts_volume_is_labelmap(const ts_volume* v);
ts_status ts_volume_dims(const ts_volume* v, int64_t dims[3]);
ts_status ts_volume_spacing(const ts_volume* v, double spacing[3]);
/* 4-byte buffer: 3-letter anatomical code + NUL */
ts_status ts_volume_orientation(const ts_volume* v, char code[4]);

ts_status ts_volume_reorient(const ts_volume* v, const char* code, ts_volume** out);
ts_status ts_volume_flip_lr(const ts_volume* v, ts_volume** out);
ts_status ts_volume_resample(const ts_volume* v, const double spacing[3], ts_volume** out);
ts_status ts_volume_normalize(const ts_volume* v, ts_volume** out);

/* Rician corruption: out = sqrt((I+a)^2 + b^2), a,b ~ N(0, sigma^2) */
ts_status ts_add_rician(const ts_volume* v, double sigma, uint64_t seed, ts_volume** out);

/* mean(thalamus ROI) / std(background cube of the given side at the corner) */
ts_status ts_measure_snr(const ts_volume* v, const ts_volume* thalamus_labels,
                         int64_t background_cube_side, double* snr_out);

/* per-class overlap between two label maps */
ts_status ts_dice(const ts_volume* a, const ts_volume* b, int class_id, double* out);
ts_status ts_vsi(const ts_volume* a, const ts_volume* b, int class_id, double* out);

/* full metrics report (JSON) for a prediction/reference pair */
ts_status ts_evaluate_pair(const ts_volume* pred, const ts_volume* ref, char** report_json);

/* ------------------------------------------------------------------ */
/* pipeline entry points (configs are JSON text; see the CLI docs)      */
/* ------------------------------------------------------------------ */

/* writes a phantom cohort (images, exact labels, manifests, covariate
 * table, crop template); summary lists the file paths */
ts_status ts_phantom_cohort(const char* cohort_json, const char* out_dir, char** summary_json);

/* trains the requested networks and assembles a model bundle */
ts_status ts_train(const char* train_json, char** summary_json);

/* k-fold cross-validation (train + held-out evaluation per fold) */
ts_status ts_crossval(const char* train_json, int folds, uint64_t seed, char** summary_json);

ts_status ts_model_load(const char* bundle_dir, ts_model** out);
void ts_model_free(ts_model* m);

/* segments one image; writes <out_prefix>_seg.nii.gz and the three
 * per-orientation maps; options_json may be empty for defaults */
ts_status ts_segment(const ts_model* m, const char* image_path, const char* template_path,
                     const char* options_json, const char* out_prefix, char** summary_json);

/* segments every manifest subject with labels and scores it */
ts_status ts_evaluate(const char* evaluate_json, char** summary_json);

/* SNR robustness sweep; emits sweep.tsv/json/svg into out_dir */
ts_status ts_noise_sweep(const char* sweep_json, char** report_json);

/* ANCOVA over a cohort table (volume ~ group + age + gender + PI + ICV) */
ts_status ts_stats_ancova(const char* table_path, double alpha, int comparisons,
                          char** result_json);

/* paired two-tailed t-test over aligned metric arrays */
ts_status ts_paired_test(const double* metric_a, const double* metric_b, size_t n,
                         double* p_out);

/* renders result files as SVG: kind = snr-dice | dice-bars | training-curve */
ts_status ts_plot(const char* kind, const char* data_path, const char* out_svg);

#ifdef __cplusplus
}
#endif

#endif /* THALSEG_H */

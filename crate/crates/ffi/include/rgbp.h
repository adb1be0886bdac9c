#ifndef RGBP_H
#define RGBP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum RgbpStatus {
  RGBP_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  RGBP_STATUS_INVALID_ARGUMENT = 1,
  RGBP_STATUS_SHAPE = 2,
  RGBP_STATUS_VALIDATION = 3,
  RGBP_STATUS_FORMAT = 4,
  RGBP_STATUS_NOT_FOUND = 5,
  RGBP_STATUS_ALIGNMENT = 6,
  RGBP_STATUS_CONFIG = 7,
  RGBP_STATUS_IO = 8,
  // Any other failure, including a caught panic.
  RGBP_STATUS_INTERNAL = 9,
} RgbpStatus;

// Opaque list of detections.
typedef struct RgbpDetections RgbpDetections;

// Opaque detector.
typedef struct RgbpNetwork RgbpNetwork;

// Opaque `(N, C, H, W)` tensor.
typedef struct RgbpTensor RgbpTensor;

// One detection box in pixels, top-left origin.
typedef struct RgbpDetection {
  uint64_t image_id;
  double x;
  double y;
  double w;
  double h;
  double score;
} RgbpDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *rgbp_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *rgbp_last_error(void);

// Copies `len` values into a new tensor of the given shape.
enum RgbpStatus rgbp_tensor_new(const size_t *shape,
                                const double *data,
                                size_t len,
                                struct RgbpTensor **out);

// Writes the four dimensions into `shape_out`.
enum RgbpStatus rgbp_tensor_shape(const struct RgbpTensor *t, size_t *shape_out);

// Borrowed pointer to the tensor's values and their count. Valid while the
// handle lives.
enum RgbpStatus rgbp_tensor_data(const struct RgbpTensor *t,
                                 const double **data_out,
                                 size_t *len_out);

// Reads an `RGBPT` tensor file.
enum RgbpStatus rgbp_tensor_load(const char *path, struct RgbpTensor **out);

// Writes an `RGBPT` tensor file. `f32 != 0` stores single precision.
enum RgbpStatus rgbp_tensor_save(const struct RgbpTensor *t, const char *path, int32_t f32);

void rgbp_tensor_free(struct RgbpTensor *t);

// AoLP (radians) and DoLP from a `(4, C, H, W)` stack of the 0°, 45°, 90°
// and 135° intensities. Both outputs are `(1, C, H, W)`.
enum RgbpStatus rgbp_polar_maps(const struct RgbpTensor *quad,
                                struct RgbpTensor **aolp_out,
                                struct RgbpTensor **dolp_out);

// Builds a detector with seeded random weights. `config_toml` may be null
// for the defaults; `seed` overrides the seed in the config.
enum RgbpStatus rgbp_network_init(const char *config_toml, uint64_t seed, struct RgbpNetwork **out);

// Replaces the weights with those stored in an `RGBPW` file.
enum RgbpStatus rgbp_network_load_weights(struct RgbpNetwork *net, const char *path);

enum RgbpStatus rgbp_network_save_weights(const struct RgbpNetwork *net, const char *path);

// Runs detection on one image. Inputs are `(1, 3, H, W)` with AoLP in
// radians; `H` and `W` must be multiples of the network's size multiple.
enum RgbpStatus rgbp_network_detect(const struct RgbpNetwork *net,
                                    const struct RgbpTensor *rgb,
                                    const struct RgbpTensor *aolp,
                                    const struct RgbpTensor *dolp,
                                    uint64_t image_id,
                                    struct RgbpDetections **out);

void rgbp_network_free(struct RgbpNetwork *net);

// Number of detections, 0 for a null handle.
size_t rgbp_detections_len(const struct RgbpDetections *d);

enum RgbpStatus rgbp_detections_get(const struct RgbpDetections *d,
                                    size_t index,
                                    struct RgbpDetection *out);

void rgbp_detections_free(struct RgbpDetections *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RGBP_H */

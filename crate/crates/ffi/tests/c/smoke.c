#include <stdio.h>
#include <string.h>

#include "rgbp.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        RgbpStatus s_ = (call);                                            \
        if (s_ != RGBP_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,              \
                    rgbp_last_error() ? rgbp_last_error() : "?");          \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    /* one pixel, one channel: I0=1, I45=0.5, I90=0, I135=0.5 -> DoLP 1, AoLP 0 */
    size_t quad_shape[4] = {4, 1, 1, 1};
    double quad_data[4] = {1.0, 0.5, 0.0, 0.5};
    RgbpTensor *quad = NULL, *aolp = NULL, *dolp = NULL;
    CHECK(rgbp_tensor_new(quad_shape, quad_data, 4, &quad));
    CHECK(rgbp_polar_maps(quad, &aolp, &dolp));
    const double *v = NULL;
    size_t n = 0;
    CHECK(rgbp_tensor_data(dolp, &v, &n));
    if (n != 1 || v[0] < 0.999999 || v[0] > 1.000001) {
        fprintf(stderr, "dolp %f\n", n ? v[0] : -1.0);
        return 1;
    }

    size_t bad_shape[4] = {1, 1, 2, 2};
    RgbpTensor *bad = NULL;
    if (rgbp_tensor_new(bad_shape, quad_data, 3, &bad) != RGBP_STATUS_SHAPE || rgbp_last_error() == NULL) {
        fprintf(stderr, "expected a shape error\n");
        return 1;
    }

    size_t img_shape[4] = {1, 3, 32, 32};
    double img[3 * 32 * 32];
    for (size_t i = 0; i < 3 * 32 * 32; i++) img[i] = (double)(i % 7) / 7.0;
    RgbpTensor *rgb = NULL, *a = NULL, *d = NULL;
    CHECK(rgbp_tensor_new(img_shape, img, 3 * 32 * 32, &rgb));
    CHECK(rgbp_tensor_new(img_shape, img, 3 * 32 * 32, &a));
    CHECK(rgbp_tensor_new(img_shape, img, 3 * 32 * 32, &d));

    RgbpNetwork *net = NULL;
    CHECK(rgbp_network_init("score_thresh = 0.0\n", 5, &net));
    RgbpDetections *dets = NULL;
    CHECK(rgbp_network_detect(net, rgb, a, d, 42, &dets));
    size_t count = rgbp_detections_len(dets);
    if (count == 0) {
        fprintf(stderr, "no detections at score 0\n");
        return 1;
    }
    RgbpDetection first;
    CHECK(rgbp_detections_get(dets, 0, &first));
    if (first.image_id != 42 || first.w <= 0.0 || first.h <= 0.0) {
        fprintf(stderr, "bad detection\n");
        return 1;
    }
    printf("version %s, %zu detections\n", rgbp_version(), count);

    rgbp_detections_free(dets);
    rgbp_network_free(net);
    rgbp_tensor_free(rgb);
    rgbp_tensor_free(a);
    rgbp_tensor_free(d);
    rgbp_tensor_free(quad);
    rgbp_tensor_free(aolp);
    rgbp_tensor_free(dolp);
    return 0;
}

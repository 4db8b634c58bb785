#include <stdio.h>
#include <string.h>
#include "microinpaint.h"

#define CHECK(call)                                                              \
    do {                                                                         \
        MiStatus s_ = (call);                                                    \
        if (s_ != MI_STATUS_OK) {                                                \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, mi_last_error()); \
            return 1;                                                            \
        }                                                                        \
    } while (0)

static int stop_at_three(size_t iteration, double critic_loss, void *user) {
    (void)critic_loss;
    *(size_t *)user = iteration;
    return iteration >= 3;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke IMAGE OUT_PNG\n");
        return 2;
    }
    MiMicrograph *img = NULL;
    CHECK(mi_micrograph_load(argv[1], MI_KIND_AUTO, &img));
    size_t w, h, c;
    CHECK(mi_micrograph_dims(img, &w, &h, &c));

    const char *region = "{\"shape\":\"rect\",\"x\":24,\"y\":24,\"w\":48,\"h\":48}";
    const char *config =
        "{\"training\":{\"i_max\":6,\"critic_per_g\":2,\"batch_size\":2,\"snapshot_every\":3},"
        "\"arch\":{\"latent_depth\":4,\"gen_channels\":[6,4,4],\"critic_channels\":[2,2,2,2],\"init_std\":0.02}}";
    size_t seen = 0;
    MiBundle *bundle = NULL;
    CHECK(mi_train(img, MI_METHOD_GOPT, region, config, 7, stop_at_three, &seen, &bundle));
    MiMethod method;
    size_t iterations;
    bool partial;
    CHECK(mi_bundle_info(bundle, &method, &iterations, &partial));
    char digest[65];
    size_t needed = 0;
    CHECK(mi_bundle_digest(bundle, digest, sizeof digest, &needed));

    MiMicrograph *out = NULL;
    CHECK(mi_inpaint(bundle, img, false, 0, &out));
    CHECK(mi_micrograph_save_png(out, argv[2]));
    double p = -1.0, d = -1.0;
    CHECK(mi_border_contiguity(out, img, region, &p, &d));

    MiBundle *missing = NULL;
    MiStatus s = mi_bundle_load("/nonexistent/bundle.mipb", &missing);
    printf("%zu %zu %zu %d %zu %d %zu %s %d %d\n", w, h, c, (int)method, iterations, (int)partial, seen, digest,
           p >= 0.0 && p <= 1.0, (int)s);
    printf("%s\n", mi_last_error());

    mi_micrograph_free(out);
    mi_bundle_free(bundle);
    mi_micrograph_free(img);
    return 0;
}

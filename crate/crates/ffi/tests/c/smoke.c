#include <math.h>
#include <stdio.h>
#include <string.h>

#include "latkd.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke MODEL_JSON\n");
        return 2;
    }
    LatkdModel *model = NULL;
    if (latkd_model_load_file(argv[1], &model) != LATKD_STATUS_OK) {
        fprintf(stderr, "load: %s\n", latkd_last_error_message());
        return 1;
    }
    size_t dim = 0;
    latkd_model_input_dim(model, &dim);
    double rows[2 * 8] = {0};
    for (size_t j = 0; j < dim && j < 8; j++) {
        rows[dim + j] = 3.0;
    }
    double scores[2];
    LatkdStatus st = latkd_model_score(model, rows, 2, dim, scores);
    if (st != LATKD_STATUS_OK) {
        fprintf(stderr, "score: %s\n", latkd_last_error_message());
        return 1;
    }
    st = latkd_model_score(model, rows, 2, dim + 1, scores);
    if (st != LATKD_STATUS_DIMENSION_MISMATCH || latkd_last_error_message() == NULL) {
        return 1;
    }
    latkd_model_free(model);

    double s[4] = {0.9, 0.8, 0.7, 0.1};
    uint8_t y[4] = {1, 0, 1, 0};
    double ap = 0.0;
    if (latkd_auprc(s, y, 4, &ap) != LATKD_STATUS_OK) {
        return 1;
    }
    printf("dim=%zu score0=%.17g score1=%.17g auprc=%.17g version=%s\n", dim, scores[0], scores[1], ap,
           latkd_version());
    return 0;
}

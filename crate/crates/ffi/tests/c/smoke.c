#include <stdio.h>
#include "caitts.h"

int main(void) {
    CaittsModel *model = NULL;
    if (caitts_model_new("toy", 5, &model) != CAITTS_STATUS_OK) return 10;
    uint32_t ids[2] = {1, 3};
    CaittsMel *mel = NULL;
    if (caitts_synthesize(model, ids, 2, 0, 1, 2.0, &mel) != CAITTS_STATUS_INTENSITY_RANGE) return 11;
    if (caitts_last_error() == NULL) return 12;
    if (caitts_synthesize(model, ids, 2, 0, 1, 0.5, &mel) != CAITTS_STATUS_OK) return 13;
    size_t frames = 0, dims = 0;
    caitts_mel_shape(mel, &frames, &dims);
    if (frames == 0 || dims == 0 || caitts_mel_data(mel) == NULL) return 14;
    printf("%zu %zu\n", frames, dims);
    caitts_mel_free(mel);
    caitts_model_free(model);
    return 0;
}

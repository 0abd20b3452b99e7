#include <stdio.h>
#include <string.h>
#include "modprompt.h"

int main(void) {
    MpExperiment *exp = NULL;
    if (mp_experiment_from_json("{\"methods\": [\"modular_pt\"], \"trials\": [2]}", &exp) != MP_STATUS_OK) {
        fprintf(stderr, "parse failed: %s\n", mp_last_error());
        return 1;
    }
    char *json = NULL;
    if (mp_experiment_to_json(exp, &json) != MP_STATUS_OK || strstr(json, "modular_pt") == NULL) {
        return 2;
    }
    mp_string_free(json);
    mp_experiment_free(exp);

    MpExperiment *bad = NULL;
    if (mp_experiment_from_json("{\"trials\": \"x\"}", &bad) != MP_STATUS_INVALID_INPUT || bad != NULL) {
        return 3;
    }
    if (strlen(mp_last_error()) == 0) {
        return 4;
    }
    printf("ok %s\n", mp_version());
    return 0;
}

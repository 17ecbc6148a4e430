#include <stdio.h>
#include <string.h>
#include "gends.h"

int main(int argc, char **argv) {
    if (argc != 3) {
        return 2;
    }
    GendsEngine *engine = NULL;
    if (gends_engine_load(argv[1], argv[2], &engine) != GENDS_STATUS_OK) {
        fprintf(stderr, "load failed: %s\n", gends_last_error());
        return 1;
    }
    char *json = NULL;
    GendsStatus st = gends_engine_reply_json(engine, "hello there", &json);
    if (st != GENDS_STATUS_OK) {
        fprintf(stderr, "reply failed: %s\n", gends_last_error());
        gends_engine_free(engine);
        return 1;
    }
    printf("%s\n", json);
    gends_string_free(json);
    if (gends_engine_reply_json(engine, NULL, &json) != GENDS_STATUS_NULL_ARGUMENT) {
        return 1;
    }
    gends_engine_free(engine);
    return 0;
}

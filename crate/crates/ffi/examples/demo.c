/* Build: cargo build --release -p pal-ffi
 *        cc crates/ffi/examples/demo.c -Icrates/ffi/include -Ltarget/release -lpal_ffi -lm -lpthread -ldl -o demo
 */
#include <stdio.h>
#include "pal.h"

static int check(PalStatus s) {
    if (s != PAL_STATUS_OK) {
        const char *msg = pal_last_error_message();
        fprintf(stderr, "error %d: %s\n", (int)s, msg ? msg : "");
        return 1;
    }
    return 0;
}

int main(void) {
    double h1[] = {1, 0, 0, 1, 1, 1};
    uint32_t y1[] = {0, 1, 1};
    double h2[] = {-1, 2};
    uint32_t y2[] = {2};
    PalRls *head = NULL;
    if (check(pal_rls_new(2, 1.0, &head))) return 1;
    if (check(pal_rls_fit_first(head, h1, 3, y1, 2))) return 1;
    if (check(pal_rls_expand(head, 1))) return 1;
    if (check(pal_rls_update(head, h2, 1, y2))) return 1;
    uint32_t pred[3];
    if (check(pal_rls_predict(head, h1, 3, pred))) return 1;
    printf("predictions: %u %u %u\n", pred[0], pred[1], pred[2]);
    pal_rls_free(head);

    PalConfig *cfg = NULL;
    PalReport *report = NULL;
    double acc = 0, fg = 0;
    if (check(pal_config_small(&cfg))) return 1;
    if (check(pal_run(cfg, &report))) return 1;
    if (check(pal_report_acc(report, &acc)) || check(pal_report_fg(report, &fg))) return 1;
    printf("small run: acc %.4f fg %.4f\n", acc, fg);
    pal_report_free(report);
    pal_config_free(cfg);
    return 0;
}

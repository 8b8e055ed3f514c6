#include <math.h>
#include <stdio.h>
#include <string.h>
#include "autofeedback.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, af_last_error()); return 1; } } while (0)

int main(void) {
    double x = 0.0, p = 1.0;
    CHECK(af_chi_square_2x2(37, 203, 3, 237, &x) == AF_STATUS_OK);
    CHECK(fabs(x - 31.527) <= 0.0005);
    CHECK(af_p_value_df1(x, &p) == AF_STATUS_OK && p < 0.001);
    CHECK(af_chi_square_2x2(0, 240, 0, 240, &x) == AF_STATUS_STATISTICS);
    CHECK(strlen(af_last_error()) > 0);

    int64_t h = 0;
    CHECK(af_percent_round2(68, 240, &h) == AF_STATUS_OK && h == 2833);

    AfVerdict *v = NULL;
    CHECK(af_verdict_parse("The feedback now is good enough.", &v) == AF_STATUS_OK);
    AfDecision d;
    CHECK(af_verdict_decision(v, &d) == AF_STATUS_OK && d == AF_DECISION_GOOD_ENOUGH);
    char *revised = (char *)1;
    CHECK(af_verdict_revised_feedback(v, &revised) == AF_STATUS_OK && revised == NULL);
    af_verdict_free(v);

    AfTemplate *t = NULL;
    AfContext *c = NULL;
    char *prompt = NULL;
    CHECK(af_template_bundled(AF_TEMPLATE_KIND_AGENT1, &t) == AF_STATUS_OK);
    CHECK(af_context_bundled(&c) == AF_STATUS_OK);
    CHECK(af_assemble(t, c, "40912", "erljhfgefb,jkh", AF_SCORE_LEVEL_BEGINNING, NULL, &prompt) == AF_STATUS_OK);
    CHECK(strstr(prompt, "erljhfgefb,jkh") != NULL);
    af_string_free(prompt);
    af_context_free(c);
    af_template_free(t);

    CHECK(af_verdict_parse(NULL, &v) == AF_STATUS_NULL_POINTER);
    printf("ok %s\n", af_version());
    return 0;
}

#include <stdio.h>
#include <string.h>

#include "polysent.h"

static int failures = 0;

#define CHECK(cond)                                              \
  do {                                                           \
    if (!(cond)) {                                               \
      fprintf(stderr, "%s:%d: check failed: %s\n", __FILE__,    \
              __LINE__, #cond);                                  \
      failures++;                                                \
    }                                                            \
  } while (0)

int main(void) {
  PsLabel label;
  CHECK(ps_map_stars_to_label(2, &label) == PS_STATUS_OK);
  CHECK(label == PS_LABEL_NEGATIVE);
  CHECK(ps_map_stars_to_label(9, &label) == PS_STATUS_BAD_INPUT);
  char *msg = ps_last_error();
  CHECK(msg != NULL);
  ps_string_free(msg);

  char *clean = NULL;
  CHECK(ps_normalize_text("hi @bob http://x.io !!!", &clean) == PS_STATUS_OK);
  CHECK(strcmp(clean, "hi !") == 0);
  ps_string_free(clean);

  const double ratios[3] = {0.8, 0.1, 0.1};
  size_t alloc[3];
  CHECK(ps_stratum_allocation(10, ratios, alloc) == PS_STATUS_OK);
  CHECK(alloc[0] == 8 && alloc[1] == 1 && alloc[2] == 1);

  const uint64_t counts[9] = {354, 18, 16, 20, 355, 14, 23, 25, 341};
  PsReport report;
  CHECK(ps_classification_report(counts, &report) == PS_STATUS_OK);
  CHECK(report.classes[0].support == 388);
  CHECK(report.accuracy > 0.9004 && report.accuracy < 0.9006);

  PsModel *model = NULL;
  CHECK(ps_model_load("toy", 0, 1, &model) == PS_STATUS_OK);
  double probs[3];
  CHECK(ps_model_predict(model, "good morning", probs, &label) == PS_STATUS_OK);
  CHECK(probs[0] + probs[1] + probs[2] > 0.999999);
  ps_model_free(model);

  PsEvaluator *ev = ps_evaluator_new();
  CHECK(ps_evaluator_record(ev, "en", PS_LABEL_POSITIVE, PS_LABEL_POSITIVE) == PS_STATUS_OK);
  char *json = NULL;
  CHECK(ps_evaluator_report_json(ev, &json) == PS_STATUS_OK);
  CHECK(strstr(json, "\"accuracy\":1.0") != NULL);
  ps_string_free(json);
  ps_evaluator_free(ev);

  if (failures == 0) {
    puts("ok");
  }
  return failures == 0 ? 0 : 1;
}

#include <math.h>
#include <stdio.h>
#include <string.h>
#include "lorlab.h"

int main(void) {
    const char *cfg_text = "experiment = timesep\nmodel.name = minkowski\ngrid.shape = 41, 41\n"
                           "grid.lo = -0.25, -1.25\ngrid.hi = 2.25, 1.25\npoints.x = 0, 0\npoints.y = 2, 1\n";
    LorlabConfig *cfg = NULL;
    LorlabChart *chart = NULL;
    LorlabGraph *graph = NULL;
    if (lorlab_config_parse(cfg_text, &cfg) != LORLAB_STATUS_OK) return 1;
    if (lorlab_chart_from_config(cfg, &chart) != LORLAB_STATUS_OK) return 2;

    double x[2] = {0.0, 0.0}, v[2] = {2.0, 1.0};
    LorlabExtReal norm;
    if (lorlab_f_norm(chart, x, v, 2, &norm) != LORLAB_STATUS_OK) return 3;
    if (norm.kind != LORLAB_EXT_KIND_FINITE || fabs(norm.value - sqrt(3.0)) > 1e-12) return 4;

    size_t shape[2] = {41, 41};
    double lo[2] = {-0.25, -1.25}, hi[2] = {2.25, 1.25};
    if (lorlab_graph_new(chart, shape, lo, hi, 2, 3, &graph) != LORLAB_STATUS_OK) return 5;
    LorlabExtReal sep;
    if (lorlab_time_separation(graph, x, v, 2, -1.0, &sep, NULL) != LORLAB_STATUS_OK) return 6;
    if (fabs(sep.value - sqrt(3.0)) > 1e-3 * sqrt(3.0)) return 7;

    if (lorlab_f_norm(chart, x, v, 3, &norm) != LORLAB_STATUS_USAGE) return 8;
    char buf[128];
    size_t need = lorlab_last_error(buf, sizeof buf);
    if (need < 2 || strlen(buf) == 0) return 9;

    char *report = NULL;
    int code = -1;
    if (lorlab_run_experiment(cfg, NULL, &report, &code) != LORLAB_STATUS_OK) return 10;
    if (code != 0 || strstr(report, "\"lorlab-report/1\"") == NULL) return 11;
    lorlab_string_free(report);

    lorlab_graph_free(graph);
    lorlab_chart_free(chart);
    lorlab_config_free(cfg);
    printf("ok %s\n", lorlab_version());
    return 0;
}

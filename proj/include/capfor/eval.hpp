#ifndef CAPFOR_EVAL_HPP
#define CAPFOR_EVAL_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "capfor/experts.hpp"
#include "capfor/lora.hpp"
#include "capfor/seqdata.hpp"
#include "capfor/timer_net.hpp"
#include "capfor/train.hpp"

namespace capfor {

/**
 * Error summary for one model on one corpus slice.
 *
 * r2 is pooled over all windows rather than averaged per window, because a
 * single near-flat window has a degenerate total sum of squares. A constant
 * pooled truth leaves r2 undefined; r2_defined records that instead of
 * forcing a value.
 */
struct MetricReport {
    std::string model;
    std::string protocol = "all";
    std::string regime;
    double mae = 0.0;
    double rmse = 0.0;
    double mape_percent = 0.0;
    double r2 = 0.0;
    bool r2_defined = true;
    double mvr = 0.0;
    std::size_t n_windows = 0;
};

/**
 * MAE, RMSE, MAPE% and R2 of one forecast against the truth. Elements with
 * |y| <= 1e-9 are left out of the MAPE mean only. Throws on empty or
 * mismatched inputs.
 */
MetricReport metrics(const std::vector<double>& y, const std::vector<double>& y_hat);

/**
 * Monotonicity violation rate: the fraction of adjacent forecast steps that
 * move upward. Capacity fade should not recover, so upward steps are
 * violations; exact ties do not count. Length must be at least 2.
 */
double mvr(const std::vector<double>& y_hat);

/**
 * A forecaster maps a raw capacity context to a raw capacity forecast of
 * the requested length. Adapters built by forecaster_of handle per-instance
 * scaling internally: fit MinMax on the context, forecast in scaled space,
 * invert. Metrics downstream therefore always see ampere-hour values.
 */
using Forecaster =
    std::function<std::vector<double>(const std::vector<double>& context, std::size_t horizon)>;

/// Wraps the teacher. Horizon must be a multiple of the token size; an
/// installed adapter set participates through the projection hook.
Forecaster forecaster_of(TimerModel& model);

/// Wraps a student. Context and horizon must match the expert geometry.
Forecaster forecaster_of(ExpertModel& model);

struct EvalConfig {
    std::size_t context = 96;
    std::size_t horizon = 96;
    std::size_t stride = 192;
};

/**
 * Window-protocol evaluation: cut each series into context/horizon pairs at
 * the configured stride, forecast every window, and pool the errors.
 *
 * MAE/RMSE/MAPE/R2 are pooled over all windows (windows share one length,
 * so pooled MAE equals the mean of per-window MAEs). MVR is the mean of
 * per-window rates; adjacent differences never straddle a window boundary.
 * The optional protocol filter keeps only matching cells. Throws when no
 * window survives.
 */
MetricReport evaluate_protocol(const Forecaster& forecast, const Corpus& corpus,
                               std::optional<Protocol> filter, const EvalConfig& cfg = {});

/// Pooled truth/forecast pairs plus per-window MVR, in evaluation order.
/// evaluate_protocol reduces exactly this; keeping it lets reports plot
/// prediction-versus-truth without re-running the model.
struct ForecastDump {
    std::vector<double> y;
    std::vector<double> y_hat;
    std::vector<double> window_mvr;
};

ForecastDump collect_forecasts(const Forecaster& forecast, const Corpus& corpus,
                               std::optional<Protocol> filter, const EvalConfig& cfg = {});

/// Pooled pairs as CSV (`y,y_hat` header, round-trip precision).
void save_predictions_csv(const std::string& path, const std::vector<double>& y,
                          const std::vector<double>& y_hat);
std::pair<std::vector<double>, std::vector<double>> load_predictions_csv(
    const std::string& path);

/// Square scatter of prediction against truth with the identity diagonal.
void save_scatter_svg(const std::string& path, const std::vector<double>& y,
                      const std::vector<double>& y_hat, const std::string& title);

/**
 * Friedman ranking over a methods x cells error matrix. Within each cell,
 * methods are ranked ascending by error with average-rank ties; avg_rank
 * holds each method's mean rank over cells, and these sum to k(k+1)/2.
 * statistic is chi-square distributed under the no-difference null:
 * 12 n /(k(k+1)) * [sum R_j^2 - k(k+1)^2/4] with n cells and k methods.
 */
struct RankTable {
    std::vector<std::string> methods;
    std::vector<std::vector<double>> errors;  // methods x cells
    std::vector<double> avg_rank;
    double statistic = 0.0;
};

/// Requires at least 2 methods, at least 2 cells, rectangular errors.
RankTable friedman(const std::vector<std::string>& methods,
                   const std::vector<std::vector<double>>& errors);

struct LoboRow {
    std::string variant;  // "full" or "wo_<family>"
    MetricReport report;
};

struct LoboConfig {
    LoraConfig lora;
    std::uint64_t lora_seed = 1;
    FinetuneConfig finetune;
    EvalConfig eval;
    std::optional<Protocol> protocol;  // evaluation filter
};

/**
 * Leave-one-battery-out harness: fine-tune the pretrained teacher on all
 * training families, then once more per family with that family removed,
 * and score every run on the same held-out test corpus. Returns the full
 * row first, then one row per ablation in family order. The base model is
 * cloned per run, so the input teacher is never modified. Requires at
 * least 2 training families.
 */
std::vector<LoboRow> lobo(const TimerModel& base, const std::vector<Corpus>& families,
                          const Corpus& test_corpus, const LoboConfig& cfg);

/// One record per line: tab-separated key=value pairs, r2=missing when
/// undefined. Reals use round-trip precision.
void save_metric_reports(const std::string& path, const std::vector<MetricReport>& reports);
std::vector<MetricReport> load_metric_reports(const std::string& path);

/// CSV comparison table, one row per report, fixed header.
void save_comparison_csv(const std::string& path, const std::vector<MetricReport>& reports);

/// CSV with one row per method: method, per-cell errors, average rank;
/// the statistic lands in a trailing comment-style row.
void save_rank_table_csv(const std::string& path, const RankTable& table);

}  // namespace capfor

#endif  // CAPFOR_EVAL_HPP

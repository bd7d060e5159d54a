#ifndef CAPFOR_ROLLOUT_HPP
#define CAPFOR_ROLLOUT_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "capfor/eval.hpp"

namespace capfor {

/**
 * Over-smoothing diagnostics of one long forecast, split into the native
 * horizon and everything after it. Flattening compares the spread of
 * adjacent differences across the split: a collapsing trajectory loses
 * difference variance in the tail. ratio_defined is false when the leading
 * half is already exactly linear (0/0) or the ratio would divide by zero.
 */
struct RolloutReport {
    std::size_t total_horizon = 0;
    std::size_t split = 0;
    double diff_std_first = 0.0;
    double diff_std_second = 0.0;
    double mvr_first = 0.0;
    double mvr_second = 0.0;
    double flattening_ratio = 0.0;
    bool ratio_defined = true;
};

/**
 * Block-recursive long-horizon forecast: predict base_h steps, feed the
 * newest context-length slice of observations plus predictions back in, and
 * repeat until total_h steps exist. The first block is returned untouched,
 * so the rollout prefix is bit-identical to the direct base_h forecast.
 * total_h must be a positive multiple of base_h.
 */
std::vector<double> recursive_forecast(const Forecaster& forecast,
                                       const std::vector<double>& context,
                                       std::size_t total_h, std::size_t base_h = 96);

/// Population std of adjacent differences and MVR per half, halves being
/// [0, split) and [split, end). Both halves need at least 2 values.
RolloutReport smoothing_diagnostics(const std::vector<double>& forecast,
                                    std::size_t split = 96);

/// Columns step,truth,forecast; truth cells beyond the known values are
/// empty. Steps are 1-based.
void save_rollout_csv(const std::string& path, const std::vector<double>& truth,
                      const std::vector<double>& forecast);

/// Inverse of save_rollout_csv: {truth, forecast}, empty cells dropped.
std::pair<std::vector<double>, std::vector<double>> load_rollout_csv(const std::string& path);

/// Truth and forecast overlaid as polylines with a vertical marker at the
/// split step. Self-contained, fixed size.
void save_rollout_svg(const std::string& path, const std::vector<double>& truth,
                      const std::vector<double>& forecast, std::size_t split,
                      const std::string& title);

/// Key-value lines: the report fields plus caller-supplied extras (seeds,
/// checkpoint ids); flattening_ratio=missing when undefined.
void save_rollout_report(const std::string& path, const RolloutReport& report,
                         const std::vector<std::pair<std::string, std::string>>& extra = {});

}  // namespace capfor

#endif  // CAPFOR_ROLLOUT_HPP

#ifndef CAPFOR_EXPLAIN_HPP
#define CAPFOR_EXPLAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "capfor/eval.hpp"
#include "capfor/seqdata.hpp"

namespace capfor {

enum class PerturbScheme { Gaussian, MeanMask };

std::string perturb_scheme_name(PerturbScheme s);
PerturbScheme parse_perturb_scheme(const std::string& token);

/**
 * Local attribution settings. sigma <= 0 resolves to 0.75 * sqrt(L) at use
 * time; the perturbation distribution, kernel width, and ridge penalty are
 * all design choices here, not published values, so every one is a flag.
 */
struct LimeConfig {
    std::size_t n_samples = 200;
    double sigma = 0.0;  // 0 = resolve to 0.75 * sqrt(L)
    double ridge = 1e-3;
    PerturbScheme scheme = PerturbScheme::Gaussian;
    double mask_prob = 0.3;  // mean-mask scheme only
    std::uint64_t seed = 1;
};

/**
 * Model output reduced to one number: the mean of the model's forecast of
 * the given raw window. The forecaster owns any internal scaling, so the
 * scalar lives in ampere-hour units.
 */
double scalarize(const Forecaster& forecast, const std::vector<double>& input,
                 std::size_t horizon = 96);

/**
 * Perturbed copies of one scaled window plus locality weights.
 *
 * gaussian adds N(0, s) noise per position, s the standard deviation of the
 * window values; mean-mask replaces a Bernoulli(mask_prob) subset with the
 * window mean. Weight of sample z' is exp(-d^2 / sigma^2) with d the
 * Euclidean distance to the window, so the unperturbed point weighs 1 and
 * every weight sits in (0, 1].
 */
struct PerturbSet {
    std::vector<std::vector<double>> samples;  // n_samples x L, scaled units
    std::vector<double> weights;               // n_samples
};

PerturbSet perturb(const std::vector<double>& scaled_input, const LimeConfig& cfg, Rng& rng);

/**
 * Weighted ridge regression via normal equations and a Cholesky solve.
 * Weights are normalized to mean 1 first, so rescaling all of them is a
 * no-op; the intercept is not penalized. r2 is the weighted coefficient of
 * determination, defined as 1 when the weighted target variance is zero.
 */
struct SurrogateFit {
    std::vector<double> coef;
    double intercept = 0.0;
    double r2 = 0.0;
};

SurrogateFit fit_surrogate(const std::vector<std::vector<double>>& samples,
                           const std::vector<double>& targets,
                           const std::vector<double>& weights, double ridge);

/**
 * One ridge surrogate per window over scaled lookback positions. summary
 * holds the mean absolute coefficient per position. Every window reuses the
 * same derived sample stream, so identical windows get identical rows and
 * windows may be attributed in parallel.
 */
struct AttributionMatrix {
    std::vector<std::vector<double>> coef;  // windows x L
    std::vector<double> intercept;          // per window
    std::vector<double> fit_r2;             // per window
    std::vector<double> summary;            // L
};

AttributionMatrix attribute_model(const Forecaster& forecast,
                                  const std::vector<WindowPair>& windows,
                                  const LimeConfig& cfg);

/// Rows = windows, columns = lookback positions, then intercept and fit r2;
/// a trailing summary row carries the mean absolute coefficients.
void save_attribution_csv(const std::string& path, const AttributionMatrix& m);
AttributionMatrix load_attribution_csv(const std::string& path);

/// Self-contained heatmap, one cell per coefficient, signed diverging
/// palette (negative blue, positive red) symmetric about zero.
void save_attribution_svg(const std::string& path, const AttributionMatrix& m,
                          const std::string& title);

}  // namespace capfor

#endif  // CAPFOR_EXPLAIN_HPP

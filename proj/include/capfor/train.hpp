#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "capfor/autodiff.hpp"
#include "capfor/lora.hpp"
#include "capfor/seqdata.hpp"
#include "capfor/timer_net.hpp"

namespace capfor {

struct FinetuneConfig {
    int epochs = 5;
    std::size_t batch = 64;
    float lr = 1e-4f;
    float lambda_trend = 0.02f;
    std::size_t context_steps = 96;
    std::size_t horizon_steps = 96;
    std::size_t stride = 48;  // training windows may overlap
    std::uint64_t seed = 1;

    void validate() const;  // throws std::invalid_argument on broken invariants
};

struct FinetuneEpoch {
    double mse = 0.0;
    double trend = 0.0;  // mean penalty before the lambda weight
    double total = 0.0;
};

struct FinetuneHistory {
    std::vector<FinetuneEpoch> epochs;
};

/**
 * Mean over rows of sigmoid(y_hat[last] - y_hat[first]). Rows are forecast
 * horizons in scaled window units, so the argument is dimensionless and
 * flat forecasts sit exactly at 0.5.
 */
Var trend_penalty(Graph& g, Var y_hat);

/// MSE plus lambda * trend_penalty(y_hat); lambda == 0 builds the bare MSE node.
Var finetune_loss(Graph& g, Var y_hat, Var y, float lambda);

/**
 * Adapter-only fine-tuning of an adapted teacher. Windows are cut per
 * series, scaled by the lookback min/max, and trained teacher-forced: the
 * rows of the forward pass that predict horizon tokens form the forecast.
 * The backbone stays frozen; only LoRA parameters move.
 */
FinetuneHistory finetune(TimerModel& model, LoraSet& lora,
                         const std::vector<Corpus>& corpora,
                         const FinetuneConfig& cfg);

/// CSV with header epoch,mse,trend,total (epoch is 1-based).
void save_history_csv(const std::string& path, const FinetuneHistory& history);

}  // namespace capfor

#ifndef CAPFOR_LORA_HPP
#define CAPFOR_LORA_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "capfor/timer_net.hpp"

namespace capfor {

struct LoraConfig {
    std::size_t rank = 8;
    float alpha = 16.0f;
    float dropout = 0.05f;
    std::vector<std::string> targets = {"q_proj", "k_proj", "v_proj"};

    void validate() const;  // rank >= 1, 0 <= dropout < 1
};

/**
 * Low-rank adapters over a model's named projections.
 *
 * Construction freezes every backbone parameter and installs a projection
 * hook so each targeted weight W0 (d_out x d_in) computes
 *     W0 x + (alpha/r) * B (A dropout(x))
 * with A (r x d_in) Gaussian-initialized and B (d_out x r) zeros, so the
 * adapted model equals the base model until training moves B.
 *
 * Target names are suffixes ("q_proj" matches "block0.q_proj" and
 * "block1.q_proj"). Adapter parameters are named lora.{param}.{A|B}.
 *
 * merge() folds (alpha/r) B A into each W0, uninstalls the hook, restores
 * backbone trainability, and may be called once.
 */
class LoraSet {
public:
    LoraSet(TimerModel& model, LoraConfig cfg, std::uint64_t seed);
    ~LoraSet();

    LoraSet(const LoraSet&) = delete;
    LoraSet& operator=(const LoraSet&) = delete;

    const LoraConfig& config() const { return cfg_; }
    std::vector<Parameter*> adapter_params();
    bool merged() const { return merged_; }

    /// Dropout on the adapter branch is active only in training mode.
    void set_training(bool on) { training_ = on; }

    /// The adapted computation for one targeted parameter name:
    /// W0 x + (alpha/r) B (A dropout(x)). Same code path the hook runs.
    Var adapted_projection(Graph& g, const std::string& param_name, Var x);

    void merge();

    /// Trainable values over all values (backbone plus adapters).
    double trainable_fraction() const;

    /// Adapter-only checkpoints: lora.{param}.{A|B} tensors plus a
    /// lora.meta record holding [rank, alpha, dropout].
    void save_adapters(const std::string& path) const;
    void load_adapters(const std::string& path);

private:
    struct Adapter {
        Parameter* target;
        std::unique_ptr<Parameter> A;
        std::unique_ptr<Parameter> B;
    };

    Var apply(Graph& g, const std::string& name, Var x, Parameter& w);

    TimerModel& model_;
    LoraConfig cfg_;
    std::map<std::string, Adapter> adapters_;  // keyed by target param name
    Rng dropout_rng_;
    bool training_ = true;
    bool merged_ = false;
};

/// Trainable values over all values for a bare parameter list.
double trainable_fraction(const std::vector<Parameter*>& params);

}  // namespace capfor

#endif  // CAPFOR_LORA_HPP

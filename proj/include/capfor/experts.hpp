#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "capfor/autodiff.hpp"
#include "capfor/seqdata.hpp"
#include "capfor/tensor.hpp"

namespace capfor {

enum class ExpertKind { LinearDecomp, PatchAttn, SegRec };

std::string expert_kind_name(ExpertKind k);
ExpertKind parse_expert_kind(const std::string& name);

struct ExpertConfig {
    ExpertKind kind = ExpertKind::LinearDecomp;
    std::size_t lookback = 96;
    std::size_t horizon = 96;
    std::size_t ma_window = 25;   // LinearDecomp trend extraction
    std::size_t patch_len = 16;   // PatchAttn
    std::size_t d_model = 32;     // PatchAttn
    std::size_t n_heads = 4;      // PatchAttn
    std::size_t seg_len = 12;     // SegRec
    std::size_t hidden = 48;      // SegRec

    void validate() const;  // throws std::invalid_argument on broken invariants
};

/**
 * One compact student forecaster. All three kinds share the lookback ->
 * horizon shape contract and live behind one parameter table so training,
 * checkpoints, and evaluation treat them uniformly.
 *
 *  - LinearDecomp: moving-average trend/remainder split, one affine map per
 *    branch, summed.
 *  - PatchAttn: non-overlapping patch embedding, one pre-norm self-attention
 *    block, flatten, affine head.
 *  - SegRec: segment-wise ReLU recurrence, affine head on the final state.
 */
class ExpertModel {
public:
    ExpertModel(const ExpertConfig& cfg, std::uint64_t seed);

    const ExpertConfig& config() const { return cfg_; }
    ExpertKind kind() const { return cfg_.kind; }

    std::vector<Parameter*> params();
    Parameter& at(const std::string& name);
    std::size_t param_count() const;

    /// x has shape {1, lookback}; result has shape {1, horizon}.
    Var forward(Graph& g, Var x);

    /// Convenience wrapper: forward pass on raw values, no gradients kept.
    std::vector<float> forward_values(const std::vector<float>& x);

private:
    Var forward_linear_decomp(Graph& g, Var x);
    Var forward_patch_attn(Graph& g, Var x);
    Var forward_seg_rec(Graph& g, Var x);
    Parameter& add_param(const std::string& name, Tensor value);

    ExpertConfig cfg_;
    std::vector<std::unique_ptr<Parameter>> storage_;
    std::map<std::string, Parameter*> by_name_;
    std::vector<Parameter*> ordered_;
    Tensor ma_matrix_;  // constant averaging operator, LinearDecomp only
};

/// Expert checkpoint: parameter tensors plus an expert.meta record
/// [kind, lookback, horizon] so loading can reject mismatched geometry.
void save_expert(const std::string& path, ExpertModel& model);
void load_expert(const std::string& path, ExpertModel& model);

struct StudentTrainConfig {
    int epochs = 10;
    std::size_t batch = 4;
    float lr = 1e-3f;
    std::size_t stride = 48;  // training windows may overlap
    std::uint64_t seed = 1;

    void validate() const;
};

/// One scaled training window; `soft` carries cached teacher outputs when a
/// distillation loss needs them (empty otherwise).
struct TrainSample {
    Tensor x;     // 1 x lookback
    Tensor y;     // 1 x horizon
    Tensor soft;  // 1 x horizon teacher forecast, or empty
};

/// Cut, scale (lookback min/max), and collect every training window.
std::vector<TrainSample> student_samples(const std::vector<Corpus>& corpora,
                                         std::size_t lookback, std::size_t horizon,
                                         std::size_t stride);

using SampleLoss = std::function<Var(Graph&, Var y_hat, const TrainSample&)>;

struct StudentHistory {
    std::vector<double> epoch_mean;
};

/**
 * The one window-training loop both regimes share: per-epoch shuffle,
 * gradient accumulation over each batch, Adam on all expert parameters.
 * The per-sample loss is supplied by the caller.
 */
StudentHistory train_student_loop(ExpertModel& model,
                                  const std::vector<TrainSample>& samples,
                                  const StudentTrainConfig& cfg,
                                  const SampleLoss& sample_loss);

/// Vanilla regime: pure MSE on scaled windows.
StudentHistory supervised_train(ExpertModel& model, const std::vector<Corpus>& corpora,
                                const StudentTrainConfig& cfg);

}  // namespace capfor

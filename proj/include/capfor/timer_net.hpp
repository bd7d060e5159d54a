#ifndef CAPFOR_TIMER_NET_HPP
#define CAPFOR_TIMER_NET_HPP

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

struct TimerConfig {
    std::size_t S = 24;          // segment/token length
    std::size_t D = 64;          // model width
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_tokens = 16;
    bool temporal_embedding = true;

    void validate() const;  // D divisible by n_heads, S >= 1
};

/// Split a scaled series into non-overlapping length-S tokens (N x S).
Tensor tokenize(const std::vector<float>& x, std::size_t S);
std::vector<float> detokenize(const Tensor& tokens);
std::vector<float> to_f32(const std::vector<double>& x);
std::vector<double> to_f64(const std::vector<float>& x);

/**
 * Replaces the plain application of a named projection weight. Used to
 * inject low-rank adapters without this module knowing about them. The
 * default application is matmul(x, transpose(w)).
 */
using ProjectionHook =
    std::function<Var(Graph&, const std::string& name, Var x, Parameter& w)>;

/**
 * Decoder-only segment-token forecaster (the teacher).
 *
 * A length-NS series becomes N = NS/S tokens; token embeddings are
 * W_e s_i plus a learned temporal embedding, run through pre-norm causal
 * self-attention blocks, and decoded with the D x S output projection so
 * position i predicts token i+1.
 *
 * Parameter names are stable: embed.W_e, embed.TE, block{i}.{q_proj,
 * k_proj, v_proj, o_proj, ln1/ln2.gamma/beta, ff1/ff2.weight/bias},
 * final_norm.gamma/beta.
 */
class TimerModel {
public:
    TimerModel(TimerConfig cfg, std::uint64_t seed);

    const TimerConfig& config() const { return cfg_; }
    std::vector<Parameter*> params();
    std::vector<const Parameter*> params() const;
    Parameter& at(const std::string& name);  // throws on unknown name
    std::size_t param_count() const;

    void set_projection_hook(ProjectionHook hook) { hook_ = std::move(hook); }
    void clear_projection_hook() { hook_ = nullptr; }

    /// tokens: N x S with N <= max_tokens; returns N x S next-token predictions.
    Var forward(Graph& g, const Tensor& tokens);
    Tensor forward_values(const Tensor& tokens);

    /// Mean squared error of predictions vs tokens 2..N (N >= 2 required).
    Var generative_loss(Graph& g, const Tensor& tokens);

    /// Autoregressive forecast: appends one predicted token at a time.
    /// context length must be divisible by S; context plus generated tokens
    /// must fit in max_tokens. Returns n_tokens * S values.
    std::vector<float> forecast(const std::vector<float>& context, std::size_t n_tokens);

private:
    struct Block {
        Parameter* wq;
        Parameter* wk;
        Parameter* wv;
        Parameter* wo;
        Parameter* ln1_gamma;
        Parameter* ln1_beta;
        Parameter* ln2_gamma;
        Parameter* ln2_beta;
        Parameter* ff1_w;
        Parameter* ff1_b;
        Parameter* ff2_w;
        Parameter* ff2_b;
        std::string prefix;
    };

    Parameter* add_param(const std::string& name, Tensor value);
    Var project(Graph& g, const std::string& name, Parameter& w, Var x);
    Var block_forward(Graph& g, const Block& b, Var x);

    TimerConfig cfg_;
    std::vector<std::unique_ptr<Parameter>> storage_;
    std::map<std::string, Parameter*> by_name_;
    std::vector<Parameter*> ordered_;
    Parameter* we_ = nullptr;
    Parameter* te_ = nullptr;
    Parameter* wd_ = nullptr;
    Parameter* final_gamma_ = nullptr;
    Parameter* final_beta_ = nullptr;
    std::vector<Block> blocks_;
    ProjectionHook hook_;
};

struct PretrainConfig {
    std::size_t epochs = 3;
    std::size_t batch = 16;
    float lr = 1e-3f;
    std::size_t stride = 48;        // training windows may overlap
    std::size_t window_tokens = 8;  // window length = window_tokens * S
    std::uint64_t seed = 1;
};

struct LossHistory {
    std::vector<double> epoch_mean;
};

/**
 * Generative pretraining over every window of every corpus: scale each
 * window to [0,1] (per-instance min/max over the whole window), tokenize,
 * minimize the next-token loss. Deterministic per seed.
 */
LossHistory pretrain(TimerModel& model, const std::vector<Corpus>& corpora,
                     const PretrainConfig& cfg);

/// Checkpoint with a timer.meta geometry record so a reader can rebuild the
/// model without outside knowledge.
void save_teacher(const std::string& path, TimerModel& model);

/// Rebuilds the model the checkpoint describes. Throws CheckpointError when
/// the meta record is absent or malformed.
TimerModel load_teacher(const std::string& path);

}  // namespace capfor

#endif  // CAPFOR_TIMER_NET_HPP

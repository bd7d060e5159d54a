#include "capfor/timer_net.hpp"

#include <cmath>
#include <stdexcept>

#include "capfor/checkpoint.hpp"
#include "capfor/optim.hpp"

namespace capfor {

void TimerConfig::validate() const {
    if (S < 1) throw std::invalid_argument("TimerConfig: S must be >= 1");
    if (n_heads == 0 || D % n_heads != 0) {
        throw std::invalid_argument("TimerConfig: D (" + std::to_string(D) +
                                    ") must be divisible by n_heads (" +
                                    std::to_string(n_heads) + ")");
    }
}

Tensor tokenize(const std::vector<float>& x, std::size_t S) {
    if (S == 0 || x.size() % S != 0) {
        throw std::invalid_argument("tokenize: length " + std::to_string(x.size()) +
                                    " not divisible by S=" + std::to_string(S));
    }
    const std::size_t N = x.size() / S;
    Tensor t({N, S});
    for (std::size_t i = 0; i < x.size(); ++i) t.data()[i] = x[i];
    return t;
}

std::vector<float> detokenize(const Tensor& tokens) {
    return std::vector<float>(tokens.data(), tokens.data() + tokens.numel());
}

std::vector<float> to_f32(const std::vector<double>& x) {
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i]);
    return out;
}

std::vector<double> to_f64(const std::vector<float>& x) {
    return std::vector<double>(x.begin(), x.end());
}

Parameter* TimerModel::add_param(const std::string& name, Tensor value) {
    storage_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    Parameter* p = storage_.back().get();
    by_name_[name] = p;
    ordered_.push_back(p);
    return p;
}

TimerModel::TimerModel(TimerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x7131, 0));
    const float init = 0.02f;
    auto normal = [&](std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        fill_normal(t, rng, 0.0f, init);
        return t;
    };
    we_ = add_param("embed.W_e", normal({cfg_.D, cfg_.S}));
    te_ = add_param("embed.TE", normal({cfg_.max_tokens, cfg_.D}));
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
        Block b;
        b.prefix = "block" + std::to_string(i);
        b.wq = add_param(b.prefix + ".q_proj", normal({cfg_.D, cfg_.D}));
        b.wk = add_param(b.prefix + ".k_proj", normal({cfg_.D, cfg_.D}));
        b.wv = add_param(b.prefix + ".v_proj", normal({cfg_.D, cfg_.D}));
        b.wo = add_param(b.prefix + ".o_proj", normal({cfg_.D, cfg_.D}));
        b.ln1_gamma = add_param(b.prefix + ".ln1.gamma", Tensor::full({cfg_.D}, 1.0f));
        b.ln1_beta = add_param(b.prefix + ".ln1.beta", Tensor({cfg_.D}));
        b.ln2_gamma = add_param(b.prefix + ".ln2.gamma", Tensor::full({cfg_.D}, 1.0f));
        b.ln2_beta = add_param(b.prefix + ".ln2.beta", Tensor({cfg_.D}));
        b.ff1_w = add_param(b.prefix + ".ff1.weight", normal({cfg_.d_ff, cfg_.D}));
        b.ff1_b = add_param(b.prefix + ".ff1.bias", Tensor({cfg_.d_ff}));
        b.ff2_w = add_param(b.prefix + ".ff2.weight", normal({cfg_.D, cfg_.d_ff}));
        b.ff2_b = add_param(b.prefix + ".ff2.bias", Tensor({cfg_.D}));
        blocks_.push_back(b);
    }
    final_gamma_ = add_param("final_norm.gamma", Tensor::full({cfg_.D}, 1.0f));
    final_beta_ = add_param("final_norm.beta", Tensor({cfg_.D}));
    wd_ = add_param("decode.W_d", normal({cfg_.D, cfg_.S}));
}

std::vector<Parameter*> TimerModel::params() { return ordered_; }

std::vector<const Parameter*> TimerModel::params() const {
    return {ordered_.begin(), ordered_.end()};
}

Parameter& TimerModel::at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        throw std::invalid_argument("TimerModel: no parameter named " + name);
    }
    return *it->second;
}

std::size_t TimerModel::param_count() const {
    std::size_t n = 0;
    for (const auto& p : storage_) n += p->numel();
    return n;
}

Var TimerModel::project(Graph& g, const std::string& name, Parameter& w, Var x) {
    if (hook_) return hook_(g, name, x, w);
    return g.matmul(x, g.transpose(g.param(w)));
}

Var TimerModel::block_forward(Graph& g, const Block& b, Var x) {
    const std::size_t dh = cfg_.D / cfg_.n_heads;
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));

    Var x1 = g.layer_norm(x, g.param(*b.ln1_gamma), g.param(*b.ln1_beta));
    Var q = project(g, b.prefix + ".q_proj", *b.wq, x1);
    Var k = project(g, b.prefix + ".k_proj", *b.wk, x1);
    Var v = project(g, b.prefix + ".v_proj", *b.wv, x1);

    std::vector<Var> heads;
    heads.reserve(cfg_.n_heads);
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
        Var qh = g.slice_cols(q, h * dh, dh);
        Var kh = g.slice_cols(k, h * dh, dh);
        Var vh = g.slice_cols(v, h * dh, dh);
        Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dh);
        Var attn = g.causal_softmax_rows(scores);
        heads.push_back(g.matmul(attn, vh));
    }
    Var ctx = cfg_.n_heads == 1 ? heads[0] : g.concat_cols(heads);
    Var attn_out = project(g, b.prefix + ".o_proj", *b.wo, ctx);
    x = g.add(x, attn_out);

    Var x2 = g.layer_norm(x, g.param(*b.ln2_gamma), g.param(*b.ln2_beta));
    Var h1 = g.gelu(g.affine(x2, g.param(*b.ff1_w), g.param(*b.ff1_b)));
    Var ff = g.affine(h1, g.param(*b.ff2_w), g.param(*b.ff2_b));
    return g.add(x, ff);
}

Var TimerModel::forward(Graph& g, const Tensor& tokens) {
    const std::size_t N = tokens.rows();
    if (tokens.cols() != cfg_.S) {
        throw std::invalid_argument("forward: token width " + std::to_string(tokens.cols()) +
                                    " != S=" + std::to_string(cfg_.S));
    }
    if (N > cfg_.max_tokens) {
        throw std::invalid_argument("forward: " + std::to_string(N) +
                                    " tokens exceed max_tokens=" +
                                    std::to_string(cfg_.max_tokens));
    }
    Var x = g.matmul(g.constant(tokens), g.transpose(g.param(*we_)));
    if (cfg_.temporal_embedding) {
        x = g.add(x, g.slice_rows(g.param(*te_), 0, N));
    }
    for (const Block& b : blocks_) x = block_forward(g, b, x);
    x = g.layer_norm(x, g.param(*final_gamma_), g.param(*final_beta_));
    return g.matmul(x, g.param(*wd_));
}

Tensor TimerModel::forward_values(const Tensor& tokens) {
    Graph g;
    return g.value(forward(g, tokens));
}

Var TimerModel::generative_loss(Graph& g, const Tensor& tokens) {
    const std::size_t N = tokens.rows();
    if (N < 2) {
        throw std::invalid_argument("generative_loss: need at least 2 tokens, got " +
                                    std::to_string(N));
    }
    Var pred = forward(g, tokens);
    Var supervised = g.slice_rows(pred, 0, N - 1);
    Tensor targets({N - 1, cfg_.S});
    for (std::size_t i = 0; i < (N - 1) * cfg_.S; ++i)
        targets.data()[i] = tokens.data()[cfg_.S + i];
    return g.mse(supervised, g.constant(targets));
}

std::vector<float> TimerModel::forecast(const std::vector<float>& context,
                                        std::size_t n_tokens) {
    if (cfg_.S == 0 || context.size() % cfg_.S != 0 || context.empty()) {
        throw std::invalid_argument("forecast: context length " +
                                    std::to_string(context.size()) +
                                    " not divisible by S=" + std::to_string(cfg_.S));
    }
    const std::size_t n_ctx = context.size() / cfg_.S;
    if (n_ctx + n_tokens > cfg_.max_tokens) {
        throw std::invalid_argument("forecast: context (" + std::to_string(n_ctx) +
                                    " tokens) plus " + std::to_string(n_tokens) +
                                    " generated exceed max_tokens=" +
                                    std::to_string(cfg_.max_tokens));
    }
    std::vector<float> series = context;
    std::vector<float> out;
    out.reserve(n_tokens * cfg_.S);
    for (std::size_t t = 0; t < n_tokens; ++t) {
        const Tensor pred = forward_values(tokenize(series, cfg_.S));
        const std::size_t last = pred.rows() - 1;
        for (std::size_t j = 0; j < cfg_.S; ++j) {
            const float v = pred.at(last, j);
            series.push_back(v);
            out.push_back(v);
        }
    }
    return out;
}

LossHistory pretrain(TimerModel& model, const std::vector<Corpus>& corpora,
                     const PretrainConfig& cfg) {
    const std::size_t S = model.config().S;
    const std::size_t win_len = cfg.window_tokens * S;

    // windows are scaled over their whole extent: generative training has
    // no lookback/horizon split
    std::vector<Tensor> token_windows;
    for (const Corpus& corpus : corpora) {
        for (const CapacitySeries& series : corpus.series) {
            const std::size_t n = series.size();
            if (n < win_len) continue;
            for (std::size_t off = 0; off + win_len <= n; off += cfg.stride) {
                std::vector<double> raw(series.capacity.begin() +
                                            static_cast<std::ptrdiff_t>(off),
                                        series.capacity.begin() +
                                            static_cast<std::ptrdiff_t>(off + win_len));
                const ScaleParams sp = fit_scale(raw);
                token_windows.push_back(tokenize(to_f32(apply_scale(raw, sp)), S));
            }
        }
    }
    if (token_windows.empty()) {
        throw std::runtime_error("pretrain: corpora produced no training windows");
    }

    Adam opt(model.params(), cfg.lr);
    LossHistory history;
    std::vector<std::size_t> order(token_windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x9e37, epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(cfg.batch, order.size() - done);
            for (std::size_t k = 0; k < bsz; ++k) {
                Graph g;
                Var loss = model.generative_loss(g, token_windows[order[done + k]]);
                epoch_loss += static_cast<double>(g.value(loss).data()[0]);
                g.backward(loss, 1.0f / static_cast<float>(bsz));
            }
            opt.step();
            done += bsz;
        }
        history.epoch_mean.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return history;
}

void save_teacher(const std::string& path, TimerModel& model) {
    auto tensors = snapshot(model.params());
    const TimerConfig& c = model.config();
    tensors["timer.meta"] = Tensor(
        {7}, {static_cast<float>(c.S), static_cast<float>(c.D),
              static_cast<float>(c.n_layers), static_cast<float>(c.n_heads),
              static_cast<float>(c.d_ff), static_cast<float>(c.max_tokens),
              c.temporal_embedding ? 1.0f : 0.0f});
    save_checkpoint(path, tensors);
}

TimerModel load_teacher(const std::string& path) {
    auto tensors = load_checkpoint(path);
    auto it = tensors.find("timer.meta");
    if (it == tensors.end()) {
        throw CheckpointError("teacher checkpoint lacks a timer.meta record: " + path);
    }
    const Tensor& meta = it->second;
    if (meta.numel() != 7) {
        throw CheckpointError("teacher checkpoint has a malformed timer.meta record: " + path);
    }
    TimerConfig cfg;
    cfg.S = static_cast<std::size_t>(meta.data()[0]);
    cfg.D = static_cast<std::size_t>(meta.data()[1]);
    cfg.n_layers = static_cast<std::size_t>(meta.data()[2]);
    cfg.n_heads = static_cast<std::size_t>(meta.data()[3]);
    cfg.d_ff = static_cast<std::size_t>(meta.data()[4]);
    cfg.max_tokens = static_cast<std::size_t>(meta.data()[5]);
    cfg.temporal_embedding = meta.data()[6] != 0.0f;
    tensors.erase(it);
    TimerModel model(cfg, 0);
    restore(tensors, model.params());
    return model;
}

}  // namespace capfor

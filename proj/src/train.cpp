#include "capfor/train.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "capfor/optim.hpp"

namespace capfor {

void FinetuneConfig::validate() const {
    if (epochs <= 0) throw std::invalid_argument("finetune: epochs must be positive");
    if (batch == 0) throw std::invalid_argument("finetune: batch must be positive");
    if (lr < 0.0f) throw std::invalid_argument("finetune: lr must be non-negative");
    if (lambda_trend < 0.0f) throw std::invalid_argument("finetune: lambda_trend must be non-negative");
    if (context_steps == 0 || horizon_steps == 0) {
        throw std::invalid_argument("finetune: context and horizon must be positive");
    }
    if (stride == 0) throw std::invalid_argument("finetune: stride must be positive");
}

Var trend_penalty(Graph& g, Var y_hat) {
    const Tensor& v = g.value(y_hat);
    const std::size_t h = v.cols();
    if (h < 2) throw std::invalid_argument("trend_penalty: horizon length must be at least 2");
    Var last = g.slice_cols(y_hat, h - 1, 1);
    Var first = g.slice_cols(y_hat, 0, 1);
    return g.mean(g.sigmoid(g.sub(last, first)));
}

Var finetune_loss(Graph& g, Var y_hat, Var y, float lambda) {
    Var hard = g.mse(y_hat, y);
    if (lambda == 0.0f) return hard;
    return g.add(hard, g.scale(trend_penalty(g, y_hat), lambda));
}

namespace {

struct ScaledWindow {
    Tensor tokens;   // (context + horizon) / S rows
    Tensor horizon;  // 1 x horizon_steps, scaled
};

double penalty_of(const Tensor& y_hat) {
    const double d = static_cast<double>(y_hat.data()[y_hat.numel() - 1]) -
                     static_cast<double>(y_hat.data()[0]);
    return 1.0 / (1.0 + std::exp(-d));
}

}  // namespace

FinetuneHistory finetune(TimerModel& model, LoraSet& lora,
                         const std::vector<Corpus>& corpora,
                         const FinetuneConfig& cfg) {
    cfg.validate();
    if (lora.merged()) {
        throw std::logic_error("finetune: adapters were already merged into the backbone");
    }
    const std::size_t S = model.config().S;
    if (cfg.context_steps % S != 0 || cfg.horizon_steps % S != 0) {
        throw std::invalid_argument("finetune: context and horizon must be multiples of the token length");
    }
    const std::size_t n_ctx = cfg.context_steps / S;
    const std::size_t n_hor = cfg.horizon_steps / S;
    if (n_ctx + n_hor > model.config().max_tokens) {
        throw std::invalid_argument("finetune: window exceeds the model's token budget");
    }

    // lookback min/max scales both halves, as at deployment where the
    // horizon is unknown
    std::vector<ScaledWindow> windows;
    for (const Corpus& corpus : corpora) {
        for (const CapacitySeries& series : corpus.series) {
            for (const WindowPair& w :
                 make_windows(series, cfg.context_steps, cfg.horizon_steps, cfg.stride)) {
                const ScaleParams sp = fit_scale(w.input);
                std::vector<float> ctx = to_f32(apply_scale(w.input, sp));
                std::vector<float> hor = to_f32(apply_scale(w.target, sp));
                std::vector<float> whole = ctx;
                whole.insert(whole.end(), hor.begin(), hor.end());
                ScaledWindow sw;
                sw.tokens = tokenize(whole, S);
                sw.horizon = Tensor({1, cfg.horizon_steps}, hor);
                windows.push_back(std::move(sw));
            }
        }
    }
    if (windows.empty()) {
        throw std::invalid_argument("finetune: corpora produced no training windows");
    }

    Adam opt(lora.adapter_params(), cfg.lr);
    FinetuneHistory history;
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x51f7, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        FinetuneEpoch stats;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(cfg.batch, order.size() - done);
            for (std::size_t k = 0; k < bsz; ++k) {
                const ScaledWindow& w = windows[order[done + k]];
                Graph g;
                Var out = model.forward(g, w.tokens);
                Var y_hat = g.reshape(g.slice_rows(out, n_ctx - 1, n_hor),
                                      {1, cfg.horizon_steps});
                Var loss = finetune_loss(g, y_hat, g.constant(w.horizon), cfg.lambda_trend);
                // history terms are recomputed in double outside the graph so
                // the lambda == 0 graph stays a bare MSE graph
                const double m = static_cast<double>(
                    g.value(g.mse(y_hat, g.constant(w.horizon))).data()[0]);
                stats.mse += m;
                stats.trend += penalty_of(g.value(y_hat));
                g.backward(loss, 1.0f / static_cast<float>(bsz));
            }
            opt.step();
            done += bsz;
        }
        const double n = static_cast<double>(order.size());
        stats.mse /= n;
        stats.trend /= n;
        stats.total = stats.mse + static_cast<double>(cfg.lambda_trend) * stats.trend;
        history.epochs.push_back(stats);
    }
    return history;
}

void save_history_csv(const std::string& path, const FinetuneHistory& history) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("save_history_csv: cannot open " + path);
    std::fprintf(f, "epoch,mse,trend,total\n");
    for (std::size_t i = 0; i < history.epochs.size(); ++i) {
        const FinetuneEpoch& e = history.epochs[i];
        std::fprintf(f, "%zu,%.17g,%.17g,%.17g\n", i + 1, e.mse, e.trend, e.total);
    }
    std::fclose(f);
}

}  // namespace capfor

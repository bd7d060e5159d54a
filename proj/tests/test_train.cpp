#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "capfor/optim.hpp"
#include "capfor/train.hpp"

using namespace capfor;

namespace {

TimerConfig desk_config() {
    TimerConfig cfg;
    cfg.S = 24;
    cfg.D = 32;
    cfg.n_layers = 1;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.max_tokens = 16;
    return cfg;
}

LoraConfig desk_lora() {
    LoraConfig cfg;
    cfg.rank = 4;
    cfg.alpha = 8.0f;
    cfg.dropout = 0.0f;
    return cfg;
}

std::vector<Corpus> tiny_corpora(std::size_t n_cells, std::size_t n_cycles, std::uint64_t seed) {
    std::vector<Corpus> out;
    out.push_back(synthesize_corpus(Family::CalceLike, n_cells, n_cycles, seed));
    return out;
}

double scalar_of(Graph& g, Var v) { return static_cast<double>(g.value(v).data()[0]); }

}  // namespace

TEST_CASE("trend penalty matches the logistic function") {
    auto penalty = [](const std::vector<float>& y) {
        Graph g;
        return scalar_of(g, trend_penalty(g, g.constant(Tensor({1, y.size()}, y))));
    };
    CHECK(penalty({0.7f, 0.1f, 0.9f, 0.7f}) == 0.5);  // flat ends: sigmoid(0) exactly
    CHECK(penalty({10.0f, 0.0f}) == doctest::Approx(4.5397868702434395e-05).epsilon(1e-6));
    CHECK(penalty({0.0f, 10.0f}) == doctest::Approx(0.9999546021312976).epsilon(1e-6));

    // strictly increasing in the end-to-start difference
    double prev = -1.0;
    for (float d = -4.0f; d <= 4.0f; d += 0.25f) {
        const double p = penalty({0.0f, 0.3f, d});
        CHECK(p > prev);
        prev = p;
    }

    Graph g;
    CHECK_THROWS_AS(trend_penalty(g, g.constant(Tensor({1, 1}, {0.3f}))), std::invalid_argument);
}

TEST_CASE("batched trend penalty is the mean of per-row penalties") {
    Rng rng(31);
    Tensor batch({5, 8});
    for (float& v : batch.values()) v = static_cast<float>(rng.normal(0.0, 1.0));
    Graph g;
    const double joint = scalar_of(g, trend_penalty(g, g.constant(batch)));
    double mean = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
        std::vector<float> row(batch.data() + r * 8, batch.data() + (r + 1) * 8);
        Graph gr;
        mean += scalar_of(gr, trend_penalty(gr, gr.constant(Tensor({1, 8}, row))));
    }
    CHECK(joint == doctest::Approx(mean / 5.0).epsilon(1e-6));
}

TEST_CASE("finetune loss reduces to MSE at lambda zero and adds the weighted penalty") {
    Rng rng(33);
    Tensor y_hat({1, 12}), y({1, 12});
    for (float& v : y_hat.values()) v = static_cast<float>(rng.uniform());
    for (float& v : y.values()) v = static_cast<float>(rng.uniform());

    {
        Graph g;
        Var a = g.constant(y_hat);
        Var b = g.constant(y);
        const float with_loss = g.value(finetune_loss(g, a, b, 0.0f)).data()[0];
        const float plain = g.value(g.mse(a, b)).data()[0];
        CHECK(std::memcmp(&with_loss, &plain, sizeof(float)) == 0);
    }

    // perfect flat prediction of flat truth: 0 + 0.02 * 0.5
    {
        Graph g;
        Tensor flat({1, 4}, {0.3f, 0.3f, 0.3f, 0.3f});
        const double total =
            scalar_of(g, finetune_loss(g, g.constant(flat), g.constant(flat), 0.02f));
        CHECK(total == doctest::Approx(0.01).epsilon(1e-6));
    }

    // never below the MSE component
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng r2(seed);
        Tensor a({1, 6}), b({1, 6});
        for (float& v : a.values()) v = static_cast<float>(r2.normal(0.0, 2.0));
        for (float& v : b.values()) v = static_cast<float>(r2.normal(0.0, 2.0));
        Graph g;
        Var av = g.constant(a);
        Var bv = g.constant(b);
        CHECK(scalar_of(g, finetune_loss(g, av, bv, 0.02f)) >=
              scalar_of(g, g.mse(av, bv)));
    }
}

TEST_CASE("penalty gradient touches only the horizon endpoints") {
    Graph g;
    Parameter y("y_hat", Tensor({1, 8}, {0.9f, 0.8f, 0.7f, 0.65f, 0.6f, 0.55f, 0.5f, 0.45f}));
    Var yv = g.param(y);
    g.backward(trend_penalty(g, yv));
    CHECK(y.grad.data()[0] != 0.0f);
    CHECK(y.grad.data()[7] != 0.0f);
    for (std::size_t i = 1; i < 7; ++i) CHECK(y.grad.data()[i] == 0.0f);
    // sign structure: raising the last point raises the penalty
    CHECK(y.grad.data()[7] > 0.0f);
    CHECK(y.grad.data()[0] < 0.0f);
}

TEST_CASE("finetune loss gradients pass finite-difference checks") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        Parameter y_hat("y_hat", Tensor({1, 8}));
        Tensor y({1, 8});
        for (float& v : y_hat.value.values()) v = static_cast<float>(rng.normal(0.0, 1.0));
        for (float& v : y.values()) v = static_cast<float>(rng.normal(0.0, 1.0));
        std::vector<Parameter*> params{&y_hat};
        auto loss = [&]() {
            Graph g;
            return scalar_of(g, finetune_loss(g, g.param(y_hat), g.constant(y), 0.02f));
        };
        auto backward_once = [&]() {
            Graph g;
            g.backward(finetune_loss(g, g.param(y_hat), g.constant(y), 0.02f));
        };
        Rng probe(seed + 50);
        for (const auto& r : grad_check(params, loss, backward_once, probe, 8, 5e-3)) {
            INFO(r.param, " rel_err=", r.rel_err);
            CHECK(r.rel_err < 1e-2);
        }
    }
}

TEST_CASE("finetune trains adapters only and is reproducible") {
    auto corpora = tiny_corpora(2, 240, 41);
    FinetuneConfig fcfg;
    fcfg.epochs = 2;
    fcfg.batch = 4;
    fcfg.lr = 1e-3f;
    fcfg.stride = 48;
    fcfg.seed = 7;

    auto run = [&](float lambda) {
        TimerModel model(desk_config(), 43);
        LoraSet lora(model, desk_lora(), 45);
        FinetuneConfig cfg = fcfg;
        cfg.lambda_trend = lambda;
        std::vector<Tensor> backbone_before;
        for (Parameter* p : model.params()) backbone_before.push_back(p->value);
        FinetuneHistory h = finetune(model, lora, corpora, cfg);
        auto params = model.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            REQUIRE(std::memcmp(params[i]->value.data(), backbone_before[i].data(),
                                backbone_before[i].numel() * sizeof(float)) == 0);
        }
        std::vector<Tensor> adapters;
        for (Parameter* p : lora.adapter_params()) adapters.push_back(p->value);
        return std::make_pair(h, adapters);
    };

    auto [h1, a1] = run(0.02f);
    auto [h2, a2] = run(0.02f);
    auto [h3, a3] = run(0.0f);

    REQUIRE(h1.epochs.size() == 2);
    for (std::size_t i = 0; i < a1.size(); ++i) {
        CHECK(std::memcmp(a1[i].data(), a2[i].data(), a1[i].numel() * sizeof(float)) == 0);
    }
    bool differs = false;
    for (std::size_t i = 0; i < a1.size(); ++i) {
        if (std::memcmp(a1[i].data(), a3[i].data(), a1[i].numel() * sizeof(float)) != 0) {
            differs = true;
        }
    }
    CHECK(differs);
    for (const FinetuneEpoch& e : h1.epochs) {
        CHECK(e.total == doctest::Approx(e.mse + static_cast<double>(0.02f) * e.trend)
                             .epsilon(1e-12));
        CHECK(e.trend > 0.0);
        CHECK(e.trend < 1.0);
    }
}

TEST_CASE("lambda zero trajectory is bitwise identical to a plain MSE loop") {
    // a single window makes the epoch order trivial, so a hand-rolled MSE
    // loop must reproduce the exact update sequence
    auto corpora = tiny_corpora(1, 192, 51);
    REQUIRE(corpora[0].series.size() == 1);

    FinetuneConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 1;
    cfg.lr = 1e-3f;
    cfg.lambda_trend = 0.0f;
    cfg.stride = 192;
    cfg.seed = 9;

    TimerModel tuned(desk_config(), 53);
    LoraSet lora_tuned(tuned, desk_lora(), 55);
    finetune(tuned, lora_tuned, corpora, cfg);

    TimerModel manual(desk_config(), 53);
    LoraSet lora_manual(manual, desk_lora(), 55);
    const CapacitySeries& series = corpora[0].series[0];
    auto pairs = make_windows(series, 96, 96, 192);
    REQUIRE(pairs.size() == 1);
    const ScaleParams sp = fit_scale(pairs[0].input);
    std::vector<float> whole = to_f32(apply_scale(pairs[0].input, sp));
    std::vector<float> hor = to_f32(apply_scale(pairs[0].target, sp));
    whole.insert(whole.end(), hor.begin(), hor.end());
    const Tensor tokens = tokenize(whole, 24);
    const Tensor target({1, 96}, hor);

    Adam opt(lora_manual.adapter_params(), cfg.lr);
    for (int epoch = 0; epoch < 3; ++epoch) {
        Graph g;
        Var out = manual.forward(g, tokens);
        Var y_hat = g.reshape(g.slice_rows(out, 3, 4), {1, 96});
        g.backward(g.mse(y_hat, g.constant(target)), 1.0f);
        opt.step();
    }

    auto a = lora_tuned.adapter_params();
    auto b = lora_manual.adapter_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::memcmp(a[i]->value.data(), b[i]->value.data(),
                          a[i]->value.numel() * sizeof(float)) == 0);
    }
}

TEST_CASE("fine-tuning does not raise the monotonicity violation rate") {
    auto corpora = tiny_corpora(3, 336, 71);

    TimerModel model(desk_config(), 73);
    PretrainConfig pcfg;
    pcfg.epochs = 2;
    pcfg.batch = 8;
    pcfg.stride = 48;
    pcfg.seed = 73;
    pretrain(model, corpora, pcfg);

    // held-out cells from the same family
    auto heldout = tiny_corpora(10, 384, 79);
    std::vector<WindowPair> eval_windows;
    for (const CapacitySeries& s : heldout[0].series) {
        for (const WindowPair& w : make_windows(s, 96, 96, 192)) eval_windows.push_back(w);
    }
    REQUIRE(eval_windows.size() == 20);

    auto median_mvr = [&](TimerModel& m) {
        std::vector<double> rates;
        for (const WindowPair& w : eval_windows) {
            const ScaleParams sp = fit_scale(w.input);
            std::vector<float> y = m.forecast(to_f32(apply_scale(w.input, sp)), 4);
            std::size_t up = 0;
            for (std::size_t i = 1; i < y.size(); ++i) {
                if (y[i] - y[i - 1] > 0.0f) ++up;
            }
            rates.push_back(static_cast<double>(up) / static_cast<double>(y.size() - 1));
        }
        std::sort(rates.begin(), rates.end());
        return 0.5 * (rates[9] + rates[10]);
    };

    const double base = median_mvr(model);
    LoraSet lora(model, desk_lora(), 83);
    FinetuneConfig fcfg;
    fcfg.epochs = 3;
    fcfg.batch = 8;
    fcfg.lr = 1e-3f;
    fcfg.stride = 48;
    fcfg.seed = 83;
    finetune(model, lora, corpora, fcfg);
    lora.set_training(false);
    const double tuned = median_mvr(model);
    CHECK(tuned <= base);
}

TEST_CASE("finetune rejects empty window sets and merged adapters") {
    FinetuneConfig cfg;
    cfg.epochs = 1;
    {
        TimerModel model(desk_config(), 61);
        LoraSet lora(model, desk_lora(), 63);
        auto corpora = tiny_corpora(1, 192, 65);
        for (CapacitySeries& s : corpora[0].series) {  // shorter than context + horizon
            s.cycles.resize(100);
            s.capacity.resize(100);
        }
        CHECK_THROWS_AS(finetune(model, lora, corpora, cfg), std::invalid_argument);
    }
    {
        TimerModel model(desk_config(), 61);
        LoraSet lora(model, desk_lora(), 63);
        lora.merge();
        auto corpora = tiny_corpora(1, 240, 65);
        CHECK_THROWS_AS(finetune(model, lora, corpora, cfg), std::logic_error);
    }
    {
        TimerModel model(desk_config(), 61);
        LoraSet lora(model, desk_lora(), 63);
        auto corpora = tiny_corpora(1, 240, 65);
        FinetuneConfig bad = cfg;
        bad.context_steps = 90;  // not a token multiple
        CHECK_THROWS_AS(finetune(model, lora, corpora, bad), std::invalid_argument);
    }
}

TEST_CASE("history CSV roundtrips through the documented columns") {
    FinetuneHistory h;
    h.epochs.push_back({0.25, 0.5, 0.26});
    h.epochs.push_back({0.125, 0.4375, 0.133750001});
    const std::string path = "/tmp/capfor_train_history.csv";
    save_history_csv(path, h);
    std::FILE* f = std::fopen(path.c_str(), "r");
    REQUIRE(f != nullptr);
    char line[256];
    REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
    CHECK(std::strcmp(line, "epoch,mse,trend,total\n") == 0);
    std::size_t epoch = 0;
    double mse = 0.0, trend = 0.0, total = 0.0;
    REQUIRE(std::fscanf(f, "%zu,%lg,%lg,%lg\n", &epoch, &mse, &trend, &total) == 4);
    CHECK(epoch == 1);
    CHECK(mse == 0.25);
    CHECK(trend == 0.5);
    CHECK(total == 0.26);
    REQUIRE(std::fscanf(f, "%zu,%lg,%lg,%lg\n", &epoch, &mse, &trend, &total) == 4);
    CHECK(total == 0.133750001);
    std::fclose(f);
}

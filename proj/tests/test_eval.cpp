#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include "capfor/eval.hpp"

using namespace capfor;

namespace {

// rank oracle built on sorting with tie groups, unlike the comparison
// counting used by the implementation
std::vector<double> oracle_cell_ranks(const std::vector<double>& errs) {
    std::vector<std::size_t> idx(errs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return errs[a] < errs[b]; });
    std::vector<double> rank(errs.size(), 0.0);
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && errs[idx[j + 1]] == errs[idx[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t l = i; l <= j; ++l) rank[idx[l]] = avg;
        i = j + 1;
    }
    return rank;
}

Corpus tiny_corpus(Family family, std::size_t n_cells, std::size_t n_cycles,
                   std::uint64_t seed) {
    return synthesize_corpus(family, n_cells, n_cycles, seed);
}

Forecaster persistence_forecaster() {
    return [](const std::vector<double>& ctx, std::size_t horizon) {
        return std::vector<double>(horizon, ctx.back());
    };
}

}  // namespace

TEST_CASE("metrics reproduce hand-computed values") {
    {
        MetricReport r = metrics({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
        CHECK(r.mae == 0.0);
        CHECK(r.rmse == 0.0);
        CHECK(r.mape_percent == 0.0);
        CHECK(r.r2_defined);
        CHECK(r.r2 == 1.0);
    }
    {
        MetricReport r = metrics({1.0, 2.0, 3.0}, {1.0, 2.0, 5.0});
        CHECK(r.mae == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(r.rmse == doctest::Approx(std::sqrt(4.0 / 3.0)).epsilon(1e-12));
        CHECK(r.mape_percent == doctest::Approx(100.0 * (2.0 / 3.0) / 3.0).epsilon(1e-12));
        CHECK(r.r2_defined);
        CHECK(r.r2 == doctest::Approx(-1.0).epsilon(1e-12));
    }
    {
        // predicting the mean of a non-constant truth pins R^2 at zero
        std::vector<double> y{2.0, 4.0, 6.0, 8.0};
        MetricReport r = metrics(y, std::vector<double>(4, 5.0));
        CHECK(r.r2 == doctest::Approx(0.0).epsilon(1e-12));
    }
    {
        // constant truth leaves R^2 undefined rather than 1
        MetricReport r = metrics({3.0, 3.0, 3.0}, {3.0, 3.1, 2.9});
        CHECK_FALSE(r.r2_defined);
    }
    {
        // zero truth elements drop out of the MAPE mean only
        MetricReport r = metrics({0.0, 2.0}, {1.0, 3.0});
        CHECK(r.mape_percent == doctest::Approx(50.0).epsilon(1e-12));
        CHECK(r.mae == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(metrics({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(metrics({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("metrics match an independent recomputation on random data") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const std::size_t n = 50 + static_cast<std::size_t>(rng.uniform(0, 400));
        std::vector<double> y(n), y_hat(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.uniform(0.5, 14.0);
            y_hat[i] = y[i] + rng.normal(0.0, 0.3);
        }
        MetricReport r = metrics(y, y_hat);

        // brute force in reverse order
        double abs_sum = 0, sq_sum = 0, ape = 0, mean = 0, ss = 0;
        for (std::size_t i = n; i-- > 0;) {
            abs_sum += std::abs(y_hat[i] - y[i]);
            sq_sum += (y_hat[i] - y[i]) * (y_hat[i] - y[i]);
            ape += std::abs((y_hat[i] - y[i]) / y[i]);
            mean += y[i];
        }
        mean /= static_cast<double>(n);
        for (std::size_t i = n; i-- > 0;) ss += (y[i] - mean) * (y[i] - mean);

        CHECK(r.mae == doctest::Approx(abs_sum / n).epsilon(1e-9));
        CHECK(r.rmse == doctest::Approx(std::sqrt(sq_sum / n)).epsilon(1e-9));
        CHECK(r.mape_percent == doctest::Approx(100.0 * ape / n).epsilon(1e-9));
        CHECK(r.r2 == doctest::Approx(1.0 - sq_sum / ss).epsilon(1e-9));
        CHECK(r.mae <= r.rmse + 1e-15);
    }
}

TEST_CASE("monotonicity violation rate counts strict upward steps") {
    CHECK(mvr({5.0, 4.0, 3.0, 2.0}) == 0.0);
    CHECK(mvr({1.0, 2.0, 3.0, 4.0}) == 1.0);
    CHECK(mvr({1.0, 0.0, 1.0, 0.0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(mvr({2.0, 2.0, 2.0}) == 0.0);  // exact ties are not violations
    CHECK_THROWS_AS(mvr({1.0}), std::invalid_argument);

    // shift invariance and reversal complement on no-tie sequences
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::vector<double> x(40);
        for (double& v : x) v = rng.uniform(0.0, 1.0);
        const double base = mvr(x);
        std::vector<double> shifted = x;
        for (double& v : shifted) v += 123.456;
        CHECK(mvr(shifted) == doctest::Approx(base).epsilon(1e-12));
        std::vector<double> rev(x.rbegin(), x.rend());
        CHECK(base + mvr(rev) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("window evaluation scores a perfect oracle at zero error") {
    Corpus corpus = tiny_corpus(Family::CalceLike, 3, 480, 41);
    EvalConfig cfg;
    std::map<std::vector<double>, std::vector<double>> truth;
    for (const auto& s : corpus.series) {
        for (const auto& w : make_windows(s, cfg.context, cfg.horizon, cfg.stride)) {
            truth[w.input] = w.target;
        }
    }
    Forecaster oracle = [&truth](const std::vector<double>& ctx, std::size_t) {
        return truth.at(ctx);
    };
    MetricReport r = evaluate_protocol(oracle, corpus, std::nullopt, cfg);
    CHECK(r.mae == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(r.mape_percent == 0.0);
    CHECK(r.r2 == 1.0);
    CHECK(r.n_windows == 6);  // 480 cycles, stride 192: offsets 0 and 192, 3 cells
    CHECK(r.protocol == "all");
}

TEST_CASE("pooled MAE equals the mean of per-window MAE") {
    Corpus corpus = tiny_corpus(Family::XjtuLike, 2, 480, 43);
    EvalConfig cfg;
    MetricReport r = evaluate_protocol(persistence_forecaster(), corpus, std::nullopt, cfg);

    double mae_sum = 0.0, mvr_sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : corpus.series) {
        for (const auto& w : make_windows(s, cfg.context, cfg.horizon, cfg.stride)) {
            const std::vector<double> flat(cfg.horizon, w.input.back());
            mae_sum += metrics(w.target, flat).mae;
            mvr_sum += mvr(flat);
            ++count;
        }
    }
    REQUIRE(count == r.n_windows);
    CHECK(r.mae == doctest::Approx(mae_sum / count).epsilon(1e-12));
    CHECK(r.mvr == doctest::Approx(mvr_sum / count).epsilon(1e-12));
    CHECK(r.mvr == 0.0);  // persistence forecasts are flat
}

TEST_CASE("protocol filter selects matching cells only") {
    Corpus corpus = tiny_corpus(Family::WzuLike, 4, 480, 47);  // CC/CCCV alternating
    EvalConfig cfg;
    MetricReport all = evaluate_protocol(persistence_forecaster(), corpus, std::nullopt, cfg);
    MetricReport cc = evaluate_protocol(persistence_forecaster(), corpus, Protocol::CC, cfg);
    MetricReport cccv = evaluate_protocol(persistence_forecaster(), corpus, Protocol::CCCV, cfg);
    CHECK(cc.n_windows + cccv.n_windows == all.n_windows);
    CHECK(cc.n_windows == cccv.n_windows);
    CHECK(cc.protocol == "cc");
    CHECK(cccv.protocol == "cccv");

    // repeated evaluation is bit-identical (pure, order-independent)
    MetricReport again = evaluate_protocol(persistence_forecaster(), corpus, std::nullopt, cfg);
    CHECK(std::memcmp(&again.mae, &all.mae, sizeof(double)) == 0);
    CHECK(std::memcmp(&again.rmse, &all.rmse, sizeof(double)) == 0);
}

TEST_CASE("window evaluation rejects empty slices and bad forecasters") {
    Corpus corpus = tiny_corpus(Family::SjtuLike, 1, 200, 51);
    corpus.series[0].protocol = Protocol::CC;
    EvalConfig cfg;
    CHECK_THROWS_AS(evaluate_protocol(persistence_forecaster(), corpus, Protocol::CCCV, cfg),
                    std::invalid_argument);
    Forecaster bad = [](const std::vector<double>&, std::size_t) {
        return std::vector<double>(7, 1.0);
    };
    CHECK_THROWS_AS(evaluate_protocol(bad, corpus, std::nullopt, cfg), std::runtime_error);
}

TEST_CASE("model forecasters scale per window and invert back") {
    // a zero-parameter linear decomposition expert forecasts scaled zero,
    // which inverts to the context minimum
    ExpertConfig ecfg;
    ecfg.kind = ExpertKind::LinearDecomp;
    ExpertModel expert(ecfg, 3);
    for (Parameter* p : expert.params()) p->value.zero();
    Forecaster fc = forecaster_of(expert);
    Rng rng(5);
    std::vector<double> ctx(96);
    for (double& v : ctx) v = rng.uniform(2.0, 9.0);
    const double lo = *std::min_element(ctx.begin(), ctx.end());
    std::vector<double> out = fc(ctx, 96);
    REQUIRE(out.size() == 96);
    for (double v : out) CHECK(v == doctest::Approx(lo).epsilon(1e-6));
    CHECK_THROWS_AS(fc(std::vector<double>(50, 1.0), 96), std::invalid_argument);
    CHECK_THROWS_AS(fc(ctx, 48), std::invalid_argument);

    TimerConfig tcfg;
    tcfg.S = 24;
    tcfg.D = 32;
    tcfg.n_layers = 1;
    tcfg.n_heads = 4;
    tcfg.d_ff = 64;
    TimerModel teacher(tcfg, 7);
    Forecaster tfc = forecaster_of(teacher);
    std::vector<double> t1 = tfc(ctx, 96);
    std::vector<double> t2 = tfc(ctx, 96);
    REQUIRE(t1.size() == 96);
    CHECK(std::memcmp(t1.data(), t2.data(), t1.size() * sizeof(double)) == 0);
    CHECK_THROWS_AS(tfc(std::vector<double>(95, 1.0), 96), std::invalid_argument);
    CHECK_THROWS_AS(tfc(ctx, 95), std::invalid_argument);
}

TEST_CASE("friedman ranks match the spec examples") {
    {
        RankTable t = friedman({"a", "b", "c"},
                               {{0.1, 0.2}, {0.5, 0.6}, {0.9, 0.8}});
        CHECK(t.avg_rank[0] == 1.0);
        CHECK(t.avg_rank[1] == 2.0);
        CHECK(t.avg_rank[2] == 3.0);
        CHECK(t.statistic == doctest::Approx(4.0).epsilon(1e-12));
    }
    {
        RankTable t = friedman({"a", "b"}, {{0.3, 0.4, 0.5}, {0.3, 0.4, 0.5}});
        CHECK(t.avg_rank[0] == 1.5);
        CHECK(t.avg_rank[1] == 1.5);
        CHECK(t.statistic == doctest::Approx(0.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(friedman({"a"}, {{0.1, 0.2}}), std::invalid_argument);
    CHECK_THROWS_AS(friedman({"a", "b"}, {{0.1}, {0.2}}), std::invalid_argument);
    CHECK_THROWS_AS(friedman({"a", "b"}, {{0.1, 0.2}, {0.2}}), std::invalid_argument);
    CHECK_THROWS_AS(friedman({"a"}, {{0.1, 0.2}, {0.3, 0.4}}), std::invalid_argument);
}

TEST_CASE("friedman agrees with a sort-based oracle on random matrices") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        const std::size_t k = 5, n = 8;
        std::vector<std::vector<double>> errors(k, std::vector<double>(n));
        std::vector<std::string> names;
        for (std::size_t i = 0; i < k; ++i) {
            names.push_back("m" + std::to_string(i));
            for (std::size_t j = 0; j < n; ++j) {
                // quantized draws force frequent ties
                errors[i][j] = std::floor(rng.uniform(0.0, 6.0)) / 4.0;
            }
        }
        RankTable t = friedman(names, errors);

        std::vector<double> sum_rank(k, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            std::vector<double> col(k);
            for (std::size_t i = 0; i < k; ++i) col[i] = errors[i][j];
            const std::vector<double> ranks = oracle_cell_ranks(col);
            for (std::size_t i = 0; i < k; ++i) sum_rank[i] += ranks[i];
        }
        double check_total = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double avg = sum_rank[i] / static_cast<double>(n);
            CHECK(t.avg_rank[i] == doctest::Approx(avg).epsilon(1e-12));
            check_total += avg;
            sq += sum_rank[i] * sum_rank[i];
        }
        CHECK(check_total ==
              doctest::Approx(static_cast<double>(k * (k + 1)) / 2.0).epsilon(1e-12));
        const double oracle_stat =
            12.0 / (static_cast<double>(n * k) * (k + 1.0)) * sq - 3.0 * n * (k + 1.0);
        CHECK(t.statistic == doctest::Approx(oracle_stat).epsilon(1e-9));
    }
}

TEST_CASE("friedman ranks are invariant under monotone error transforms") {
    Rng rng(9);
    const std::size_t k = 4, n = 6;
    std::vector<std::vector<double>> errors(k, std::vector<double>(n));
    for (auto& row : errors) {
        for (double& v : row) v = rng.uniform(0.1, 5.0);
    }
    std::vector<std::string> names{"a", "b", "c", "d"};
    RankTable base = friedman(names, errors);
    auto cubed = errors;
    for (auto& row : cubed) {
        for (double& v : row) v = v * v * v;
    }
    RankTable t = friedman(names, cubed);
    for (std::size_t i = 0; i < k; ++i) {
        CHECK(t.avg_rank[i] == doctest::Approx(base.avg_rank[i]).epsilon(1e-12));
    }
    CHECK(t.statistic == doctest::Approx(base.statistic).epsilon(1e-9));
}

TEST_CASE("leave one out harness runs full plus one row per family") {
    TimerConfig tcfg;
    tcfg.S = 24;
    tcfg.D = 32;
    tcfg.n_layers = 1;
    tcfg.n_heads = 4;
    tcfg.d_ff = 64;
    TimerModel base(tcfg, 61);
    std::vector<Tensor> before;
    for (const Parameter* p : std::as_const(base).params()) before.push_back(p->value);

    std::vector<Corpus> families{
        synthesize_corpus(Family::WzuLike, 2, 192, 63),
        synthesize_corpus(Family::CalceLike, 2, 192, 63),
        synthesize_corpus(Family::XjtuLike, 2, 192, 63),
    };
    Corpus test = synthesize_corpus(Family::SjtuLike, 2, 192, 64);

    LoboConfig cfg;
    cfg.lora_seed = 5;
    cfg.finetune.epochs = 1;
    cfg.finetune.batch = 8;
    cfg.finetune.stride = 96;
    cfg.finetune.seed = 6;

    std::vector<LoboRow> rows = lobo(base, families, test, cfg);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].variant == "full");
    CHECK(rows[1].variant == "wo_wzu-like");
    CHECK(rows[2].variant == "wo_calce-like");
    CHECK(rows[3].variant == "wo_xjtu-like");
    for (const auto& row : rows) {
        CHECK(row.report.n_windows == 2);
        CHECK(row.report.mae <= row.report.rmse + 1e-15);
        CHECK(row.report.regime == row.variant);
    }

    // the harness never touches the base model
    auto after = std::as_const(base).params();
    for (std::size_t i = 0; i < after.size(); ++i) {
        CHECK(std::memcmp(after[i]->value.data(), before[i].data(),
                          before[i].numel() * sizeof(float)) == 0);
    }

    // the full row equals a direct fine-tune plus evaluation composition
    TimerModel direct(tcfg, 61);
    auto dp = direct.params();
    auto bp = std::as_const(base).params();
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i]->value = bp[i]->value;
    LoraSet lora(direct, cfg.lora, cfg.lora_seed);
    finetune(direct, lora, families, cfg.finetune);
    lora.set_training(false);
    MetricReport composed =
        evaluate_protocol(forecaster_of(direct), test, cfg.protocol, cfg.eval);
    CHECK(rows[0].report.mae == composed.mae);
    CHECK(rows[0].report.rmse == composed.rmse);
    CHECK(rows[0].report.mvr == composed.mvr);

    // deterministic per seed
    std::vector<LoboRow> again = lobo(base, families, test, cfg);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].report.mae == again[i].report.mae);
        CHECK(rows[i].report.rmse == again[i].report.rmse);
    }

    CHECK_THROWS_AS(lobo(base, {families[0]}, test, cfg), std::invalid_argument);
}

TEST_CASE("metric records and rank tables survive a file roundtrip") {
    MetricReport a;
    a.model = "linear_decomp";
    a.protocol = "cc";
    a.regime = "distilled";
    a.mae = 0.012345678901234567;
    a.rmse = 0.023456789012345678;
    a.mape_percent = 1.5;
    a.r2 = 0.875;
    a.mvr = 0.25;
    a.n_windows = 12;
    MetricReport b;
    b.model = "timer";
    b.regime = "zero_shot";
    b.r2_defined = false;
    b.mae = 0.5;
    b.rmse = 0.5;

    const std::string path = "/tmp/capfor_eval_records.txt";
    save_metric_reports(path, {a, b});
    std::vector<MetricReport> loaded = load_metric_reports(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].model == "linear_decomp");
    CHECK(loaded[0].protocol == "cc");
    CHECK(loaded[0].mae == a.mae);
    CHECK(loaded[0].rmse == a.rmse);
    CHECK(loaded[0].r2 == a.r2);
    CHECK(loaded[0].r2_defined);
    CHECK(loaded[0].n_windows == 12);
    CHECK_FALSE(loaded[1].r2_defined);
    CHECK(loaded[1].model == "timer");

    save_comparison_csv("/tmp/capfor_eval_table.csv", {a, b});
    std::ifstream csv("/tmp/capfor_eval_table.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "model,protocol,regime,mae,rmse,mape_percent,r2,mvr,n_windows");
    std::string row1, row2;
    std::getline(csv, row1);
    std::getline(csv, row2);
    CHECK(row1.find("linear_decomp,cc,distilled,") == 0);
    CHECK(row2.find("timer,all,zero_shot,") == 0);
    CHECK(row2.find(",,") != std::string::npos);  // missing r2 is an empty cell

    RankTable table = friedman({"a", "b"}, {{0.1, 0.2}, {0.3, 0.4}});
    save_rank_table_csv("/tmp/capfor_rank.csv", table);
    std::ifstream rank_in("/tmp/capfor_rank.csv");
    std::string line;
    std::getline(rank_in, line);
    CHECK(line == "method,cell_0,cell_1,avg_rank");
    std::getline(rank_in, line);
    CHECK(line.find("a,") == 0);
    std::getline(rank_in, line);
    std::getline(rank_in, line);
    CHECK(line.find("# friedman_statistic=") == 0);
}

TEST_CASE("collect_forecasts carries exactly what evaluate_protocol reduces") {
    Corpus corpus = synthesize_corpus(Family::SjtuLike, 3, 384, 5);
    Forecaster persistence = [](const std::vector<double>& ctx, std::size_t h) {
        return std::vector<double>(h, ctx.back());
    };
    EvalConfig cfg;
    const ForecastDump dump = collect_forecasts(persistence, corpus, std::nullopt, cfg);
    const MetricReport direct = evaluate_protocol(persistence, corpus, std::nullopt, cfg);

    CHECK(dump.window_mvr.size() == direct.n_windows);
    CHECK(dump.y.size() == direct.n_windows * cfg.horizon);
    CHECK(dump.y_hat.size() == dump.y.size());

    const MetricReport pooled = metrics(dump.y, dump.y_hat);
    CHECK(pooled.mae == direct.mae);
    CHECK(pooled.rmse == direct.rmse);
    double mvr_sum = 0.0;
    for (double v : dump.window_mvr) mvr_sum += v;
    CHECK(direct.mvr == mvr_sum / static_cast<double>(dump.window_mvr.size()));
}

TEST_CASE("prediction pairs roundtrip through csv exactly") {
    const std::vector<double> y = {1.25, 0.1 + 0.2, -3.75e-7, 11.0};
    const std::vector<double> y_hat = {1.5, 0.299999, -4e-7, 10.875};
    const std::string path = "/tmp/capfor_pred.csv";
    save_predictions_csv(path, y, y_hat);
    const auto [ry, ryh] = load_predictions_csv(path);
    REQUIRE(ry.size() == y.size());
    CHECK(std::memcmp(ry.data(), y.data(), y.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(ryh.data(), y_hat.data(), y_hat.size() * sizeof(double)) == 0);

    CHECK_THROWS(save_predictions_csv(path, y, {1.0}));
    CHECK_THROWS(load_predictions_csv("/tmp/capfor_pred_missing.csv"));
    std::remove(path.c_str());
}

TEST_CASE("scatter svg draws one point per pair and the diagonal") {
    const std::string path = "/tmp/capfor_scatter.svg";
    save_scatter_svg(path, {1.0, 2.0, 3.0}, {1.1, 1.9, 3.2}, "pred vs truth");
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string svg = ss.str();
    std::size_t circles = 0, at = 0;
    while ((at = svg.find("<circle", at)) != std::string::npos) {
        ++circles;
        at += 7;
    }
    CHECK(circles == 3);
    CHECK(svg.find("stroke-dasharray") != std::string::npos);
    CHECK(svg.find("pred vs truth") != std::string::npos);
    CHECK_THROWS(save_scatter_svg(path, {}, {}, "x"));
    std::remove(path.c_str());
}

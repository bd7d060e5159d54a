#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "capfor/rollout.hpp"

using namespace capfor;

namespace {

std::vector<double> raw_context(Family family, std::uint64_t seed) {
    Corpus corpus = synthesize_corpus(family, 1, 192, seed);
    return {corpus.series[0].capacity.begin(), corpus.series[0].capacity.begin() + 96};
}

}  // namespace

TEST_CASE("a constant model rolls out to a constant trajectory") {
    Forecaster constant = [](const std::vector<double>&, std::size_t h) {
        return std::vector<double>(h, 1.75);
    };
    std::vector<double> ctx(96, 2.0);
    std::vector<double> direct = constant(ctx, 96);
    std::vector<double> one_block = recursive_forecast(constant, ctx, 96, 96);
    CHECK(one_block == direct);
    std::vector<double> long_run = recursive_forecast(constant, ctx, 384, 96);
    REQUIRE(long_run.size() == 384);
    for (double v : long_run) CHECK(v == 1.75);
}

TEST_CASE("recursion continues an arithmetic trend exactly") {
    const double slope = 0.5;
    Forecaster trend = [slope](const std::vector<double>& c, std::size_t h) {
        std::vector<double> out(h);
        for (std::size_t k = 0; k < h; ++k) {
            out[k] = c.back() + slope * static_cast<double>(k + 1);
        }
        return out;
    };
    std::vector<double> ctx(96);
    for (std::size_t i = 0; i < 96; ++i) ctx[i] = 4.0 + 0.25 * static_cast<double>(i);
    std::vector<double> out = recursive_forecast(trend, ctx, 288, 96);
    REQUIRE(out.size() == 288);
    for (std::size_t k = 0; k < out.size(); ++k) {
        CHECK(out[k] == ctx.back() + slope * static_cast<double>(k + 1));
    }
}

TEST_CASE("the rollout prefix is bit-identical to the direct forecast") {
    TimerConfig tcfg;
    tcfg.S = 24;
    tcfg.D = 32;
    tcfg.n_layers = 1;
    tcfg.n_heads = 4;
    tcfg.d_ff = 64;
    TimerModel teacher(tcfg, 17);
    Forecaster fc = forecaster_of(teacher);

    const std::vector<double> ctx = raw_context(Family::SjtuLike, 19);
    const std::vector<double> direct = fc(ctx, 96);
    const std::vector<double> rolled = recursive_forecast(fc, ctx, 288, 96);
    REQUIRE(rolled.size() == 288);
    CHECK(std::memcmp(rolled.data(), direct.data(), direct.size() * sizeof(double)) == 0);

    ExpertConfig ecfg;
    ecfg.kind = ExpertKind::PatchAttn;
    ExpertModel expert(ecfg, 23);
    Forecaster efc = forecaster_of(expert);
    const std::vector<double> edirect = efc(ctx, 96);
    const std::vector<double> erolled = recursive_forecast(efc, ctx, 192, 96);
    CHECK(std::memcmp(erolled.data(), edirect.data(), edirect.size() * sizeof(double)) == 0);
}

TEST_CASE("rollout rejects bad schedules and broken forecasters") {
    Forecaster constant = [](const std::vector<double>&, std::size_t h) {
        return std::vector<double>(h, 1.0);
    };
    std::vector<double> ctx(96, 1.0);
    CHECK_THROWS_AS(recursive_forecast(constant, ctx, 100, 96), std::invalid_argument);
    CHECK_THROWS_AS(recursive_forecast(constant, ctx, 0, 96), std::invalid_argument);
    CHECK_THROWS_AS(recursive_forecast(constant, {}, 96, 96), std::invalid_argument);
    Forecaster bad = [](const std::vector<double>&, std::size_t) {
        return std::vector<double>(7, 1.0);
    };
    CHECK_THROWS_AS(recursive_forecast(bad, ctx, 96, 96), std::runtime_error);
}

TEST_CASE("diagnostics match the hand-computed toy") {
    // first half sin-like, second half flat; diffs [1,-1,-1] have mean -1/3
    // and population variance 8/9
    std::vector<double> x{0.0, 1.0, 0.0, -1.0, 2.0, 2.0, 2.0, 2.0};
    RolloutReport r = smoothing_diagnostics(x, 4);
    CHECK(r.total_horizon == 8);
    CHECK(r.split == 4);
    CHECK(r.diff_std_first == doctest::Approx(std::sqrt(8.0 / 9.0)).epsilon(1e-12));
    CHECK(r.diff_std_second == 0.0);
    CHECK(r.ratio_defined);
    CHECK(r.flattening_ratio == 0.0);
    CHECK(r.mvr_first == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(r.mvr_second == 0.0);
}

TEST_CASE("an exactly linear forecast has no defined flattening ratio") {
    std::vector<double> x(200);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 + 0.25 * static_cast<double>(i);
    RolloutReport r = smoothing_diagnostics(x, 96);
    CHECK(r.diff_std_first == 0.0);
    CHECK(r.diff_std_second == 0.0);
    CHECK_FALSE(r.ratio_defined);
}

TEST_CASE("white noise keeps the flattening ratio near one") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        std::vector<double> x(192);
        for (double& v : x) v = rng.normal(0.0, 1.0);
        RolloutReport r = smoothing_diagnostics(x, 96);
        REQUIRE(r.ratio_defined);
        CHECK(r.flattening_ratio > 0.5);
        CHECK(r.flattening_ratio < 2.0);
    }
}

TEST_CASE("diagnostics ignore a constant shift") {
    Rng rng(7);
    std::vector<double> x(150);
    for (double& v : x) v = rng.uniform(0.0, 5.0);
    RolloutReport a = smoothing_diagnostics(x, 96);
    std::vector<double> shifted = x;
    for (double& v : shifted) v += 512.0;
    RolloutReport b = smoothing_diagnostics(shifted, 96);
    CHECK(b.diff_std_first == doctest::Approx(a.diff_std_first).epsilon(1e-12));
    CHECK(b.diff_std_second == doctest::Approx(a.diff_std_second).epsilon(1e-12));
    CHECK(b.flattening_ratio == doctest::Approx(a.flattening_ratio).epsilon(1e-12));
    CHECK(b.mvr_first == a.mvr_first);
    CHECK(b.mvr_second == a.mvr_second);
}

TEST_CASE("diagnostics reject halves that are too short") {
    std::vector<double> x(10, 1.0);
    CHECK_THROWS_AS(smoothing_diagnostics(x, 1), std::invalid_argument);
    CHECK_THROWS_AS(smoothing_diagnostics(x, 9), std::invalid_argument);
    CHECK_THROWS_AS(smoothing_diagnostics(x, 10), std::invalid_argument);
}

TEST_CASE("rollout artifacts land on disk") {
    std::vector<double> truth{1.0, 0.9, 0.8, 0.7};
    std::vector<double> forecast{1.0, 0.95, 0.85, 0.8, 0.75, 0.7};
    save_rollout_csv("/tmp/capfor_rollout.csv", truth, forecast);
    std::ifstream csv("/tmp/capfor_rollout.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,truth,forecast");
    std::size_t rows = 0;
    std::string last;
    while (std::getline(csv, line)) {
        if (!line.empty()) {
            last = line;
            ++rows;
        }
    }
    CHECK(rows == 6);
    CHECK(last.find("6,,") == 0);  // truth exhausted, forecast continues

    save_rollout_svg("/tmp/capfor_rollout.svg", truth, forecast, 3, "rollout overlay");
    std::ifstream svg("/tmp/capfor_rollout.svg");
    std::string content((std::istreambuf_iterator<char>(svg)),
                        std::istreambuf_iterator<char>());
    CHECK(content.find("<svg") != std::string::npos);
    CHECK(content.find("rollout overlay") != std::string::npos);
    CHECK(content.find("polyline") != std::string::npos);
    CHECK(content.find("step 3") != std::string::npos);

    RolloutReport r;
    r.total_horizon = 192;
    r.split = 96;
    r.diff_std_first = 0.5;
    r.diff_std_second = 0.25;
    r.mvr_first = 0.125;
    r.mvr_second = 0.0625;
    r.flattening_ratio = 0.5;
    save_rollout_report("/tmp/capfor_rollout_report.txt", r, {{"seed", "42"}});
    std::ifstream rep("/tmp/capfor_rollout_report.txt");
    std::string rc((std::istreambuf_iterator<char>(rep)), std::istreambuf_iterator<char>());
    CHECK(rc.find("total_horizon=192\n") != std::string::npos);
    CHECK(rc.find("flattening_ratio=0.5\n") != std::string::npos);
    CHECK(rc.find("seed=42\n") != std::string::npos);

    r.ratio_defined = false;
    save_rollout_report("/tmp/capfor_rollout_report.txt", r);
    std::ifstream rep2("/tmp/capfor_rollout_report.txt");
    std::string rc2((std::istreambuf_iterator<char>(rep2)), std::istreambuf_iterator<char>());
    CHECK(rc2.find("flattening_ratio=missing\n") != std::string::npos);
}

TEST_CASE("rollout csv roundtrips with a shorter truth column") {
    const std::vector<double> truth = {11.5, 11.25};
    const std::vector<double> forecast = {11.4, 11.3, 11.2, 11.0 + 1e-13};
    const std::string path = "/tmp/capfor_rollout_rt.csv";
    save_rollout_csv(path, truth, forecast);
    const auto [rt, rf] = load_rollout_csv(path);
    REQUIRE(rt.size() == truth.size());
    REQUIRE(rf.size() == forecast.size());
    CHECK(std::memcmp(rt.data(), truth.data(), truth.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(rf.data(), forecast.data(), forecast.size() * sizeof(double)) == 0);

    CHECK_THROWS(load_rollout_csv("/tmp/capfor_rollout_rt_missing.csv"));
    std::remove(path.c_str());
}

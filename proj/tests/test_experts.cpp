#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "capfor/checkpoint.hpp"
#include "capfor/experts.hpp"
#include "capfor/optim.hpp"
#include "capfor/timer_net.hpp"

using namespace capfor;

namespace {

ExpertConfig config_of(ExpertKind kind) {
    ExpertConfig cfg;
    cfg.kind = kind;
    return cfg;
}

std::vector<float> random_input(std::uint64_t seed, std::size_t n = 96) {
    Rng rng(seed);
    std::vector<float> x(n);
    for (float& v : x) v = static_cast<float>(rng.uniform());
    return x;
}

const ExpertKind kAllKinds[] = {ExpertKind::LinearDecomp, ExpertKind::PatchAttn,
                                ExpertKind::SegRec};

}  // namespace

TEST_CASE("kind names roundtrip and bad configs are rejected") {
    for (ExpertKind k : kAllKinds) {
        CHECK(parse_expert_kind(expert_kind_name(k)) == k);
    }
    CHECK_THROWS_AS(parse_expert_kind("fourier"), std::invalid_argument);

    ExpertConfig cfg = config_of(ExpertKind::LinearDecomp);
    cfg.ma_window = 24;  // even
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = config_of(ExpertKind::PatchAttn);
    cfg.patch_len = 17;  // does not divide 96
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = config_of(ExpertKind::SegRec);
    cfg.seg_len = 13;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("parameter counts are frozen and below the teacher's") {
    const std::size_t teacher_count = TimerModel(TimerConfig{}, 1).param_count();
    CHECK(teacher_count == 70656);

    ExpertModel lin(config_of(ExpertKind::LinearDecomp), 2);
    ExpertModel pat(config_of(ExpertKind::PatchAttn), 2);
    ExpertModel seg(config_of(ExpertKind::SegRec), 2);
    CHECK(lin.param_count() == 2 * (96 * 96) + 2 * 96);
    CHECK(pat.param_count() == 27680);
    CHECK(seg.param_count() == 7632);
    for (ExpertModel* m : {&lin, &pat, &seg}) {
        CHECK(m->param_count() < teacher_count);
    }
}

TEST_CASE("same seed gives identical initialization") {
    for (ExpertKind k : kAllKinds) {
        ExpertModel a(config_of(k), 7);
        ExpertModel b(config_of(k), 7);
        auto pa = a.params();
        auto pb = b.params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                              pa[i]->value.numel() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("all kinds satisfy the lookback to horizon shape contract") {
    const std::vector<float> x = random_input(11);
    for (ExpertKind k : kAllKinds) {
        ExpertModel m(config_of(k), 13);
        std::vector<float> y = m.forward_values(x);
        CHECK(y.size() == 96);
        // deterministic forward
        std::vector<float> y2 = m.forward_values(x);
        CHECK(std::memcmp(y.data(), y2.data(), y.size() * sizeof(float)) == 0);
    }
    ExpertModel m(config_of(ExpertKind::LinearDecomp), 13);
    Graph g;
    CHECK_THROWS_AS(m.forward(g, g.constant(Tensor({1, 95}, random_input(11, 95)))),
                    std::invalid_argument);
}

TEST_CASE("linear decomposition branch algebra") {
    // zero-init heads map any input to zero
    ExpertModel zero(config_of(ExpertKind::LinearDecomp), 17);
    for (Parameter* p : zero.params()) p->value.zero();
    for (float v : zero.forward_values(random_input(19))) CHECK(v == 0.0f);

    // with biases disabled the model is a linear operator: f(a*x) = a*f(x)
    ExpertModel lin(config_of(ExpertKind::LinearDecomp), 17);
    lin.at("trend.bias").value.zero();
    lin.at("remainder.bias").value.zero();
    const std::vector<float> x = random_input(23);
    std::vector<float> x3(x);
    for (float& v : x3) v *= 3.0f;
    std::vector<float> y = lin.forward_values(x);
    std::vector<float> y3 = lin.forward_values(x3);
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y3[i] == doctest::Approx(3.0f * y[i]).epsilon(2e-5));
    }

    // constant series has no remainder: the trend branch sees it unchanged
    ExpertModel probe(config_of(ExpertKind::LinearDecomp), 17);
    probe.at("trend.weight").value.zero();
    probe.at("trend.bias").value.zero();
    probe.at("remainder.bias").value.zero();
    std::vector<float> flat(96, 0.37f);
    for (float v : probe.forward_values(flat)) {
        CHECK(v == doctest::Approx(0.0f).epsilon(1e-5));
    }
}

TEST_CASE("expert gradients pass finite-difference checks") {
    for (ExpertKind k : kAllKinds) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            ExpertModel m(config_of(k), seed);
            // generic point: tame init leaves attention and recurrence
            // gradients below 32-bit loss resolution
            Rng jitter(seed + 30);
            for (Parameter* p : m.params()) {
                for (float& v : p->value.values())
                    v += static_cast<float>(jitter.normal(0.0, 0.1));
            }
            const Tensor x({1, 96}, random_input(seed + 40));
            Tensor proj({1, 96});
            Rng pr(seed + 50);
            for (float& v : proj.values()) v = static_cast<float>(0.3 + pr.uniform());
            auto loss = [&]() {
                Graph g;
                Var out = m.forward(g, g.constant(x));
                const Tensor& t = g.value(out);
                double acc = 0.0;
                for (std::size_t i = 0; i < t.numel(); ++i)
                    acc += static_cast<double>(t.data()[i]) *
                           static_cast<double>(proj.data()[i]);
                return acc;
            };
            auto backward_once = [&]() {
                Graph g;
                Var out = m.forward(g, g.constant(x));
                g.backward(g.sum(g.mul(out, g.constant(proj))));
            };
            Rng probe(seed + 60);
            for (const auto& r : grad_check_directional(m.params(), loss, backward_once, probe)) {
                INFO(expert_kind_name(k), " ", r.param, " rel_err=", r.rel_err);
                CHECK(r.rel_err < 1e-2);
            }
        }
    }
}

TEST_CASE("supervised training reduces loss on a noiseless corpus") {
    FamilyPreset preset = preset_for(Family::CalceLike);
    preset.noise_std = 0.0;
    preset.jump_prob = 0.0;
    Corpus corpus;
    corpus.name = "noiseless";
    corpus.family = Family::CalceLike;
    for (std::size_t i = 0; i < 3; ++i) {
        Rng rng(mix_seed(71, 1, i));
        corpus.series.push_back(
            synthesize_cell(preset, Protocol::CC, 288, rng, "clean-" + std::to_string(i)));
    }

    for (ExpertKind k : kAllKinds) {
        ExpertModel m(config_of(k), 73);
        StudentTrainConfig cfg;
        cfg.epochs = 8;
        cfg.batch = 4;
        cfg.lr = 1e-3f;
        cfg.stride = 48;
        cfg.seed = 73;
        StudentHistory h = supervised_train(m, {corpus}, cfg);
        REQUIRE(h.epoch_mean.size() == 8);
        INFO(expert_kind_name(k), " first=", h.epoch_mean.front(),
             " last=", h.epoch_mean.back());
        CHECK(h.epoch_mean.back() < h.epoch_mean.front());
    }
}

TEST_CASE("zero learning rate and fixed seeds keep training inert and reproducible") {
    auto corpus = synthesize_corpus(Family::XjtuLike, 2, 240, 81);
    StudentTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 4;
    cfg.stride = 48;
    cfg.seed = 83;

    {
        ExpertModel m(config_of(ExpertKind::SegRec), 85);
        std::vector<Tensor> before;
        for (Parameter* p : m.params()) before.push_back(p->value);
        StudentTrainConfig frozen = cfg;
        frozen.lr = 0.0f;
        supervised_train(m, {corpus}, frozen);
        auto params = m.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            CHECK(std::memcmp(params[i]->value.data(), before[i].data(),
                              before[i].numel() * sizeof(float)) == 0);
        }
    }
    {
        ExpertModel a(config_of(ExpertKind::PatchAttn), 87);
        ExpertModel b(config_of(ExpertKind::PatchAttn), 87);
        supervised_train(a, {corpus}, cfg);
        supervised_train(b, {corpus}, cfg);
        auto pa = a.params();
        auto pb = b.params();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                              pa[i]->value.numel() * sizeof(float)) == 0);
        }
    }
    {
        ExpertModel m(config_of(ExpertKind::LinearDecomp), 89);
        std::vector<Corpus> empty_windows{synthesize_corpus(Family::CalceLike, 1, 192, 91)};
        for (CapacitySeries& s : empty_windows[0].series) {
            s.cycles.resize(120);
            s.capacity.resize(120);
        }
        CHECK_THROWS_AS(supervised_train(m, empty_windows, cfg), std::invalid_argument);
    }
}

TEST_CASE("expert checkpoints roundtrip and reject mismatched geometry") {
    const std::string path = "/tmp/capfor_expert_ckpt.btkd";
    ExpertModel m(config_of(ExpertKind::PatchAttn), 93);
    auto corpus = synthesize_corpus(Family::WzuLike, 1, 240, 95);
    StudentTrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    cfg.stride = 96;
    cfg.seed = 95;
    supervised_train(m, {corpus}, cfg);
    save_expert(path, m);

    ExpertModel loaded(config_of(ExpertKind::PatchAttn), 1);
    load_expert(path, loaded);
    auto pa = m.params();
    auto pb = loaded.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                          pa[i]->value.numel() * sizeof(float)) == 0);
    }

    ExpertModel wrong_kind(config_of(ExpertKind::SegRec), 1);
    CHECK_THROWS_AS(load_expert(path, wrong_kind), CheckpointError);
}

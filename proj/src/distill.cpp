#include "capfor/distill.hpp"

#include <cstdio>
#include <stdexcept>

namespace capfor {

void KDConfig::validate() const {
    if (temperature <= 0.0f) throw std::invalid_argument("distill: temperature must be positive");
    if (alpha < 0.0f || alpha > 1.0f) throw std::invalid_argument("distill: alpha must be in [0, 1]");
    if (epochs <= 0) throw std::invalid_argument("distill: epochs must be positive");
    if (batch == 0) throw std::invalid_argument("distill: batch must be positive");
    if (lr < 0.0f) throw std::invalid_argument("distill: lr must be non-negative");
    if (stride == 0) throw std::invalid_argument("distill: stride must be positive");
}

Var soften(Graph& g, Var y_hat, float temperature) {
    if (temperature <= 0.0f) throw std::invalid_argument("soften: temperature must be positive");
    return g.softmax(g.scale(y_hat, 1.0f / temperature));
}

Var kd_soft_loss(Graph& g, Var teacher_out, Var student_out, float temperature) {
    Var p = soften(g, teacher_out, temperature);
    Var q = soften(g, student_out, temperature);
    return g.scale(g.kl_divergence(p, q), temperature * temperature);
}

Var kd_total_loss(Graph& g, Var student_out, Var teacher_out, Var y, float temperature,
                  float alpha) {
    if (alpha == 0.0f) return g.mse(student_out, y);
    if (alpha == 1.0f) return kd_soft_loss(g, teacher_out, student_out, temperature);
    Var soft = kd_soft_loss(g, teacher_out, student_out, temperature);
    Var hard = g.mse(student_out, y);
    return g.add(g.scale(soft, alpha), g.scale(hard, 1.0f - alpha));
}

StudentHistory distill(TimerModel& teacher, ExpertModel& student,
                       const std::vector<Corpus>& corpora, const KDConfig& cfg) {
    cfg.validate();
    const std::size_t L = student.config().lookback;
    const std::size_t H = student.config().horizon;
    const std::size_t S = teacher.config().S;
    if (L % S != 0 || H % S != 0) {
        throw std::invalid_argument(
            "distill: student lookback and horizon must be multiples of the teacher token length");
    }

    std::vector<Corpus> cccv;
    for (const Corpus& corpus : corpora) {
        Corpus kept;
        kept.name = corpus.name;
        kept.family = corpus.family;
        for (const CapacitySeries& series : corpus.series) {
            if (series.protocol != Protocol::CCCV) {
                if (cfg.strict_protocol) {
                    throw std::invalid_argument("distill: series '" + series.cell_id +
                                                "' is not CCCV and strict_protocol is set");
                }
                continue;
            }
            kept.series.push_back(series);
        }
        cccv.push_back(std::move(kept));
    }

    std::vector<TrainSample> samples = student_samples(cccv, L, H, cfg.stride);
    // one teacher pass per window, cached; the student revisits these
    // targets every epoch
    for (TrainSample& s : samples) {
        std::vector<float> ctx(s.x.data(), s.x.data() + s.x.numel());
        std::vector<float> y_hat = teacher.forecast(ctx, H / S);
        s.soft = Tensor({1, H}, y_hat);
    }

    StudentTrainConfig loop;
    loop.epochs = cfg.epochs;
    loop.batch = cfg.batch;
    loop.lr = cfg.lr;
    loop.stride = cfg.stride;
    loop.seed = cfg.seed;
    return train_student_loop(student, samples, loop,
                              [&cfg](Graph& g, Var y_hat, const TrainSample& s) {
                                  return kd_total_loss(g, y_hat, g.constant(s.soft),
                                                       g.constant(s.y), cfg.temperature,
                                                       cfg.alpha);
                              });
}

void save_distill_manifest(const std::string& path, const ExpertModel& student,
                           const KDConfig& cfg, const std::string& teacher_id,
                           const std::string& corpus_id) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("save_distill_manifest: cannot open " + path);
    std::fprintf(f, "regime=distilled\n");
    std::fprintf(f, "student_kind=%s\n", expert_kind_name(student.kind()).c_str());
    std::fprintf(f, "teacher=%s\n", teacher_id.c_str());
    std::fprintf(f, "corpus=%s\n", corpus_id.c_str());
    std::fprintf(f, "temperature=%.17g\n", static_cast<double>(cfg.temperature));
    std::fprintf(f, "alpha=%.17g\n", static_cast<double>(cfg.alpha));
    std::fprintf(f, "epochs=%d\n", cfg.epochs);
    std::fprintf(f, "batch=%zu\n", cfg.batch);
    std::fprintf(f, "lr=%.17g\n", static_cast<double>(cfg.lr));
    std::fprintf(f, "stride=%zu\n", cfg.stride);
    std::fprintf(f, "seed=%llu\n", static_cast<unsigned long long>(cfg.seed));
    std::fclose(f);
}

}  // namespace capfor

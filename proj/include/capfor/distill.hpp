#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "capfor/autodiff.hpp"
#include "capfor/experts.hpp"
#include "capfor/seqdata.hpp"
#include "capfor/timer_net.hpp"

namespace capfor {

struct KDConfig {
    float temperature = 2.0f;  // not a published value; sweep it when it matters
    float alpha = 0.3f;
    int epochs = 20;
    std::size_t batch = 4;
    float lr = 1e-5f;
    std::size_t stride = 48;
    std::uint64_t seed = 1;
    bool strict_protocol = true;  // reject non-CCCV series instead of skipping

    void validate() const;  // throws std::invalid_argument on broken invariants
};

/// Softmax of y_hat / T along the horizon. Shape-preserving on {1, H}.
Var soften(Graph& g, Var y_hat, float temperature);

/// T^2 * KL(soften(teacher) || soften(student)) for one window.
Var kd_soft_loss(Graph& g, Var teacher_out, Var student_out, float temperature);

/// alpha * soft + (1 - alpha) * MSE(student_out, y). alpha == 0 builds the
/// bare MSE node, alpha == 1 the bare soft node.
Var kd_total_loss(Graph& g, Var student_out, Var teacher_out, Var y, float temperature,
                  float alpha);

/**
 * Response-based distillation: the teacher forecasts every training window
 * once (cached, no gradients), then the student trains on the blended loss
 * over the same windows. Teacher parameters are never touched.
 */
StudentHistory distill(TimerModel& teacher, ExpertModel& student,
                       const std::vector<Corpus>& corpora, const KDConfig& cfg);

/// Key-value manifest describing one distillation run, for replaying
/// regime comparisons: student kind, temperature, alpha, seed, epochs.
void save_distill_manifest(const std::string& path, const ExpertModel& student,
                           const KDConfig& cfg, const std::string& teacher_id,
                           const std::string& corpus_id);

}  // namespace capfor

#ifndef CAPFOR_OPTIM_HPP
#define CAPFOR_OPTIM_HPP

#include <functional>
#include <vector>

#include "capfor/autodiff.hpp"

namespace capfor {

/**
 * Adam with bias correction.
 *
 * Holds per-parameter first/second moment buffers keyed by registration
 * order. step() updates every registered trainable parameter from its
 * accumulated gradient and then clears all gradients (trainable or not),
 * so each step consumes exactly one batch worth of accumulation.
 */
class Adam {
public:
    explicit Adam(std::vector<Parameter*> params, float lr = 1e-3f, float beta1 = 0.9f,
                  float beta2 = 0.999f, float eps = 1e-8f);

    void step();
    void zero_grad();
    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    long t() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    float lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

/// One finite-difference vs analytic comparison from grad_check.
struct GradCheckResult {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

/**
 * Central-difference gradient check.
 *
 * `loss` must rebuild the graph from scratch on every call (parameter
 * values are mutated in place between evaluations). Checks `probes`
 * random coordinates per parameter; returns the worst offender per
 * parameter. rel_err = |a - n| / (|a| + |n| + 1e-8).
 */
std::vector<GradCheckResult> grad_check(std::vector<Parameter*> params,
                                        const std::function<double()>& loss,
                                        const std::function<void()>& backward_once,
                                        Rng& rng, std::size_t probes = 5, double eps = 1e-3);

/**
 * Directional central-difference check, one random unit-scale direction per
 * parameter tensor: numeric (L(p+eps*u) - L(p-eps*u)) / (2 eps) against
 * analytic sum(grad * u). Aggregating over the whole tensor keeps the
 * signal at the norm of the gradient instead of a single coordinate, which
 * deep compositions need at 32-bit precision.
 */
std::vector<GradCheckResult> grad_check_directional(
    std::vector<Parameter*> params, const std::function<double()>& loss,
    const std::function<void()>& backward_once, Rng& rng, double eps = 2e-3);

}  // namespace capfor

#endif  // CAPFOR_OPTIM_HPP

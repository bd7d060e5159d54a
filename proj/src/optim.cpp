#include "capfor/optim.hpp"

#include <cmath>

namespace capfor {

Adam::Adam(std::vector<Parameter*> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (!p.trainable) continue;
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double g = static_cast<double>(p.grad.data()[i]);
            const double m = static_cast<double>(beta1_) * static_cast<double>(m_[k].data()[i]) +
                             (1.0 - static_cast<double>(beta1_)) * g;
            const double v = static_cast<double>(beta2_) * static_cast<double>(v_[k].data()[i]) +
                             (1.0 - static_cast<double>(beta2_)) * g * g;
            m_[k].data()[i] = static_cast<float>(m);
            v_[k].data()[i] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p.value.data()[i] -= static_cast<float>(
                static_cast<double>(lr_) * mhat / (std::sqrt(vhat) + static_cast<double>(eps_)));
        }
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

std::vector<GradCheckResult> grad_check(std::vector<Parameter*> params,
                                        const std::function<double()>& loss,
                                        const std::function<void()>& backward_once,
                                        Rng& rng, std::size_t probes, double eps) {
    for (Parameter* p : params) p->zero_grad();
    backward_once();

    std::vector<GradCheckResult> worst;
    for (Parameter* p : params) {
        GradCheckResult r;
        r.param = p->name;
        r.rel_err = -1.0;
        const std::size_t n = p->value.numel();
        const std::size_t count = probes < n ? probes : n;
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t i = probes < n ? rng.index(n) : k;
            const float saved = p->value.data()[i];
            p->value.data()[i] = saved + static_cast<float>(eps);
            const double fplus = loss();
            p->value.data()[i] = saved - static_cast<float>(eps);
            const double fminus = loss();
            p->value.data()[i] = saved;
            const double numeric = (fplus - fminus) / (2.0 * eps);
            const double analytic = static_cast<double>(p->grad.data()[i]);
            const double rel =
                std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
            if (rel > r.rel_err) {
                r.index = i;
                r.analytic = analytic;
                r.numeric = numeric;
                r.rel_err = rel;
            }
        }
        if (r.rel_err < 0.0) r.rel_err = 0.0;
        worst.push_back(r);
    }
    return worst;
}

std::vector<GradCheckResult> grad_check_directional(
    std::vector<Parameter*> params, const std::function<double()>& loss,
    const std::function<void()>& backward_once, Rng& rng, double eps) {
    for (Parameter* p : params) p->zero_grad();
    backward_once();

    std::vector<GradCheckResult> results;
    for (Parameter* p : params) {
        const std::size_t n = p->value.numel();
        std::vector<float> u(n);
        double norm2 = 0.0;
        for (float& v : u) {
            v = static_cast<float>(rng.normal(0.0, 1.0));
            norm2 += static_cast<double>(v) * static_cast<double>(v);
        }
        const float inv_norm = static_cast<float>(1.0 / std::sqrt(norm2));
        for (float& v : u) v *= inv_norm;  // unit direction keeps the step eps-sized

        std::vector<float> saved(p->value.data(), p->value.data() + n);
        for (std::size_t i = 0; i < n; ++i) {
            p->value.data()[i] = saved[i] + static_cast<float>(eps) * u[i];
        }
        const double fplus = loss();
        for (std::size_t i = 0; i < n; ++i) {
            p->value.data()[i] = saved[i] - static_cast<float>(eps) * u[i];
        }
        const double fminus = loss();
        for (std::size_t i = 0; i < n; ++i) p->value.data()[i] = saved[i];

        double analytic = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            analytic += static_cast<double>(p->grad.data()[i]) * static_cast<double>(u[i]);
        }
        GradCheckResult r;
        r.param = p->name;
        r.numeric = (fplus - fminus) / (2.0 * eps);
        r.analytic = analytic;
        r.rel_err = std::abs(analytic - r.numeric) /
                    (std::abs(analytic) + std::abs(r.numeric) + 1e-8);
        results.push_back(r);
    }
    return results;
}

}  // namespace capfor

#include "capfor/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace capfor {

namespace {

void validate(const LimeConfig& cfg) {
    if (cfg.n_samples < 2) {
        throw std::invalid_argument("lime: n_samples must be at least 2, got " +
                                    std::to_string(cfg.n_samples));
    }
    if (cfg.sigma < 0.0) throw std::invalid_argument("lime: sigma must not be negative");
    if (!(cfg.ridge > 0.0)) throw std::invalid_argument("lime: ridge must be positive");
    if (cfg.mask_prob < 0.0 || cfg.mask_prob > 1.0) {
        throw std::invalid_argument("lime: mask_prob must lie in [0, 1]");
    }
}

double resolved_sigma(const LimeConfig& cfg, std::size_t length) {
    return cfg.sigma > 0.0 ? cfg.sigma : 0.75 * std::sqrt(static_cast<double>(length));
}

/// In-place Cholesky solve of the SPD system a x = b; a is n x n row-major.
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b,
                                   std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0.0) {
                    throw std::runtime_error("fit_surrogate: system not positive definite");
                }
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
    return b;
}

}  // namespace

std::string perturb_scheme_name(PerturbScheme s) {
    return s == PerturbScheme::Gaussian ? "gaussian" : "mean_mask";
}

PerturbScheme parse_perturb_scheme(const std::string& token) {
    if (token == "gaussian") return PerturbScheme::Gaussian;
    if (token == "mean_mask" || token == "mean-mask") return PerturbScheme::MeanMask;
    throw std::invalid_argument("unknown perturbation scheme: " + token);
}

double scalarize(const Forecaster& forecast, const std::vector<double>& input,
                 std::size_t horizon) {
    const std::vector<double> y = forecast(input, horizon);
    if (y.empty()) throw std::runtime_error("scalarize: empty forecast");
    double sum = 0.0;
    for (double v : y) sum += v;
    return sum / static_cast<double>(y.size());
}

PerturbSet perturb(const std::vector<double>& scaled_input, const LimeConfig& cfg, Rng& rng) {
    validate(cfg);
    if (scaled_input.empty()) throw std::invalid_argument("perturb: empty input");
    const std::size_t L = scaled_input.size();
    const double sigma = resolved_sigma(cfg, L);

    double mean = 0.0;
    for (double v : scaled_input) mean += v;
    mean /= static_cast<double>(L);
    double var = 0.0;
    for (double v : scaled_input) var += (v - mean) * (v - mean);
    const double stddev = std::sqrt(var / static_cast<double>(L));

    PerturbSet out;
    out.samples.assign(cfg.n_samples, scaled_input);
    out.weights.assign(cfg.n_samples, 1.0);
    for (std::size_t j = 0; j < cfg.n_samples; ++j) {
        std::vector<double>& z = out.samples[j];
        if (cfg.scheme == PerturbScheme::Gaussian) {
            for (std::size_t i = 0; i < L; ++i) z[i] += rng.normal(0.0, stddev);
        } else {
            for (std::size_t i = 0; i < L; ++i) {
                if (rng.uniform() < cfg.mask_prob) z[i] = mean;
            }
        }
        double d2 = 0.0;
        for (std::size_t i = 0; i < L; ++i) {
            d2 += (z[i] - scaled_input[i]) * (z[i] - scaled_input[i]);
        }
        out.weights[j] = std::exp(-d2 / (sigma * sigma));
    }
    return out;
}

SurrogateFit fit_surrogate(const std::vector<std::vector<double>>& samples,
                           const std::vector<double>& targets,
                           const std::vector<double>& weights, double ridge) {
    if (samples.empty()) throw std::invalid_argument("fit_surrogate: no samples");
    if (targets.size() != samples.size() || weights.size() != samples.size()) {
        throw std::invalid_argument("fit_surrogate: samples, targets, weights disagree");
    }
    if (!(ridge > 0.0)) throw std::invalid_argument("fit_surrogate: ridge must be positive");
    const std::size_t N = samples.size();
    const std::size_t L = samples[0].size();
    for (const auto& s : samples) {
        if (s.size() != L) throw std::invalid_argument("fit_surrogate: ragged samples");
    }

    // mean-1 weights make the fit invariant to a global weight rescale
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("fit_surrogate: negative weight");
        wsum += w;
    }
    if (wsum == 0.0) throw std::invalid_argument("fit_surrogate: all weights zero");
    std::vector<double> pi(N);
    for (std::size_t j = 0; j < N; ++j) pi[j] = weights[j] * static_cast<double>(N) / wsum;

    // normal equations over [coefs, intercept]; the intercept is unpenalized
    const std::size_t n = L + 1;
    std::vector<double> a(n * n, 0.0), b(n, 0.0);
    for (std::size_t j = 0; j < N; ++j) {
        const std::vector<double>& z = samples[j];
        const double w = pi[j];
        for (std::size_t r = 0; r < L; ++r) {
            const double wz = w * z[r];
            for (std::size_t c = 0; c <= r; ++c) a[r * n + c] += wz * z[c];
            a[L * n + r] += wz;
            b[r] += wz * targets[j];
        }
        a[L * n + L] += w;
        b[L] += w * targets[j];
    }
    for (std::size_t r = 0; r < L; ++r) {
        a[r * n + r] += ridge;
        for (std::size_t c = r + 1; c < n; ++c) a[r * n + c] = a[c * n + r];
    }
    const std::vector<double> theta = cholesky_solve(std::move(a), std::move(b), n);

    SurrogateFit fit;
    fit.coef.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(L));
    fit.intercept = theta[L];

    double g_mean = 0.0, pi_sum = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
        g_mean += pi[j] * targets[j];
        pi_sum += pi[j];
    }
    g_mean /= pi_sum;
    double ss_res = 0.0, ss_tot = 0.0, g_scale = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
        double pred = fit.intercept;
        for (std::size_t i = 0; i < L; ++i) pred += fit.coef[i] * samples[j][i];
        ss_res += pi[j] * (targets[j] - pred) * (targets[j] - pred);
        ss_tot += pi[j] * (targets[j] - g_mean) * (targets[j] - g_mean);
        g_scale += pi[j] * targets[j] * targets[j];
    }
    // a numerically constant target is a perfect intercept-only fit; without
    // the cutoff, rounding dust in ss_tot turns r2 into noise
    const bool degenerate = ss_tot <= 1e-18 * std::max(g_scale, 1e-300);
    fit.r2 = degenerate ? 1.0 : 1.0 - ss_res / ss_tot;
    return fit;
}

AttributionMatrix attribute_model(const Forecaster& forecast,
                                  const std::vector<WindowPair>& windows,
                                  const LimeConfig& cfg) {
    validate(cfg);
    if (windows.empty()) throw std::invalid_argument("attribute_model: no windows");
    const std::size_t L = windows[0].input.size();
    const std::size_t H = windows[0].target.size();
    if (cfg.n_samples < L) {
        std::fprintf(stderr,
                     "attribute_model: %zu samples for %zu positions; the surrogate "
                     "is underdetermined\n",
                     cfg.n_samples, L);
    }

    AttributionMatrix m;
    m.coef.reserve(windows.size());
    m.intercept.reserve(windows.size());
    m.fit_r2.reserve(windows.size());
    for (const WindowPair& w : windows) {
        if (w.input.size() != L || w.target.size() != H) {
            throw std::invalid_argument("attribute_model: inconsistent window lengths");
        }
        const ScaleParams sp = fit_scale(w.input);
        const std::vector<double> z = apply_scale(w.input, sp);
        // one stream per window, restarted identically so equal windows
        // produce equal rows
        Rng rng(mix_seed(cfg.seed, 0x11e0));
        const PerturbSet ps = perturb(z, cfg, rng);
        std::vector<double> g(ps.samples.size());
        for (std::size_t j = 0; j < ps.samples.size(); ++j) {
            g[j] = scalarize(forecast, invert_scale(ps.samples[j], sp), H);
        }
        SurrogateFit fit = fit_surrogate(ps.samples, g, ps.weights, cfg.ridge);
        m.coef.push_back(std::move(fit.coef));
        m.intercept.push_back(fit.intercept);
        m.fit_r2.push_back(fit.r2);
    }

    m.summary.assign(L, 0.0);
    for (const auto& row : m.coef) {
        for (std::size_t i = 0; i < L; ++i) m.summary[i] += std::abs(row[i]);
    }
    for (double& v : m.summary) v /= static_cast<double>(m.coef.size());
    return m;
}

void save_attribution_csv(const std::string& path, const AttributionMatrix& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_attribution_csv: cannot open " + path);
    const std::size_t L = m.summary.size();
    out << "window";
    for (std::size_t i = 0; i < L; ++i) out << ",pos_" << (i + 1);
    out << ",intercept,fit_r2\n";
    char buf[48];
    auto real = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (std::size_t t = 0; t < m.coef.size(); ++t) {
        out << t;
        for (double v : m.coef[t]) out << ',' << real(v);
        out << ',' << real(m.intercept[t]) << ',' << real(m.fit_r2[t]) << "\n";
    }
    out << "summary";
    for (double v : m.summary) out << ',' << real(v);
    out << ",,\n";
    if (!out) throw std::runtime_error("save_attribution_csv: write failed for " + path);
}

AttributionMatrix load_attribution_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_attribution_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("window,pos_1,", 0) != 0) {
        throw std::runtime_error("load_attribution_csv: bad header in " + path);
    }
    std::size_t cols = 0;  // columns after "window": L positions + intercept + fit_r2
    for (char ch : line) cols += ch == ',';
    if (cols < 3) throw std::runtime_error("load_attribution_csv: bad header in " + path);
    const std::size_t L = cols - 2;

    auto split = [&path](const std::string& row) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = row.find(',', start);
            cells.push_back(row.substr(start, comma - start));
            if (comma == std::string::npos) return cells;
            start = comma + 1;
        }
    };

    AttributionMatrix m;
    bool saw_summary = false;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split(line);
        if (cells.size() != L + 3) {
            throw std::runtime_error("load_attribution_csv: bad row at line " +
                                     std::to_string(lineno) + " in " + path);
        }
        if (cells[0] == "summary") {
            for (std::size_t i = 0; i < L; ++i) m.summary.push_back(std::stod(cells[1 + i]));
            saw_summary = true;
            break;
        }
        std::vector<double> row(L);
        for (std::size_t i = 0; i < L; ++i) row[i] = std::stod(cells[1 + i]);
        m.coef.push_back(std::move(row));
        m.intercept.push_back(std::stod(cells[L + 1]));
        m.fit_r2.push_back(std::stod(cells[L + 2]));
    }
    if (!saw_summary) {
        throw std::runtime_error("load_attribution_csv: missing summary row in " + path);
    }
    return m;
}

void save_attribution_svg(const std::string& path, const AttributionMatrix& m,
                          const std::string& title) {
    const std::size_t rows = m.coef.size();
    const std::size_t cols = m.summary.size();
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument("save_attribution_svg: empty matrix");
    }
    double peak = 0.0;
    for (const auto& row : m.coef) {
        for (double v : row) peak = std::max(peak, std::abs(v));
    }
    if (peak == 0.0) peak = 1.0;

    const int cell = 8, left = 60, top = 40, legend = 30;
    const int width = left + static_cast<int>(cols) * cell + 20;
    const int height = top + static_cast<int>(rows) * cell + legend + 20;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_attribution_svg: cannot open " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t i = 0; i < cols; ++i) {
            // v in [-1, 1]: negative fades to blue, positive to red
            const double v = m.coef[t][i] / peak;
            const double a = std::min(1.0, std::abs(v));
            int r = 255, g = 255, b = 255;
            if (v >= 0.0) {
                g = static_cast<int>(255.0 * (1.0 - a));
                b = g;
            } else {
                r = static_cast<int>(255.0 * (1.0 - a));
                g = r;
            }
            out << "<rect x=\"" << left + static_cast<int>(i) * cell << "\" y=\""
                << top + static_cast<int>(t) * cell << "\" width=\"" << cell << "\" height=\""
                << cell << "\" fill=\"rgb(" << r << ',' << g << ',' << b << ")\"/>\n";
        }
        out << "<text x=\"8\" y=\"" << top + static_cast<int>(t) * cell + cell - 1
            << "\" font-family=\"sans-serif\" font-size=\"8\">w" << t << "</text>\n";
    }
    const int ly = top + static_cast<int>(rows) * cell + 14;
    out << "<text x=\"" << left << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"10\">blue -" << peak << "  white 0  red +"
        << peak << "</text>\n";
    out << "</svg>\n";
    if (!out) throw std::runtime_error("save_attribution_svg: write failed for " + path);
}

}  // namespace capfor

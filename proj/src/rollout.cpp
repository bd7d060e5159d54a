#include "capfor/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace capfor {

namespace {

double diff_std(const std::vector<double>& x, std::size_t begin, std::size_t end) {
    const std::size_t n = end - begin - 1;
    double mean = 0.0;
    for (std::size_t i = begin; i + 1 < end; ++i) mean += x[i + 1] - x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = begin; i + 1 < end; ++i) {
        const double d = x[i + 1] - x[i] - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(n));
}

double half_mvr(const std::vector<double>& x, std::size_t begin, std::size_t end) {
    std::size_t up = 0;
    for (std::size_t i = begin; i + 1 < end; ++i) {
        if (x[i + 1] - x[i] > 0.0) ++up;
    }
    return static_cast<double>(up) / static_cast<double>(end - begin - 1);
}

std::string fmt_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::vector<double> recursive_forecast(const Forecaster& forecast,
                                       const std::vector<double>& context,
                                       std::size_t total_h, std::size_t base_h) {
    if (context.empty()) throw std::invalid_argument("recursive_forecast: empty context");
    if (base_h == 0) throw std::invalid_argument("recursive_forecast: base horizon is zero");
    if (total_h == 0 || total_h % base_h != 0) {
        throw std::invalid_argument("recursive_forecast: total horizon " +
                                    std::to_string(total_h) + " is not a multiple of " +
                                    std::to_string(base_h));
    }
    const std::size_t L = context.size();
    std::vector<double> track = context;  // observations then predictions
    std::vector<double> out;
    out.reserve(total_h);
    while (out.size() < total_h) {
        const std::vector<double> window(track.end() - static_cast<std::ptrdiff_t>(L),
                                         track.end());
        const std::vector<double> block = forecast(window, base_h);
        if (block.size() != base_h) {
            throw std::runtime_error("recursive_forecast: forecaster returned " +
                                     std::to_string(block.size()) + " values, expected " +
                                     std::to_string(base_h));
        }
        out.insert(out.end(), block.begin(), block.end());
        track.insert(track.end(), block.begin(), block.end());
    }
    return out;
}

RolloutReport smoothing_diagnostics(const std::vector<double>& forecast, std::size_t split) {
    const std::size_t n = forecast.size();
    if (split < 2 || n < split + 2) {
        throw std::invalid_argument("smoothing_diagnostics: split " + std::to_string(split) +
                                    " leaves a half with fewer than 2 of " +
                                    std::to_string(n) + " values");
    }
    RolloutReport r;
    r.total_horizon = n;
    r.split = split;
    r.diff_std_first = diff_std(forecast, 0, split);
    r.diff_std_second = diff_std(forecast, split, n);
    r.mvr_first = half_mvr(forecast, 0, split);
    r.mvr_second = half_mvr(forecast, split, n);
    if (r.diff_std_first > 0.0) {
        r.flattening_ratio = r.diff_std_second / r.diff_std_first;
    } else {
        r.ratio_defined = false;
        r.flattening_ratio = 0.0;
    }
    return r;
}

void save_rollout_csv(const std::string& path, const std::vector<double>& truth,
                      const std::vector<double>& forecast) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_rollout_csv: cannot open " + path);
    out << "step,truth,forecast\n";
    const std::size_t n = std::max(truth.size(), forecast.size());
    for (std::size_t i = 0; i < n; ++i) {
        out << (i + 1) << ',';
        if (i < truth.size()) out << fmt_real(truth[i]);
        out << ',';
        if (i < forecast.size()) out << fmt_real(forecast[i]);
        out << "\n";
    }
    if (!out) throw std::runtime_error("save_rollout_csv: write failed for " + path);
}

std::pair<std::vector<double>, std::vector<double>> load_rollout_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_rollout_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "step,truth,forecast") {
        throw std::runtime_error("load_rollout_csv: bad header in " + path);
    }
    std::vector<double> truth, forecast;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw std::runtime_error("load_rollout_csv: bad row at line " +
                                     std::to_string(lineno) + " in " + path);
        }
        const std::string t = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string f = line.substr(c2 + 1);
        if (!t.empty()) truth.push_back(std::stod(t));
        if (!f.empty()) forecast.push_back(std::stod(f));
    }
    return {std::move(truth), std::move(forecast)};
}

void save_rollout_svg(const std::string& path, const std::vector<double>& truth,
                      const std::vector<double>& forecast, std::size_t split,
                      const std::string& title) {
    if (forecast.empty()) throw std::invalid_argument("save_rollout_svg: empty forecast");
    const int width = 640, height = 360, left = 50, right = 20, top = 40, bottom = 30;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    const std::size_t n = std::max(truth.size(), forecast.size());

    double lo = forecast[0], hi = forecast[0];
    for (double v : forecast) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : truth) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) hi = lo + 1.0;

    auto px = [&](std::size_t i) {
        return left + plot_w * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    auto py = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };
    auto polyline = [&](const std::vector<double>& series) {
        std::string pts;
        for (std::size_t i = 0; i < series.size(); ++i) {
            pts += std::to_string(px(i)) + ',' + std::to_string(py(series[i])) + ' ';
        }
        return pts;
    };

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_rollout_svg: cannot open " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<text x=\"" << left << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";
    if (!truth.empty()) {
        out << "<polyline fill=\"none\" stroke=\"#222222\" stroke-width=\"1.5\" points=\""
            << polyline(truth) << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" "
           "stroke-dasharray=\"5,3\" points=\""
        << polyline(forecast) << "\"/>\n";
    if (split > 0 && split < n) {
        out << "<line x1=\"" << px(split) << "\" y1=\"" << top << "\" x2=\"" << px(split)
            << "\" y2=\"" << (top + plot_h)
            << "\" stroke=\"#2980b9\" stroke-width=\"1\" stroke-dasharray=\"2,2\"/>\n";
        out << "<text x=\"" << px(split) + 4 << "\" y=\"" << top + 12
            << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#2980b9\">step "
            << split << "</text>\n";
    }
    out << "<text x=\"" << left << "\" y=\"" << height - 8
        << "\" font-family=\"sans-serif\" font-size=\"10\">truth solid, forecast "
           "dashed</text>\n";
    out << "</svg>\n";
    if (!out) throw std::runtime_error("save_rollout_svg: write failed for " + path);
}

void save_rollout_report(const std::string& path, const RolloutReport& report,
                         const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_rollout_report: cannot open " + path);
    out << "total_horizon=" << report.total_horizon << "\n";
    out << "split=" << report.split << "\n";
    out << "diff_std_first=" << fmt_real(report.diff_std_first) << "\n";
    out << "diff_std_second=" << fmt_real(report.diff_std_second) << "\n";
    out << "mvr_first=" << fmt_real(report.mvr_first) << "\n";
    out << "mvr_second=" << fmt_real(report.mvr_second) << "\n";
    out << "flattening_ratio="
        << (report.ratio_defined ? fmt_real(report.flattening_ratio) : std::string("missing"))
        << "\n";
    for (const auto& [k, v] : extra) out << k << '=' << v << "\n";
    if (!out) throw std::runtime_error("save_rollout_report: write failed for " + path);
}

}  // namespace capfor

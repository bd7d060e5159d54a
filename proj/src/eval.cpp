#include "capfor/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace capfor {

namespace {

std::string protocol_label(std::optional<Protocol> filter) {
    if (!filter) return "all";
    return *filter == Protocol::CC ? "cc" : "cccv";
}

std::string fmt_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

MetricReport metrics(const std::vector<double>& y, const std::vector<double>& y_hat) {
    if (y.empty()) throw std::invalid_argument("metrics: empty truth");
    if (y.size() != y_hat.size()) {
        throw std::invalid_argument("metrics: length mismatch, " + std::to_string(y.size()) +
                                    " vs " + std::to_string(y_hat.size()));
    }
    const std::size_t n = y.size();
    double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0;
    std::size_t ape_n = 0;
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= static_cast<double>(n);
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y_hat[i] - y[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (std::abs(y[i]) > 1e-9) {
            ape_sum += std::abs(e / y[i]);
            ++ape_n;
        }
        ss_tot += (y[i] - y_mean) * (y[i] - y_mean);
    }
    MetricReport r;
    r.mae = abs_sum / static_cast<double>(n);
    r.rmse = std::sqrt(sq_sum / static_cast<double>(n));
    r.mape_percent = ape_n == 0 ? 0.0 : 100.0 * ape_sum / static_cast<double>(ape_n);
    if (ss_tot == 0.0) {
        r.r2_defined = false;
        r.r2 = 0.0;
    } else {
        r.r2 = 1.0 - sq_sum / ss_tot;
    }
    if (y_hat.size() >= 2) r.mvr = mvr(y_hat);
    return r;
}

double mvr(const std::vector<double>& y_hat) {
    if (y_hat.size() < 2) {
        throw std::invalid_argument("mvr: need at least 2 values, got " +
                                    std::to_string(y_hat.size()));
    }
    std::size_t up = 0;
    for (std::size_t i = 0; i + 1 < y_hat.size(); ++i) {
        if (y_hat[i + 1] - y_hat[i] > 0.0) ++up;
    }
    return static_cast<double>(up) / static_cast<double>(y_hat.size() - 1);
}

Forecaster forecaster_of(TimerModel& model) {
    TimerModel* m = &model;
    return [m](const std::vector<double>& ctx, std::size_t horizon) {
        const std::size_t S = m->config().S;
        if (ctx.empty() || ctx.size() % S != 0) {
            throw std::invalid_argument("forecaster: context length " +
                                        std::to_string(ctx.size()) +
                                        " is not a positive multiple of token size " +
                                        std::to_string(S));
        }
        if (horizon == 0 || horizon % S != 0) {
            throw std::invalid_argument("forecaster: horizon " + std::to_string(horizon) +
                                        " is not a positive multiple of token size " +
                                        std::to_string(S));
        }
        const ScaleParams sp = fit_scale(ctx);
        const std::vector<double> scaled = apply_scale(ctx, sp);
        std::vector<float> fctx(scaled.begin(), scaled.end());
        const std::vector<float> out = m->forecast(fctx, horizon / S);
        std::vector<double> dout(out.begin(), out.end());
        return invert_scale(dout, sp);
    };
}

Forecaster forecaster_of(ExpertModel& model) {
    ExpertModel* m = &model;
    return [m](const std::vector<double>& ctx, std::size_t horizon) {
        if (ctx.size() != m->config().lookback) {
            throw std::invalid_argument("forecaster: context length " +
                                        std::to_string(ctx.size()) + " does not match lookback " +
                                        std::to_string(m->config().lookback));
        }
        if (horizon != m->config().horizon) {
            throw std::invalid_argument("forecaster: horizon " + std::to_string(horizon) +
                                        " does not match the expert horizon " +
                                        std::to_string(m->config().horizon));
        }
        const ScaleParams sp = fit_scale(ctx);
        const std::vector<double> scaled = apply_scale(ctx, sp);
        std::vector<float> fctx(scaled.begin(), scaled.end());
        const std::vector<float> out = m->forward_values(fctx);
        std::vector<double> dout(out.begin(), out.end());
        return invert_scale(dout, sp);
    };
}

ForecastDump collect_forecasts(const Forecaster& forecast, const Corpus& corpus,
                               std::optional<Protocol> filter, const EvalConfig& cfg) {
    ForecastDump dump;
    for (const CapacitySeries& series : corpus.series) {
        if (filter && series.protocol != *filter) continue;
        for (const WindowPair& w :
             make_windows(series, cfg.context, cfg.horizon, cfg.stride)) {
            const std::vector<double> y_hat = forecast(w.input, cfg.horizon);
            if (y_hat.size() != cfg.horizon) {
                throw std::runtime_error("collect_forecasts: forecaster returned " +
                                         std::to_string(y_hat.size()) + " values, expected " +
                                         std::to_string(cfg.horizon));
            }
            dump.y.insert(dump.y.end(), w.target.begin(), w.target.end());
            dump.y_hat.insert(dump.y_hat.end(), y_hat.begin(), y_hat.end());
            dump.window_mvr.push_back(cfg.horizon >= 2 ? mvr(y_hat) : 0.0);
        }
    }
    if (dump.window_mvr.empty()) {
        throw std::invalid_argument("collect_forecasts: no " + protocol_label(filter) +
                                    " windows in corpus " + corpus.name);
    }
    return dump;
}

MetricReport evaluate_protocol(const Forecaster& forecast, const Corpus& corpus,
                               std::optional<Protocol> filter, const EvalConfig& cfg) {
    const ForecastDump dump = collect_forecasts(forecast, corpus, filter, cfg);
    MetricReport r = metrics(dump.y, dump.y_hat);
    double mvr_sum = 0.0;
    for (double v : dump.window_mvr) mvr_sum += v;
    r.mvr = mvr_sum / static_cast<double>(dump.window_mvr.size());
    r.n_windows = dump.window_mvr.size();
    r.protocol = protocol_label(filter);
    return r;
}

RankTable friedman(const std::vector<std::string>& methods,
                   const std::vector<std::vector<double>>& errors) {
    const std::size_t k = errors.size();
    if (k < 2) throw std::invalid_argument("friedman: need at least 2 methods");
    if (methods.size() != k) {
        throw std::invalid_argument("friedman: " + std::to_string(methods.size()) +
                                    " names for " + std::to_string(k) + " methods");
    }
    const std::size_t n = errors[0].size();
    if (n < 2) throw std::invalid_argument("friedman: need at least 2 cells");
    for (const auto& row : errors) {
        if (row.size() != n) throw std::invalid_argument("friedman: ragged error matrix");
    }

    RankTable table;
    table.methods = methods;
    table.errors = errors;
    table.avg_rank.assign(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < k; ++i) {
            // average-tie rank without sorting: 1 + #better + half of #equal
            double rank = 1.0;
            for (std::size_t l = 0; l < k; ++l) {
                if (l == i) continue;
                if (errors[l][j] < errors[i][j]) rank += 1.0;
                else if (errors[l][j] == errors[i][j]) rank += 0.5;
            }
            table.avg_rank[i] += rank;
        }
    }
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        table.avg_rank[i] /= static_cast<double>(n);
        sum_sq += table.avg_rank[i] * table.avg_rank[i];
    }
    const double kk = static_cast<double>(k);
    table.statistic = 12.0 * static_cast<double>(n) / (kk * (kk + 1.0)) *
                      (sum_sq - kk * (kk + 1.0) * (kk + 1.0) / 4.0);
    return table;
}

std::vector<LoboRow> lobo(const TimerModel& base, const std::vector<Corpus>& families,
                          const Corpus& test_corpus, const LoboConfig& cfg) {
    if (families.size() < 2) {
        throw std::invalid_argument("lobo: need at least 2 training families, got " +
                                    std::to_string(families.size()));
    }
    const auto src = base.params();
    auto run = [&](const std::string& variant, const std::vector<Corpus>& train) {
        TimerModel model(base.config(), 0);
        auto dst = model.params();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
        LoraSet lora(model, cfg.lora, cfg.lora_seed);
        finetune(model, lora, train, cfg.finetune);
        lora.set_training(false);
        MetricReport r = evaluate_protocol(forecaster_of(model), test_corpus, cfg.protocol,
                                           cfg.eval);
        r.model = "timer_lora";
        r.regime = variant;
        return LoboRow{variant, r};
    };

    std::vector<LoboRow> rows;
    rows.push_back(run("full", families));
    for (std::size_t i = 0; i < families.size(); ++i) {
        std::vector<Corpus> train;
        for (std::size_t j = 0; j < families.size(); ++j) {
            if (j != i) train.push_back(families[j]);
        }
        rows.push_back(run("wo_" + family_name(families[i].family), train));
    }
    return rows;
}

void save_metric_reports(const std::string& path, const std::vector<MetricReport>& reports) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_metric_reports: cannot open " + path);
    for (const MetricReport& r : reports) {
        out << "model=" << r.model << "\tprotocol=" << r.protocol << "\tregime=" << r.regime
            << "\tmae=" << fmt_real(r.mae) << "\trmse=" << fmt_real(r.rmse)
            << "\tmape_percent=" << fmt_real(r.mape_percent)
            << "\tr2=" << (r.r2_defined ? fmt_real(r.r2) : std::string("missing"))
            << "\tmvr=" << fmt_real(r.mvr) << "\tn_windows=" << r.n_windows << "\n";
    }
    if (!out) throw std::runtime_error("save_metric_reports: write failed for " + path);
}

std::vector<MetricReport> load_metric_reports(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_metric_reports: cannot open " + path);
    std::vector<MetricReport> reports;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        MetricReport r;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("load_metric_reports: " + path + " line " +
                                         std::to_string(lineno) + ": bad field " + field);
            }
            const std::string key = field.substr(0, eq);
            const std::string val = field.substr(eq + 1);
            if (key == "model") r.model = val;
            else if (key == "protocol") r.protocol = val;
            else if (key == "regime") r.regime = val;
            else if (key == "mae") r.mae = std::stod(val);
            else if (key == "rmse") r.rmse = std::stod(val);
            else if (key == "mape_percent") r.mape_percent = std::stod(val);
            else if (key == "mvr") r.mvr = std::stod(val);
            else if (key == "n_windows") r.n_windows = std::stoul(val);
            else if (key == "r2") {
                if (val == "missing") r.r2_defined = false;
                else r.r2 = std::stod(val);
            } else {
                throw std::runtime_error("load_metric_reports: " + path + " line " +
                                         std::to_string(lineno) + ": unknown key " + key);
            }
        }
        reports.push_back(r);
    }
    return reports;
}

void save_comparison_csv(const std::string& path, const std::vector<MetricReport>& reports) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_comparison_csv: cannot open " + path);
    out << "model,protocol,regime,mae,rmse,mape_percent,r2,mvr,n_windows\n";
    for (const MetricReport& r : reports) {
        out << r.model << ',' << r.protocol << ',' << r.regime << ',' << fmt_real(r.mae) << ','
            << fmt_real(r.rmse) << ',' << fmt_real(r.mape_percent) << ','
            << (r.r2_defined ? fmt_real(r.r2) : std::string()) << ',' << fmt_real(r.mvr) << ','
            << r.n_windows << "\n";
    }
    if (!out) throw std::runtime_error("save_comparison_csv: write failed for " + path);
}

void save_rank_table_csv(const std::string& path, const RankTable& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_rank_table_csv: cannot open " + path);
    const std::size_t n = table.errors.empty() ? 0 : table.errors[0].size();
    out << "method";
    for (std::size_t j = 0; j < n; ++j) out << ",cell_" << j;
    out << ",avg_rank\n";
    for (std::size_t i = 0; i < table.methods.size(); ++i) {
        out << table.methods[i];
        for (std::size_t j = 0; j < n; ++j) out << ',' << fmt_real(table.errors[i][j]);
        out << ',' << fmt_real(table.avg_rank[i]) << "\n";
    }
    out << "# friedman_statistic=" << fmt_real(table.statistic) << "\n";
    if (!out) throw std::runtime_error("save_rank_table_csv: write failed for " + path);
}

void save_predictions_csv(const std::string& path, const std::vector<double>& y,
                          const std::vector<double>& y_hat) {
    if (y.size() != y_hat.size()) {
        throw std::invalid_argument("save_predictions_csv: length mismatch");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_predictions_csv: cannot open " + path);
    out << "y,y_hat\n";
    for (std::size_t i = 0; i < y.size(); ++i) {
        out << fmt_real(y[i]) << ',' << fmt_real(y_hat[i]) << "\n";
    }
    if (!out) throw std::runtime_error("save_predictions_csv: write failed for " + path);
}

std::pair<std::vector<double>, std::vector<double>> load_predictions_csv(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_predictions_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "y,y_hat") {
        throw std::runtime_error("load_predictions_csv: bad header in " + path);
    }
    std::vector<double> y, y_hat;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw std::runtime_error("load_predictions_csv: bad row at line " +
                                     std::to_string(lineno) + " in " + path);
        }
        y.push_back(std::stod(line.substr(0, comma)));
        y_hat.push_back(std::stod(line.substr(comma + 1)));
    }
    return {std::move(y), std::move(y_hat)};
}

void save_scatter_svg(const std::string& path, const std::vector<double>& y,
                      const std::vector<double>& y_hat, const std::string& title) {
    if (y.empty() || y.size() != y_hat.size()) {
        throw std::invalid_argument("save_scatter_svg: need equal non-empty vectors");
    }
    const int side = 420, left = 50, top = 40, pad = 20;
    const double plot = side - left - pad;

    double lo = y[0], hi = y[0];
    for (double v : y) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : y_hat) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) hi = lo + 1.0;  // degenerate data still renders
    auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * plot; };
    auto sy = [&](double v) { return top + plot - (v - lo) / (hi - lo) * plot; };

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scatter_svg: cannot open " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side << "\" height=\""
        << (side + top) << "\" viewBox=\"0 0 " << side << ' ' << (side + top) << "\">\n";
    out << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot << "\" height=\""
        << plot << "\" fill=\"none\" stroke=\"#888888\"/>\n";
    out << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo) << "\" x2=\"" << sx(hi)
        << "\" y2=\"" << sy(hi) << "\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n";
    char buf[64];
    for (std::size_t i = 0; i < y.size(); ++i) {
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.4\"", sx(y[i]),
                      sy(y_hat[i]));
        out << buf << " fill=\"#2c6fbb\" fill-opacity=\"0.55\"/>\n";
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("save_scatter_svg: write failed for " + path);
}

}  // namespace capfor

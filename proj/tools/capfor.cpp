// Command-line front door for the capacity forecasting pipeline. Every
// subcommand is deterministic given its effective config and writes a run
// manifest beside its outputs.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "capfor/checkpoint.hpp"
#include "capfor/config.hpp"
#include "capfor/distill.hpp"
#include "capfor/eval.hpp"
#include "capfor/explain.hpp"
#include "capfor/lora.hpp"
#include "capfor/rollout.hpp"
#include "capfor/seqdata.hpp"
#include "capfor/timer_net.hpp"
#include "capfor/train.hpp"

namespace fs = std::filesystem;
using namespace capfor;

namespace {

// Exit codes: 0 success, 1 usage or internal failure, 2 config error,
// 3 missing input, 4 checkpoint error.
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitCheckpoint = 4;

struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw MissingInput("missing input: " + path);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Short decimal labels for grid values ("0.02", not "0.0200000003").
std::string fmt_label(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string corpus_csv(const RunConfig& cfg, const std::string& name) {
    return cfg.data_dir + "/" + name + ".csv";
}

std::string corpus_manifest(const RunConfig& cfg, const std::string& name) {
    return cfg.data_dir + "/" + name + ".manifest";
}

Corpus load_named_corpus(const RunConfig& cfg, const std::string& name) {
    require_file(corpus_csv(cfg, name));
    require_file(corpus_manifest(cfg, name));
    return load_corpus(corpus_csv(cfg, name), corpus_manifest(cfg, name));
}

std::vector<Corpus> load_corpora(const RunConfig& cfg, const std::vector<std::string>& names) {
    std::vector<Corpus> out;
    out.reserve(names.size());
    for (const auto& n : names) out.push_back(load_named_corpus(cfg, n));
    return out;
}

std::vector<std::string> default_family_names() {
    return {family_name(Family::WzuLike), family_name(Family::CalceLike),
            family_name(Family::XjtuLike), family_name(Family::SjtuLike)};
}

Corpus cccv_only(Corpus corpus) {
    corpus.series.erase(std::remove_if(corpus.series.begin(), corpus.series.end(),
                                       [](const CapacitySeries& s) {
                                           return s.protocol != Protocol::CCCV;
                                       }),
                        corpus.series.end());
    return corpus;
}

std::optional<Protocol> protocol_filter(const RunConfig& cfg) {
    if (cfg.eval_protocol == "all") return std::nullopt;
    return parse_protocol(cfg.eval_protocol);
}

/// A checkpoint holds either a teacher (timer.meta) or an expert
/// (expert.meta). Exactly one model ends up engaged; the forecaster
/// borrows it, so keep the holder alive while forecasting.
struct LoadedModel {
    std::optional<TimerModel> timer;
    std::optional<ExpertModel> expert;
    std::string kind;  // "timer" or the expert kind name

    Forecaster forecaster() {
        if (timer) return forecaster_of(*timer);
        return forecaster_of(*expert);
    }
};

LoadedModel load_any_model(const RunConfig& cfg, const std::string& path) {
    require_file(path);
    auto tensors = load_checkpoint(path);
    LoadedModel m;
    if (tensors.count("expert.meta")) {
        const Tensor& meta = tensors.at("expert.meta");
        if (meta.numel() != 3) throw CheckpointError("malformed expert.meta in " + path);
        ExpertConfig ec = cfg.expert;
        ec.kind = static_cast<ExpertKind>(static_cast<int>(meta.data()[0]));
        ec.lookback = static_cast<std::size_t>(meta.data()[1]);
        ec.horizon = static_cast<std::size_t>(meta.data()[2]);
        m.expert.emplace(ec, 0);
        load_expert(path, *m.expert);
        m.kind = expert_kind_name(ec.kind);
    } else if (tensors.count("timer.meta")) {
        m.timer.emplace(load_teacher(path));
        m.kind = "timer";
    } else {
        throw CheckpointError("checkpoint carries neither timer.meta nor expert.meta: " + path);
    }
    return m;
}

/// Fork one worker per job, at most max_procs alive at a time. Returns 0
/// iff every worker exited 0. Workers must write to distinct files.
int run_parallel(const std::vector<std::function<int()>>& jobs, std::size_t max_procs) {
    if (max_procs == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        max_procs = hw == 0 ? 2 : hw;
    }
    max_procs = std::min(max_procs, jobs.size());

    std::vector<pid_t> alive;
    int worst = 0;
    auto reap_one = [&alive, &worst]() {
        int status = 0;
        const pid_t done = waitpid(-1, &status, 0);
        alive.erase(std::remove(alive.begin(), alive.end(), done), alive.end());
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kExitUsage;
        worst = std::max(worst, code);
    };

    for (const auto& job : jobs) {
        while (alive.size() >= max_procs) reap_one();
        std::fflush(stdout);
        std::fflush(stderr);
        const pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
            int code = 0;
            try {
                code = job();
            } catch (const std::exception& e) {
                std::fprintf(stderr, "worker: %s\n", e.what());
                code = kExitUsage;
            }
            std::fflush(stdout);
            std::fflush(stderr);
            _exit(code);
        }
        alive.push_back(pid);
    }
    while (!alive.empty()) reap_one();
    return worst;
}

// ---------------------------------------------------------------- synth

int run_synth(const RunConfig& cfg) {
    fs::create_directories(cfg.data_dir);
    std::vector<std::pair<std::string, std::string>> extra;
    for (Family f : {Family::WzuLike, Family::CalceLike, Family::XjtuLike, Family::SjtuLike}) {
        const Corpus corpus = synthesize_corpus(f, cfg.synth_cells, cfg.synth_cycles, cfg.seed);
        save_corpus(corpus_csv(cfg, corpus.name), corpus_manifest(cfg, corpus.name), corpus,
                    cfg.seed);
        extra.emplace_back("output", corpus_csv(cfg, corpus.name));
        std::printf("synth: %s (%zu cells, %zu cycles)\n", corpus.name.c_str(), cfg.synth_cells,
                    cfg.synth_cycles);
    }
    write_run_manifest(cfg.data_dir + "/synth.manifest", "synth", cfg, {}, extra);
    return 0;
}

// ---------------------------------------------------------------- ingest

int run_ingest(const RunConfig& cfg, const std::string& input, const std::string& family,
               std::string name) {
    require_file(input);
    Corpus corpus;
    corpus.family = parse_family(family);
    corpus.name = name.empty() ? family_name(corpus.family) : name;
    corpus.series = load_csv(input);
    if (corpus.series.empty()) throw std::runtime_error("ingest: no series in " + input);
    fs::create_directories(cfg.data_dir);
    save_corpus(corpus_csv(cfg, corpus.name), corpus_manifest(cfg, corpus.name), corpus, 0);
    write_run_manifest(cfg.data_dir + "/ingest_" + corpus.name + ".manifest", "ingest", cfg,
                       {input}, {{"output", corpus_csv(cfg, corpus.name)}});
    std::printf("ingest: %s -> %s (%zu cells)\n", input.c_str(),
                corpus_csv(cfg, corpus.name).c_str(), corpus.series.size());
    return 0;
}

// -------------------------------------------------------------- pretrain

int run_pretrain(const RunConfig& cfg, const std::vector<std::string>& corpora_names) {
    const std::vector<Corpus> corpora = load_corpora(cfg, corpora_names);
    TimerModel model(cfg.timer, cfg.seed);
    const LossHistory history = pretrain(model, corpora, cfg.pretrain);

    fs::create_directories(cfg.checkpoint_dir);
    fs::create_directories(cfg.report_dir);
    const std::string ckpt = cfg.checkpoint_dir + "/timer.ckpt";
    save_teacher(ckpt, model);

    const std::string loss_csv = cfg.report_dir + "/pretrain_loss.csv";
    std::ofstream out(loss_csv, std::ios::trunc);
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < history.epoch_mean.size(); ++e) {
        out << (e + 1) << ',' << fmt_double(history.epoch_mean[e]) << "\n";
    }
    if (!out) throw std::runtime_error("pretrain: write failed: " + loss_csv);

    std::vector<std::string> inputs;
    for (const auto& n : corpora_names) inputs.push_back(corpus_csv(cfg, n));
    write_run_manifest(cfg.checkpoint_dir + "/timer.manifest", "pretrain", cfg, inputs,
                       {{"output", ckpt}, {"output", loss_csv}});
    std::printf("pretrain: %zu corpora, final loss %.6f -> %s\n", corpora.size(),
                history.epoch_mean.empty() ? 0.0 : history.epoch_mean.back(), ckpt.c_str());
    return 0;
}

// -------------------------------------------------------------- finetune

int run_finetune(const RunConfig& cfg, const std::string& teacher_path,
                 const std::vector<std::string>& corpora_names) {
    require_file(teacher_path);
    const std::vector<Corpus> corpora = load_corpora(cfg, corpora_names);
    TimerModel model = load_teacher(teacher_path);

    LoraSet lora(model, cfg.lora, cfg.lora_seed);
    const FinetuneHistory history = finetune(model, lora, corpora, cfg.finetune);

    fs::create_directories(cfg.checkpoint_dir);
    fs::create_directories(cfg.report_dir);
    const std::string adapters = cfg.checkpoint_dir + "/timer_adapters.ckpt";
    lora.save_adapters(adapters);
    lora.merge();
    const std::string merged = cfg.checkpoint_dir + "/timer_finetuned.ckpt";
    save_teacher(merged, model);

    const std::string hist_csv = cfg.report_dir + "/finetune_history.csv";
    save_history_csv(hist_csv, history);

    std::vector<std::string> inputs = {teacher_path};
    for (const auto& n : corpora_names) inputs.push_back(corpus_csv(cfg, n));
    write_run_manifest(cfg.checkpoint_dir + "/timer_finetuned.manifest", "finetune", cfg, inputs,
                       {{"output", merged}, {"output", adapters}, {"output", hist_csv}});
    std::printf("finetune: %zu corpora -> %s (adapters kept at %s)\n", corpora.size(),
                merged.c_str(), adapters.c_str());
    return 0;
}

// --------------------------------------------------------------- distill

int run_distill(const RunConfig& cfg, const std::string& teacher_path,
                const std::vector<std::string>& corpora_names, bool vanilla) {
    std::vector<Corpus> corpora;
    for (Corpus& c : load_corpora(cfg, corpora_names)) {
        Corpus filtered = cccv_only(std::move(c));
        if (!filtered.series.empty()) corpora.push_back(std::move(filtered));
    }
    if (corpora.empty()) throw std::runtime_error("distill: no cccv series in training corpora");

    ExpertModel student(cfg.expert, cfg.seed);
    const std::string regime = vanilla ? "vanilla" : "distilled";
    std::vector<std::string> inputs;
    for (const auto& n : corpora_names) inputs.push_back(corpus_csv(cfg, n));

    StudentHistory history;
    if (vanilla) {
        StudentTrainConfig st = cfg.student;
        history = supervised_train(student, corpora, st);
    } else {
        require_file(teacher_path);
        TimerModel teacher = load_teacher(teacher_path);
        history = distill(teacher, student, corpora, cfg.distill);
        inputs.insert(inputs.begin(), teacher_path);
    }

    fs::create_directories(cfg.checkpoint_dir);
    const std::string stem = expert_kind_name(cfg.expert.kind) + "_" + regime;
    const std::string ckpt = cfg.checkpoint_dir + "/" + stem + ".ckpt";
    save_expert(ckpt, student);
    if (!vanilla) {
        save_distill_manifest(cfg.checkpoint_dir + "/" + stem + ".distill.manifest", student,
                              cfg.distill, teacher_path, join(corpora_names, ","));
    }
    write_run_manifest(cfg.checkpoint_dir + "/" + stem + ".manifest", "distill", cfg, inputs,
                       {{"output", ckpt}, {"regime", regime}});
    std::printf("distill: %s %s, final loss %.6f -> %s\n", regime.c_str(),
                expert_kind_name(cfg.expert.kind).c_str(),
                history.epoch_mean.empty() ? 0.0 : history.epoch_mean.back(), ckpt.c_str());
    return 0;
}

// -------------------------------------------------------------- evaluate

int run_evaluate(const RunConfig& cfg, const std::string& checkpoint, std::string tag,
                 const std::string& regime) {
    if (tag.empty()) tag = stem_of(checkpoint);
    LoadedModel model = load_any_model(cfg, checkpoint);
    const Corpus corpus = load_named_corpus(cfg, cfg.eval_corpus);

    EvalConfig ec{cfg.eval_context, cfg.eval_horizon, cfg.eval_stride};
    const std::optional<Protocol> filter = protocol_filter(cfg);
    const ForecastDump dump = collect_forecasts(model.forecaster(), corpus, filter, ec);

    MetricReport r = metrics(dump.y, dump.y_hat);
    double mvr_sum = 0.0;
    for (double v : dump.window_mvr) mvr_sum += v;
    r.mvr = mvr_sum / static_cast<double>(dump.window_mvr.size());
    r.n_windows = dump.window_mvr.size();
    r.protocol = cfg.eval_protocol;
    r.model = model.kind;
    r.regime = regime;

    fs::create_directories(cfg.report_dir);
    const std::string metrics_path = cfg.report_dir + "/metrics_" + tag + ".tsv";
    const std::string pred_path = cfg.report_dir + "/predictions_" + tag + ".csv";
    save_metric_reports(metrics_path, {r});
    save_predictions_csv(pred_path, dump.y, dump.y_hat);
    write_run_manifest(cfg.report_dir + "/evaluate_" + tag + ".manifest", "evaluate", cfg,
                       {checkpoint, corpus_csv(cfg, cfg.eval_corpus)},
                       {{"output", metrics_path},
                        {"output", pred_path},
                        {"model", r.model},
                        {"regime", regime},
                        {"n_windows", std::to_string(r.n_windows)}});
    std::printf("evaluate: %s on %s/%s: mae %.6f rmse %.6f mvr %.4f (%zu windows)\n",
                tag.c_str(), cfg.eval_corpus.c_str(), cfg.eval_protocol.c_str(), r.mae, r.rmse,
                r.mvr, r.n_windows);
    return 0;
}

// ------------------------------------------------------------------ lobo

int run_lobo(const RunConfig& cfg, const std::string& teacher_path,
             const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    require_file(teacher_path);
    const std::vector<std::string> names = default_family_names();
    const std::vector<Corpus> families = load_corpora(cfg, names);
    const Corpus test = load_named_corpus(cfg, cfg.eval_corpus);
    const TimerModel base = load_teacher(teacher_path);

    fs::create_directories(cfg.report_dir);
    auto seed_path = [&cfg](std::uint64_t s) {
        return cfg.report_dir + "/lobo_seed_" + std::to_string(s) + ".tsv";
    };

    std::vector<std::function<int()>> work;
    for (std::uint64_t s : seeds) {
        work.push_back([&, s]() {
            LoboConfig lc;
            lc.lora = cfg.lora;
            lc.lora_seed = s;
            lc.finetune = cfg.finetune;
            lc.finetune.seed = s;
            lc.eval = EvalConfig{cfg.eval_context, cfg.eval_horizon, cfg.eval_stride};
            lc.protocol = protocol_filter(cfg);
            const std::vector<LoboRow> rows = lobo(base, families, test, lc);
            std::vector<MetricReport> reports;
            for (const auto& row : rows) reports.push_back(row.report);
            save_metric_reports(seed_path(s), reports);
            std::printf("lobo: seed %llu done (%zu variants)\n",
                        static_cast<unsigned long long>(s), rows.size());
            return 0;
        });
    }
    const int rc = run_parallel(work, jobs);
    if (rc != 0) return rc;

    // variant -> per-seed mae, in the library's row order (full first)
    std::vector<std::string> variants;
    std::vector<std::vector<double>> maes;
    for (std::uint64_t s : seeds) {
        const std::vector<MetricReport> reports = load_metric_reports(seed_path(s));
        if (variants.empty()) {
            for (const auto& r : reports) variants.push_back(r.regime);
            maes.assign(variants.size(), {});
        }
        for (std::size_t i = 0; i < reports.size(); ++i) maes[i].push_back(reports[i].mae);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double full_median = median(maes[0]);

    const std::string summary = cfg.report_dir + "/lobo_summary.csv";
    std::ofstream out(summary, std::ios::trunc);
    out << "variant,median_mae,delta_vs_full\n";
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const double m = median(maes[i]);
        out << variants[i] << ',' << fmt_double(m) << ',' << fmt_double(m - full_median) << "\n";
    }
    if (!out) throw std::runtime_error("lobo: write failed: " + summary);

    std::vector<std::string> inputs = {teacher_path, corpus_csv(cfg, cfg.eval_corpus)};
    for (const auto& n : names) inputs.push_back(corpus_csv(cfg, n));
    std::vector<std::pair<std::string, std::string>> extra = {{"output", summary}};
    for (std::uint64_t s : seeds) {
        extra.emplace_back("output", seed_path(s));
        extra.emplace_back("seed_run", std::to_string(s));
    }
    write_run_manifest(cfg.report_dir + "/lobo.manifest", "lobo", cfg, inputs, extra);
    std::printf("lobo: %zu seeds x %zu variants -> %s\n", seeds.size(), variants.size(),
                summary.c_str());
    return 0;
}

// ---------------------------------------------------------------- ablate

struct GridPoint {
    std::string label;
    LoraConfig lora;
    float lambda_trend;
};

std::vector<GridPoint> build_grid(const RunConfig& cfg) {
    std::vector<GridPoint> grid;
    auto base_point = [&cfg](std::string label) {
        return GridPoint{std::move(label), cfg.lora, cfg.finetune.lambda_trend};
    };
    if (cfg.ablate_axis == "positions") {
        const std::vector<std::pair<std::string, std::vector<std::string>>> subsets = {
            {"q", {"q_proj"}},
            {"k", {"k_proj"}},
            {"v", {"v_proj"}},
            {"qk", {"q_proj", "k_proj"}},
            {"qv", {"q_proj", "v_proj"}},
            {"kv", {"k_proj", "v_proj"}},
            {"qkv", {"q_proj", "k_proj", "v_proj"}},
        };
        for (const auto& [label, targets] : subsets) {
            GridPoint p = base_point(label);
            p.lora.targets = targets;
            grid.push_back(std::move(p));
        }
    } else if (cfg.ablate_axis == "rank") {
        for (std::size_t r : {2, 4, 8, 16}) {
            GridPoint p = base_point(std::to_string(r));
            p.lora.rank = r;
            grid.push_back(std::move(p));
        }
    } else if (cfg.ablate_axis == "alpha") {
        for (float a : {4.0f, 16.0f, 32.0f}) {
            GridPoint p = base_point(fmt_label(a));
            p.lora.alpha = a;
            grid.push_back(std::move(p));
        }
    } else {  // lambda
        for (float l : {0.0f, 0.02f, 0.1f, 0.5f}) {
            GridPoint p = base_point(fmt_label(l));
            p.lambda_trend = l;
            grid.push_back(std::move(p));
        }
    }
    return grid;
}

int run_ablate(const RunConfig& cfg, const std::string& teacher_path,
               const std::vector<std::string>& corpora_names, std::size_t jobs) {
    require_file(teacher_path);
    const std::vector<Corpus> corpora = load_corpora(cfg, corpora_names);
    const Corpus eval_corpus = load_named_corpus(cfg, cfg.eval_corpus);
    const TimerModel base = load_teacher(teacher_path);
    const std::vector<GridPoint> grid = build_grid(cfg);

    const std::string dir = cfg.report_dir + "/ablate_" + cfg.ablate_axis;
    fs::create_directories(dir);
    auto point_path = [&dir](const std::string& label) { return dir + "/" + label + ".tsv"; };

    std::vector<std::function<int()>> work;
    for (const GridPoint& p : grid) {
        work.push_back([&, p]() {
            // clone the pretrained weights; each worker owns its copy
            TimerModel model(base.config(), 0);
            const auto src = base.params();
            auto dst = model.params();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
            LoraSet lora(model, p.lora, cfg.lora_seed);
            FinetuneConfig ft = cfg.finetune;
            ft.epochs = cfg.ablate_epochs;
            ft.lambda_trend = p.lambda_trend;
            finetune(model, lora, corpora, ft);
            lora.set_training(false);

            EvalConfig ec{cfg.eval_context, cfg.eval_horizon, cfg.eval_stride};
            MetricReport r =
                evaluate_protocol(forecaster_of(model), eval_corpus, protocol_filter(cfg), ec);
            r.model = "timer_lora";
            r.regime = p.label;
            save_metric_reports(point_path(p.label), {r});
            std::printf("ablate: %s=%s mae %.6f rmse %.6f mvr %.4f\n", cfg.ablate_axis.c_str(),
                        p.label.c_str(), r.mae, r.rmse, r.mvr);
            return 0;
        });
    }
    const int rc = run_parallel(work, jobs);
    if (rc != 0) return rc;

    const std::string grid_csv = cfg.report_dir + "/ablate_" + cfg.ablate_axis + ".csv";
    std::ofstream out(grid_csv, std::ios::trunc);
    out << "value,mae,rmse,mvr\n";
    for (const GridPoint& p : grid) {
        const std::vector<MetricReport> reports = load_metric_reports(point_path(p.label));
        out << p.label << ',' << fmt_double(reports[0].mae) << ',' << fmt_double(reports[0].rmse)
            << ',' << fmt_double(reports[0].mvr) << "\n";
    }
    if (!out) throw std::runtime_error("ablate: write failed: " + grid_csv);

    std::vector<std::string> inputs = {teacher_path, corpus_csv(cfg, cfg.eval_corpus)};
    for (const auto& n : corpora_names) inputs.push_back(corpus_csv(cfg, n));
    std::vector<std::pair<std::string, std::string>> extra = {{"output", grid_csv},
                                                              {"axis", cfg.ablate_axis}};
    for (const GridPoint& p : grid) extra.emplace_back("output", point_path(p.label));
    write_run_manifest(cfg.report_dir + "/ablate_" + cfg.ablate_axis + ".manifest", "ablate",
                       cfg, inputs, extra);
    std::printf("ablate: axis %s, %zu points -> %s\n", cfg.ablate_axis.c_str(), grid.size(),
                grid_csv.c_str());
    return 0;
}

// --------------------------------------------------------------- explain

int run_explain(const RunConfig& cfg, const std::string& checkpoint, std::string tag) {
    if (tag.empty()) tag = stem_of(checkpoint);
    LoadedModel model = load_any_model(cfg, checkpoint);
    const Corpus corpus = load_named_corpus(cfg, cfg.eval_corpus);

    std::vector<WindowPair> windows;
    for (const CapacitySeries& s : corpus.series) {
        for (WindowPair& w : make_windows(s, cfg.eval_context, cfg.eval_horizon, cfg.eval_stride)) {
            if (windows.size() >= cfg.lime_windows) break;
            windows.push_back(std::move(w));
        }
        if (windows.size() >= cfg.lime_windows) break;
    }
    if (windows.empty()) throw std::runtime_error("explain: no windows in " + cfg.eval_corpus);

    const AttributionMatrix m = attribute_model(model.forecaster(), windows, cfg.lime);

    fs::create_directories(cfg.report_dir);
    const std::string csv = cfg.report_dir + "/attributions_" + tag + ".csv";
    const std::string svg = cfg.report_dir + "/attributions_" + tag + ".svg";
    save_attribution_csv(csv, m);
    save_attribution_svg(svg, m, tag + " lookback attributions");
    write_run_manifest(cfg.report_dir + "/explain_" + tag + ".manifest", "explain", cfg,
                       {checkpoint, corpus_csv(cfg, cfg.eval_corpus)},
                       {{"output", csv},
                        {"output", svg},
                        {"windows", std::to_string(windows.size())}});
    std::printf("explain: %s, %zu windows -> %s\n", tag.c_str(), windows.size(), csv.c_str());
    return 0;
}

// --------------------------------------------------------------- rollout

int run_rollout(const RunConfig& cfg, const std::string& checkpoint, std::string tag) {
    if (tag.empty()) tag = stem_of(checkpoint);
    LoadedModel model = load_any_model(cfg, checkpoint);
    const Corpus corpus = load_named_corpus(cfg, cfg.eval_corpus);
    if (cfg.rollout_cell >= corpus.series.size()) {
        throw std::runtime_error("rollout: cell index " + std::to_string(cfg.rollout_cell) +
                                 " out of range for " + cfg.eval_corpus);
    }
    const CapacitySeries& series = corpus.series[cfg.rollout_cell];
    if (series.size() < cfg.eval_context + 2) {
        throw std::runtime_error("rollout: series too short for the context window");
    }

    const std::vector<double> context(series.capacity.begin(),
                                      series.capacity.begin() + cfg.eval_context);
    const std::size_t avail = series.size() - cfg.eval_context;
    const std::vector<double> truth(series.capacity.begin() + cfg.eval_context,
                                    series.capacity.begin() + cfg.eval_context +
                                        std::min(avail, cfg.rollout_total));

    const std::vector<double> forecast =
        recursive_forecast(model.forecaster(), context, cfg.rollout_total, cfg.rollout_base);
    const RolloutReport report = smoothing_diagnostics(forecast, cfg.rollout_base);

    fs::create_directories(cfg.report_dir);
    const std::string csv = cfg.report_dir + "/rollout_" + tag + ".csv";
    const std::string svg = cfg.report_dir + "/rollout_" + tag + ".svg";
    const std::string rep = cfg.report_dir + "/rollout_" + tag + ".report";
    save_rollout_csv(csv, truth, forecast);
    save_rollout_svg(svg, truth, forecast, cfg.rollout_base, tag + " rollout");
    save_rollout_report(rep, report,
                        {{"checkpoint", checkpoint},
                         {"corpus", cfg.eval_corpus},
                         {"cell", std::to_string(cfg.rollout_cell)},
                         {"seed", std::to_string(cfg.seed)}});
    write_run_manifest(cfg.report_dir + "/rollout_" + tag + ".manifest", "rollout", cfg,
                       {checkpoint, corpus_csv(cfg, cfg.eval_corpus)},
                       {{"output", csv}, {"output", svg}, {"output", rep}});
    std::printf("rollout: %s cell %zu, %zu steps, flattening %s\n", tag.c_str(),
                cfg.rollout_cell, forecast.size(),
                report.ratio_defined ? fmt_double(report.flattening_ratio).c_str() : "missing");
    return 0;
}

// ---------------------------------------------------------------- report

int run_report(const RunConfig& cfg) {
    if (!fs::exists(cfg.report_dir)) throw MissingInput("missing input: " + cfg.report_dir);

    std::vector<std::string> metric_files, prediction_files, attribution_files, rollout_files;
    for (const auto& entry : fs::directory_iterator(cfg.report_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".tsv") {
            metric_files.push_back(entry.path().string());
        } else if (name.rfind("predictions_", 0) == 0 && entry.path().extension() == ".csv") {
            prediction_files.push_back(entry.path().string());
        } else if (name.rfind("attributions_", 0) == 0 && entry.path().extension() == ".csv") {
            attribution_files.push_back(entry.path().string());
        } else if (name.rfind("rollout_", 0) == 0 && entry.path().extension() == ".csv") {
            rollout_files.push_back(entry.path().string());
        }
    }
    std::sort(metric_files.begin(), metric_files.end());
    std::sort(prediction_files.begin(), prediction_files.end());
    std::sort(attribution_files.begin(), attribution_files.end());
    std::sort(rollout_files.begin(), rollout_files.end());

    std::vector<std::pair<std::string, std::string>> outputs;
    if (!metric_files.empty()) {
        std::vector<MetricReport> all;
        for (const auto& f : metric_files) {
            for (MetricReport& r : load_metric_reports(f)) all.push_back(std::move(r));
        }
        const std::string cmp = cfg.report_dir + "/comparison.csv";
        save_comparison_csv(cmp, all);
        outputs.emplace_back("output", cmp);
    }
    for (const auto& f : prediction_files) {
        const auto [y, y_hat] = load_predictions_csv(f);
        std::string tag = stem_of(f).substr(std::string("predictions_").size());
        const std::string svg = cfg.report_dir + "/scatter_" + tag + ".svg";
        save_scatter_svg(svg, y, y_hat, tag + " prediction vs truth");
        outputs.emplace_back("output", svg);
    }
    for (const auto& f : attribution_files) {
        const AttributionMatrix m = load_attribution_csv(f);
        std::string tag = stem_of(f).substr(std::string("attributions_").size());
        const std::string svg = cfg.report_dir + "/attributions_" + tag + ".svg";
        save_attribution_svg(svg, m, tag + " lookback attributions");
        outputs.emplace_back("output", svg);
    }
    for (const auto& f : rollout_files) {
        const auto [truth, forecast] = load_rollout_csv(f);
        std::string tag = stem_of(f).substr(std::string("rollout_").size());
        const std::string svg = cfg.report_dir + "/rollout_" + tag + ".svg";
        save_rollout_svg(svg, truth, forecast, cfg.rollout_base, tag + " rollout");
        outputs.emplace_back("output", svg);
    }

    std::vector<std::string> inputs;
    inputs.insert(inputs.end(), metric_files.begin(), metric_files.end());
    inputs.insert(inputs.end(), prediction_files.begin(), prediction_files.end());
    inputs.insert(inputs.end(), attribution_files.begin(), attribution_files.end());
    inputs.insert(inputs.end(), rollout_files.begin(), rollout_files.end());
    write_run_manifest(cfg.report_dir + "/report.manifest", "report", cfg, inputs, outputs);
    std::printf("report: %zu metric files, %zu scatters, %zu heatmaps, %zu rollouts\n",
                metric_files.size(), prediction_files.size(), attribution_files.size(),
                rollout_files.size());
    return 0;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw ConfigError("seed list is empty: '" + text + "'");
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"battery capacity degradation forecasting pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    bool no_env = false;
    app.add_option("--config", config_path, "key-value config file");
    app.add_option("--set", overrides, "config override, key=value (repeatable)");
    app.add_flag("--no-env", no_env, "ignore CAPFOR_* environment overrides");

    auto* synth = app.add_subcommand("synth", "generate the four synthetic corpora");

    auto* ingest = app.add_subcommand("ingest", "import a capacity csv as a corpus");
    std::string ingest_input, ingest_family, ingest_name;
    ingest->add_option("--input", ingest_input, "csv with cell_id,protocol,cycle,capacity_ah")
        ->required();
    ingest->add_option("--family", ingest_family, "corpus family tag")->required();
    ingest->add_option("--name", ingest_name, "corpus name (default: family name)");

    std::vector<std::string> corpora_names;
    auto add_corpora_opt = [&corpora_names](CLI::App* cmd) {
        cmd->add_option("--corpora", corpora_names,
                        "training corpus names (default: all four families)");
    };

    auto* pretrain_cmd = app.add_subcommand("pretrain", "train the segment-token teacher");
    add_corpora_opt(pretrain_cmd);

    std::string teacher_path;
    auto* finetune_cmd = app.add_subcommand("finetune", "adapter fine-tuning with trend penalty");
    add_corpora_opt(finetune_cmd);
    finetune_cmd->add_option("--teacher", teacher_path, "teacher checkpoint");

    auto* distill_cmd = app.add_subcommand("distill", "train a compact student");
    add_corpora_opt(distill_cmd);
    distill_cmd->add_option("--teacher", teacher_path, "teacher checkpoint");
    bool vanilla = false;
    distill_cmd->add_flag("--vanilla", vanilla, "supervised training, no teacher");

    std::string checkpoint, tag, regime = "zero_shot";
    auto* evaluate_cmd = app.add_subcommand("evaluate", "window-protocol metrics");
    evaluate_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    evaluate_cmd->add_option("--tag", tag, "artifact tag (default: checkpoint stem)");
    evaluate_cmd->add_option("--regime", regime, "regime label in the metric record");

    std::string seeds_text = "1,2,3";
    std::size_t jobs = 0;
    auto* lobo_cmd = app.add_subcommand("lobo", "leave-one-battery-out harness");
    lobo_cmd->add_option("--teacher", teacher_path, "teacher checkpoint");
    lobo_cmd->add_option("--seeds", seeds_text, "comma-separated seeds (default 1,2,3)");
    lobo_cmd->add_option("--jobs", jobs, "max parallel workers (default: cpu count)");

    auto* ablate_cmd = app.add_subcommand("ablate", "hyperparameter grid on one axis");
    add_corpora_opt(ablate_cmd);
    ablate_cmd->add_option("--teacher", teacher_path, "teacher checkpoint");
    ablate_cmd->add_option("--jobs", jobs, "max parallel workers (default: cpu count)");

    auto* explain_cmd = app.add_subcommand("explain", "local surrogate attributions");
    explain_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    explain_cmd->add_option("--tag", tag, "artifact tag (default: checkpoint stem)");

    auto* rollout_cmd = app.add_subcommand("rollout", "long-horizon recursive forecast");
    rollout_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    rollout_cmd->add_option("--tag", tag, "artifact tag (default: checkpoint stem)");

    auto* report_cmd = app.add_subcommand("report", "re-render tables and plots from artifacts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_run_config(config_path);
        if (!no_env) apply_env_overrides(cfg);
        for (const std::string& kv : overrides) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("--set expects key=value, got '" + kv + "'");
            }
            apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    }

    if (corpora_names.empty()) corpora_names = default_family_names();
    if (teacher_path.empty()) {
        teacher_path = cfg.checkpoint_dir +
                       (distill_cmd->parsed() ? "/timer_finetuned.ckpt" : "/timer.ckpt");
    }

    try {
        if (synth->parsed()) return run_synth(cfg);
        if (ingest->parsed()) return run_ingest(cfg, ingest_input, ingest_family, ingest_name);
        if (pretrain_cmd->parsed()) return run_pretrain(cfg, corpora_names);
        if (finetune_cmd->parsed()) return run_finetune(cfg, teacher_path, corpora_names);
        if (distill_cmd->parsed()) return run_distill(cfg, teacher_path, corpora_names, vanilla);
        if (evaluate_cmd->parsed()) return run_evaluate(cfg, checkpoint, tag, regime);
        if (lobo_cmd->parsed()) return run_lobo(cfg, teacher_path, parse_seed_list(seeds_text), jobs);
        if (ablate_cmd->parsed()) return run_ablate(cfg, teacher_path, corpora_names, jobs);
        if (explain_cmd->parsed()) return run_explain(cfg, checkpoint, tag);
        if (rollout_cmd->parsed()) return run_rollout(cfg, checkpoint, tag);
        if (report_cmd->parsed()) return run_report(cfg);
    } catch (const MissingInput& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitMissingInput;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitCheckpoint;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;  // unreachable: a subcommand is required
}

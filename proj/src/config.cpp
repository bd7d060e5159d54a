#include "capfor/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace capfor {

const char* const kVersion = "0.1.0";

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty() || v[0] == '-') bad_value(key, value, "a non-negative integer");
    errno = 0;
    char* end = nullptr;
    unsigned long long r = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, value, "a non-negative integer");
    return static_cast<std::uint64_t>(r);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(parse_u64(key, value));
}

int parse_int(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty()) bad_value(key, value, "an integer");
    errno = 0;
    char* end = nullptr;
    long r = std::strtol(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, value, "an integer");
    return static_cast<int>(r);
}

double parse_f64(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty()) bad_value(key, value, "a number");
    errno = 0;
    char* end = nullptr;
    double r = std::strtod(v.c_str(), &end);
    if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, value, "a number");
    return r;
}

float parse_f32(const std::string& key, const std::string& value) {
    return static_cast<float>(parse_f64(key, value));
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, value, "a bool (true/false/1/0)");
}

std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
std::string fmt_size(std::size_t v) { return std::to_string(v); }
std::string fmt_int(int v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

// %.9g round-trips every finite f32; %.17g does the same for f64.
std::string fmt_f32(float v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> parse_list(const std::string& key, const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(trim(value));
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_value(key, value, "a comma-separated list");
        out.push_back(item);
    }
    if (out.empty()) bad_value(key, value, "a comma-separated list");
    return out;
}

std::string fmt_list(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += v[i];
    }
    return out;
}

std::string parse_choice(const std::string& key, const std::string& value,
                         const std::vector<std::string>& allowed) {
    const std::string v = trim(value);
    if (std::find(allowed.begin(), allowed.end(), v) != allowed.end()) return v;
    bad_value(key, value, "one of {" + fmt_list(allowed) + "}");
}

struct KeyEntry {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;  // value already trimmed
    std::function<std::string(const RunConfig&)> get;
};

// Every recognized key with its reader and writer. Sorted once at startup;
// serialization order and config_keys() both come from here.
const std::vector<KeyEntry>& registry() {
    static const std::vector<KeyEntry> table = [] {
        std::vector<KeyEntry> t;
        auto add = [&t](std::string key, std::function<void(RunConfig&, const std::string&)> set,
                        std::function<std::string(const RunConfig&)> get) {
            t.push_back({std::move(key), std::move(set), std::move(get)});
        };

        add("seed",
            [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.seed); });
        add("data_dir",
            [](RunConfig& c, const std::string& v) { c.data_dir = v; },
            [](const RunConfig& c) { return c.data_dir; });
        add("checkpoint_dir",
            [](RunConfig& c, const std::string& v) { c.checkpoint_dir = v; },
            [](const RunConfig& c) { return c.checkpoint_dir; });
        add("report_dir",
            [](RunConfig& c, const std::string& v) { c.report_dir = v; },
            [](const RunConfig& c) { return c.report_dir; });

        add("synth.cells",
            [](RunConfig& c, const std::string& v) { c.synth_cells = parse_size("synth.cells", v); },
            [](const RunConfig& c) { return fmt_size(c.synth_cells); });
        add("synth.cycles",
            [](RunConfig& c, const std::string& v) { c.synth_cycles = parse_size("synth.cycles", v); },
            [](const RunConfig& c) { return fmt_size(c.synth_cycles); });

        add("timer.s",
            [](RunConfig& c, const std::string& v) { c.timer.S = parse_size("timer.s", v); },
            [](const RunConfig& c) { return fmt_size(c.timer.S); });
        add("timer.d",
            [](RunConfig& c, const std::string& v) { c.timer.D = parse_size("timer.d", v); },
            [](const RunConfig& c) { return fmt_size(c.timer.D); });
        add("timer.n_layers",
            [](RunConfig& c, const std::string& v) { c.timer.n_layers = parse_size("timer.n_layers", v); },
            [](const RunConfig& c) { return fmt_size(c.timer.n_layers); });
        add("timer.n_heads",
            [](RunConfig& c, const std::string& v) { c.timer.n_heads = parse_size("timer.n_heads", v); },
            [](const RunConfig& c) { return fmt_size(c.timer.n_heads); });
        add("timer.d_ff",
            [](RunConfig& c, const std::string& v) { c.timer.d_ff = parse_size("timer.d_ff", v); },
            [](const RunConfig& c) { return fmt_size(c.timer.d_ff); });
        add("timer.max_tokens",
            [](RunConfig& c, const std::string& v) { c.timer.max_tokens = parse_size("timer.max_tokens", v); },
            [](const RunConfig& c) { return fmt_size(c.timer.max_tokens); });
        add("timer.temporal_embedding",
            [](RunConfig& c, const std::string& v) {
                c.timer.temporal_embedding = parse_bool("timer.temporal_embedding", v);
            },
            [](const RunConfig& c) { return fmt_bool(c.timer.temporal_embedding); });

        add("pretrain.epochs",
            [](RunConfig& c, const std::string& v) { c.pretrain.epochs = parse_size("pretrain.epochs", v); },
            [](const RunConfig& c) { return fmt_size(c.pretrain.epochs); });
        add("pretrain.batch",
            [](RunConfig& c, const std::string& v) { c.pretrain.batch = parse_size("pretrain.batch", v); },
            [](const RunConfig& c) { return fmt_size(c.pretrain.batch); });
        add("pretrain.lr",
            [](RunConfig& c, const std::string& v) { c.pretrain.lr = parse_f32("pretrain.lr", v); },
            [](const RunConfig& c) { return fmt_f32(c.pretrain.lr); });
        add("pretrain.stride",
            [](RunConfig& c, const std::string& v) { c.pretrain.stride = parse_size("pretrain.stride", v); },
            [](const RunConfig& c) { return fmt_size(c.pretrain.stride); });
        add("pretrain.window_tokens",
            [](RunConfig& c, const std::string& v) {
                c.pretrain.window_tokens = parse_size("pretrain.window_tokens", v);
            },
            [](const RunConfig& c) { return fmt_size(c.pretrain.window_tokens); });
        add("pretrain.seed",
            [](RunConfig& c, const std::string& v) { c.pretrain.seed = parse_u64("pretrain.seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.pretrain.seed); });

        add("lora.rank",
            [](RunConfig& c, const std::string& v) { c.lora.rank = parse_size("lora.rank", v); },
            [](const RunConfig& c) { return fmt_size(c.lora.rank); });
        add("lora.alpha",
            [](RunConfig& c, const std::string& v) { c.lora.alpha = parse_f32("lora.alpha", v); },
            [](const RunConfig& c) { return fmt_f32(c.lora.alpha); });
        add("lora.dropout",
            [](RunConfig& c, const std::string& v) { c.lora.dropout = parse_f32("lora.dropout", v); },
            [](const RunConfig& c) { return fmt_f32(c.lora.dropout); });
        add("lora.targets",
            [](RunConfig& c, const std::string& v) { c.lora.targets = parse_list("lora.targets", v); },
            [](const RunConfig& c) { return fmt_list(c.lora.targets); });
        add("lora.seed",
            [](RunConfig& c, const std::string& v) { c.lora_seed = parse_u64("lora.seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.lora_seed); });

        add("finetune.epochs",
            [](RunConfig& c, const std::string& v) { c.finetune.epochs = parse_int("finetune.epochs", v); },
            [](const RunConfig& c) { return fmt_int(c.finetune.epochs); });
        add("finetune.batch",
            [](RunConfig& c, const std::string& v) { c.finetune.batch = parse_size("finetune.batch", v); },
            [](const RunConfig& c) { return fmt_size(c.finetune.batch); });
        add("finetune.lr",
            [](RunConfig& c, const std::string& v) { c.finetune.lr = parse_f32("finetune.lr", v); },
            [](const RunConfig& c) { return fmt_f32(c.finetune.lr); });
        add("finetune.lambda_trend",
            [](RunConfig& c, const std::string& v) {
                c.finetune.lambda_trend = parse_f32("finetune.lambda_trend", v);
            },
            [](const RunConfig& c) { return fmt_f32(c.finetune.lambda_trend); });
        add("finetune.context",
            [](RunConfig& c, const std::string& v) {
                c.finetune.context_steps = parse_size("finetune.context", v);
            },
            [](const RunConfig& c) { return fmt_size(c.finetune.context_steps); });
        add("finetune.horizon",
            [](RunConfig& c, const std::string& v) {
                c.finetune.horizon_steps = parse_size("finetune.horizon", v);
            },
            [](const RunConfig& c) { return fmt_size(c.finetune.horizon_steps); });
        add("finetune.stride",
            [](RunConfig& c, const std::string& v) { c.finetune.stride = parse_size("finetune.stride", v); },
            [](const RunConfig& c) { return fmt_size(c.finetune.stride); });
        add("finetune.seed",
            [](RunConfig& c, const std::string& v) { c.finetune.seed = parse_u64("finetune.seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.finetune.seed); });

        add("distill.temperature",
            [](RunConfig& c, const std::string& v) {
                c.distill.temperature = parse_f32("distill.temperature", v);
            },
            [](const RunConfig& c) { return fmt_f32(c.distill.temperature); });
        add("distill.alpha",
            [](RunConfig& c, const std::string& v) { c.distill.alpha = parse_f32("distill.alpha", v); },
            [](const RunConfig& c) { return fmt_f32(c.distill.alpha); });
        add("distill.epochs",
            [](RunConfig& c, const std::string& v) { c.distill.epochs = parse_int("distill.epochs", v); },
            [](const RunConfig& c) { return fmt_int(c.distill.epochs); });
        add("distill.batch",
            [](RunConfig& c, const std::string& v) { c.distill.batch = parse_size("distill.batch", v); },
            [](const RunConfig& c) { return fmt_size(c.distill.batch); });
        add("distill.lr",
            [](RunConfig& c, const std::string& v) { c.distill.lr = parse_f32("distill.lr", v); },
            [](const RunConfig& c) { return fmt_f32(c.distill.lr); });
        add("distill.stride",
            [](RunConfig& c, const std::string& v) { c.distill.stride = parse_size("distill.stride", v); },
            [](const RunConfig& c) { return fmt_size(c.distill.stride); });
        add("distill.seed",
            [](RunConfig& c, const std::string& v) { c.distill.seed = parse_u64("distill.seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.distill.seed); });
        add("distill.strict_protocol",
            [](RunConfig& c, const std::string& v) {
                c.distill.strict_protocol = parse_bool("distill.strict_protocol", v);
            },
            [](const RunConfig& c) { return fmt_bool(c.distill.strict_protocol); });

        add("expert.kind",
            [](RunConfig& c, const std::string& v) {
                try {
                    c.expert.kind = parse_expert_kind(trim(v));
                } catch (const std::exception&) {
                    bad_value("expert.kind", v, "one of {linear_decomp,patch_attn,seg_rec}");
                }
            },
            [](const RunConfig& c) { return expert_kind_name(c.expert.kind); });
        add("expert.lookback",
            [](RunConfig& c, const std::string& v) { c.expert.lookback = parse_size("expert.lookback", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.lookback); });
        add("expert.horizon",
            [](RunConfig& c, const std::string& v) { c.expert.horizon = parse_size("expert.horizon", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.horizon); });
        add("expert.ma_window",
            [](RunConfig& c, const std::string& v) { c.expert.ma_window = parse_size("expert.ma_window", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.ma_window); });
        add("expert.patch_len",
            [](RunConfig& c, const std::string& v) { c.expert.patch_len = parse_size("expert.patch_len", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.patch_len); });
        add("expert.d_model",
            [](RunConfig& c, const std::string& v) { c.expert.d_model = parse_size("expert.d_model", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.d_model); });
        add("expert.n_heads",
            [](RunConfig& c, const std::string& v) { c.expert.n_heads = parse_size("expert.n_heads", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.n_heads); });
        add("expert.seg_len",
            [](RunConfig& c, const std::string& v) { c.expert.seg_len = parse_size("expert.seg_len", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.seg_len); });
        add("expert.hidden",
            [](RunConfig& c, const std::string& v) { c.expert.hidden = parse_size("expert.hidden", v); },
            [](const RunConfig& c) { return fmt_size(c.expert.hidden); });

        add("student.epochs",
            [](RunConfig& c, const std::string& v) { c.student.epochs = parse_int("student.epochs", v); },
            [](const RunConfig& c) { return fmt_int(c.student.epochs); });
        add("student.batch",
            [](RunConfig& c, const std::string& v) { c.student.batch = parse_size("student.batch", v); },
            [](const RunConfig& c) { return fmt_size(c.student.batch); });
        add("student.lr",
            [](RunConfig& c, const std::string& v) { c.student.lr = parse_f32("student.lr", v); },
            [](const RunConfig& c) { return fmt_f32(c.student.lr); });
        add("student.stride",
            [](RunConfig& c, const std::string& v) { c.student.stride = parse_size("student.stride", v); },
            [](const RunConfig& c) { return fmt_size(c.student.stride); });
        add("student.seed",
            [](RunConfig& c, const std::string& v) { c.student.seed = parse_u64("student.seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.student.seed); });

        add("eval.context",
            [](RunConfig& c, const std::string& v) { c.eval_context = parse_size("eval.context", v); },
            [](const RunConfig& c) { return fmt_size(c.eval_context); });
        add("eval.horizon",
            [](RunConfig& c, const std::string& v) { c.eval_horizon = parse_size("eval.horizon", v); },
            [](const RunConfig& c) { return fmt_size(c.eval_horizon); });
        add("eval.stride",
            [](RunConfig& c, const std::string& v) { c.eval_stride = parse_size("eval.stride", v); },
            [](const RunConfig& c) { return fmt_size(c.eval_stride); });
        add("eval.protocol",
            [](RunConfig& c, const std::string& v) {
                c.eval_protocol = parse_choice("eval.protocol", v, {"all", "cc", "cccv"});
            },
            [](const RunConfig& c) { return c.eval_protocol; });
        add("eval.corpus",
            [](RunConfig& c, const std::string& v) { c.eval_corpus = trim(v); },
            [](const RunConfig& c) { return c.eval_corpus; });

        add("lime.n_samples",
            [](RunConfig& c, const std::string& v) { c.lime.n_samples = parse_size("lime.n_samples", v); },
            [](const RunConfig& c) { return fmt_size(c.lime.n_samples); });
        add("lime.sigma",
            [](RunConfig& c, const std::string& v) { c.lime.sigma = parse_f64("lime.sigma", v); },
            [](const RunConfig& c) { return fmt_f64(c.lime.sigma); });
        add("lime.ridge",
            [](RunConfig& c, const std::string& v) { c.lime.ridge = parse_f64("lime.ridge", v); },
            [](const RunConfig& c) { return fmt_f64(c.lime.ridge); });
        add("lime.scheme",
            [](RunConfig& c, const std::string& v) {
                try {
                    c.lime.scheme = parse_perturb_scheme(trim(v));
                } catch (const std::exception&) {
                    bad_value("lime.scheme", v, "one of {gaussian,mean_mask}");
                }
            },
            [](const RunConfig& c) { return perturb_scheme_name(c.lime.scheme); });
        add("lime.mask_prob",
            [](RunConfig& c, const std::string& v) { c.lime.mask_prob = parse_f64("lime.mask_prob", v); },
            [](const RunConfig& c) { return fmt_f64(c.lime.mask_prob); });
        add("lime.seed",
            [](RunConfig& c, const std::string& v) { c.lime.seed = parse_u64("lime.seed", v); },
            [](const RunConfig& c) { return fmt_u64(c.lime.seed); });
        add("lime.windows",
            [](RunConfig& c, const std::string& v) { c.lime_windows = parse_size("lime.windows", v); },
            [](const RunConfig& c) { return fmt_size(c.lime_windows); });

        add("rollout.total",
            [](RunConfig& c, const std::string& v) { c.rollout_total = parse_size("rollout.total", v); },
            [](const RunConfig& c) { return fmt_size(c.rollout_total); });
        add("rollout.base",
            [](RunConfig& c, const std::string& v) { c.rollout_base = parse_size("rollout.base", v); },
            [](const RunConfig& c) { return fmt_size(c.rollout_base); });
        add("rollout.cell",
            [](RunConfig& c, const std::string& v) { c.rollout_cell = parse_size("rollout.cell", v); },
            [](const RunConfig& c) { return fmt_size(c.rollout_cell); });

        add("ablate.axis",
            [](RunConfig& c, const std::string& v) {
                c.ablate_axis = parse_choice("ablate.axis", v, {"positions", "rank", "alpha", "lambda"});
            },
            [](const RunConfig& c) { return c.ablate_axis; });
        add("ablate.epochs",
            [](RunConfig& c, const std::string& v) { c.ablate_epochs = parse_int("ablate.epochs", v); },
            [](const RunConfig& c) { return fmt_int(c.ablate_epochs); });

        std::sort(t.begin(), t.end(),
                  [](const KeyEntry& a, const KeyEntry& b) { return a.key < b.key; });
        return t;
    }();
    return table;
}

const KeyEntry* find_entry(const std::string& key) {
    const auto& t = registry();
    auto it = std::lower_bound(t.begin(), t.end(), key,
                               [](const KeyEntry& e, const std::string& k) { return e.key < k; });
    if (it == t.end() || it->key != key) return nullptr;
    return &*it;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& e : registry()) k.push_back(e.key);
        return k;
    }();
    return keys;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    const KeyEntry* e = find_entry(trim(key));
    if (!e) throw ConfigError("unknown key '" + trim(key) + "'");
    e->set(cfg, trim(value));
}

RunConfig parse_config_text(const std::string& text, const RunConfig& base) {
    RunConfig cfg = base;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + body + "'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        try {
            apply_config_entry(cfg, key, value);
        } catch (const ConfigError& err) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + std::string(err.what()));
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config_text(buf.str(), base);
    } catch (const ConfigError& err) {
        throw ConfigError(path + ": " + std::string(err.what()));
    }
}

void apply_env_overrides(RunConfig& cfg) {
    for (const std::string& key : config_keys()) {
        std::string name = "CAPFOR_";
        for (char ch : key) {
            if (ch == '.')
                name += "__";
            else
                name += ch;
        }
        const char* v = std::getenv(name.c_str());
        if (v) apply_config_entry(cfg, key, v);
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& e : registry()) {
        out += e.key;
        out += " = ";
        out += e.get(cfg);
        out += '\n';
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = serialize_config(cfg);
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_run_manifest(const std::string& path, const std::string& subcommand,
                        const RunConfig& cfg, const std::vector<std::string>& inputs,
                        const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_run_manifest: cannot open " + path);
    out << "subcommand=" << subcommand << "\n";
    out << "version=" << kVersion << "\n";
    out << "config_hash=" << config_hash(cfg) << "\n";
    for (const auto& in : inputs) out << "input=" << in << "\n";
    for (const auto& kv : extra) out << kv.first << "=" << kv.second << "\n";
    std::stringstream lines(serialize_config(cfg));
    std::string line;
    while (std::getline(lines, line)) out << "  config." << line << "\n";
    if (!out) throw std::runtime_error("write_run_manifest: write failed: " + path);
}

}  // namespace capfor

#include "capfor/lora.hpp"

#include <stdexcept>

#include "capfor/checkpoint.hpp"

namespace capfor {

namespace {

bool name_matches(const std::string& param_name, const std::string& target) {
    if (param_name == target) return true;
    return param_name.size() > target.size() + 1 &&
           param_name.compare(param_name.size() - target.size(), target.size(), target) == 0 &&
           param_name[param_name.size() - target.size() - 1] == '.';
}

}  // namespace

void LoraConfig::validate() const {
    if (rank < 1) throw std::invalid_argument("LoraConfig: rank must be >= 1");
    if (dropout < 0.0f || dropout >= 1.0f) {
        throw std::invalid_argument("LoraConfig: dropout must be in [0, 1), got " +
                                    std::to_string(dropout));
    }
    if (targets.empty()) throw std::invalid_argument("LoraConfig: no targets");
}

LoraSet::LoraSet(TimerModel& model, LoraConfig cfg, std::uint64_t seed)
    : model_(model), cfg_(std::move(cfg)), dropout_rng_(mix_seed(seed, 0x10a4, 1)) {
    cfg_.validate();
    Rng init_rng(mix_seed(seed, 0x10a4, 0));

    for (const std::string& target : cfg_.targets) {
        bool found = false;
        for (Parameter* p : model_.params()) {
            if (!name_matches(p->name, target)) continue;
            found = true;
            const std::size_t d_out = p->value.rows();
            const std::size_t d_in = p->value.cols();
            Adapter a;
            a.target = p;
            Tensor A({cfg_.rank, d_in});
            fill_normal(A, init_rng, 0.0f, 0.02f);
            a.A = std::make_unique<Parameter>("lora." + p->name + ".A", std::move(A));
            a.B = std::make_unique<Parameter>("lora." + p->name + ".B",
                                              Tensor({d_out, cfg_.rank}));
            adapters_.emplace(p->name, std::move(a));
        }
        if (!found) {
            throw std::invalid_argument("LoraSet: target " + target +
                                        " matches no model parameter");
        }
    }

    for (Parameter* p : model_.params()) p->trainable = false;
    model_.set_projection_hook(
        [this](Graph& g, const std::string& name, Var x, Parameter& w) {
            return apply(g, name, x, w);
        });
}

LoraSet::~LoraSet() {
    if (!merged_) model_.clear_projection_hook();
}

Var LoraSet::adapted_projection(Graph& g, const std::string& param_name, Var x) {
    return apply(g, param_name, x, model_.at(param_name));
}

Var LoraSet::apply(Graph& g, const std::string& name, Var x, Parameter& w) {
    Var base = g.matmul(x, g.transpose(g.param(w)));
    auto it = adapters_.find(name);
    if (it == adapters_.end()) return base;
    Adapter& a = it->second;
    Var branch = x;
    if (training_ && cfg_.dropout > 0.0f) {
        branch = g.dropout(branch, cfg_.dropout, dropout_rng_);
    }
    Var low = g.matmul(branch, g.transpose(g.param(*a.A)));
    Var up = g.matmul(low, g.transpose(g.param(*a.B)));
    const float scaling = cfg_.alpha / static_cast<float>(cfg_.rank);
    return g.add(base, g.scale(up, scaling));
}

std::vector<Parameter*> LoraSet::adapter_params() {
    std::vector<Parameter*> out;
    for (auto& [name, a] : adapters_) {
        out.push_back(a.A.get());
        out.push_back(a.B.get());
    }
    return out;
}

void LoraSet::merge() {
    if (merged_) throw std::logic_error("LoraSet: adapters already merged");
    const float scaling = cfg_.alpha / static_cast<float>(cfg_.rank);
    for (auto& [name, a] : adapters_) {
        Tensor& w = a.target->value;
        const Tensor& A = a.A->value;
        const Tensor& B = a.B->value;
        const std::size_t d_out = w.rows(), d_in = w.cols(), r = cfg_.rank;
        for (std::size_t o = 0; o < d_out; ++o) {
            for (std::size_t i = 0; i < d_in; ++i) {
                double acc = 0.0;
                for (std::size_t k = 0; k < r; ++k) {
                    acc += static_cast<double>(B.at(o, k)) * static_cast<double>(A.at(k, i));
                }
                w.at(o, i) += static_cast<float>(static_cast<double>(scaling) * acc);
            }
        }
    }
    for (Parameter* p : model_.params()) p->trainable = true;
    model_.clear_projection_hook();
    merged_ = true;
}

double LoraSet::trainable_fraction() const {
    std::size_t trainable = 0, total = 0;
    for (Parameter* p : model_.params()) {
        total += p->numel();
        if (p->trainable) trainable += p->numel();
    }
    for (const auto& [name, a] : adapters_) {
        total += a.A->numel() + a.B->numel();
        if (a.A->trainable) trainable += a.A->numel();
        if (a.B->trainable) trainable += a.B->numel();
    }
    return static_cast<double>(trainable) / static_cast<double>(total);
}

void LoraSet::save_adapters(const std::string& path) const {
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, a] : adapters_) {
        tensors.emplace(a.A->name, a.A->value);
        tensors.emplace(a.B->name, a.B->value);
    }
    tensors.emplace("lora.meta",
                    Tensor({3}, {static_cast<float>(cfg_.rank), cfg_.alpha, cfg_.dropout}));
    save_checkpoint(path, tensors);
}

void LoraSet::load_adapters(const std::string& path) {
    auto tensors = load_checkpoint(path);
    auto meta = tensors.find("lora.meta");
    if (meta == tensors.end() || meta->second.numel() != 3) {
        throw CheckpointError("adapter checkpoint missing lora.meta: " + path);
    }
    if (static_cast<std::size_t>(meta->second.data()[0]) != cfg_.rank) {
        throw CheckpointError("adapter checkpoint rank mismatch in " + path);
    }
    std::vector<Parameter*> params;
    for (auto& [name, a] : adapters_) {
        params.push_back(a.A.get());
        params.push_back(a.B.get());
    }
    restore(tensors, params);
}

double trainable_fraction(const std::vector<Parameter*>& params) {
    std::size_t trainable = 0, total = 0;
    for (const Parameter* p : params) {
        total += p->numel();
        if (p->trainable) trainable += p->numel();
    }
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
}

}  // namespace capfor

#include "capfor/experts.hpp"

#include <cmath>
#include <stdexcept>

#include "capfor/checkpoint.hpp"
#include "capfor/optim.hpp"
#include "capfor/timer_net.hpp"

namespace capfor {

std::string expert_kind_name(ExpertKind k) {
    switch (k) {
        case ExpertKind::LinearDecomp: return "linear_decomp";
        case ExpertKind::PatchAttn: return "patch_attn";
        case ExpertKind::SegRec: return "seg_rec";
    }
    throw std::invalid_argument("expert_kind_name: unknown kind");
}

ExpertKind parse_expert_kind(const std::string& name) {
    if (name == "linear_decomp") return ExpertKind::LinearDecomp;
    if (name == "patch_attn") return ExpertKind::PatchAttn;
    if (name == "seg_rec") return ExpertKind::SegRec;
    throw std::invalid_argument("parse_expert_kind: unknown kind '" + name + "'");
}

void ExpertConfig::validate() const {
    if (lookback == 0 || horizon == 0) {
        throw std::invalid_argument("expert: lookback and horizon must be positive");
    }
    switch (kind) {
        case ExpertKind::LinearDecomp:
            if (ma_window == 0 || ma_window % 2 == 0 || ma_window > lookback) {
                throw std::invalid_argument(
                    "expert: ma_window must be odd and no longer than the lookback");
            }
            break;
        case ExpertKind::PatchAttn:
            if (patch_len == 0 || lookback % patch_len != 0) {
                throw std::invalid_argument("expert: patch_len must divide the lookback");
            }
            if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
                throw std::invalid_argument("expert: d_model must be divisible by n_heads");
            }
            break;
        case ExpertKind::SegRec:
            if (seg_len == 0 || lookback % seg_len != 0) {
                throw std::invalid_argument("expert: seg_len must divide the lookback");
            }
            if (hidden == 0) throw std::invalid_argument("expert: hidden must be positive");
            break;
    }
}

ExpertModel::ExpertModel(const ExpertConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x3a7d, 0));
    auto dense = [&](const std::string& name, std::size_t dout, std::size_t din) {
        Tensor w({dout, din});
        fill_normal(w, rng, 0.0, 0.02);
        add_param(name, std::move(w));
        add_param(name.substr(0, name.size() - 7) + ".bias", Tensor({dout}));
    };
    const std::size_t L = cfg_.lookback;
    const std::size_t H = cfg_.horizon;
    switch (cfg_.kind) {
        case ExpertKind::LinearDecomp: {
            dense("trend.weight", H, L);
            dense("remainder.weight", H, L);
            // averaging operator, stored transposed for x * M^T; replicate
            // padding piles clipped taps onto the edge samples
            ma_matrix_ = Tensor({L, L});
            const long half = static_cast<long>(cfg_.ma_window / 2);
            const float w = 1.0f / static_cast<float>(cfg_.ma_window);
            for (long i = 0; i < static_cast<long>(L); ++i) {
                for (long t = i - half; t <= i + half; ++t) {
                    const long j = std::min(std::max(t, 0L), static_cast<long>(L) - 1);
                    ma_matrix_.at(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) += w;
                }
            }
            break;
        }
        case ExpertKind::PatchAttn: {
            const std::size_t n_patches = L / cfg_.patch_len;
            const std::size_t dm = cfg_.d_model;
            dense("embed.weight", dm, cfg_.patch_len);
            Tensor pos({n_patches, dm});
            fill_normal(pos, rng, 0.0, 0.02);
            add_param("pos", std::move(pos));
            add_param("ln1.gamma", Tensor({dm}, std::vector<float>(dm, 1.0f)));
            add_param("ln1.beta", Tensor({dm}));
            for (const char* n : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
                Tensor w({dm, dm});
                fill_normal(w, rng, 0.0, 0.02);
                add_param(n, std::move(w));
            }
            add_param("ln2.gamma", Tensor({dm}, std::vector<float>(dm, 1.0f)));
            add_param("ln2.beta", Tensor({dm}));
            dense("ff1.weight", 2 * dm, dm);
            dense("ff2.weight", dm, 2 * dm);
            dense("head.weight", H, n_patches * dm);
            break;
        }
        case ExpertKind::SegRec: {
            dense("in.weight", cfg_.hidden, cfg_.seg_len);
            Tensor w({cfg_.hidden, cfg_.hidden});
            fill_normal(w, rng, 0.0, 0.02);
            add_param("rec.weight", std::move(w));
            dense("head.weight", H, cfg_.hidden);
            break;
        }
    }
}

Parameter& ExpertModel::add_param(const std::string& name, Tensor value) {
    storage_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    Parameter* p = storage_.back().get();
    by_name_[name] = p;
    ordered_.push_back(p);
    return *p;
}

std::vector<Parameter*> ExpertModel::params() { return ordered_; }

Parameter& ExpertModel::at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        throw std::invalid_argument("expert: no parameter named '" + name + "'");
    }
    return *it->second;
}

std::size_t ExpertModel::param_count() const {
    std::size_t n = 0;
    for (const auto& p : storage_) n += p->value.numel();
    return n;
}

Var ExpertModel::forward(Graph& g, Var x) {
    const Tensor& v = g.value(x);
    if (v.rows() != 1 || v.cols() != cfg_.lookback) {
        throw std::invalid_argument("expert: input must have shape {1, lookback}, got " +
                                    v.shape_str());
    }
    switch (cfg_.kind) {
        case ExpertKind::LinearDecomp: return forward_linear_decomp(g, x);
        case ExpertKind::PatchAttn: return forward_patch_attn(g, x);
        case ExpertKind::SegRec: return forward_seg_rec(g, x);
    }
    throw std::logic_error("expert: unknown kind");
}

Var ExpertModel::forward_linear_decomp(Graph& g, Var x) {
    Var trend = g.matmul(x, g.constant(ma_matrix_));
    Var remainder = g.sub(x, trend);
    Var t = g.affine(trend, g.param(at("trend.weight")), g.param(at("trend.bias")));
    Var r = g.affine(remainder, g.param(at("remainder.weight")), g.param(at("remainder.bias")));
    return g.add(t, r);
}

Var ExpertModel::forward_patch_attn(Graph& g, Var x) {
    const std::size_t n_patches = cfg_.lookback / cfg_.patch_len;
    const std::size_t dm = cfg_.d_model;
    const std::size_t dh = dm / cfg_.n_heads;
    Var p = g.reshape(x, {n_patches, cfg_.patch_len});
    Var h = g.add(g.affine(p, g.param(at("embed.weight")), g.param(at("embed.bias"))),
                  g.param(at("pos")));

    Var n1 = g.layer_norm(h, g.param(at("ln1.gamma")), g.param(at("ln1.beta")));
    Var q = g.matmul(n1, g.transpose(g.param(at("q_proj"))));
    Var k = g.matmul(n1, g.transpose(g.param(at("k_proj"))));
    Var vv = g.matmul(n1, g.transpose(g.param(at("v_proj"))));
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<Var> heads;
    for (std::size_t head = 0; head < cfg_.n_heads; ++head) {
        Var qh = g.slice_cols(q, head * dh, dh);
        Var kh = g.slice_cols(k, head * dh, dh);
        Var vh = g.slice_cols(vv, head * dh, dh);
        Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dh);
        heads.push_back(g.matmul(g.softmax(scores), vh));  // patches attend freely
    }
    Var att = g.matmul(g.concat_cols(heads), g.transpose(g.param(at("o_proj"))));
    h = g.add(h, att);

    Var n2 = g.layer_norm(h, g.param(at("ln2.gamma")), g.param(at("ln2.beta")));
    Var f1 = g.gelu(g.affine(n2, g.param(at("ff1.weight")), g.param(at("ff1.bias"))));
    Var f2 = g.affine(f1, g.param(at("ff2.weight")), g.param(at("ff2.bias")));
    h = g.add(h, f2);

    Var flat = g.reshape(h, {1, n_patches * dm});
    return g.affine(flat, g.param(at("head.weight")), g.param(at("head.bias")));
}

Var ExpertModel::forward_seg_rec(Graph& g, Var x) {
    const std::size_t n_segs = cfg_.lookback / cfg_.seg_len;
    Var segs = g.reshape(x, {n_segs, cfg_.seg_len});
    Var h = g.constant(Tensor({1, cfg_.hidden}));
    for (std::size_t t = 0; t < n_segs; ++t) {
        Var seg = g.slice_rows(segs, t, 1);
        Var pre = g.add(g.affine(seg, g.param(at("in.weight")), g.param(at("in.bias"))),
                        g.matmul(h, g.transpose(g.param(at("rec.weight")))));
        h = g.relu(pre);
    }
    return g.affine(h, g.param(at("head.weight")), g.param(at("head.bias")));
}

std::vector<float> ExpertModel::forward_values(const std::vector<float>& x) {
    Graph g;
    Var out = forward(g, g.constant(Tensor({1, x.size()}, x)));
    const Tensor& t = g.value(out);
    return std::vector<float>(t.data(), t.data() + t.numel());
}

void save_expert(const std::string& path, ExpertModel& model) {
    auto tensors = snapshot(model.params());
    tensors["expert.meta"] =
        Tensor({3}, {static_cast<float>(static_cast<int>(model.kind())),
                     static_cast<float>(model.config().lookback),
                     static_cast<float>(model.config().horizon)});
    save_checkpoint(path, tensors);
}

void load_expert(const std::string& path, ExpertModel& model) {
    auto tensors = load_checkpoint(path);
    auto it = tensors.find("expert.meta");
    if (it == tensors.end()) {
        throw CheckpointError("expert checkpoint lacks an expert.meta record: " + path);
    }
    const Tensor& meta = it->second;
    if (meta.numel() != 3 ||
        static_cast<int>(meta.data()[0]) != static_cast<int>(model.kind()) ||
        static_cast<std::size_t>(meta.data()[1]) != model.config().lookback ||
        static_cast<std::size_t>(meta.data()[2]) != model.config().horizon) {
        throw CheckpointError("expert checkpoint does not match the model geometry: " + path);
    }
    tensors.erase(it);
    restore(tensors, model.params());
}

void StudentTrainConfig::validate() const {
    if (epochs <= 0) throw std::invalid_argument("student training: epochs must be positive");
    if (batch == 0) throw std::invalid_argument("student training: batch must be positive");
    if (lr < 0.0f) throw std::invalid_argument("student training: lr must be non-negative");
    if (stride == 0) throw std::invalid_argument("student training: stride must be positive");
}

std::vector<TrainSample> student_samples(const std::vector<Corpus>& corpora,
                                         std::size_t lookback, std::size_t horizon,
                                         std::size_t stride) {
    std::vector<TrainSample> samples;
    for (const Corpus& corpus : corpora) {
        for (const CapacitySeries& series : corpus.series) {
            for (const WindowPair& w : make_windows(series, lookback, horizon, stride)) {
                const ScaleParams sp = fit_scale(w.input);
                TrainSample s;
                s.x = Tensor({1, lookback}, to_f32(apply_scale(w.input, sp)));
                s.y = Tensor({1, horizon}, to_f32(apply_scale(w.target, sp)));
                samples.push_back(std::move(s));
            }
        }
    }
    return samples;
}

StudentHistory train_student_loop(ExpertModel& model,
                                  const std::vector<TrainSample>& samples,
                                  const StudentTrainConfig& cfg,
                                  const SampleLoss& sample_loss) {
    cfg.validate();
    if (samples.empty()) {
        throw std::invalid_argument("student training: no training windows");
    }
    Adam opt(model.params(), cfg.lr);
    StudentHistory history;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x3c6f, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t bsz = std::min(cfg.batch, order.size() - done);
            for (std::size_t k = 0; k < bsz; ++k) {
                const TrainSample& s = samples[order[done + k]];
                Graph g;
                Var y_hat = model.forward(g, g.constant(s.x));
                Var loss = sample_loss(g, y_hat, s);
                epoch_loss += static_cast<double>(g.value(loss).data()[0]);
                g.backward(loss, 1.0f / static_cast<float>(bsz));
            }
            opt.step();
            done += bsz;
        }
        history.epoch_mean.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return history;
}

StudentHistory supervised_train(ExpertModel& model, const std::vector<Corpus>& corpora,
                                const StudentTrainConfig& cfg) {
    auto samples =
        student_samples(corpora, model.config().lookback, model.config().horizon, cfg.stride);
    return train_student_loop(model, samples, cfg,
                              [](Graph& g, Var y_hat, const TrainSample& s) {
                                  return g.mse(y_hat, g.constant(s.y));
                              });
}

}  // namespace capfor

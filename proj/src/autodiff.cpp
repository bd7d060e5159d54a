#include "capfor/autodiff.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

namespace capfor {

namespace {

constexpr double kLogClamp = 1e-12;

}  // namespace

Var Graph::push(Tensor value, std::function<void(Graph&)> backprop, Parameter* src) {
    Node node;
    node.grad = Tensor(value.shape());
    node.value = std::move(value);
    node.source = src;
    node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

Var Graph::constant(Tensor t) {
    return push(std::move(t), nullptr);
}

Var Graph::param(Parameter& p) {
    Parameter* ptr = &p;
    Var out = push(p.value, nullptr, ptr);
    const int id = out.id;
    nodes_[id].backprop = [id, ptr](Graph& g) {
        if (!ptr->trainable) return;
        const Tensor& go = g.grd(id);
        for (std::size_t i = 0; i < go.numel(); ++i) ptr->grad.data()[i] += go.data()[i];
    };
    return out;
}

Var Graph::add(Var a, Var b) {
    check_same_shape("add", val(a.id), val(b.id));
    Tensor out(val(a.id).shape());
    const float* pa = val(a.id).data();
    const float* pb = val(b.id).data();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = pa[i] + pb[i];
    const int ia = a.id, ib = b.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, ib, io](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < go.numel(); ++i) {
            g.grd(ia).data()[i] += go.data()[i];
            g.grd(ib).data()[i] += go.data()[i];
        }
    };
    return v;
}

Var Graph::sub(Var a, Var b) {
    check_same_shape("sub", val(a.id), val(b.id));
    Tensor out(val(a.id).shape());
    const float* pa = val(a.id).data();
    const float* pb = val(b.id).data();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = pa[i] - pb[i];
    const int ia = a.id, ib = b.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, ib, io](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < go.numel(); ++i) {
            g.grd(ia).data()[i] += go.data()[i];
            g.grd(ib).data()[i] -= go.data()[i];
        }
    };
    return v;
}

Var Graph::mul(Var a, Var b) {
    check_same_shape("mul", val(a.id), val(b.id));
    Tensor out(val(a.id).shape());
    const float* pa = val(a.id).data();
    const float* pb = val(b.id).data();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = pa[i] * pb[i];
    const int ia = a.id, ib = b.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, ib, io](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& va = g.val(ia);
        const Tensor& vb = g.val(ib);
        for (std::size_t i = 0; i < go.numel(); ++i) {
            g.grd(ia).data()[i] += go.data()[i] * vb.data()[i];
            g.grd(ib).data()[i] += go.data()[i] * va.data()[i];
        }
    };
    return v;
}

Var Graph::scale(Var a, float c) {
    Tensor out(val(a.id).shape());
    const float* pa = val(a.id).data();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = pa[i] * c;
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, c](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < go.numel(); ++i) g.grd(ia).data()[i] += go.data()[i] * c;
    };
    return v;
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& ta = val(a.id);
    const Tensor& tb = val(b.id);
    const std::size_t m = ta.rows(), k = ta.cols();
    const std::size_t k2 = tb.rows(), n = tb.cols();
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimension mismatch " + ta.shape_str() +
                                    " vs " + tb.shape_str());
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                acc += static_cast<double>(ta.data()[i * k + t]) *
                       static_cast<double>(tb.data()[t * n + j]);
            }
            out.data()[i * n + j] = static_cast<float>(acc);
        }
    }
    const int ia = a.id, ib = b.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, ib, io, m, k, n](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& va = g.val(ia);
        const Tensor& vb = g.val(ib);
        // dA += dC . B^T
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t t = 0; t < k; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += static_cast<double>(go.data()[i * n + j]) *
                           static_cast<double>(vb.data()[t * n + j]);
                }
                g.grd(ia).data()[i * k + t] += static_cast<float>(acc);
            }
        }
        // dB += A^T . dC
        for (std::size_t t = 0; t < k; ++t) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    acc += static_cast<double>(va.data()[i * k + t]) *
                           static_cast<double>(go.data()[i * n + j]);
                }
                g.grd(ib).data()[t * n + j] += static_cast<float>(acc);
            }
        }
    };
    return v;
}

Var Graph::transpose(Var a) {
    const Tensor& ta = val(a.id);
    const std::size_t m = ta.rows(), n = ta.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = ta.data()[i * n + j];
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, m, n](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                g.grd(ia).data()[i * n + j] += go.data()[j * m + i];
    };
    return v;
}

Var Graph::affine(Var x, Var w, Var b) {
    const Tensor& tx = val(x.id);
    const Tensor& tw = val(w.id);
    const Tensor& tb = val(b.id);
    const std::size_t n = tx.rows(), din = tx.cols();
    const std::size_t dout = tw.rows();
    if (tw.cols() != din) {
        throw std::invalid_argument("affine: weight/input mismatch " + tw.shape_str() + " vs " +
                                    tx.shape_str());
    }
    if (tb.numel() != dout) {
        throw std::invalid_argument("affine: bias/weight mismatch " + tb.shape_str() + " vs " +
                                    tw.shape_str());
    }
    Tensor out({n, dout});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < dout; ++o) {
            double acc = static_cast<double>(tb.data()[o]);
            for (std::size_t t = 0; t < din; ++t) {
                acc += static_cast<double>(tx.data()[i * din + t]) *
                       static_cast<double>(tw.data()[o * din + t]);
            }
            out.data()[i * dout + o] = static_cast<float>(acc);
        }
    }
    const int ix = x.id, iw = w.id, ib = b.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ix, iw, ib, io, n, din, dout](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& vx = g.val(ix);
        const Tensor& vw = g.val(iw);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < din; ++t) {
                double acc = 0.0;
                for (std::size_t o = 0; o < dout; ++o) {
                    acc += static_cast<double>(go.data()[i * dout + o]) *
                           static_cast<double>(vw.data()[o * din + t]);
                }
                g.grd(ix).data()[i * din + t] += static_cast<float>(acc);
            }
        }
        for (std::size_t o = 0; o < dout; ++o) {
            for (std::size_t t = 0; t < din; ++t) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += static_cast<double>(go.data()[i * dout + o]) *
                           static_cast<double>(vx.data()[i * din + t]);
                }
                g.grd(iw).data()[o * din + t] += static_cast<float>(acc);
            }
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                acc += static_cast<double>(go.data()[i * dout + o]);
            g.grd(ib).data()[o] += static_cast<float>(acc);
        }
    };
    return v;
}

Var Graph::reshape(Var a, std::vector<std::size_t> shape) {
    Tensor out(shape);
    if (out.numel() != val(a.id).numel()) {
        throw std::invalid_argument("reshape: element count mismatch " + val(a.id).shape_str() +
                                    " vs " + out.shape_str());
    }
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = val(a.id).data()[i];
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < go.numel(); ++i) g.grd(ia).data()[i] += go.data()[i];
    };
    return v;
}

Var Graph::slice_rows(Var a, std::size_t start, std::size_t len) {
    const Tensor& ta = val(a.id);
    const std::size_t m = ta.rows(), n = ta.cols();
    if (start + len > m) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of " + ta.shape_str());
    }
    Tensor out({len, n});
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.data()[i * n + j] = ta.data()[(start + i) * n + j];
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, start, len, n](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < n; ++j)
                g.grd(ia).data()[(start + i) * n + j] += go.data()[i * n + j];
    };
    return v;
}

Var Graph::slice_cols(Var a, std::size_t start, std::size_t len) {
    const Tensor& ta = val(a.id);
    const std::size_t m = ta.rows(), n = ta.cols();
    if (start + len > n) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of " + ta.shape_str());
    }
    Tensor out({m, len});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j)
            out.data()[i * len + j] = ta.data()[i * n + start + j];
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, start, len, m, n](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < len; ++j)
                g.grd(ia).data()[i * n + start + j] += go.data()[i * len + j];
    };
    return v;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
    const std::size_t m = val(parts[0].id).rows();
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
        const Tensor& t = val(p.id);
        if (t.rows() != m) {
            throw std::invalid_argument("concat_cols: row mismatch " +
                                        val(parts[0].id).shape_str() + " vs " + t.shape_str());
        }
        ids.push_back(p.id);
        widths.push_back(t.cols());
        total += t.cols();
    }
    Tensor out({m, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const Tensor& t = val(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
                out.data()[i * total + off + j] = t.data()[i * widths[k] + j];
        off += widths[k];
    }
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ids, widths, io, m, total](Graph& g) {
        const Tensor& go = g.grd(io);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < widths[k]; ++j)
                    g.grd(ids[k]).data()[i * widths[k] + j] += go.data()[i * total + off + j];
            off += widths[k];
        }
    };
    return v;
}

Var Graph::softmax(Var a, int axis) {
    const Tensor& ta = val(a.id);
    const std::size_t m = ta.rows(), n = ta.cols();
    if (axis != -1 && axis != 0) {
        throw std::invalid_argument("softmax: axis must be -1 (rows) or 0 (columns)");
    }
    Tensor out({m, n});
    if (ta.rank() == 1) out = Tensor(ta.shape());
    const bool by_row = (axis == -1);
    const std::size_t groups = by_row ? m : n;
    const std::size_t width = by_row ? n : m;
    auto idx = [&](std::size_t grp, std::size_t k) { return by_row ? grp * n + k : k * n + grp; };
    for (std::size_t grp = 0; grp < groups; ++grp) {
        float mx = ta.data()[idx(grp, 0)];
        for (std::size_t k = 1; k < width; ++k) mx = std::max(mx, ta.data()[idx(grp, k)]);
        double denom = 0.0;
        for (std::size_t k = 0; k < width; ++k)
            denom += std::exp(static_cast<double>(ta.data()[idx(grp, k)] - mx));
        for (std::size_t k = 0; k < width; ++k) {
            out.data()[idx(grp, k)] = static_cast<float>(
                std::exp(static_cast<double>(ta.data()[idx(grp, k)] - mx)) / denom);
        }
    }
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, groups, width, by_row, n](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& y = g.val(io);
        auto idx = [&](std::size_t grp, std::size_t k) {
            return by_row ? grp * n + k : k * n + grp;
        };
        for (std::size_t grp = 0; grp < groups; ++grp) {
            double dot = 0.0;
            for (std::size_t k = 0; k < width; ++k)
                dot += static_cast<double>(go.data()[idx(grp, k)]) *
                       static_cast<double>(y.data()[idx(grp, k)]);
            for (std::size_t k = 0; k < width; ++k) {
                g.grd(ia).data()[idx(grp, k)] += static_cast<float>(
                    static_cast<double>(y.data()[idx(grp, k)]) *
                    (static_cast<double>(go.data()[idx(grp, k)]) - dot));
            }
        }
    };
    return v;
}

Var Graph::causal_softmax_rows(Var scores) {
    const Tensor& ta = val(scores.id);
    const std::size_t m = ta.rows(), n = ta.cols();
    if (n < m) {
        throw std::invalid_argument("causal_softmax_rows: need cols >= rows, got " +
                                    ta.shape_str());
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t lim = i + 1;
        float mx = ta.data()[i * n];
        for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, ta.data()[i * n + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < lim; ++j)
            denom += std::exp(static_cast<double>(ta.data()[i * n + j] - mx));
        for (std::size_t j = 0; j < lim; ++j) {
            out.data()[i * n + j] = static_cast<float>(
                std::exp(static_cast<double>(ta.data()[i * n + j] - mx)) / denom);
        }
        // entries past the diagonal stay zero
    }
    const int ia = scores.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, m, n](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& y = g.val(io);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t lim = i + 1;
            double dot = 0.0;
            for (std::size_t j = 0; j < lim; ++j)
                dot += static_cast<double>(go.data()[i * n + j]) *
                       static_cast<double>(y.data()[i * n + j]);
            for (std::size_t j = 0; j < lim; ++j) {
                g.grd(ia).data()[i * n + j] += static_cast<float>(
                    static_cast<double>(y.data()[i * n + j]) *
                    (static_cast<double>(go.data()[i * n + j]) - dot));
            }
        }
    };
    return v;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, float eps) {
    const Tensor& tx = val(x.id);
    const Tensor& tg = val(gamma.id);
    const Tensor& tb = val(beta.id);
    const std::size_t m = tx.rows(), n = tx.cols();
    if (tg.numel() != n || tb.numel() != n) {
        throw std::invalid_argument("layer_norm: scale/shift must have width " +
                                    std::to_string(n) + ", got " + tg.shape_str() + " and " +
                                    tb.shape_str());
    }
    Tensor out({m, n});
    Tensor xhat({m, n});
    std::vector<float> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += static_cast<double>(tx.data()[i * n + j]);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(tx.data()[i * n + j]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[i] = static_cast<float>(is);
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (static_cast<double>(tx.data()[i * n + j]) - mu) * is;
            xhat.data()[i * n + j] = static_cast<float>(xh);
            out.data()[i * n + j] = static_cast<float>(
                xh * static_cast<double>(tg.data()[j]) + static_cast<double>(tb.data()[j]));
        }
    }
    const int ix = x.id, ig = gamma.id, ib = beta.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ix, ig, ib, io, m, n, xhat, inv_std](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& vg = g.val(ig);
        for (std::size_t i = 0; i < m; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double gk = static_cast<double>(go.data()[i * n + j]) *
                                  static_cast<double>(vg.data()[j]);
                mean_g += gk;
                mean_gx += gk * static_cast<double>(xhat.data()[i * n + j]);
            }
            mean_g /= static_cast<double>(n);
            mean_gx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
                const double gk = static_cast<double>(go.data()[i * n + j]) *
                                  static_cast<double>(vg.data()[j]);
                const double xh = static_cast<double>(xhat.data()[i * n + j]);
                g.grd(ix).data()[i * n + j] += static_cast<float>(
                    static_cast<double>(inv_std[i]) * (gk - mean_g - xh * mean_gx));
                g.grd(ig).data()[j] +=
                    static_cast<float>(static_cast<double>(go.data()[i * n + j]) * xh);
                g.grd(ib).data()[j] += go.data()[i * n + j];
            }
        }
    };
    return v;
}

Var Graph::gelu(Var a) {
    const Tensor& ta = val(a.id);
    Tensor out(ta.shape());
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double x = static_cast<double>(ta.data()[i]);
        out.data()[i] = static_cast<float>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& va = g.val(ia);
        constexpr double kInvSqrt2 = 0.7071067811865475244;
        constexpr double kInvSqrt2Pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < go.numel(); ++i) {
            const double x = static_cast<double>(va.data()[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            g.grd(ia).data()[i] +=
                static_cast<float>(static_cast<double>(go.data()[i]) * (cdf + x * pdf));
        }
    };
    return v;
}

Var Graph::relu(Var a) {
    const Tensor& ta = val(a.id);
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data()[i] = ta.data()[i] > 0.0f ? ta.data()[i] : 0.0f;
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& va = g.val(ia);
        for (std::size_t i = 0; i < go.numel(); ++i)
            if (va.data()[i] > 0.0f) g.grd(ia).data()[i] += go.data()[i];
    };
    return v;
}

Var Graph::sigmoid(Var a) {
    const Tensor& ta = val(a.id);
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double x = static_cast<double>(ta.data()[i]);
        out.data()[i] = static_cast<float>(1.0 / (1.0 + std::exp(-x)));
    }
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io](Graph& g) {
        const Tensor& go = g.grd(io);
        const Tensor& y = g.val(io);
        for (std::size_t i = 0; i < go.numel(); ++i) {
            const double s = static_cast<double>(y.data()[i]);
            g.grd(ia).data()[i] +=
                static_cast<float>(static_cast<double>(go.data()[i]) * s * (1.0 - s));
        }
    };
    return v;
}

Var Graph::dropout(Var a, float p, Rng& rng) {
    if (p < 0.0f || p >= 1.0f) {
        throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(p));
    }
    const Tensor& ta = val(a.id);
    if (p == 0.0f) {
        Tensor out = ta;
        const int ia = a.id;
        Var v = push(std::move(out), nullptr);
        const int io = v.id;
        nodes_[io].backprop = [ia, io](Graph& g) {
            const Tensor& go = g.grd(io);
            for (std::size_t i = 0; i < go.numel(); ++i) g.grd(ia).data()[i] += go.data()[i];
        };
        return v;
    }
    Tensor out(ta.shape());
    std::vector<float> mask(ta.numel());
    const float keep = 1.0f - p;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const bool kept = rng.uniform() >= static_cast<double>(p);
        mask[i] = kept ? 1.0f / keep : 0.0f;
        out.data()[i] = ta.data()[i] * mask[i];
    }
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, mask](Graph& g) {
        const Tensor& go = g.grd(io);
        for (std::size_t i = 0; i < go.numel(); ++i)
            g.grd(ia).data()[i] += go.data()[i] * mask[i];
    };
    return v;
}

Var Graph::mean(Var a) {
    const Tensor& ta = val(a.id);
    const std::size_t count = ta.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) acc += static_cast<double>(ta.data()[i]);
    Tensor out({1});
    out.data()[0] = static_cast<float>(acc / static_cast<double>(count));
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, count](Graph& g) {
        const float go = g.grd(io).data()[0] / static_cast<float>(count);
        for (std::size_t i = 0; i < count; ++i) g.grd(ia).data()[i] += go;
    };
    return v;
}

Var Graph::sum(Var a) {
    const Tensor& ta = val(a.id);
    const std::size_t count = ta.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) acc += static_cast<double>(ta.data()[i]);
    Tensor out({1});
    out.data()[0] = static_cast<float>(acc);
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, count](Graph& g) {
        const float go = g.grd(io).data()[0];
        for (std::size_t i = 0; i < count; ++i) g.grd(ia).data()[i] += go;
    };
    return v;
}

Var Graph::pick(Var a, std::size_t flat_index) {
    const Tensor& ta = val(a.id);
    if (flat_index >= ta.numel()) {
        throw std::invalid_argument("pick: index " + std::to_string(flat_index) + " out of " +
                                    ta.shape_str());
    }
    Tensor out({1});
    out.data()[0] = ta.data()[flat_index];
    const int ia = a.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ia, io, flat_index](Graph& g) {
        g.grd(ia).data()[flat_index] += g.grd(io).data()[0];
    };
    return v;
}

Var Graph::mse(Var pred, Var target) {
    check_same_shape("mse", val(pred.id), val(target.id));
    const Tensor& tp = val(pred.id);
    const Tensor& tt = val(target.id);
    const std::size_t count = tp.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = static_cast<double>(tp.data()[i]) - static_cast<double>(tt.data()[i]);
        acc += d * d;
    }
    Tensor out({1});
    out.data()[0] = static_cast<float>(acc / static_cast<double>(count));
    const int ip = pred.id, it = target.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ip, it, io, count](Graph& g) {
        const Tensor& vp = g.val(ip);
        const Tensor& vt = g.val(it);
        const double go = static_cast<double>(g.grd(io).data()[0]);
        const double c = 2.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
            const double d =
                static_cast<double>(vp.data()[i]) - static_cast<double>(vt.data()[i]);
            g.grd(ip).data()[i] += static_cast<float>(go * c * d);
            g.grd(it).data()[i] -= static_cast<float>(go * c * d);
        }
    };
    return v;
}

Var Graph::kl_divergence(Var p, Var q) {
    check_same_shape("kl_divergence", val(p.id), val(q.id));
    const Tensor& tp = val(p.id);
    const Tensor& tq = val(q.id);
    const std::size_t count = tp.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double pc = std::max(static_cast<double>(tp.data()[i]), kLogClamp);
        const double qc = std::max(static_cast<double>(tq.data()[i]), kLogClamp);
        acc += pc * (std::log(pc) - std::log(qc));
    }
    Tensor out({1});
    out.data()[0] = static_cast<float>(acc);
    const int ip = p.id, iq = q.id;
    Var v = push(std::move(out), nullptr);
    const int io = v.id;
    nodes_[io].backprop = [ip, iq, io, count](Graph& g) {
        const Tensor& vp = g.val(ip);
        const Tensor& vq = g.val(iq);
        const double go = static_cast<double>(g.grd(io).data()[0]);
        for (std::size_t i = 0; i < count; ++i) {
            const double praw = static_cast<double>(vp.data()[i]);
            const double qraw = static_cast<double>(vq.data()[i]);
            const double pc = std::max(praw, kLogClamp);
            const double qc = std::max(qraw, kLogClamp);
            if (praw > kLogClamp) {
                g.grd(ip).data()[i] +=
                    static_cast<float>(go * (std::log(pc) - std::log(qc) + 1.0));
            }
            if (qraw > kLogClamp) {
                g.grd(iq).data()[i] += static_cast<float>(-go * pc / qc);
            }
        }
    };
    return v;
}

void Graph::backward(Var loss, float seed) {
    if (val(loss.id).numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    val(loss.id).shape_str());
    }
    grd(loss.id).data()[0] = seed;
    for (std::size_t k = nodes_.size(); k-- > 0;) {
        if (nodes_[k].backprop) nodes_[k].backprop(*this);
    }
}

}  // namespace capfor

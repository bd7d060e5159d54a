#ifndef CAPFOR_AUTODIFF_HPP
#define CAPFOR_AUTODIFF_HPP

#include <functional>
#include <string>
#include <vector>

#include "capfor/tensor.hpp"

namespace capfor {

/**
 * A named trainable tensor with an accumulated gradient buffer.
 *
 * Gradients accumulate across backward passes until the optimizer step
 * clears them, so mini-batches can be processed one sample at a time.
 */
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

    std::size_t numel() const { return value.numel(); }
    void zero_grad() { grad.zero(); }
};

/// Handle to a node in a Graph.
struct Var {
    int id = -1;
};

/**
 * Reverse-mode computation graph.
 *
 * A Graph is built fresh for each forward pass; nodes are appended in
 * evaluation order, which makes reverse creation order a valid
 * topological order for the backward sweep. Leaves are either constants
 * or Parameters; backward() accumulates into Parameter::grad for every
 * reachable trainable parameter.
 *
 * Shape errors throw std::invalid_argument naming the operation and the
 * offending shapes.
 */
class Graph {
public:
    Var constant(Tensor t);
    Var param(Parameter& p);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad_of(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise (operands must have identical shapes).
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, float c);

    // Linear algebra.
    Var matmul(Var a, Var b);                      // (m x k)(k x n) -> m x n
    Var transpose(Var a);
    Var affine(Var x, Var w, Var b);               // x:(n x din) w:(dout x din) b:(dout)
    Var reshape(Var a, std::vector<std::size_t> shape);
    Var slice_rows(Var a, std::size_t start, std::size_t len);
    Var slice_cols(Var a, std::size_t start, std::size_t len);
    Var concat_cols(const std::vector<Var>& parts);

    // Nonlinearities and normalization.
    Var softmax(Var a, int axis = -1);             // max-subtracted; axis -1 = last
    Var causal_softmax_rows(Var scores);           // row i normalized over cols 0..i
    Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
    Var gelu(Var a);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var dropout(Var a, float p, Rng& rng);         // inverted dropout

    // Reductions / losses (scalar results, double accumulation inside).
    Var mean(Var a);
    Var sum(Var a);
    Var pick(Var a, std::size_t flat_index);       // scalar a[flat_index]
    Var mse(Var pred, Var target);
    Var kl_divergence(Var p, Var q);               // sum p*(log p - log q), clamped at 1e-12

    /// Seed d(loss)/d(loss) = seed and sweep the tape in reverse.
    void backward(Var loss, float seed = 1.0f);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Parameter* source = nullptr;
        std::function<void(Graph&)> backprop;  // empty for leaves without params
    };

    std::vector<Node> nodes_;

    Var push(Tensor value, std::function<void(Graph&)> backprop, Parameter* src = nullptr);
    Tensor& val(int id) { return nodes_[id].value; }
    Tensor& grd(int id) { return nodes_[id].grad; }
    static void check_same_shape(const char* op, const Tensor& a, const Tensor& b);
};

}  // namespace capfor

#endif  // CAPFOR_AUTODIFF_HPP

#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Each node keeps its
// value and, once backward() has run, its gradient. Values are 2-D; tensors of
// higher rank are viewed as [product of leading dims, last dim].

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pbat {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : shape{rows, cols}, data(rows * cols, fill) {}
    static Tensor with_shape(std::vector<std::size_t> shape, double fill = 0.0);

    std::size_t size() const { return data.size(); }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : data.size() / cols(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

class Tape {
public:
    /// A node that never receives a gradient.
    Var constant(Tensor value);
    /// A differentiable input; its gradient is readable after backward().
    Var leaf(Tensor value);

    /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
    /// root must be 1x1.
    void backward(Var root);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient of the last backward() root; zero-filled if the node was unreachable.
    Tensor grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }

    // Used by op implementations.
    Var record(Tensor value, std::initializer_list<Var> inputs, std::function<void()> back);
    Var record(Tensor value, std::span<const Var> inputs, std::function<void()> back);
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    /// Accumulator for v's gradient (allocated on first use).
    Tensor& grad_ref(std::uint32_t id);
    const Tensor& grad_of(std::uint32_t id) const { return nodes_[id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
};

// Shape-changing and linear-algebra ops.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var gather_rows(Var table, std::vector<std::uint32_t> index);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var concat_cols(std::span<const Var> parts);
/// out[index[k][i]] = parts[k][i]; every output row must be written exactly once.
Var merge_rows(std::span<const Var> parts, const std::vector<std::vector<std::uint32_t>>& index,
               std::size_t rows);

// Elementwise binary ops on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

// Broadcasting helpers.
Var add_row(Var a, Var row);    // a[i,j] + row[0,j]
Var mul_row(Var a, Var row);    // a[i,j] * row[0,j]
Var scale_rows(Var a, Var s);   // a[i,j] * s[i,0]

// Elementwise unary ops.
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var elu(Var a);
Var elu_plus_one(Var a);
Var sqrt(Var a);
Var square(Var a);
Var reciprocal(Var a);
Var softplus(Var a);
/// max(a, floor); gradient passes only where a > floor.
Var floor_at(Var a, double floor);

// Reductions.
Var sum_cols(Var a);  // [n,m] -> [n,1]
Var sum_all(Var a);   // -> [1,1]

/// Column-wise softmax of a square score matrix: out[s,t] = exp(a[s,t]) / sum_s' exp(a[s',t]).
Var softmax_cols(Var a);

/// Per-row layer normalisation followed by elementwise gain and bias ([1,m] each).
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-6);

// Operator sugar.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

}  // namespace pbat

#include "pbat/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pbat {

namespace {

void require(bool ok, const char* op, const std::string& what) {
    if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

std::string shape_str(const Tensor& t) {
    return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

void require_same_shape(Var a, Var b, const char* op) {
    const auto& x = a.value();
    const auto& y = b.value();
    require(x.rows() == y.rows() && x.cols() == y.cols(), op,
            "shape mismatch " + shape_str(x) + " vs " + shape_str(y));
}

Tensor like(const Tensor& t) { return Tensor(t.rows(), t.cols()); }

// Elementwise unary op; df(x, y) is the derivative given input x and output y.
template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
    const Tensor& x = a.value();
    Tensor out = like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi, df] {
        const Tensor& xv = tape->value(Var{tape, ai});
        const Tensor& yv = tape->value(Var{tape, oi});
        const Tensor& go = tape->grad_of(oi);
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] * df(xv.data[i], yv.data[i]);
    });
}

}  // namespace

Tensor Tensor::with_shape(std::vector<std::size_t> shape, double fill) {
    Tensor t;
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    t.shape = std::move(shape);
    t.data.assign(n, fill);
    return t;
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, nullptr});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, true, nullptr});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, std::function<void()> back) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(back));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, std::function<void()> back) {
    bool needs = false;
    for (const Var& v : inputs) {
        assert(v.tape == this);
        needs = needs || nodes_[v.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(back) : nullptr});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_ref(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = like(n.value);
    return n.grad;
}

void Tape::backward(Var root) {
    require(root.tape == this, "backward", "root belongs to another tape");
    require(value(root).size() == 1, "backward", "root must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[root.id].needs_grad) return;
    grad_ref(root.id).data[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.back && !n.grad.data.empty()) n.back();
    }
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.data.empty()) return like(n.value);
    return n.grad;
}

// ---------------------------------------------------------------------------
// Linear algebra and shape ops

Var matmul(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require(x.cols() == y.rows(), "matmul",
            "inner dimension mismatch " + shape_str(x) + " * " + shape_str(y));
    const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.data.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.data[i * k + p];
            if (xv == 0.0) continue;
            const double* yr = y.data.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += xv * yr[j];
        }
    }
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id, bi = b.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a, b}, [tape, ai, bi, oi, n, k, m] {
        const Tensor& go = tape->grad_of(oi);
        const Tensor& xv = tape->value(Var{tape, ai});
        const Tensor& yv = tape->value(Var{tape, bi});
        if (tape->needs_grad(Var{tape, ai})) {
            Tensor& ga = tape->grad_ref(ai);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* g = go.data.data() + i * m;
                    const double* yr = yv.data.data() + p * m;
                    for (std::size_t j = 0; j < m; ++j) acc += g[j] * yr[j];
                    ga.data[i * k + p] += acc;
                }
            }
        }
        if (tape->needs_grad(Var{tape, bi})) {
            Tensor& gb = tape->grad_ref(bi);
            for (std::size_t i = 0; i < n; ++i) {
                const double* g = go.data.data() + i * m;
                for (std::size_t p = 0; p < k; ++p) {
                    const double xval = xv.data[i * k + p];
                    if (xval == 0.0) continue;
                    double* gr = gb.data.data() + p * m;
                    for (std::size_t j = 0; j < m; ++j) gr[j] += xval * g[j];
                }
            }
        }
    });
}

Var transpose(Var a) {
    const Tensor& x = a.value();
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data[j * n + i] = x.data[i * m + j];
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi, n, m] {
        const Tensor& go = tape->grad_of(oi);
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) ga.data[i * m + j] += go.data[j * n + i];
    });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Tensor& x = a.value();
    require(rows * cols == x.size(), "reshape", "element count mismatch");
    Tensor out(rows, cols);
    out.data = x.data;
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi] {
        const Tensor& go = tape->grad_of(oi);
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i];
    });
}

Var gather_rows(Var table, std::vector<std::uint32_t> index) {
    const Tensor& x = table.value();
    const std::size_t m = x.cols();
    Tensor out(index.size(), m);
    for (std::size_t r = 0; r < index.size(); ++r) {
        require(index[r] < x.rows(), "gather_rows",
                "row " + std::to_string(index[r]) + " out of range " + shape_str(x));
        std::copy_n(x.data.data() + index[r] * m, m, out.data.data() + r * m);
    }
    Tape* tape = table.tape;
    const std::uint32_t ai = table.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {table}, [tape, ai, oi, m, index = std::move(index)] {
        const Tensor& go = tape->grad_of(oi);
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t r = 0; r < index.size(); ++r) {
            double* dst = ga.data.data() + index[r] * m;
            const double* src = go.data.data() + r * m;
            for (std::size_t j = 0; j < m; ++j) dst[j] += src[j];
        }
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
    const Tensor& x = a.value();
    require(start + len <= x.cols(), "slice_cols", "column range out of bounds");
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out(n, len);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x.data.data() + i * m + start, len, out.data.data() + i * len);
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi, n, m, start, len] {
        const Tensor& go = tape->grad_of(oi);
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < len; ++j) ga.data[i * m + start + j] += go.data[i * len + j];
    });
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        require(p.rows() == n, "concat_cols", "row count mismatch");
        offsets.push_back(total);
        total += p.cols();
    }
    Tensor out(n, total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = parts[k].value();
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(x.data.data() + i * x.cols(), x.cols(), out.data.data() + i * total + offsets[k]);
    }
    Tape* tape = parts.front().tape;
    std::vector<std::uint32_t> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        ids.push_back(p.id);
        widths.push_back(p.cols());
    }
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), parts, [tape, ids, widths, offsets, oi, n, total] {
        const Tensor& go = tape->grad_of(oi);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tape->needs_grad(Var{tape, ids[k]})) continue;
            Tensor& ga = tape->grad_ref(ids[k]);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < widths[k]; ++j)
                    ga.data[i * widths[k] + j] += go.data[i * total + offsets[k] + j];
        }
    });
}

Var merge_rows(std::span<const Var> parts, const std::vector<std::vector<std::uint32_t>>& index,
               std::size_t rows) {
    require(!parts.empty() && parts.size() == index.size(), "merge_rows", "parts/index mismatch");
    const std::size_t m = parts.front().cols();
    Tensor out(rows, m);
    std::vector<bool> written(rows, false);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = parts[k].value();
        require(x.cols() == m && x.rows() == index[k].size(), "merge_rows", "part shape mismatch");
        for (std::size_t r = 0; r < index[k].size(); ++r) {
            const auto dst = index[k][r];
            require(dst < rows && !written[dst], "merge_rows", "invalid or duplicate row index");
            written[dst] = true;
            std::copy_n(x.data.data() + r * m, m, out.data.data() + dst * m);
        }
    }
    require(std::all_of(written.begin(), written.end(), [](bool b) { return b; }), "merge_rows",
            "output row left unassigned");
    Tape* tape = parts.front().tape;
    std::vector<std::uint32_t> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), parts, [tape, ids, index, oi, m] {
        const Tensor& go = tape->grad_of(oi);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tape->needs_grad(Var{tape, ids[k]})) continue;
            Tensor& ga = tape->grad_ref(ids[k]);
            for (std::size_t r = 0; r < index[k].size(); ++r)
                for (std::size_t j = 0; j < m; ++j) ga.data[r * m + j] += go.data[index[k][r] * m + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {

template <typename F, typename DA, typename DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
    require_same_shape(a, b, op);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Tensor out = like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i], y.data[i]);
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id, bi = b.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a, b}, [tape, ai, bi, oi, da, db] {
        const Tensor& go = tape->grad_of(oi);
        const Tensor& xv = tape->value(Var{tape, ai});
        const Tensor& yv = tape->value(Var{tape, bi});
        if (tape->needs_grad(Var{tape, ai})) {
            Tensor& ga = tape->grad_ref(ai);
            for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] * da(xv.data[i], yv.data[i]);
        }
        if (tape->needs_grad(Var{tape, bi})) {
            Tensor& gb = tape->grad_ref(bi);
            for (std::size_t i = 0; i < go.size(); ++i) gb.data[i] += go.data[i] * db(xv.data[i], yv.data[i]);
        }
    });
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var div(Var a, Var b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var add_row(Var a, Var row) {
    const Tensor& x = a.value();
    const Tensor& r = row.value();
    require(r.rows() == 1 && r.cols() == x.cols(), "add_row", "row shape mismatch");
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out = x;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] += r.data[j];
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id, ri = row.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a, row}, [tape, ai, ri, oi, n, m] {
        const Tensor& go = tape->grad_of(oi);
        if (tape->needs_grad(Var{tape, ai})) {
            Tensor& ga = tape->grad_ref(ai);
            for (std::size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i];
        }
        if (tape->needs_grad(Var{tape, ri})) {
            Tensor& gr = tape->grad_ref(ri);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gr.data[j] += go.data[i * m + j];
        }
    });
}

Var mul_row(Var a, Var row) {
    const Tensor& x = a.value();
    const Tensor& r = row.value();
    require(r.rows() == 1 && r.cols() == x.cols(), "mul_row", "row shape mismatch");
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out = x;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] *= r.data[j];
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id, ri = row.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a, row}, [tape, ai, ri, oi, n, m] {
        const Tensor& go = tape->grad_of(oi);
        const Tensor& xv = tape->value(Var{tape, ai});
        const Tensor& rv = tape->value(Var{tape, ri});
        if (tape->needs_grad(Var{tape, ai})) {
            Tensor& ga = tape->grad_ref(ai);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) ga.data[i * m + j] += go.data[i * m + j] * rv.data[j];
        }
        if (tape->needs_grad(Var{tape, ri})) {
            Tensor& gr = tape->grad_ref(ri);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gr.data[j] += go.data[i * m + j] * xv.data[i * m + j];
        }
    });
}

Var scale_rows(Var a, Var s) {
    const Tensor& x = a.value();
    const Tensor& sv = s.value();
    require(sv.cols() == 1 && sv.rows() == x.rows(), "scale_rows", "scale must be [rows x 1]");
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out = x;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] *= sv.data[i];
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id, si = s.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a, s}, [tape, ai, si, oi, n, m] {
        const Tensor& go = tape->grad_of(oi);
        const Tensor& xv = tape->value(Var{tape, ai});
        const Tensor& svv = tape->value(Var{tape, si});
        if (tape->needs_grad(Var{tape, ai})) {
            Tensor& ga = tape->grad_ref(ai);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) ga.data[i * m + j] += go.data[i * m + j] * svv.data[i];
        }
        if (tape->needs_grad(Var{tape, si})) {
            Tensor& gs = tape->grad_ref(si);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) acc += go.data[i * m + j] * xv.data[i * m + j];
                gs.data[i] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

Var scale(Var a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var elu(Var a) {
    return unary(
        a, [](double x) { return x >= 0.0 ? x : std::expm1(x); },
        [](double x, double) { return x >= 0.0 ? 1.0 : std::exp(x); });
}

Var elu_plus_one(Var a) {
    return unary(
        a, [](double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); },
        [](double x, double y) { return x >= 0.0 ? 1.0 : y; });
}

Var sqrt(Var a) {
    return unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var reciprocal(Var a) {
    return unary(
        a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var softplus(Var a) {
    return unary(
        a,
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
}

Var floor_at(Var a, double floor) {
    return unary(
        a, [floor](double x) { return std::max(x, floor); },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

Var sum_cols(Var a) {
    const Tensor& x = a.value();
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += x.data[i * m + j];
        out.data[i] = acc;
    }
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi, n, m] {
        const Tensor& go = tape->grad_of(oi);
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) ga.data[i * m + j] += go.data[i];
    });
}

Var sum_all(Var a) {
    const Tensor& x = a.value();
    Tensor out(1, 1);
    out.data[0] = std::accumulate(x.data.begin(), x.data.end(), 0.0);
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi] {
        const double g = tape->grad_of(oi).data[0];
        Tensor& ga = tape->grad_ref(ai);
        for (auto& v : ga.data) v += g;
    });
}

Var softmax_cols(Var a) {
    const Tensor& x = a.value();
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out(n, m);
    for (std::size_t t = 0; t < m; ++t) {
        double mx = -INFINITY;
        for (std::size_t s = 0; s < n; ++s) mx = std::max(mx, x.data[s * m + t]);
        double z = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double e = std::exp(x.data[s * m + t] - mx);
            out.data[s * m + t] = e;
            z += e;
        }
        for (std::size_t s = 0; s < n; ++s) out.data[s * m + t] /= z;
    }
    Tape* tape = a.tape;
    const std::uint32_t ai = a.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a}, [tape, ai, oi, n, m] {
        const Tensor& go = tape->grad_of(oi);
        const Tensor& w = tape->value(Var{tape, oi});
        Tensor& ga = tape->grad_ref(ai);
        for (std::size_t t = 0; t < m; ++t) {
            double dot = 0.0;
            for (std::size_t s = 0; s < n; ++s) dot += go.data[s * m + t] * w.data[s * m + t];
            for (std::size_t s = 0; s < n; ++s)
                ga.data[s * m + t] += w.data[s * m + t] * (go.data[s * m + t] - dot);
        }
    });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
    const Tensor& x = a.value();
    const std::size_t n = x.rows(), m = x.cols();
    require(gain.rows() == 1 && gain.cols() == m && bias.rows() == 1 && bias.cols() == m,
            "layer_norm", "gain/bias must be [1 x cols]");
    Tensor normed(n, m);
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < m; ++j) mu += x.data[i * m + j];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = x.data[i * m + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < m; ++j) normed.data[i * m + j] = (x.data[i * m + j] - mu) * inv_std[i];
    }
    const Tensor& g = gain.value();
    const Tensor& b = bias.value();
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out.data[i * m + j] = normed.data[i * m + j] * g.data[j] + b.data[j];

    Tape* tape = a.tape;
    const std::uint32_t ai = a.id, gi = gain.id, bi = bias.id;
    const auto oi = static_cast<std::uint32_t>(tape->size());
    return tape->record(std::move(out), {a, gain, bias},
                        [tape, ai, gi, bi, oi, n, m, normed = std::move(normed),
                         inv_std = std::move(inv_std)] {
        const Tensor& go = tape->grad_of(oi);
        const Tensor& gv = tape->value(Var{tape, gi});
        if (tape->needs_grad(Var{tape, gi})) {
            Tensor& gg = tape->grad_ref(gi);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gg.data[j] += go.data[i * m + j] * normed.data[i * m + j];
        }
        if (tape->needs_grad(Var{tape, bi})) {
            Tensor& gb = tape->grad_ref(bi);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gb.data[j] += go.data[i * m + j];
        }
        if (tape->needs_grad(Var{tape, ai})) {
            Tensor& ga = tape->grad_ref(ai);
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < n; ++i) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    const double gh = go.data[i * m + j] * gv.data[j];
                    sum_g += gh;
                    sum_gx += gh * normed.data[i * m + j];
                }
                for (std::size_t j = 0; j < m; ++j) {
                    const double gh = go.data[i * m + j] * gv.data[j];
                    ga.data[i * m + j] +=
                        inv_std[i] * (gh - inv_m * sum_g - normed.data[i * m + j] * inv_m * sum_gx);
                }
            }
        }
    });
}

}  // namespace pbat

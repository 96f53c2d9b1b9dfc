#include "pbat/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pbat {

namespace {

void require_same_dim(const DiagonalGaussian& a, const DiagonalGaussian& b, const char* op) {
    if (a.dim() != b.dim()) {
        throw std::invalid_argument(std::string(op) + ": dimension mismatch (" +
                                    std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) +
                                    ")");
    }
}

void require_align(const SquareMatrix& w, std::size_t dim, const char* op) {
    if (w.dim != dim || w.data.size() != dim * dim) {
        throw std::invalid_argument(std::string(op) + ": alignment weight must be " +
                                    std::to_string(dim) + "x" + std::to_string(dim));
    }
}

std::vector<double> apply_align(const SquareMatrix& w, const std::vector<double>& x) {
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t r = 0; r < x.size(); ++r) {
        for (std::size_t c = 0; c < x.size(); ++c) out[c] += x[r] * w(r, c);
    }
    return out;
}

double floored(double v) { return std::max(v, kVarianceFloor); }

}  // namespace

SquareMatrix SquareMatrix::identity(std::size_t dim) {
    SquareMatrix m{dim, std::vector<double>(dim * dim, 0.0)};
    for (std::size_t i = 0; i < dim; ++i) m.data[i * dim + i] = 1.0;
    return m;
}

DiagonalGaussian::DiagonalGaussian(std::vector<double> mean, std::vector<double> var)
    : mean_(std::move(mean)), var_(std::move(var)) {
    if (mean_.empty() || mean_.size() != var_.size()) {
        throw std::invalid_argument("DiagonalGaussian: mean and var must share a dimension >= 1");
    }
    for (std::size_t d = 0; d < mean_.size(); ++d) {
        if (!std::isfinite(mean_[d])) {
            throw std::invalid_argument("DiagonalGaussian: non-finite mean at dim " +
                                        std::to_string(d));
        }
        if (!std::isfinite(var_[d]) || var_[d] <= 0.0) {
            throw std::invalid_argument("DiagonalGaussian: variance must be positive and finite at dim " +
                                        std::to_string(d));
        }
    }
}

double elu_plus_one(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("elu_plus_one: non-finite input");
    return x >= 0.0 ? x + 1.0 : std::exp(x);
}

std::vector<double> elu_plus_one(std::span<const double> x) {
    std::vector<double> out(x.size());
    std::transform(x.begin(), x.end(), out.begin(), [](double v) { return elu_plus_one(v); });
    return out;
}

double wasserstein_sq(const DiagonalGaussian& a, const DiagonalGaussian& b) {
    require_same_dim(a, b, "wasserstein_sq");
    double total = 0.0;
    for (std::size_t d = 0; d < a.dim(); ++d) {
        const double dm = a.mean()[d] - b.mean()[d];
        const double ds = std::sqrt(a.var()[d]) - std::sqrt(b.var()[d]);
        total += dm * dm + ds * ds;
    }
    return total;
}

DiagonalGaussian sagp(const DiagonalGaussian& u, const DiagonalGaussian& v,
                      const std::optional<SquareMatrix>& align) {
    require_same_dim(u, v, "sagp");
    const std::size_t dim = u.dim();
    std::vector<double> v_mean = v.mean();
    if (align) {
        require_align(*align, dim, "sagp");
        v_mean = apply_align(*align, v_mean);
    }
    std::vector<double> mean(dim), var(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        const double uv = floored(u.var()[d]);
        const double vv = floored(v.var()[d]);
        const double total = uv + vv;
        mean[d] = (vv / total) * u.mean()[d] + (uv / total) * v_mean[d];
        var[d] = 2.0 * uv * vv / total;
    }
    return {std::move(mean), std::move(var)};
}

DiagonalGaussian tri_sagp(const DiagonalGaussian& base, const DiagonalGaussian& ip,
                          const DiagonalGaussian& pos, const SquareMatrix& align_ip,
                          const SquareMatrix& align_pos) {
    require_same_dim(base, ip, "tri_sagp");
    require_same_dim(base, pos, "tri_sagp");
    const std::size_t dim = base.dim();
    require_align(align_ip, dim, "tri_sagp");
    require_align(align_pos, dim, "tri_sagp");
    const auto ip_mean = apply_align(align_ip, ip.mean());
    const auto pos_mean = apply_align(align_pos, pos.mean());
    std::vector<double> mean(dim), var(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        const double pb = 1.0 / floored(base.var()[d]);
        const double pi = 1.0 / floored(ip.var()[d]);
        const double pp = 1.0 / floored(pos.var()[d]);
        var[d] = 1.0 / (pb + pi + pp);
        mean[d] = var[d] * (base.mean()[d] * pb + ip_mean[d] * pi + pos_mean[d] * pp);
    }
    return {std::move(mean), std::move(var)};
}

DiagonalGaussian gaussian_aggregate(std::span<const DiagonalGaussian> values,
                                    std::span<const double> weights) {
    if (values.empty()) throw std::invalid_argument("gaussian_aggregate: empty value list");
    if (values.size() != weights.size()) {
        throw std::invalid_argument("gaussian_aggregate: values/weights length mismatch");
    }
    const std::size_t dim = values.front().dim();
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (std::size_t j = 0; j < values.size(); ++j) {
        require_same_dim(values.front(), values[j], "gaussian_aggregate");
        const double w = weights[j];
        if (!std::isfinite(w)) throw std::invalid_argument("gaussian_aggregate: non-finite weight");
        if (w == 0.0) continue;
        for (std::size_t d = 0; d < dim; ++d) {
            mean[d] += w * values[j].mean()[d];
            var[d] += w * w * values[j].var()[d];
        }
    }
    // Zero-weight-only combinations have no variance; fall back to the floor.
    for (auto& v : var) v = std::max(v, kVarianceFloor);
    return {std::move(mean), std::move(var)};
}

}  // namespace pbat

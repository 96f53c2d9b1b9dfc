#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace pbat {

/// Variance floor applied before any division by a variance.
inline constexpr double kVarianceFloor = 1e-8;

/// Row-major square matrix used as an alignment weight. Vectors are treated as
/// row vectors, so applying the weight to x computes x * W.
struct SquareMatrix {
    std::size_t dim = 0;
    std::vector<double> data;

    static SquareMatrix identity(std::size_t dim);
    double operator()(std::size_t r, std::size_t c) const { return data[r * dim + c]; }
};

/// Axis-aligned Gaussian: a mean vector and a per-dimension variance vector.
class DiagonalGaussian {
public:
    DiagonalGaussian(std::vector<double> mean, std::vector<double> var);

    std::size_t dim() const { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& var() const { return var_; }

    bool operator==(const DiagonalGaussian&) const = default;

private:
    std::vector<double> mean_;
    std::vector<double> var_;
};

/// ELU(x) + 1: x + 1 for x >= 0, exp(x) otherwise. Throws on non-finite input.
std::vector<double> elu_plus_one(std::span<const double> x);
double elu_plus_one(double x);

/// Squared 2-Wasserstein distance between diagonal Gaussians:
/// |mu_a - mu_b|^2 + sum_d (sqrt(var_a) - sqrt(var_b))^2.
double wasserstein_sq(const DiagonalGaussian& a, const DiagonalGaussian& b);

/// Self-adaptive Gaussian production of u and v. Each input's mean is weighted
/// by the other's variance; the output variance is 2 u v / (u + v) per
/// dimension. The optional alignment weight maps v's mean only.
DiagonalGaussian sagp(const DiagonalGaussian& u, const DiagonalGaussian& v,
                      const std::optional<SquareMatrix>& align = std::nullopt);

/// Ternary precision-weighted fusion. Output precision is the sum of the three
/// input precisions; the alignment weights map the ip and pos means.
DiagonalGaussian tri_sagp(const DiagonalGaussian& base, const DiagonalGaussian& ip,
                          const DiagonalGaussian& pos, const SquareMatrix& align_ip,
                          const SquareMatrix& align_pos);

/// Linear combination of independent Gaussians: mean sum w_j mu_j,
/// variance sum w_j^2 var_j.
DiagonalGaussian gaussian_aggregate(std::span<const DiagonalGaussian> values,
                                    std::span<const double> weights);

}  // namespace pbat

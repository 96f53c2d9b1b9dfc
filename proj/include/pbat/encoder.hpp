#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pbat/autodiff.hpp"
#include "pbat/data.hpp"
#include "pbat/gaussian.hpp"
#include "pbat/model.hpp"

namespace pbat {

// ---------------------------------------------------------------------------
// Gaussian kernels lifted onto the tape. Each row of mean/var is one Gaussian.

struct GaussianVar {
    Var mean;
    Var var;
};

/// Row-wise squared 2-Wasserstein distance, [n, d] x [n, d] -> [n, 1].
Var wasserstein_rows(const GaussianVar& a, const GaussianVar& b);
/// Row-wise SAGP; `align` (d x d) maps v's mean when present.
GaussianVar sagp_rows(const GaussianVar& u, const GaussianVar& v, std::optional<Var> align);
/// Row-wise TriSAGP.
GaussianVar tri_sagp_rows(const GaussianVar& base, const GaussianVar& ip, const GaussianVar& pos,
                          Var align_ip, Var align_pos);

/// Lazily binds ModelParams tensors onto a tape. Trainable bindings become
/// leaves, others constants.
class ParamBinder {
public:
    ParamBinder(Tape& tape, const ModelParams& params, bool trainable)
        : tape_(tape), params_(params), trainable_(trainable), vars_(params.tensors.size()) {}

    Var operator[](std::size_t slot);
    Tape& tape() { return tape_; }
    const ModelParams& params() const { return params_; }

    /// Adds d(root)/d(param) into grads for every bound parameter.
    void accumulate(std::vector<Tensor>& grads) const;

private:
    Tape& tape_;
    const ModelParams& params_;
    bool trainable_;
    std::vector<std::optional<Var>> vars_;
};

struct EncodeOptions {
    double dropout = 0.0;
    Rng* rng = nullptr;  // required when dropout > 0
    bool record_attention = false;
};

struct EncodedRow {
    GaussianVar state;     // [valid_len, D] block-stack output
    GaussianVar patterns;  // [valid_len, D] pattern(user, behavior at position)
    std::vector<Tensor> attention;  // per block, per head: [valid_len, valid_len], [source, target]
};

/// Forward pass of the block stack over the valid prefix of `row`. Padding
/// positions are excluded from attention, so outputs at valid positions do not
/// depend on the padded tail.
EncodedRow encode_graph(ParamBinder& params, const MaskedRow& row, const EncodeOptions& options = {});

/// Value-level encoder output. Rows at or beyond valid_len are padding and hold
/// mean 0 / variance 1.
struct EncoderState {
    Tensor mean;  // [L, D]
    Tensor var;   // [L, D]
    std::size_t valid_len = 0;
    std::vector<Tensor> attention;  // per block, per head: [L, L], zero outside the valid block
};

EncoderState encode(const MaskedRow& row, const ModelParams& params, const EncodeOptions& options = {});

/// Running count of pairwise (source, target, head-dimension) work units done
/// by the impact-factor and fusion stages. Grows as Theta(L^2 d_h) per head per block.
std::uint64_t pair_work_counter();

// ---------------------------------------------------------------------------
// Per-operation value API, one Gaussian at a time. These mirror the tape path
// and serve as its reference.

struct QKV {
    DiagonalGaussian q, k, v;
};

/// mean = item.mean W_item + behavior.mean W_beh; var = elu_plus_one(item.var W_item' + behavior.var W_beh').
QKV project_qkv(const DiagonalGaussian& item, const DiagonalGaussian& behavior, const ModelParams& params,
                std::size_t block, std::size_t head);

/// Linear map of a D-dim pattern into the head (mean linear, variance through elu_plus_one).
DiagonalGaussian project_pattern(const DiagonalGaussian& pattern, const ModelParams& params, std::size_t block,
                                 std::size_t head);
DiagonalGaussian project_position(const DiagonalGaussian& position, const ModelParams& params, std::size_t block,
                                  std::size_t head);

/// Columns [head * d_h, (head + 1) * d_h) of a D-dim Gaussian.
DiagonalGaussian head_slice(const DiagonalGaussian& g, std::size_t head, std::size_t head_dim);

struct ImpactFactor {
    double degree;  // m = wasserstein_sq of the two projected patterns
    DiagonalGaussian ip;
};

/// From already projected patterns: ip = N(m * relation.mean, max(m * relation.var, eps)).
ImpactFactor impact_factor(const DiagonalGaussian& projected_s, const DiagonalGaussian& projected_t,
                           const DiagonalGaussian& relation);

/// Fused key of source s and fused query of target t for the pair (s, t).
std::pair<DiagonalGaussian, DiagonalGaussian> pb_fuse(const DiagonalGaussian& key_s, const DiagonalGaussian& query_t,
                                                      const DiagonalGaussian& ip_st, const DiagonalGaussian& pos_s,
                                                      const DiagonalGaussian& pos_t, const SquareMatrix& align_ip,
                                                      const SquareMatrix& align_pos);

/// Attention weights from fused pairs indexed [s * L + t]. score = -wasserstein_sq;
/// sources at or beyond valid_len are masked; each target column is softmax-normalised
/// over valid sources. Returns [L, L] with rows = sources, columns = targets.
Tensor attention_matrix(std::span<const DiagonalGaussian> fused_keys,
                        std::span<const DiagonalGaussian> fused_queries, std::size_t L, std::size_t valid_len);

}  // namespace pbat
